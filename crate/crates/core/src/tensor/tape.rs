//! Tape-recorded reverse-mode differentiation.
//!
//! A `Tape` is built per forward pass: each operation appends a node
//! holding the forward value, parent references, and a local gradient
//! rule. `backward` replays the tape once in reverse execution order.
//! Nodes whose gradient cannot reach any `requires_grad` leaf are
//! pruned (their rules return `None` contributions).

use super::{dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Read-only view the gradient rules use to fetch parent values.
pub struct Ctx<'a> {
    nodes: &'a [Node],
}

impl<'a> Ctx<'a> {
    fn value(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }
}

type GradFn = Box<dyn Fn(&Tensor, &Tensor, &Ctx) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    grad_fn: Option<GradFn>,
    requires_grad: bool,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to tape leaves.
pub struct Gradients {
    kept: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.kept.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, zeros if the loss does not depend on it.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.wrt(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Insert a leaf. Gradient is reported for it iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, vec![], None, rg)
    }

    /// Insert a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None, false)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        grad_fn: Option<GradFn>,
        requires_grad: bool,
    ) -> Var {
        let needs_grad = requires_grad || parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, parents, grad_fn, requires_grad, needs_grad });
        Var(self.nodes.len() - 1)
    }

    // ── Recorded operations ─────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let (pa, pb) = (a.0, b.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.matmul_nt(ctx.value(pb)).unwrap());
            let db = ctx.needs(pb).then(|| ctx.value(pa).matmul_tn(g).unwrap());
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    /// `a . b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        let (pa, pb) = (a.0, b.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.matmul(ctx.value(pb)).unwrap());
            let db = ctx.needs(pb).then(|| g.matmul_tn(ctx.value(pa)).unwrap());
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let (pa, pb) = (a.0, b.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.clone());
            let db = ctx.needs(pb).then(|| g.clone());
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let (pa, pb) = (a.0, b.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.clone());
            let db = ctx.needs(pb).then(|| g.scale(-1.0));
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let (pa, pb) = (a.0, b.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.mul(ctx.value(pb)).unwrap());
            let db = ctx.needs(pb).then(|| g.mul(ctx.value(pa)).unwrap());
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            vec![ctx.needs(pa).then(|| g.scale(c))]
        });
        self.push(out, vec![pa], Some(rule), false)
    }

    /// Add a `1 x n` bias row to every row of an `m x n` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = (av.rows(), av.cols());
        if bv.rows() != 1 || bv.cols() != n {
            return Err(Error::Dimension(format!(
                "add_row_bias: {m}x{n} + {:?}",
                bv.shape()
            )));
        }
        let brow = bv.row(0);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(av.row(i).iter().zip(brow).map(|(&x, &b)| x + b));
        }
        let out = Tensor { shape: vec![m, n], data, requires_grad: false };
        let (pa, pb) = (a.0, bias.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| g.clone());
            let db = ctx.needs(pb).then(|| {
                let (m, n) = (g.rows(), g.cols());
                let mut acc = vec![0.0; n];
                for i in 0..m {
                    for (o, &gv) in acc.iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
                Tensor { shape: vec![1, n], data: acc, requires_grad: false }
            });
            vec![da, db]
        });
        Ok(self.push(out, vec![pa, pb], Some(rule), false))
    }

    /// GELU (tanh approximation), applied elementwise.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = {
            let av = self.value(a);
            let data: Vec<f64> = av.data().iter().map(|&x| gelu_fwd(x)).collect();
            Tensor { shape: av.shape().to_vec(), data, requires_grad: false }
        };
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let x = ctx.value(pa);
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                Tensor { shape: x.shape().to_vec(), data, requires_grad: false }
            });
            vec![da]
        });
        self.push(out, vec![pa], Some(rule), false)
    }

    /// Elementwise unary op with caller-provided value and derivative
    /// functions (derivative as a function of the input).
    pub fn custom_unary(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let out = {
            let av = self.value(a);
            let data: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
            Tensor { shape: av.shape().to_vec(), data, requires_grad: false }
        };
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let x = ctx.value(pa);
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| gv * df(xv))
                    .collect();
                Tensor { shape: x.shape().to_vec(), data, requires_grad: false }
            });
            vec![da]
        });
        self.push(out, vec![pa], Some(rule), false)
    }

    /// Row-wise softmax. Accepts -inf logits (masked positions get zero
    /// probability). NaN logits propagate; the training loop and the
    /// prediction path reject non-finite results downstream.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).row_softmax_masked();
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let (r, c) = (out.rows(), out.cols());
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let srow = out.row(i);
                    let grow = g.row(i);
                    let d = dot(grow, srow);
                    let orow = &mut data[i * c..(i + 1) * c];
                    for ((o, &s), &gv) in orow.iter_mut().zip(srow).zip(grow) {
                        *o = s * (gv - d);
                    }
                }
                Tensor { shape: vec![r, c], data, requires_grad: false }
            });
            vec![da]
        });
        self.push(out, vec![pa], Some(rule), false)
    }

    /// Row-wise RMS normalization with a learned `1 x n` scale.
    pub fn rms_norm(&mut self, a: Var, gamma: Var) -> Result<Var> {
        const EPS: f64 = 1e-8;
        let (av, gv) = (self.value(a), self.value(gamma));
        let (m, n) = (av.rows(), av.cols());
        if gv.rows() != 1 || gv.cols() != n {
            return Err(Error::Dimension(format!(
                "rms_norm: {m}x{n} with scale {:?}",
                gv.shape()
            )));
        }
        let grow0 = gv.row(0);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = av.row(i);
            let inv_rms = 1.0 / (dot(row, row) / n as f64 + EPS).sqrt();
            let orow = &mut out[i * n..(i + 1) * n];
            for ((o, &x), &gm) in orow.iter_mut().zip(row).zip(grow0) {
                *o = x * inv_rms * gm;
            }
        }
        let out = Tensor { shape: vec![m, n], data: out, requires_grad: false };
        let (pa, pg) = (a.0, gamma.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let x = ctx.value(pa);
            let gam = ctx.value(pg);
            let gamrow = gam.row(0);
            let (m, n) = (x.rows(), x.cols());
            let nf = n as f64;
            let mut dx = ctx.needs(pa).then(|| vec![0.0; m * n]);
            let mut dgam = ctx.needs(pg).then(|| vec![0.0; n]);
            for i in 0..m {
                let xrow = x.row(i);
                let grow = g.row(i);
                let inv_rms = 1.0 / (dot(xrow, xrow) / nf + EPS).sqrt();
                if let Some(dg) = dgam.as_mut() {
                    for j in 0..n {
                        dg[j] += grow[j] * xrow[j] * inv_rms;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    // du[j] = g[j]*gamma[j]; dx = du/rms - x * dot(du, x) / (n rms^3)
                    let mut du_dot_x = 0.0;
                    for j in 0..n {
                        du_dot_x += grow[j] * gamrow[j] * xrow[j];
                    }
                    let k = du_dot_x * inv_rms * inv_rms * inv_rms / nf;
                    let drow = &mut dx[i * n..(i + 1) * n];
                    for j in 0..n {
                        drow[j] = grow[j] * gamrow[j] * inv_rms - xrow[j] * k;
                    }
                }
            }
            vec![
                dx.map(|d| Tensor { shape: vec![m, n], data: d, requires_grad: false }),
                dgam.map(|d| Tensor { shape: vec![1, n], data: d, requires_grad: false }),
            ]
        });
        Ok(self.push(out, vec![pa, pg], Some(rule), false))
    }

    /// Elementwise product with a constant matrix (attention masking).
    pub fn mul_mask(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        let out = self.value(a).mul(mask)?;
        let pa = a.0;
        let mask = mask.clone();
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            vec![ctx.needs(pa).then(|| g.mul(&mask).unwrap())]
        });
        Ok(self.push(out, vec![pa], Some(rule), false))
    }

    /// Where `support` is zero, replace the entry with -inf (pre-softmax
    /// additive masking); elsewhere pass through.
    pub fn mask_fill_neg_inf(&mut self, a: Var, support: &Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != support.shape() {
            return Err(Error::Dimension(format!(
                "mask_fill_neg_inf: {:?} vs {:?}",
                av.shape(),
                support.shape()
            )));
        }
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(support.data())
            .map(|(&x, &s)| if s != 0.0 { x } else { f64::NEG_INFINITY })
            .collect();
        let out = Tensor { shape: av.shape().to_vec(), data, requires_grad: false };
        let pa = a.0;
        let support = support.clone();
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(support.data())
                    .map(|(&gv, &s)| if s != 0.0 { gv } else { 0.0 })
                    .collect();
                Tensor { shape: g.shape().to_vec(), data, requires_grad: false }
            });
            vec![da]
        });
        Ok(self.push(out, vec![pa], Some(rule), false))
    }

    /// Scale row i of `a` by `w[i]` (`w` is `m x 1`).
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (av, wv) = (self.value(a), self.value(w));
        let (m, n) = (av.rows(), av.cols());
        if wv.rows() != m || wv.cols() != 1 {
            return Err(Error::Dimension(format!(
                "scale_rows: {m}x{n} with weights {:?}",
                wv.shape()
            )));
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let wi = wv.at(i, 0);
            data.extend(av.row(i).iter().map(|&x| x * wi));
        }
        let out = Tensor { shape: vec![m, n], data, requires_grad: false };
        let (pa, pw) = (a.0, w.0);
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let (m, n) = (g.rows(), g.cols());
            let da = ctx.needs(pa).then(|| {
                let w = ctx.value(pw);
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    let wi = w.at(i, 0);
                    data.extend(g.row(i).iter().map(|&gv| gv * wi));
                }
                Tensor { shape: vec![m, n], data, requires_grad: false }
            });
            let dw = ctx.needs(pw).then(|| {
                let a = ctx.value(pa);
                let data: Vec<f64> = (0..m).map(|i| dot(g.row(i), a.row(i))).collect();
                Tensor { shape: vec![m, 1], data, requires_grad: false }
            });
            vec![da, dw]
        });
        Ok(self.push(out, vec![pa, pw], Some(rule), false))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if start + len > m {
            return Err(Error::Dimension(format!(
                "slice_rows: [{start}, {}) of {m} rows",
                start + len
            )));
        }
        let data = av.data()[start * n..(start + len) * n].to_vec();
        let out = Tensor { shape: vec![len, n], data, requires_grad: false };
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let full = ctx.value(pa);
                let mut d = Tensor::zeros(full.shape().to_vec());
                let n = full.cols();
                d.data_mut()[start * n..(start + len) * n].copy_from_slice(g.data());
                d
            });
            vec![da]
        });
        Ok(self.push(out, vec![pa], Some(rule), false))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if start + len > n {
            return Err(Error::Dimension(format!(
                "slice_cols: [{start}, {}) of {n} cols",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.row(i)[start..start + len]);
        }
        let out = Tensor { shape: vec![m, len], data, requires_grad: false };
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let shape = ctx.value(pa).shape().to_vec();
                let mut d = Tensor::zeros(shape);
                for i in 0..g.rows() {
                    d.row_mut(i)[start..start + len].copy_from_slice(g.row(i));
                }
                d
            });
            vec![da]
        });
        Ok(self.push(out, vec![pa], Some(rule), false))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols: no inputs".into()));
        }
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::Dimension("concat_cols: row count mismatch".into()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor { shape: vec![m, total], data, requires_grad: false };
        let parents: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let parents2 = parents.clone();
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let m = g.rows();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(widths.len());
            for (&pid, &w) in parents2.iter().zip(&widths) {
                let start = offset;
                offset += w;
                grads.push(ctx.needs(pid).then(|| {
                    let mut data = Vec::with_capacity(m * w);
                    for i in 0..m {
                        data.extend_from_slice(&g.row(i)[start..start + w]);
                    }
                    Tensor { shape: vec![m, w], data, requires_grad: false }
                }));
            }
            grads
        });
        Ok(self.push(out, parents, Some(rule), false))
    }

    /// Stack `1 x c` rows into a `k x c` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("stack_rows: no inputs".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            let v = self.value(p);
            if v.rows() != 1 || v.cols() != c {
                return Err(Error::Dimension(format!(
                    "stack_rows: expected 1x{c}, got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor { shape: vec![parts.len(), c], data, requires_grad: false };
        let parents: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let parents2 = parents.clone();
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let c = g.cols();
            parents2
                .iter()
                .enumerate()
                .map(|(i, &pid)| {
                    ctx.needs(pid).then(|| Tensor {
                        shape: vec![1, c],
                        data: g.row(i).to_vec(),
                        requires_grad: false,
                    })
                })
                .collect()
        });
        Ok(self.push(out, parents, Some(rule), false))
    }

    /// Select rows of `table` by index (embedding lookup). Gradient
    /// scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Dimension(format!(
                "gather_rows: id {bad} out of {v}"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor { shape: vec![ids.len(), d], data, requires_grad: false };
        let pt = table.0;
        let ids = ids.to_vec();
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pt).then(|| {
                let t = ctx.value(pt);
                let d = t.cols();
                let mut acc = Tensor::zeros(t.shape().to_vec());
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut acc.data_mut()[i * d..(i + 1) * d];
                    for (o, &gv) in dst.iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                acc
            });
            vec![da]
        });
        Ok(self.push(out, vec![pt], Some(rule), false))
    }

    /// Mean over rows: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if m == 0 {
            return Err(Error::Contract("mean_rows: zero rows".into()));
        }
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (o, &x) in data.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in data.iter_mut() {
            *o /= m as f64;
        }
        let out = Tensor { shape: vec![1, n], data, requires_grad: false };
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let inv = 1.0 / m as f64;
                let grow: Vec<f64> = g.row(0).iter().map(|&x| x * inv).collect();
                let mut data = Vec::with_capacity(m * grow.len());
                for _ in 0..m {
                    data.extend_from_slice(&grow);
                }
                Tensor { shape: vec![m, grow.len()], data, requires_grad: false }
            });
            vec![da]
        });
        Ok(self.push(out, vec![pa], Some(rule), false))
    }

    /// Sum of all entries, as a `1 x 1` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let out = Tensor::scalar(s);
        let pa = a.0;
        let rule: GradFn = Box::new(move |g, _out, ctx| {
            let da = ctx.needs(pa).then(|| {
                let shape = ctx.value(pa).shape().to_vec();
                Tensor::filled(shape, g.data()[0])
            });
            vec![da]
        });
        self.push(out, vec![pa], Some(rule), false)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// `requires_grad` leaf reachable from the loss (others read as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss_val.shape()
            )));
        }
        let n = self.nodes.len();
        let mut pending: Vec<Option<Tensor>> = Vec::with_capacity(n);
        pending.resize_with(n, || None);
        let mut kept: Vec<Option<Tensor>> = Vec::with_capacity(n);
        kept.resize_with(n, || None);

        let mut seed = Tensor::filled(loss_val.shape().to_vec(), 1.0);
        seed.requires_grad = false;
        pending[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(rule) = &node.grad_fn {
                let ctx = Ctx { nodes: &self.nodes };
                let parent_grads = rule(&g, &node.value, &ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if let Some(pg) = pg {
                        debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                        match &mut pending[p] {
                            Some(acc) => accumulate(acc, &pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
            if node.requires_grad || i == loss.0 {
                kept[i] = Some(g);
            }
        }
        Ok(Gradients { kept })
    }
}

fn accumulate(acc: &mut Tensor, src: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(src.data()) {
        *a += b;
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * dinner
}
