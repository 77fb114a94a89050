//! Gated graph attention: three adjacency-masked attention branches
//! (two-hop predecessors, predecessors, successors) mixed per node by a
//! learned softmax gate, inside a pre-norm transformer block.
//!
//! Masking semantics are selectable. `Hadamard` multiplies raw scores
//! elementwise by `I + M` before softmax, so masked-out positions enter
//! the softmax with logit 0 (not -inf) and still receive the weight of a
//! zero logit; this leak is intentional and covered by tests.
//! `AdditiveNegInf` is the conventional alternative: positions outside
//! the `I + M` support are set to -inf and get exactly zero weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMasks;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Per-node weights from the gate MLP (the full mechanism).
    Dynamic,
    /// Gate replaced by the constant (1/3, 1/3, 1/3).
    UniformFixed,
    /// All three masks replaced by all-ones (plain global attention).
    DisabledFullAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Hadamard,
    AdditiveNegInf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgsaConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub gate_mode: GateMode,
    pub mask_mode: MaskMode,
    /// Scale the gate's prefix-attention scores by 1/sqrt(d_model).
    /// Off by default: the gate runs on raw dot products.
    pub gate_scaling: bool,
}

impl Default for DgsaConfig {
    fn default() -> Self {
        DgsaConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            gate_mode: GateMode::Dynamic,
            mask_mode: MaskMode::Hadamard,
            gate_scaling: false,
        }
    }
}

impl DgsaConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Contract("dgsa config: zero-sized field".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Contract(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Hidden width of the per-layer gate MLP (one hidden layer, 3 outputs).
pub fn gate_hidden_dim(d_model: usize) -> usize {
    d_model
}

/// FFN expansion factor of the transformer block.
pub const FFN_EXPANSION: usize = 4;

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub norm1: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub gate_wq: Var,
    pub gate_wk: Var,
    pub gate_wv: Var,
    pub gate_w1: Var,
    pub gate_b1: Var,
    pub gate_w2: Var,
    pub gate_b2: Var,
    pub norm2: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

// ── Mask plumbing ───────────────────────────────────────────────────

/// `I + M` as a dense constant.
pub fn add_identity(m: &Tensor) -> Tensor {
    let n = m.rows();
    Tensor::from_fn(n, n, |i, j| m.at(i, j) + if i == j { 1.0 } else { 0.0 })
}

/// Extend an `n x n` node mask to `(n+1) x (n+1)` by attaching the
/// platform row and column as all-ones (the platform token attends to
/// and is attended by everything, in every branch).
pub fn extend_mask_with_platform(m: &Tensor) -> Tensor {
    let n = m.rows();
    Tensor::from_fn(n + 1, n + 1, |i, j| {
        if i == n || j == n {
            1.0
        } else {
            m.at(i, j)
        }
    })
}

/// Lower-triangular support (including the diagonal): row i may attend
/// to rows 0..=i. Row n' - 1 (the platform row) sees everything.
pub fn causal_prefix_support(n: usize) -> Tensor {
    Tensor::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 })
}

/// Per-branch `I + M` multipliers, platform-extended, in the fixed
/// branch order (grandfather, father, son) that matches the gate's
/// three outputs.
#[derive(Clone, Debug)]
pub struct BranchMasks {
    pub ipm: [Tensor; 3],
    pub n_prime: usize,
}

impl BranchMasks {
    pub fn from_masks(masks: &AdjacencyMasks) -> Self {
        let gf = add_identity(&extend_mask_with_platform(&masks.grandfather));
        let fa = add_identity(&extend_mask_with_platform(&masks.father));
        let so = add_identity(&extend_mask_with_platform(&masks.son));
        let n_prime = gf.rows();
        BranchMasks { ipm: [gf, fa, so], n_prime }
    }

    /// The full-attention substitute: every branch mask all-ones.
    pub fn full_attention(n_prime: usize) -> Tensor {
        add_identity(&Tensor::filled(vec![n_prime, n_prime], 1.0))
    }
}

// ── Attention ───────────────────────────────────────────────────────

/// One masked attention branch over already-projected Q, K, V, split
/// into `n_heads` column slices. `ipm` is the dense `I + M` multiplier.
fn branch_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    ipm: &Tensor,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let h = cfg.head_dim();
    let inv_sqrt_h = 1.0 / (h as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, head * h, h)?;
        let kh = tape.slice_cols(k, head * h, h)?;
        let vh = tape.slice_cols(v, head * h, h)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let masked = match cfg.mask_mode {
            MaskMode::Hadamard => {
                let gated = tape.mul_mask(scores, ipm)?;
                tape.scale(gated, inv_sqrt_h)
            }
            MaskMode::AdditiveNegInf => {
                let scaled = tape.scale(scores, inv_sqrt_h);
                tape.mask_fill_neg_inf(scaled, ipm)?
            }
        };
        let probs = tape.softmax_rows(masked);
        heads.push(tape.matmul(probs, vh)?);
    }
    tape.concat_cols(&heads)
}

/// Branch-level masked attention over an input matrix and a raw square
/// mask `M` (the identity is added internally): project Q, K, V with the
/// layer's weights and attend under `I + M`.
pub fn masked_attention(
    tape: &mut Tape,
    f: Var,
    mask: &Tensor,
    layer: &LayerVars,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let n = tape.value(f).rows();
    if mask.shape() != [n, n] {
        return Err(Error::Dimension(format!(
            "masked_attention: mask {:?} for {n} rows",
            mask.shape()
        )));
    }
    let ipm = add_identity(mask);
    let q = tape.matmul(f, layer.w_q)?;
    let k = tape.matmul(f, layer.w_k)?;
    let v = tape.matmul(f, layer.w_v)?;
    branch_attention(tape, q, k, v, &ipm, cfg)
}

// ── Gate ────────────────────────────────────────────────────────────

/// Gate output: prefix-attention features and the per-node softmax
/// weights over the three branches.
pub struct DynamicWeights {
    pub features: Var,
    pub weights: Var,
}

/// Per-node branch weights from causal prefix attention: node i attends
/// over rows 0..=i (the platform row, last, sees the full prefix), and
/// the pooled feature goes through a one-hidden-layer MLP with three
/// outputs, softmaxed.
pub fn dynamic_gate(
    tape: &mut Tape,
    f: Var,
    layer: &LayerVars,
    cfg: &DgsaConfig,
) -> Result<DynamicWeights> {
    let n = tape.value(f).rows();
    if n == 0 {
        return Err(Error::Contract("dynamic_gate: empty input".into()));
    }
    let q = tape.matmul(f, layer.gate_wq)?;
    let k = tape.matmul(f, layer.gate_wk)?;
    let v = tape.matmul(f, layer.gate_wv)?;
    let mut scores = tape.matmul_nt(q, k)?;
    if cfg.gate_scaling {
        scores = tape.scale(scores, 1.0 / (cfg.d_model as f64).sqrt());
    }
    let causal = causal_prefix_support(n);
    let masked = tape.mask_fill_neg_inf(scores, &causal)?;
    let probs = tape.softmax_rows(masked);
    let features = tape.matmul(probs, v)?;

    let h1 = tape.matmul(features, layer.gate_w1)?;
    let h1 = tape.add_row_bias(h1, layer.gate_b1)?;
    let h1 = tape.gelu(h1);
    let logits = tape.matmul(h1, layer.gate_w2)?;
    let logits = tape.add_row_bias(logits, layer.gate_b2)?;
    let weights = tape.softmax_rows(logits);
    Ok(DynamicWeights { features, weights })
}

/// Row-wise convex combination of the three branch outputs with the
/// `n' x 3` weight matrix (columns in branch order).
pub fn mix_branches(tape: &mut Tape, branches: [Var; 3], weights: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (idx, &branch) in branches.iter().enumerate() {
        let w_col = tape.slice_cols(weights, idx, 1)?;
        let scaled = tape.scale_rows(branch, w_col)?;
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
    }
    Ok(acc.expect("three branches"))
}

/// The full gated attention: three masked branches combined per node.
/// Returns the mixed branch output (the block applies the output
/// projection).
pub fn dgsa_forward(
    tape: &mut Tape,
    f: Var,
    masks: &BranchMasks,
    layer: &LayerVars,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let n = tape.value(f).rows();
    if n != masks.n_prime {
        return Err(Error::Dimension(format!(
            "dgsa_forward: {n} rows vs masks for {}",
            masks.n_prime
        )));
    }
    let q = tape.matmul(f, layer.w_q)?;
    let k = tape.matmul(f, layer.w_k)?;
    let v = tape.matmul(f, layer.w_v)?;

    if cfg.gate_mode == GateMode::DisabledFullAttention {
        // All branches share the all-ones mask, so the convex
        // combination collapses to a single branch.
        let full = BranchMasks::full_attention(n);
        return branch_attention(tape, q, k, v, &full, cfg);
    }

    let x1 = branch_attention(tape, q, k, v, &masks.ipm[0], cfg)?;
    let x2 = branch_attention(tape, q, k, v, &masks.ipm[1], cfg)?;
    let x3 = branch_attention(tape, q, k, v, &masks.ipm[2], cfg)?;

    match cfg.gate_mode {
        GateMode::UniformFixed => {
            let s = tape.add(x1, x2)?;
            let s = tape.add(s, x3)?;
            Ok(tape.scale(s, 1.0 / 3.0))
        }
        GateMode::Dynamic => {
            let gate = dynamic_gate(tape, f, layer, cfg)?;
            mix_branches(tape, [x1, x2, x3], gate.weights)
        }
        GateMode::DisabledFullAttention => unreachable!(),
    }
}

/// Pre-norm residual block:
/// `F' = F + W_o(dgsa(norm1 F))`, `F'' = F' + FFN(norm2 F')`.
pub fn transformer_block(
    tape: &mut Tape,
    f: Var,
    masks: &BranchMasks,
    layer: &LayerVars,
    cfg: &DgsaConfig,
) -> Result<Var> {
    let normed = tape.rms_norm(f, layer.norm1)?;
    let attn = dgsa_forward(tape, normed, masks, layer, cfg)?;
    let proj = tape.matmul(attn, layer.w_o)?;
    let f1 = tape.add(f, proj)?;

    let normed2 = tape.rms_norm(f1, layer.norm2)?;
    let h = tape.matmul(normed2, layer.ffn_w1)?;
    let h = tape.add_row_bias(h, layer.ffn_b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, layer.ffn_w2)?;
    let o = tape.add_row_bias(o, layer.ffn_b2)?;
    tape.add(f1, o)
}

/// Stack of `n_layers` blocks.
pub fn encoder_stack(
    tape: &mut Tape,
    f: Var,
    masks: &BranchMasks,
    layers: &[LayerVars],
    cfg: &DgsaConfig,
) -> Result<Var> {
    let mut x = f;
    for layer in layers {
        x = transformer_block(tape, x, masks, layer, cfg)?;
    }
    Ok(x)
}
