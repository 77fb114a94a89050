//! Finite-difference validation of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compare the tape's analytic gradients against central differences,
/// coordinate by coordinate, and return the worst relative discrepancy.
///
/// `f` rebuilds the computation on a fresh tape from the given parameter
/// leaves and returns the scalar loss node. The relative error for one
/// coordinate is `|a - n| / max(|a|, |n|, 0.01)`, so near-zero gradients
/// are effectively compared absolutely.
pub fn gradcheck<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Contract("gradcheck: eps must be positive".into()));
    }

    let eval = |tensors: &[Tensor], want_grads: bool| -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = true;
                tape.leaf(t)
            })
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).scalar_value()?;
        if !value.is_finite() {
            return Err(Error::Contract(format!("gradcheck: non-finite loss {value}")));
        }
        let grads = if want_grads {
            let g = tape.backward(loss)?;
            Some(
                vars.iter()
                    .zip(tensors)
                    .map(|(&v, t)| g.wrt_or_zeros(v, t.shape()))
                    .collect(),
            )
        } else {
            None
        };
        Ok((value, grads))
    };

    // Determinism probe: two evaluations must agree bitwise.
    let (v1, grads) = eval(params, true)?;
    let (v2, _) = eval(params, false)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::Contract(format!(
            "gradcheck: f is not deterministic ({v1} vs {v2})"
        )));
    }
    let analytic = grads.expect("grads requested");

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let (fp, _) = eval(&work, false)?;
            work[pi].data_mut()[ci] = orig - eps;
            let (fm, _) = eval(&work, false)?;
            work[pi].data_mut()[ci] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quadratic_form_checks_to_machine_precision() {
        let mut rng = Rng::from_seed(31);
        let q = Tensor::from_fn(4, 4, |_, _| rng.range_f64(-1.0, 1.0));
        let x = Tensor::from_fn(1, 4, |_, _| rng.range_f64(-1.0, 1.0));
        let err = gradcheck(
            |tape, vars| {
                let qv = tape.constant(q.clone());
                let xq = tape.matmul(vars[0], qv)?;
                let qf = tape.matmul_nt(xq, vars[0])?;
                Ok(tape.sum_all(qf))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "quadratic form gradcheck err {err}");
    }

    #[test]
    fn softmax_cross_entropy_toy_checks() {
        let mut rng = Rng::from_seed(32);
        let logits = Tensor::from_fn(1, 5, |_, _| rng.range_f64(-2.0, 2.0));
        // loss = -log p[target] realized as dot with a one-hot row.
        let onehot = Tensor::from_vec(vec![1, 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let err = gradcheck(
            |tape, vars| {
                let p = tape.softmax_rows(vars[0]);
                let logp = tape.custom_unary(p, |v| v.ln(), |v| 1.0 / v);
                let mask = tape.constant(onehot.clone());
                let picked = tape.mul(logp, mask)?;
                let s = tape.sum_all(picked);
                Ok(tape.scale(s, -1.0))
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "softmax-ce gradcheck err {err}");
    }

    #[test]
    fn deliberately_wrong_rule_is_detected() {
        let x = Tensor::from_vec(vec![1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let err = gradcheck(
            |tape, vars| {
                // Forward is x^2 but the registered derivative is 3x.
                let y = tape.custom_unary(vars[0], |v| v * v, |v| 3.0 * v);
                Ok(tape.sum_all(y))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-1, "broken rule should be flagged, err {err}");
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::scalar(1.0);
        assert!(gradcheck(|tape, vars| Ok(tape.sum_all(vars[0])), &[x], 0.0).is_err());
    }
}
