//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values on fresh tapes, so it
//! stays independent of the reverse pass it is used to check.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `eps`.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("variables require grad").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        let value = t.value(out);
        if value.len() != 1 {
            return Err(Error::Contract("gradcheck needs a scalar function".into()));
        }
        Ok(value.item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let hi = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let lo = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *gj = (hi - lo) / (2.0 * eps);
        }
        numeric.push(g);
    }

    let mut max_rel_error: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.iter().zip(n) {
            let denom = 1f64.max(x.abs()).max(y.abs());
            max_rel_error = max_rel_error.max((x - y).abs() / denom);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        analytic,
        numeric,
    })
}
