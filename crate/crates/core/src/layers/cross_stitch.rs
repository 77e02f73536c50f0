use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Learned `T x T` mixing of per-task features:
/// `output_i = sum_j alpha[i][j] * input_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossStitchUnit {
    pub alpha: ParamId,
    pub tasks: usize,
}

impl CrossStitchUnit {
    /// Identity plus `uniform(-noise, noise)` perturbation.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        tasks: usize,
        noise: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut data = vec![0.0; tasks * tasks];
        for i in 0..tasks {
            for j in 0..tasks {
                let base = if i == j { 1.0 } else { 0.0 };
                let jitter = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
                data[i * tasks + j] = base + jitter;
            }
        }
        let alpha = store.add(format!("{name}.alpha"), Tensor::matrix(tasks, tasks, data)?)?;
        Ok(CrossStitchUnit { alpha, tasks })
    }

    /// Mixed output for task `i` only.
    pub fn mix_one(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var], i: usize) -> Result<Var> {
        if inputs.len() != self.tasks {
            return Err(Error::dim(
                "cross_stitch",
                format!("{} inputs for {} tasks", inputs.len(), self.tasks),
            ));
        }
        if i >= self.tasks {
            return Err(Error::bounds("cross_stitch task", i, self.tasks));
        }
        let shape = tape.value(inputs[0]).shape().to_vec();
        if inputs.iter().any(|&v| tape.value(v).shape() != shape.as_slice()) {
            return Err(Error::dim("cross_stitch", "inputs differ in shape"));
        }
        let alpha = tape.param(store, self.alpha);
        let mut acc: Option<Var> = None;
        for (j, &x) in inputs.iter().enumerate() {
            let term = tape.scale_by(x, alpha, i * self.tasks + j)?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        Ok(acc.expect("at least one task"))
    }

    pub fn mix(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Var]) -> Result<Vec<Var>> {
        (0..self.tasks)
            .map(|i| self.mix_one(tape, store, inputs, i))
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.alpha]
    }
}
