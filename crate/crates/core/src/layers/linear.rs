use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b` with `W: input_dim x output_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[input_dim, output_dim], scale, rng)?;
        let bias = store.add_uniform(format!("{name}.bias"), &[output_dim], scale, rng)?;
        Ok(Linear {
            weight,
            bias,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul(x, w)?;
        tape.add_row(z, b)
    }

    /// Like [`Linear::forward`], but an input narrower than `input_dim` is
    /// multiplied by the trailing rows of `W` only. Equivalent to left-padding
    /// the input with zeros.
    pub fn forward_tail(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width == self.input_dim {
            return self.forward(tape, store, x);
        }
        if width > self.input_dim {
            return Err(Error::dim(
                "linear",
                format!("input width {width} exceeds {}", self.input_dim),
            ));
        }
        let w = tape.param(store, self.weight);
        let tail = tape.slice_rows(w, self.input_dim - width, self.input_dim)?;
        let b = tape.param(store, self.bias);
        let z = tape.matmul(x, tail)?;
        tape.add_row(z, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}
