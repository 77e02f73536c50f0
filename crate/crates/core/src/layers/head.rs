use rand::Rng;

use super::linear::Linear;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Mean over time, then an affine map to class scores and a log-softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct AvgPoolLinearHead {
    pub linear: Linear,
    pub classes: usize,
}

impl AvgPoolLinearHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        classes: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let linear = Linear::new(store, name, input_dim, classes, scale, rng)?;
        Ok(AvgPoolLinearHead { linear, classes })
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim
    }

    /// Batched form over time-major `B x w` steps. `inv_lengths` holds
    /// `1 / length` per row. Returns `B x classes` log-probabilities.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        steps: &[Var],
        masks: &[Option<Var>],
        inv_lengths: Var,
    ) -> Result<Var> {
        if steps.is_empty() {
            return Err(Error::Contract("average pooling over an empty sequence".into()));
        }
        let mut total: Option<Var> = None;
        for (&s, m) in steps.iter().zip(masks) {
            let s = match m {
                Some(m) => tape.mul_col(s, *m)?,
                None => s,
            };
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let pooled = tape.mul_col(total.expect("non-empty"), inv_lengths)?;
        let logits = self.linear.forward_tail(tape, store, pooled)?;
        Ok(tape.log_softmax(logits))
    }

    /// Unbatched form: `T x w` in, `1 x classes` log-probabilities out.
    pub fn forward_sequence(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var> {
        let pooled = tape.mean(seq, 0)?;
        let logits = self.linear.forward_tail(tape, store, pooled)?;
        Ok(tape.log_softmax(logits))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.linear.params()
    }
}
