use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Word embedding table, one row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub weights: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Config(format!("embedding `{name}` needs rows >= 1 and dim >= 1")));
        }
        let weights = store.add_uniform(format!("{name}.weights"), &[rows, dim], scale, rng)?;
        Ok(EmbeddingTable { weights, rows, dim })
    }

    /// `ids.len() x dim` matrix of looked-up rows.
    pub fn lookup(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = tape.param(store, self.weights);
        tape.gather(table, ids)
    }
}
