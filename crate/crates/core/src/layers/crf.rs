use rand::Rng;

use crate::autodiff::crf_kernel;
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Linear-chain CRF output layer. `transitions[i][j]` scores label `i`
/// followed by label `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfLayer {
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
    pub labels: usize,
}

impl CrfLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        labels: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if labels == 0 {
            return Err(Error::Config(format!("crf `{name}` needs at least one label")));
        }
        let transitions = store.add_uniform(format!("{name}.transitions"), &[labels, labels], scale, rng)?;
        let start = store.add_uniform(format!("{name}.start"), &[labels], scale, rng)?;
        let stop = store.add_uniform(format!("{name}.stop"), &[labels], scale, rng)?;
        Ok(CrfLayer {
            transitions,
            start,
            stop,
            labels,
        })
    }

    /// Batched log-likelihoods; see [`Tape::crf_log_likelihood`].
    pub fn log_likelihood(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emissions: &[Var],
        tags: &[&[usize]],
    ) -> Result<Var> {
        let trans = tape.param(store, self.transitions);
        let start = tape.param(store, self.start);
        let stop = tape.param(store, self.stop);
        tape.crf_log_likelihood(emissions, trans, start, stop, tags)
    }

    /// `log p(tags | emissions)` for one `T x K` emission matrix.
    pub fn log_likelihood_sequence(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emissions: Var,
        tags: &[usize],
    ) -> Result<Var> {
        let t_len = tape.value(emissions).rows();
        if tags.len() != t_len {
            return Err(Error::dim("crf", format!("{} tags for {t_len} steps", tags.len())));
        }
        let steps = (0..t_len)
            .map(|t| tape.slice_rows(emissions, t, t + 1))
            .collect::<Result<Vec<_>>>()?;
        let ll = self.log_likelihood(tape, store, &steps, &[tags])?;
        Ok(tape.sum(ll))
    }

    fn weights<'a>(&self, store: &'a ParamStore) -> (&'a [f64], &'a [f64], &'a [f64]) {
        (
            store.value(self.transitions).data(),
            store.value(self.start).data(),
            store.value(self.stop).data(),
        )
    }

    /// Highest-scoring label path for a `T x K` emission matrix and its score.
    pub fn viterbi(&self, store: &ParamStore, emissions: &Tensor) -> Result<(Vec<usize>, f64)> {
        let (t_len, k) = emissions.dims2();
        if k != self.labels {
            return Err(Error::dim("crf_viterbi", format!("{k} emission columns for {} labels", self.labels)));
        }
        let (trans, start, stop) = self.weights(store);
        Ok(viterbi(emissions.data(), t_len, k, trans, start, stop))
    }

    /// Unnormalized score of `path`.
    pub fn score(&self, store: &ParamStore, emissions: &Tensor, path: &[usize]) -> f64 {
        let (trans, start, stop) = self.weights(store);
        crf_kernel::path_score(emissions.data(), self.labels, trans, start, stop, path)
    }

    /// `log Z` computed by the forward recursion.
    pub fn log_partition(&self, store: &ParamStore, emissions: &Tensor) -> f64 {
        let (t_len, k) = emissions.dims2();
        let (trans, start, stop) = self.weights(store);
        crf_kernel::log_partition(emissions.data(), t_len, k, trans, start, stop)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.transitions, self.start, self.stop]
    }
}

/// Max-product decoding over a row-major `len x k` emission buffer. Ties
/// resolve toward the lower label index.
pub fn viterbi(
    emit: &[f64],
    len: usize,
    k: usize,
    trans: &[f64],
    start: &[f64],
    stop: &[f64],
) -> (Vec<usize>, f64) {
    let mut best = vec![0.0; k];
    for j in 0..k {
        best[j] = start[j] + emit[j];
    }
    let mut back = vec![0usize; len * k];
    let mut next = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            let mut arg = 0;
            let mut val = best[0] + trans[j];
            for i in 1..k {
                let v = best[i] + trans[i * k + j];
                if v > val {
                    val = v;
                    arg = i;
                }
            }
            next[j] = val + emit[t * k + j];
            back[t * k + j] = arg;
        }
        std::mem::swap(&mut best, &mut next);
    }
    let mut last = 0;
    let mut score = best[0] + stop[0];
    for j in 1..k {
        let v = best[j] + stop[j];
        if v > score {
            score = v;
            last = j;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    (path, score)
}
