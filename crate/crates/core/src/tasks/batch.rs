use rand::seq::SliceRandom;
use rand::Rng;

use super::{Label, Sample, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BatchLabels {
    Classes(Vec<usize>),
    Tags(Vec<Vec<usize>>),
}

/// Sequences padded with [`PAD`] to the longest length in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B` rows of `max_len` token ids.
    pub tokens: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub labels: BatchLabels,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let lengths: Vec<usize> = samples.iter().map(|s| s.tokens.len()).collect();
        if lengths.contains(&0) {
            return Err(Error::Contract("batch contains an empty sequence".into()));
        }
        let max_len = *lengths.iter().max().expect("non-empty");
        let tokens = samples
            .iter()
            .map(|s| {
                let mut row = s.tokens.clone();
                row.resize(max_len, PAD);
                row
            })
            .collect();
        let labels = match &first.label {
            Label::Class(_) => BatchLabels::Classes(
                samples
                    .iter()
                    .map(|s| match s.label {
                        Label::Class(c) => Ok(c),
                        Label::Tags(_) => Err(Error::Contract("mixed label kinds in batch".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
            Label::Tags(_) => BatchLabels::Tags(
                samples
                    .iter()
                    .map(|s| match &s.label {
                        Label::Tags(t) if t.len() == s.tokens.len() => Ok(t.clone()),
                        _ => Err(Error::Contract("tag sequence does not match tokens".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Batch {
            tokens,
            lengths,
            max_len,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Token ids of every row at step `t`.
    pub fn step_ids(&self, t: usize) -> Vec<usize> {
        self.tokens.iter().map(|row| row[t]).collect()
    }

    /// 0/1 validity per row at step `t`, or `None` when every row is valid.
    pub fn step_mask(&self, t: usize) -> Option<Vec<f64>> {
        if self.lengths.iter().all(|&l| l > t) {
            return None;
        }
        Some(self.lengths.iter().map(|&l| if l > t { 1.0 } else { 0.0 }).collect())
    }

    pub fn inv_lengths(&self) -> Vec<f64> {
        self.lengths.iter().map(|&l| 1.0 / l as f64).collect()
    }

    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// One shuffled pass over a split, yielding full batches and a final partial
/// one.
#[derive(Clone, Debug)]
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked: Vec<&Sample> = self.order[self.pos..end].iter().map(|&i| &self.samples[i]).collect();
        self.pos = end;
        Some(Batch::from_samples(&picked).expect("samples validated with their task"))
    }
}

impl BatchIter<'_> {
    pub fn remaining(&self) -> usize {
        (self.order.len() - self.pos).div_ceil(self.batch_size)
    }
}

pub fn batch_iterator<'a>(samples: &'a [Sample], batch_size: usize, rng: &mut impl Rng) -> BatchIter<'a> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    BatchIter {
        samples,
        order,
        batch_size,
        pos: 0,
    }
}

/// In-order batches, used for evaluation.
pub fn sequential_batches(samples: &[Sample], batch_size: usize) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch size must be positive");
    BatchIter {
        samples,
        order: (0..samples.len()).collect(),
        batch_size,
        pos: 0,
    }
}
