//! Task definitions, synthetic suites with known structure, corpus loaders
//! and mini-batching.

mod batch;
mod io;
mod probe;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_iterator, sequential_batches, Batch, BatchIter, BatchLabels};
pub use io::{
    encode_suite, load_conll, load_csv_classification, read_conll, read_csv_classification,
    split_indices, CsvSchema, RawLabel, RawSample, RawTask, Vocabulary,
};
pub use probe::memoryless_probe;
pub use synthetic::{
    gen_cluster_classification_suite, gen_hierarchy_labeling_suite, high_tags, low_tags, mid_tags,
    polarity_label, ClusterLexicon, GeneratorKind, SyntheticSpec,
};

/// Token id reserved for padding and out-of-vocabulary words.
pub const PAD: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Tagging,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Tags(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub name: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Ground-truth cluster of a synthetic task.
    pub cluster: Option<usize>,
    /// Ground-truth depth of a synthetic task in its hierarchy (1 = lowest).
    pub level: Option<usize>,
}

impl TaskSpec {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Checks label shapes and id ranges against `vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let k = self.labels.len();
        for s in self.train.iter().chain(&self.dev).chain(&self.test) {
            if s.tokens.is_empty() {
                return Err(Error::Contract(format!("task `{}` has an empty sample", self.name)));
            }
            if let Some(&bad) = s.tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(Error::bounds(format!("task `{}` token", self.name), bad, vocab_size));
            }
            match (&s.label, self.kind) {
                (Label::Class(c), TaskKind::Classification) if *c < k => {}
                (Label::Tags(tags), TaskKind::Tagging)
                    if tags.len() == s.tokens.len() && tags.iter().all(|&y| y < k) => {}
                _ => {
                    return Err(Error::Contract(format!(
                        "task `{}` has a label inconsistent with its kind or label set",
                        self.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Tasks sharing one vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub vocab_size: usize,
    pub tasks: Vec<TaskSpec>,
}

impl Suite {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Contract("suite without tasks".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.id != i {
                return Err(Error::Contract(format!("task `{}` has id {} at position {i}", t.name, t.id)));
            }
            t.validate(self.vocab_size)?;
        }
        Ok(())
    }
}

/// `(train, dev)` counts for a 70/10/20 split of `n` items; test takes the rest.
pub(crate) fn split_counts(n: usize) -> (usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let dev = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, dev)
}
