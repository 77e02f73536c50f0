//! Parameterized building blocks: embeddings, LSTM cells and the
//! bidirectional module that forms the shareable unit, the average-pool
//! classifier, the linear-chain CRF and the cross-stitch mixer.

mod crf;
mod cross_stitch;
mod embedding;
mod head;
mod linear;
mod lstm;

pub use crf::{viterbi, CrfLayer};
pub use cross_stitch::CrossStitchUnit;
pub use embedding::EmbeddingTable;
pub use head::AvgPoolLinearHead;
pub use linear::Linear;
pub use lstm::{BiLstmModule, LstmCell};

/// Half-width of the uniform initializer used for every layer parameter.
pub const INIT_SCALE: f64 = 0.08;
