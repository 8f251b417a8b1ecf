//! Siamese embedding-bag dual encoder.
//!
//! Both towers share one token embedding table. A tower pools the rows of its
//! in-vocabulary features and optionally applies `tower_layers` dense tanh
//! layers of width `dim`. Query/candidate similarity is the raw dot product.

mod checkpoint;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{batch_loss, batch_row_losses, EncodedPair, Gradients};
pub use model::{score, Dense, EmbeddingModel, ModelConfig, Pooling, Real, Side, TowerParams, INIT_RANGE};
pub use train::{encode_pairs, train, train_encoded, OptimizerKind, TrainConfig, TrainReport, Trainer};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("batch of {0} pairs; in-batch negatives need at least 2")]
    BatchTooSmall(usize),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("training stream is empty")]
    EmptyStream,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated or oversized: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("vocabulary hash mismatch: checkpoint has {checkpoint}, vocabulary is {vocab}")]
    VocabMismatch { checkpoint: String, vocab: String },
}
