//! Workbench for multilingual deep retrieval with instance-based transfer.
//!
//! The pipeline: sectioned corpora ([`corpus`]) become featurized
//! next-sentence or inverse-cloze pairs; pairs build shared n-gram
//! vocabularies ([`vocab`]); a siamese embedding-bag dual encoder
//! ([`encoder`]) is trained with in-batch softmax; models are scored with
//! sampled recall@k ([`eval`]); and per-language versus pooled results feed
//! the regression analysis in [`analysis`]. [`synth`] generates corpora with
//! a known overlap graph and [`harness`] runs the canned experiments.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod harness;
pub mod mixture;
pub mod seed;
pub mod synth;
pub mod vocab;

pub use analysis::{linear_fit, multi_fit, pearson_r, relative_improvement, transfer_table, FitResult, TransferPoint, TransferTable};
pub use corpus::{featurize, tokenize, ExamplePair, NGramFeature, PairKind, SectionRecord};
pub use encoder::{EmbeddingModel, EncodedPair, ModelConfig, Pooling, Side, TrainConfig};
pub use eval::{recall_at_k, EvalConfig, EvalReport};
pub use mixture::{mix, native_ratio, MixtureSpec};
pub use synth::{fig7_preset, matrix_preset, SynthSpec};
pub use vocab::{asym_overlap, censor, jaccard, merge, OverlapStats, Vocabulary};
