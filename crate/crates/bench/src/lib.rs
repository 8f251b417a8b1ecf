//! Shared fixtures for the benchmarks.

use mdr_core::corpus::{extract_pairs, ExamplePair, PairKind};
use mdr_core::encoder::{EmbeddingModel, EncodedPair, ModelConfig};
use mdr_core::synth::{gen_corpus, SynthSpec};

/// NSP pairs from the default synthetic spec.
pub fn synthetic_pairs() -> Vec<ExamplePair> {
    let spec = SynthSpec::default();
    gen_corpus(&spec)
        .expect("default spec is valid")
        .iter()
        .flat_map(|r| extract_pairs(r, PairKind::Nsp, 0, 4))
        .collect()
}

/// A random model and `n` encoded pairs with `bag` ids per side.
pub fn model_and_batch(rows: usize, dim: usize, n: usize, bag: usize) -> (EmbeddingModel<f32>, Vec<EncodedPair>) {
    let model = EmbeddingModel::init_uniform(ModelConfig { dim, ..Default::default() }, rows, "bench", 1);
    let ids = |i: usize, salt: usize| -> Vec<u32> { (0..bag).map(|j| ((i * 7919 + j * 104_729 + salt) % rows) as u32).collect() };
    let pairs = (0..n).map(|i| EncodedPair { query: ids(i, 0), target: ids(i, 13) }).collect();
    (model, pairs)
}
