use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::seed;

/// Embedding rows are initialized uniformly in `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f64 = 0.05;

/// Scalar type for model parameters: `f32` for training, `f64` for checks.
pub trait Real: Float + Sum + Send + Sync + Debug + Default + 'static {}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub tower_layers: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 64, tower_layers: 0, pooling: Pooling::Mean }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim == 0 {
            return Err(EncoderError::BadConfig("dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Target,
}

/// `out = tanh(weight · x + bias)`, weight row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(dim: usize) -> Self {
        Self { weight: vec![F::zero(); dim * dim], bias: vec![F::zero(); dim] }
    }

    /// Returns the activated output.
    pub(crate) fn forward(&self, x: &[F]) -> Vec<F> {
        let dim = x.len();
        self.weight
            .chunks_exact(dim)
            .zip(&self.bias)
            .map(|(row, &b)| (dot(row, x) + b).tanh())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TowerParams<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Real> TowerParams<F> {
    /// Applies every layer, keeping each layer's input for backprop.
    pub(crate) fn forward_cached(&self, pooled: Vec<F>) -> (Vec<F>, Vec<Vec<F>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = pooled;
        for layer in &self.layers {
            let next = layer.forward(&h);
            inputs.push(h);
            h = next;
        }
        (h, inputs)
    }

    pub(crate) fn forward(&self, pooled: Vec<F>) -> Vec<F> {
        self.layers.iter().fold(pooled, |h, l| l.forward(&h))
    }
}

/// Shared embedding table plus per-tower layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<F = f32> {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub rows: usize,
    /// Row-major `rows × dim`.
    pub table: Vec<F>,
    pub query_tower: TowerParams<F>,
    pub target_tower: TowerParams<F>,
}

impl<F: Real> EmbeddingModel<F> {
    pub fn zeros(config: ModelConfig, rows: usize, vocab_hash: impl Into<String>) -> Self {
        let tower = || TowerParams { layers: (0..config.tower_layers).map(|_| Dense::zeros(config.dim)).collect() };
        Self {
            config,
            vocab_hash: vocab_hash.into(),
            rows,
            table: vec![F::zero(); rows * config.dim],
            query_tower: tower(),
            target_tower: tower(),
        }
    }

    /// Table uniform in `[-INIT_RANGE, INIT_RANGE]`; tower weights uniform in
    /// `±1/sqrt(dim)` with zero bias.
    pub fn init_uniform(config: ModelConfig, rows: usize, vocab_hash: impl Into<String>, seed_value: u64) -> Self {
        let mut m = Self::zeros(config, rows, vocab_hash);
        let mut rng = seed::rng(seed_value, &["init", "table"]);
        for w in m.table.iter_mut() {
            *w = F::from(rng.random_range(-INIT_RANGE..=INIT_RANGE)).unwrap();
        }
        let scale = 1.0 / (config.dim as f64).sqrt();
        for (name, tower) in [("query", &mut m.query_tower), ("target", &mut m.target_tower)] {
            let mut rng = seed::rng(seed_value, &["init", name]);
            for layer in tower.layers.iter_mut() {
                for w in layer.weight.iter_mut() {
                    *w = F::from(rng.random_range(-scale..=scale)).unwrap();
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn row(&self, id: u32) -> &[F] {
        let d = self.config.dim;
        &self.table[id as usize * d..(id as usize + 1) * d]
    }

    pub fn tower(&self, side: Side) -> &TowerParams<F> {
        match side {
            Side::Query => &self.query_tower,
            Side::Target => &self.target_tower,
        }
    }

    /// Multiplicity-weighted pooling of table rows; ids past the table are
    /// treated as out of vocabulary. Returns the pooled vector and the count of
    /// rows that contributed.
    pub fn pool(&self, ids: &[u32]) -> (Vec<F>, usize) {
        let d = self.config.dim;
        let mut acc = vec![F::zero(); d];
        let mut n = 0usize;
        for &id in ids {
            if (id as usize) < self.rows {
                for (a, &r) in acc.iter_mut().zip(self.row(id)) {
                    *a = *a + r;
                }
                n += 1;
            }
        }
        if n > 0 && self.config.pooling == Pooling::Mean {
            let inv = F::one() / F::from(n).unwrap();
            acc.iter_mut().for_each(|a| *a = *a * inv);
        }
        (acc, n)
    }

    /// Encodes a bag of feature ids with one tower. An empty bag pools to the
    /// zero vector before the tower is applied.
    pub fn embed_bag(&self, ids: &[u32], side: Side) -> Vec<F> {
        self.tower(side).forward(self.pool(ids).0)
    }

    pub fn is_finite(&self) -> bool {
        let towers = self.query_tower.layers.iter().chain(&self.target_tower.layers);
        self.table.iter().all(|x| x.is_finite())
            && towers.flat_map(|l| l.weight.iter().chain(&l.bias)).all(|x| x.is_finite())
    }

    /// Converts every parameter to another float type.
    pub fn cast<G: Real>(&self) -> EmbeddingModel<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from(*x).unwrap()).collect::<Vec<G>>();
        let tower = |t: &TowerParams<F>| TowerParams {
            layers: t.layers.iter().map(|l| Dense { weight: conv(&l.weight), bias: conv(&l.bias) }).collect(),
        };
        EmbeddingModel {
            config: self.config,
            vocab_hash: self.vocab_hash.clone(),
            rows: self.rows,
            table: conv(&self.table),
            query_tower: tower(&self.query_tower),
            target_tower: tower(&self.target_tower),
        }
    }
}

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Inner product of two embeddings.
pub fn score<F: Real>(q: &[F], c: &[F]) -> Result<F, EncoderError> {
    if q.len() != c.len() {
        return Err(EncoderError::DimensionMismatch { left: q.len(), right: c.len() });
    }
    Ok(dot(q, c))
}
