use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, EncodedPair, Gradients};
use super::model::{Dense, EmbeddingModel, ModelConfig, Real};
use super::EncoderError;
use crate::corpus::ExamplePair;
use crate::seed;
use crate::vocab::Vocabulary;

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adagrad,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Strictly sequential updates; required for bitwise reproducibility.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 5,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Adagrad,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.batch_size < 2 {
            return Err(EncoderError::BadConfig("batch_size must be at least 2".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(EncoderError::BadConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch loss telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainReport {
    /// Mean batch loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Tail batches dropped for having fewer than two pairs.
    pub skipped_batches: usize,
}

/// A model plus optimizer state.
pub struct Trainer<F: Real> {
    model: EmbeddingModel<F>,
    config: TrainConfig,
    table_acc: Vec<F>,
    query_acc: Vec<Dense<F>>,
    target_acc: Vec<Dense<F>>,
}

fn update<F: Real>(params: &mut [F], grads: &[F], acc: &mut [F], kind: OptimizerKind, lr: F) {
    match kind {
        OptimizerKind::Sgd => {
            for (p, &g) in params.iter_mut().zip(grads) {
                *p = *p - lr * g;
            }
        }
        OptimizerKind::Adagrad => {
            let eps = F::from(ADAGRAD_EPS).unwrap();
            for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
                *a = *a + g * g;
                *p = *p - lr * g / (*a + eps).sqrt();
            }
        }
    }
}

impl<F: Real> Trainer<F> {
    pub fn new(model: EmbeddingModel<F>, config: TrainConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        model.config.validate()?;
        let dim = model.dim();
        let zeros = |n: usize| (0..n).map(|_| Dense::zeros(dim)).collect();
        Ok(Self {
            table_acc: vec![F::zero(); model.table.len()],
            query_acc: zeros(model.query_tower.layers.len()),
            target_acc: zeros(model.target_tower.layers.len()),
            model,
            config,
        })
    }

    pub fn model(&self) -> &EmbeddingModel<F> {
        &self.model
    }

    pub fn into_model(self) -> EmbeddingModel<F> {
        self.model
    }

    pub fn apply(&mut self, grads: &Gradients<F>) {
        let kind = self.config.optimizer;
        let lr = F::from(self.config.learning_rate).unwrap();
        let dim = self.model.dim();
        for (id, g) in &grads.rows {
            let r = *id as usize * dim..(*id as usize + 1) * dim;
            update(&mut self.model.table[r.clone()], g, &mut self.table_acc[r], kind, lr);
        }
        let towers = [
            (&mut self.model.query_tower.layers, &grads.query_tower, &mut self.query_acc),
            (&mut self.model.target_tower.layers, &grads.target_tower, &mut self.target_acc),
        ];
        for (layers, gl, acc) in towers {
            for ((layer, g), a) in layers.iter_mut().zip(gl).zip(acc.iter_mut()) {
                update(&mut layer.weight, &g.weight, &mut a.weight, kind, lr);
                update(&mut layer.bias, &g.bias, &mut a.bias, kind, lr);
            }
        }
    }

    /// One optimizer step; returns the pre-update batch loss.
    pub fn step(&mut self, batch: &[EncodedPair]) -> Result<F, EncoderError> {
        let (loss, grads) = batch_loss(&self.model, batch)?;
        self.apply(&grads);
        Ok(loss)
    }

    /// Runs every configured epoch over `pairs`.
    pub fn fit(&mut self, pairs: &[EncodedPair]) -> Result<TrainReport, EncoderError> {
        if pairs.is_empty() {
            return Err(EncoderError::EmptyStream);
        }
        let mut report = TrainReport::default();
        let workers = if self.config.deterministic { 1 } else { rayon::current_num_threads().max(1) };
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut seed::rng(self.config.seed, &["epoch", &epoch.to_string()]));
            let batches: Vec<Vec<EncodedPair>> = order
                .chunks(self.config.batch_size)
                .filter(|c| c.len() >= 2)
                .map(|c| c.iter().map(|&i| pairs[i].clone()).collect())
                .collect();
            report.skipped_batches += order.chunks(self.config.batch_size).filter(|c| c.len() < 2).count();

            let mut total = 0.0f64;
            for (g, group) in batches.chunks(workers).enumerate() {
                // With one worker this is a plain sequential step. With more,
                // each group's gradients are taken against the same snapshot.
                let results: Vec<Result<(F, Gradients<F>), EncoderError>> = if workers == 1 {
                    vec![batch_loss(&self.model, &group[0])]
                } else {
                    group.par_iter().map(|b| batch_loss(&self.model, b)).collect()
                };
                for (k, res) in results.into_iter().enumerate() {
                    let (loss, grads) = res?;
                    let batch = g * workers + k;
                    let loss = loss.to_f64().unwrap_or(f64::NAN);
                    if !loss.is_finite() {
                        return Err(EncoderError::NonFiniteLoss { epoch, batch });
                    }
                    total += loss;
                    self.apply(&grads);
                    report.steps += 1;
                }
            }
            let mean = if batches.is_empty() { f64::NAN } else { total / batches.len() as f64 };
            log::info!("epoch {epoch}: mean loss {mean:.6} over {} batches", batches.len());
            report.epoch_losses.push(mean);
        }
        Ok(report)
    }
}

/// Trains from a fresh uniform initialization.
pub fn train_encoded<F: Real>(
    pairs: &[EncodedPair],
    rows: usize,
    vocab_hash: &str,
    model_config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<(EmbeddingModel<F>, TrainReport), EncoderError> {
    let model = EmbeddingModel::init_uniform(model_config, rows, vocab_hash, train_config.seed);
    let mut trainer = Trainer::new(model, train_config.clone())?;
    let report = trainer.fit(pairs)?;
    Ok((trainer.into_model(), report))
}

pub fn encode_pairs(pairs: &[ExamplePair], vocab: &Vocabulary) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair { query: vocab.encode(&p.query_feats), target: vocab.encode(&p.target_feats) })
        .collect()
}

/// Trains a 32-bit model bound to `vocab`.
pub fn train(
    pairs: &[ExamplePair],
    model_config: ModelConfig,
    train_config: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(EmbeddingModel<f32>, TrainReport), EncoderError> {
    let encoded = encode_pairs(pairs, vocab);
    train_encoded(&encoded, vocab.len(), &vocab.digest(), model_config, train_config)
}
