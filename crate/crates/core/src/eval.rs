//! Sampled recall@k.
//!
//! Each query is ranked against a pool made of its true target plus
//! `n_distractors` training-side targets drawn without replacement. Pools are
//! drawn from a per-query seed stream, so they depend only on the config seed,
//! the query index and the source size, never on the model. The truth is
//! placed at a seeded uniform position in the pool; equal scores are broken by
//! pool position.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EmbeddingModel, EncodedPair, Side};
use crate::seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {required} distractors but only {available} are available")]
    InsufficientDistractors { required: usize, available: usize },
    #[error("no evaluation queries")]
    NoQueries,
    #[error("invalid eval config: {0}")]
    BadConfig(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub n_distractors: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 10, 20], n_distractors: 5000, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::BadConfig(format!("ks must be strictly ascending and >= 1, got {:?}", self.ks)));
        }
        if self.n_distractors == 0 {
            return Err(EvalError::BadConfig("n_distractors must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lang: String,
    pub model_id: String,
    pub pool_size: usize,
    pub n_queries: usize,
    /// Keyed by k; serialized with decimal-string keys.
    pub recall: BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let io = |message: String| EvalError::Io { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

/// One query's candidate pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    /// Distractor indices into the source, in pool order, truth excluded.
    pub distractors: Vec<usize>,
    /// Position of the truth in the full pool (`0..=distractors.len()`).
    pub truth_index: usize,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.distractors.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Full pool in order: `None` marks the truth, `Some(i)` a distractor.
    pub fn slots(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = self.distractors.iter().map(|&i| Some(i)).collect();
        out.insert(self.truth_index, None);
        out
    }
}

/// Truth plus `n_distractors` uniform draws without replacement.
pub fn build_pool(config: &EvalConfig, query_index: usize, source_len: usize) -> Result<Pool, EvalError> {
    if source_len < config.n_distractors {
        return Err(EvalError::InsufficientDistractors { required: config.n_distractors, available: source_len });
    }
    let mut rng = seed::rng(config.seed, &["pool", &query_index.to_string()]);
    let distractors = index::sample(&mut rng, source_len, config.n_distractors).into_vec();
    let truth_index = rng.random_range(0..=config.n_distractors);
    Ok(Pool { distractors, truth_index })
}

/// Zero-based rank of the truth: candidates scoring higher, plus candidates
/// scoring equal that sit earlier in the pool.
pub fn truth_rank(pool_scores: &[f32], truth_index: usize) -> usize {
    let t = pool_scores[truth_index];
    pool_scores
        .iter()
        .enumerate()
        .filter(|&(p, &s)| p != truth_index && (s > t || (s == t && p < truth_index)))
        .count()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-query truth ranks.
pub fn rank_queries(
    model: &EmbeddingModel<f32>,
    eval_pairs: &[EncodedPair],
    distractor_targets: &[Vec<u32>],
    config: &EvalConfig,
) -> Result<Vec<usize>, EvalError> {
    config.validate()?;
    if eval_pairs.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if distractor_targets.len() < config.n_distractors {
        return Err(EvalError::InsufficientDistractors {
            required: config.n_distractors,
            available: distractor_targets.len(),
        });
    }
    let source: Vec<Vec<f32>> = distractor_targets.par_iter().map(|ids| model.embed_bag(ids, Side::Target)).collect();
    eval_pairs
        .par_iter()
        .enumerate()
        .map(|(qi, pair)| {
            let pool = build_pool(config, qi, source.len())?;
            let q = model.embed_bag(&pair.query, Side::Query);
            let truth = model.embed_bag(&pair.target, Side::Target);
            let scores: Vec<f32> = pool
                .slots()
                .into_iter()
                .map(|slot| match slot {
                    None => dot(&q, &truth),
                    Some(i) => dot(&q, &source[i]),
                })
                .collect();
            Ok(truth_rank(&scores, pool.truth_index))
        })
        .collect()
}

/// Turns truth ranks into recall at each cutoff.
pub fn recall_from_ranks(ranks: &[usize], ks: &[usize]) -> BTreeMap<usize, f64> {
    ks.iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64))
        .collect()
}

pub fn recall_at_k(
    model: &EmbeddingModel<f32>,
    eval_pairs: &[EncodedPair],
    distractor_targets: &[Vec<u32>],
    config: &EvalConfig,
    lang: &str,
    model_id: &str,
) -> Result<EvalReport, EvalError> {
    let ranks = rank_queries(model, eval_pairs, distractor_targets, config)?;
    Ok(EvalReport {
        lang: lang.to_string(),
        model_id: model_id.to_string(),
        pool_size: config.n_distractors + 1,
        n_queries: ranks.len(),
        recall: recall_from_ranks(&ranks, &config.ks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use proptest::prelude::*;

    fn cfg(n: usize, ks: &[usize]) -> EvalConfig {
        EvalConfig { ks: ks.to_vec(), n_distractors: n, seed: 11 }
    }

    #[test]
    fn pool_examples() {
        let p = build_pool(&cfg(3, &[1]), 0, 3).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.slots().iter().filter(|s| s.is_none()).count(), 1);
        let mut d = p.distractors.clone();
        d.sort();
        assert_eq!(d, vec![0, 1, 2]);
        assert!(matches!(
            build_pool(&cfg(3, &[1]), 0, 2),
            Err(EvalError::InsufficientDistractors { required: 3, available: 2 })
        ));
        assert_eq!(build_pool(&cfg(5, &[1]), 4, 50).unwrap(), build_pool(&cfg(5, &[1]), 4, 50).unwrap());
    }

    #[test]
    fn rank_tie_break() {
        assert_eq!(truth_rank(&[1.0, 2.0, 1.0, 0.0], 2), 2);
        assert_eq!(truth_rank(&[1.0, 2.0, 1.0, 0.0], 0), 1);
        assert_eq!(truth_rank(&[5.0, 1.0], 0), 0);
    }

    fn toy_model() -> EmbeddingModel<f32> {
        let mut m = EmbeddingModel::<f32>::zeros(ModelConfig { dim: 2, ..Default::default() }, 4, "h");
        m.table = vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
        m
    }

    #[test]
    fn large_k_and_perfect_model() {
        let m = toy_model();
        let eval = vec![EncodedPair { query: vec![0], target: vec![0] }, EncodedPair { query: vec![1], target: vec![1] }];
        let source = vec![vec![2], vec![3], vec![2], vec![3]];
        let r = recall_at_k(&m, &eval, &source, &cfg(4, &[1, 5]), "xx", "m").unwrap();
        assert_eq!(r.at(1), Some(1.0));
        assert_eq!(r.at(5), Some(1.0));
        assert_eq!(r.pool_size, 5);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["recall"]["5"], 1.0);
    }

    #[test]
    fn zero_model_depends_only_on_truth_position() {
        let m = EmbeddingModel::<f32>::zeros(ModelConfig { dim: 2, ..Default::default() }, 4, "h");
        let eval: Vec<EncodedPair> = (0..30).map(|_| EncodedPair { query: vec![0], target: vec![1] }).collect();
        let source = vec![vec![2]; 10];
        let c = cfg(9, &[1, 3]);
        let ranks = rank_queries(&m, &eval, &source, &c).unwrap();
        for (qi, r) in ranks.iter().enumerate() {
            assert_eq!(*r, build_pool(&c, qi, 10).unwrap().truth_index);
        }
        assert!(matches!(rank_queries(&m, &[], &source, &c), Err(EvalError::NoQueries)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1, &[10, 1]).validate().is_err());
        assert!(cfg(1, &[0]).validate().is_err());
        assert!(cfg(0, &[1]).validate().is_err());
        assert!(cfg(1, &[1, 10, 20]).validate().is_ok());
    }

    proptest! {
        #[test]
        fn recall_is_monotone(ranks in proptest::collection::vec(0usize..50, 1..40)) {
            let r = recall_from_ranks(&ranks, &[1, 2, 5, 10, 20, 60]);
            let v: Vec<f64> = r.values().copied().collect();
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(v[5], 1.0);
        }

        #[test]
        fn monotone_transform_keeps_rank(scores in proptest::collection::vec(-8i32..8, 2..30), t in 0usize..30) {
            let t = t % scores.len();
            let s: Vec<f32> = scores.iter().map(|&x| x as f32).collect();
            let transformed: Vec<f32> = s.iter().map(|&x| (x / 4.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(truth_rank(&s, t), truth_rank(&transformed, t));
        }
    }
}
