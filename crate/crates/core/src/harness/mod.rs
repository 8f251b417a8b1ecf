//! Experiment recipes: data preparation, staged outputs with a manifest,
//! and the three canned studies (per-language vs combined, transitive
//! transfer, mixture sweep).

mod config;
mod manifest;
mod matrix;
mod split;
mod sweep;
mod transitive;

use std::collections::BTreeMap;
use std::fmt::Display;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, ExamplePair, SectionRecord};
use crate::encoder::{encode_pairs, train, EmbeddingModel, TrainConfig, TrainReport};
use crate::eval::{recall_at_k, EvalReport};
use crate::synth::gen_corpus;
use crate::vocab::{build_vocab_par, Vocabulary};

pub use config::{CensorDirective, ExperimentConfig, Roles, DEFAULT_VOCAB_CAP};
pub use manifest::{config_digest, sha256_file, ArtifactEntry, Manifest, OutputDir, MANIFEST_FILE};
pub use matrix::{run_matrix_on, run_per_language_vs_combined, MatrixReport, MatrixSeed, TableOutcome, COMBINED};
pub use split::{prepare, split_of, LanguageData, Split};
pub use sweep::{run_mixture_sweep, run_sweep_on, RatioMean, SweepReference, SweepReport, SweepRow, SWEEP_REFERENCE};
pub use transitive::{run_transitive, OverlapEdgeReport, SeedOutcome, TransitivePreset, TransitiveReport, REFERENCE_RELATIVE_GAINS};

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {message}")]
pub struct HarnessError {
    pub stage: String,
    pub message: String,
}

impl HarnessError {
    pub fn new(stage: &str, message: impl Display) -> Self {
        Self { stage: stage.to_string(), message: message.to_string() }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T, HarnessError>;
}

impl<T, E: Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &str) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::new(stage, e))
    }
}

/// Sections for every configured language, from files or the synthetic spec.
pub fn load_records(config: &ExperimentConfig) -> Result<Vec<SectionRecord>, HarnessError> {
    if !config.corpora.is_empty() {
        let mut all = Vec::new();
        for (lang, path) in &config.corpora {
            let recs = load_corpus(path).stage("load")?;
            if let Some(bad) = recs.iter().find(|r| &r.lang != lang) {
                return Err(HarnessError::new(
                    "load",
                    format!("{}: record {} has lang {}, expected {lang}", path.display(), bad.doc_id, bad.lang),
                ));
            }
            all.extend(recs);
        }
        Ok(all)
    } else if let Some(spec) = &config.synth {
        gen_corpus(spec).stage("synth")
    } else {
        Err(HarnessError::new("config", "neither corpora nor synth configured"))
    }
}

/// Loads and splits every language.
pub fn load_data(config: &ExperimentConfig) -> Result<BTreeMap<String, LanguageData>, HarnessError> {
    let records = load_records(config)?;
    Ok(prepare(&records, config.task, config.min_words, config.split_seed, config.split_seed))
}

/// A trained model with its vocabulary.
#[derive(Debug, Clone)]
pub struct Leg {
    pub name: String,
    pub vocab: Vocabulary,
    pub model: EmbeddingModel<f32>,
    pub report: TrainReport,
}

/// Builds a vocabulary from `pairs` and trains on them.
pub fn train_leg(name: &str, pairs: &[ExamplePair], config: &ExperimentConfig, seed: u64) -> Result<Leg, HarnessError> {
    let stage = format!("train {name}");
    if pairs.is_empty() {
        return Err(HarnessError::new(&stage, "no training pairs"));
    }
    let vocab = build_vocab_par(pairs, config.vocab_cap);
    let tc = TrainConfig { seed, ..config.train.clone() };
    let (model, report) = train(pairs, config.model, &tc, &vocab).stage(&stage)?;
    log::info!("{name}: {} pairs, {} features, {} steps", pairs.len(), vocab.len(), report.steps);
    Ok(Leg { name: name.to_string(), vocab, model, report })
}

/// Trains several legs in parallel; each leg stays internally sequential, so
/// results match a serial run.
pub fn train_legs(
    jobs: &[(String, Vec<ExamplePair>)],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<Leg>, HarnessError> {
    jobs.par_iter().map(|(name, pairs)| train_leg(name, pairs, config, seed)).collect()
}

/// Scores `leg` on a language's eval split, with distractors drawn from that
/// language's training targets.
pub fn eval_leg(
    leg: &Leg,
    lang: &str,
    data: &LanguageData,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    let stage = format!("eval {} on {lang}", leg.name);
    let queries = encode_pairs(&data.eval, &leg.vocab);
    let distractors: Vec<Vec<u32>> = data.train.iter().map(|p| leg.vocab.encode(&p.target_feats)).collect();
    let ec = crate::eval::EvalConfig { seed, ..config.eval.clone() };
    recall_at_k(&leg.model, &queries, &distractors, &ec, lang, &leg.name).stage(&stage)
}

/// Seed-mean of a set of recall maps.
pub fn mean_recall<'a, I>(maps: I) -> BTreeMap<usize, f64>
where
    I: IntoIterator<Item = &'a BTreeMap<usize, f64>>,
{
    let mut sum: BTreeMap<usize, f64> = BTreeMap::new();
    let mut n = 0usize;
    for m in maps {
        n += 1;
        for (&k, &v) in m {
            *sum.entry(k).or_default() += v;
        }
    }
    sum.values_mut().for_each(|v| *v /= n.max(1) as f64);
    sum
}

/// Training telemetry as written next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub name: String,
    pub train_pairs: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub report: TrainReport,
}

impl LegSummary {
    pub fn of(leg: &Leg, train_pairs: usize) -> Self {
        Self {
            name: leg.name.clone(),
            train_pairs,
            vocab_size: leg.vocab.len(),
            vocab_hash: leg.vocab.digest(),
            report: leg.report.clone(),
        }
    }
}

/// Writes a leg's vocabulary, checkpoint and telemetry under `out`.
pub(crate) fn write_leg(out: &mut OutputDir, prefix: &str, leg: &Leg, train_pairs: usize) -> Result<(), HarnessError> {
    let stage = "write";
    out.write(&format!("{prefix}vocab/{}.tsv", leg.name), leg.vocab.to_tsv().as_bytes())?;
    out.write(&format!("{prefix}checkpoints/{}.mdrl", leg.name), &crate::encoder::encode_checkpoint(&leg.model))?;
    let summary = serde_json::to_string_pretty(&LegSummary::of(leg, train_pairs)).stage(stage)?;
    out.write(&format!("{prefix}train/{}.json", leg.name), summary.as_bytes())
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, HarnessError> {
    let mut s = serde_json::to_string_pretty(value).stage("write")?;
    s.push('\n');
    Ok(s.into_bytes())
}
