//! One model per language plus one pooled model, evaluated pairwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{eval_leg, load_data, mean_recall, train_legs, write_leg, ExperimentConfig, HarnessError, LanguageData, OutputDir, StageExt};
use crate::analysis::{transfer_table, TransferPoint, TransferTable};
use crate::eval::EvalReport;
use crate::vocab::asym_overlap;

pub const COMBINED: &str = "combined";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSeed {
    pub seed: u64,
    pub per_language: BTreeMap<String, BTreeMap<usize, f64>>,
    pub combined: BTreeMap<String, BTreeMap<usize, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOutcome {
    pub k: usize,
    pub table: Option<TransferTable>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub languages: Vec<String>,
    pub reference_lang: String,
    pub train_pairs: BTreeMap<String, usize>,
    pub eval_pairs: BTreeMap<String, usize>,
    /// Share of the pooled training stream per language.
    pub train_share: BTreeMap<String, f64>,
    pub overlap_with_reference: BTreeMap<String, f64>,
    pub seeds: Vec<MatrixSeed>,
    pub mean_per_language: BTreeMap<String, BTreeMap<usize, f64>>,
    pub mean_combined: BTreeMap<String, BTreeMap<usize, f64>>,
    pub tables: Vec<TableOutcome>,
}

impl MatrixReport {
    /// Relative improvement of the pooled model on `lang` at `k` for one seed entry.
    pub fn seed_relative(&self, seed_index: usize, lang: &str, k: usize) -> Option<f64> {
        let s = self.seeds.get(seed_index)?;
        let p = *s.per_language.get(lang)?.get(&k)?;
        let c = *s.combined.get(lang)?.get(&k)?;
        (p > 0.0).then(|| (c - p) / p)
    }
}

/// Loads the configured corpora and runs the matrix, writing artifacts
/// under `config.out_dir` when set.
pub fn run_per_language_vs_combined(config: &ExperimentConfig) -> Result<MatrixReport, HarnessError> {
    config.validate()?;
    let data = load_data(config)?;
    let mut out = OutputDir::new(config.out_dir.as_deref())?;
    let report = run_matrix_on(config, &data, &mut out)?;
    out.commit("run-matrix", config)?;
    Ok(report)
}

/// Runs the matrix over prepared data, staging artifacts into `out`.
pub fn run_matrix_on(
    config: &ExperimentConfig,
    data: &BTreeMap<String, LanguageData>,
    out: &mut OutputDir,
) -> Result<MatrixReport, HarnessError> {
    let languages: Vec<String> = data.keys().cloned().collect();
    if languages.len() < 2 {
        return Err(HarnessError::new("config", format!("need at least 2 languages, got {}", languages.len())));
    }
    for lang in &languages {
        let d = &data[lang];
        if d.train.is_empty() || d.eval.is_empty() {
            return Err(HarnessError::new(
                "split",
                format!("{lang}: {} train and {} eval pairs", d.train.len(), d.eval.len()),
            ));
        }
    }
    let train_pairs: BTreeMap<String, usize> = languages.iter().map(|l| (l.clone(), data[l].train.len())).collect();
    let eval_pairs: BTreeMap<String, usize> = languages.iter().map(|l| (l.clone(), data[l].eval.len())).collect();
    let total: usize = train_pairs.values().sum();
    let train_share: BTreeMap<String, f64> =
        train_pairs.iter().map(|(l, &n)| (l.clone(), n as f64 / total as f64)).collect();
    let reference_lang = match &config.reference_lang {
        Some(r) if data.contains_key(r) => r.clone(),
        Some(r) => return Err(HarnessError::new("config", format!("reference language {r} not configured"))),
        None => train_pairs.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap().0.clone(),
    };

    // Pooled stream: languages concatenated in code order, so proportions are native.
    let pooled: Vec<_> = languages.iter().flat_map(|l| data[l].train.iter().cloned()).collect();
    let mut jobs: Vec<(String, Vec<_>)> = languages.iter().map(|l| (l.clone(), data[l].train.clone())).collect();
    jobs.push((COMBINED.to_string(), pooled));

    let multi = config.seeds.len() > 1;
    let mut seeds = Vec::new();
    let mut overlap_with_reference = BTreeMap::new();
    for &seed in &config.seeds {
        let prefix = if multi { format!("seed-{seed}/") } else { String::new() };
        let legs = train_legs(&jobs, config, seed)?;
        let (combined_leg, per_lang_legs) = legs.split_last().unwrap();
        if overlap_with_reference.is_empty() {
            let ref_vocab = &per_lang_legs[languages.iter().position(|l| l == &reference_lang).unwrap()].vocab;
            for leg in per_lang_legs {
                overlap_with_reference.insert(leg.name.clone(), asym_overlap(&leg.vocab, ref_vocab).stage("overlap")?);
            }
        }
        let mut entry = MatrixSeed { seed, per_language: BTreeMap::new(), combined: BTreeMap::new() };
        for (leg, (name, pairs)) in legs.iter().zip(&jobs) {
            write_leg(out, &prefix, leg, pairs.len())?;
            debug_assert_eq!(&leg.name, name);
        }
        for (lang, leg) in languages.iter().zip(per_lang_legs) {
            let own: EvalReport = eval_leg(leg, lang, &data[lang], config, seed)?;
            let pooled: EvalReport = eval_leg(combined_leg, lang, &data[lang], config, seed)?;
            out.write_json(&format!("{prefix}eval/{lang}.per_language.json"), &own)?;
            out.write_json(&format!("{prefix}eval/{lang}.combined.json"), &pooled)?;
            entry.per_language.insert(lang.clone(), own.recall);
            entry.combined.insert(lang.clone(), pooled.recall);
        }
        seeds.push(entry);
    }

    let mean_per_language = per_lang_means(&languages, &seeds, |s| &s.per_language);
    let mean_combined = per_lang_means(&languages, &seeds, |s| &s.combined);
    let mut tables = Vec::new();
    for &k in &config.eval.ks {
        let points: Vec<TransferPoint> = languages
            .iter()
            .map(|l| TransferPoint {
                lang: l.clone(),
                per_language_recall: mean_per_language[l][&k],
                combined_recall: mean_combined[l][&k],
                train_share: train_share[l],
                difficulty: mean_per_language[l].get(&1).copied().unwrap_or(mean_per_language[l][&k]),
                overlap_with_reference: overlap_with_reference[l],
            })
            .collect();
        match transfer_table(&points, k, &config.exclude_from_fit) {
            Ok(t) => {
                out.write(&format!("analysis/variance_k{k}.tsv"), t.variance_tsv().as_bytes())?;
                out.write(&format!("analysis/languages_k{k}.tsv"), t.languages_tsv().as_bytes())?;
                tables.push(TableOutcome { k, table: Some(t), error: None });
            }
            Err(e) => {
                log::warn!("transfer table at k={k}: {e}");
                tables.push(TableOutcome { k, table: None, error: Some(e.to_string()) });
            }
        }
    }
    let report = MatrixReport {
        languages,
        reference_lang,
        train_pairs,
        eval_pairs,
        train_share,
        overlap_with_reference,
        seeds,
        mean_per_language,
        mean_combined,
        tables,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}

fn per_lang_means(
    languages: &[String],
    seeds: &[MatrixSeed],
    pick: impl Fn(&MatrixSeed) -> &BTreeMap<String, BTreeMap<usize, f64>>,
) -> BTreeMap<String, BTreeMap<usize, f64>> {
    languages.iter().map(|l| (l.clone(), mean_recall(seeds.iter().map(|s| &pick(s)[l])))).collect()
}
