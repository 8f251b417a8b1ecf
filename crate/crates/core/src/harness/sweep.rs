//! Target-share sweep over a fixed-size mixed training stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{eval_leg, load_data, train_legs, write_leg, ExperimentConfig, HarnessError, LanguageData, OutputDir, StageExt};
use crate::corpus::ExamplePair;
use crate::mixture::{mix, native_ratio, MixtureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMean {
    pub ratio: f64,
    pub recall: BTreeMap<usize, f64>,
}

/// Large-scale reference: native share, the band where the optimum sat,
/// and the relative gain seen there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReference {
    pub native_ratio: f64,
    pub optimum_band: [f64; 2],
    pub relative_gain: f64,
}

pub const SWEEP_REFERENCE: SweepReference =
    SweepReference { native_ratio: 0.02, optimum_band: [0.10, 0.20], relative_gain: 0.17 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub target_lang: String,
    pub total: usize,
    /// Target share of the pooled training data as loaded.
    pub native_ratio: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub means: Vec<RatioMean>,
    pub reference: SweepReference,
}

impl SweepReport {
    pub fn mean_at(&self, ratio: f64, k: usize) -> Option<f64> {
        self.means.iter().find(|m| m.ratio == ratio).and_then(|m| m.recall.get(&k).copied())
    }

    pub fn to_tsv(&self) -> String {
        let ks: Vec<usize> = self.rows.first().map(|r| r.recall.keys().copied().collect()).unwrap_or_default();
        let mut s = String::from("ratio\tseed");
        for k in &ks {
            s.push_str(&format!("\trecall@{k}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{}\t{}", r.ratio, r.seed));
            for k in &ks {
                s.push_str(&format!("\t{:.6}", r.recall[k]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn run_mixture_sweep(config: &ExperimentConfig, ratios: &[f64]) -> Result<SweepReport, HarnessError> {
    config.validate()?;
    let data = load_data(config)?;
    let mut out = OutputDir::new(config.out_dir.as_deref())?;
    let report = run_sweep_on(config, ratios, &data, &mut out)?;
    out.commit("run-sweep", config)?;
    Ok(report)
}

pub fn run_sweep_on(
    config: &ExperimentConfig,
    ratios: &[f64],
    data: &BTreeMap<String, LanguageData>,
    out: &mut OutputDir,
) -> Result<SweepReport, HarnessError> {
    let base = config.mixture.clone().ok_or_else(|| HarnessError::new("config", "run-sweep needs a mixture section"))?;
    if ratios.is_empty() {
        return Err(HarnessError::new("config", "ratios must not be empty"));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(HarnessError::new("config", format!("ratio {r} outside [0, 1]")));
    }
    let target = data
        .get(&base.target_lang)
        .ok_or_else(|| HarnessError::new("config", format!("target {} has no data", base.target_lang)))?;
    let aux: Vec<ExamplePair> = data
        .iter()
        .filter(|(l, _)| **l != base.target_lang)
        .flat_map(|(_, d)| d.train.iter().cloned())
        .collect();
    let counts: BTreeMap<String, usize> = data.iter().map(|(l, d)| (l.clone(), d.train.len())).collect();
    let native = native_ratio(&counts, &base.target_lang).stage("mix")?;

    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let mut jobs = Vec::new();
        for &ratio in ratios {
            let spec = MixtureSpec { ratio, seed, ..base.clone() };
            let stream = mix(&target.train, &aux, &spec).stage("mix")?;
            jobs.push((format!("ratio-{ratio}-seed-{seed}"), stream));
        }
        let legs = train_legs(&jobs, config, seed)?;
        for ((leg, (_, stream)), &ratio) in legs.iter().zip(&jobs).zip(ratios) {
            write_leg(out, "", leg, stream.len())?;
            let report = eval_leg(leg, &base.target_lang, target, config, seed)?;
            out.write_json(&format!("eval/{}.json", leg.name), &report)?;
            rows.push(SweepRow { ratio, seed, recall: report.recall });
        }
    }
    let mut means = Vec::new();
    for &ratio in ratios {
        if means.iter().any(|m: &RatioMean| m.ratio == ratio) {
            continue;
        }
        let recall = super::mean_recall(rows.iter().filter(|r| r.ratio == ratio).map(|r| &r.recall));
        means.push(RatioMean { ratio, recall });
    }
    let report = SweepReport {
        target_lang: base.target_lang.clone(),
        total: base.total,
        native_ratio: native,
        seeds: config.seeds.clone(),
        rows,
        means,
        reference: SWEEP_REFERENCE,
    };
    out.write("sweep.tsv", report.to_tsv().as_bytes())?;
    out.write_json("report.json", &report)?;
    Ok(report)
}
