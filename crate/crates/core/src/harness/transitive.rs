//! Transfer from an auxiliary language with no direct vocabulary overlap
//! with the target, carried through pivot languages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    eval_leg, load_data, mean_recall, prepare, train_legs, write_leg, ExperimentConfig, HarnessError, LanguageData,
    OutputDir, Roles, StageExt,
};
use crate::corpus::ExamplePair;
use crate::synth::{fig7_preset, gen_corpus};
use crate::vocab::{asym_overlap, build_vocab_par, censor, censor_pairs, Vocabulary};

/// Large-scale relative gains at k = 1, 10, 20 that desk-scale runs are
/// compared against in direction only.
pub const REFERENCE_RELATIVE_GAINS: [(usize, f64); 3] = [(1, 0.035), (10, 0.046), (20, 0.053)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitivePreset {
    /// Synthetic target/pivot/auxiliary chain, regenerated per seed.
    Fig7Synth,
    /// Corpora and roles from the config.
    Custom,
}

/// One directed overlap edge, as a percentage of the source vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEdgeReport {
    pub source: String,
    pub target: String,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub baseline: BTreeMap<usize, f64>,
    pub treatment: BTreeMap<usize, f64>,
    pub control_baseline: BTreeMap<usize, f64>,
    pub control_treatment: BTreeMap<usize, f64>,
    /// treatment − baseline
    pub delta: BTreeMap<usize, f64>,
    /// control_treatment − control_baseline
    pub control_delta: BTreeMap<usize, f64>,
    /// Measured before censoring.
    pub overlap_graph: Vec<OverlapEdgeReport>,
    pub censored_aux_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitiveReport {
    pub preset: TransitivePreset,
    pub roles: Roles,
    pub seeds: Vec<u64>,
    pub outcomes: Vec<SeedOutcome>,
    pub mean_baseline: BTreeMap<usize, f64>,
    pub mean_treatment: BTreeMap<usize, f64>,
    pub mean_delta: BTreeMap<usize, f64>,
    /// mean_treatment / mean_baseline − 1
    pub mean_relative: BTreeMap<usize, f64>,
    pub mean_control_delta: BTreeMap<usize, f64>,
    pub mean_abs_control_delta: BTreeMap<usize, f64>,
    pub reference_relative_gains: BTreeMap<usize, f64>,
}

fn default_roles() -> Roles {
    Roles { target: "tgt".into(), pivots: vec!["piv".into()], auxiliary: "aux".into() }
}

pub fn run_transitive(config: &ExperimentConfig, preset: TransitivePreset) -> Result<TransitiveReport, HarnessError> {
    if config.seeds.is_empty() {
        return Err(HarnessError::new("config", "seeds must not be empty"));
    }
    let roles = match (preset, &config.roles) {
        (_, Some(r)) => r.clone(),
        (TransitivePreset::Fig7Synth, None) => default_roles(),
        (TransitivePreset::Custom, None) => return Err(HarnessError::new("config", "custom preset needs roles")),
    };
    if roles.pivots.is_empty() {
        return Err(HarnessError::new("config", "at least one pivot language is required"));
    }
    let mut all = vec![roles.target.clone(), roles.auxiliary.clone()];
    all.extend(roles.pivots.iter().cloned());
    let mut uniq = all.clone();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != all.len() {
        return Err(HarnessError::new("config", "target, pivots and auxiliary must be distinct"));
    }

    let fixed = match preset {
        TransitivePreset::Custom => {
            config.validate()?;
            Some(load_data(config)?)
        }
        TransitivePreset::Fig7Synth => None,
    };
    let mut out = OutputDir::new(config.out_dir.as_deref())?;
    let mut outcomes = Vec::new();
    for &seed in &config.seeds {
        let data = match &fixed {
            Some(d) => d.clone(),
            None => {
                let mut spec = config.synth.clone().unwrap_or_else(fig7_preset);
                spec.seed = seed;
                let records = gen_corpus(&spec).stage("synth")?;
                prepare(&records, config.task, config.min_words, config.split_seed, config.split_seed)
            }
        };
        for l in &all {
            if !data.contains_key(l) {
                return Err(HarnessError::new("config", format!("role language {l} has no data")));
            }
        }
        outcomes.push(run_seed(config, &roles, &data, seed, &mut out)?);
    }

    let mean_baseline = mean_recall(outcomes.iter().map(|o| &o.baseline));
    let mean_treatment = mean_recall(outcomes.iter().map(|o| &o.treatment));
    let mean_delta = mean_recall(outcomes.iter().map(|o| &o.delta));
    let mean_control_delta = mean_recall(outcomes.iter().map(|o| &o.control_delta));
    let abs_control: Vec<BTreeMap<usize, f64>> =
        outcomes.iter().map(|o| o.control_delta.iter().map(|(&k, v)| (k, v.abs())).collect()).collect();
    let mean_abs_control_delta = mean_recall(abs_control.iter());
    let mean_relative = mean_baseline
        .iter()
        .filter(|(_, &b)| b > 0.0)
        .map(|(&k, &b)| (k, mean_treatment[&k] / b - 1.0))
        .collect();
    let report = TransitiveReport {
        preset,
        roles,
        seeds: config.seeds.clone(),
        outcomes,
        mean_baseline,
        mean_treatment,
        mean_delta,
        mean_relative,
        mean_control_delta,
        mean_abs_control_delta,
        reference_relative_gains: REFERENCE_RELATIVE_GAINS.into_iter().collect(),
    };
    out.write_json("report.json", &report)?;
    out.commit("run-transitive", config)?;
    Ok(report)
}

fn run_seed(
    config: &ExperimentConfig,
    roles: &Roles,
    data: &BTreeMap<String, LanguageData>,
    seed: u64,
    out: &mut OutputDir,
) -> Result<SeedOutcome, HarnessError> {
    let prefix = if config.seeds.len() > 1 { format!("seed-{seed}/") } else { String::new() };
    let mut role_langs: Vec<&String> = vec![&roles.target];
    role_langs.extend(&roles.pivots);
    role_langs.push(&roles.auxiliary);
    let vocabs: BTreeMap<&String, Vocabulary> =
        role_langs.iter().map(|&l| (l, build_vocab_par(&data[l].train, config.vocab_cap))).collect();

    let mut overlap_graph = Vec::new();
    for &a in &role_langs {
        for &b in &role_langs {
            if a != b {
                let pct = 100.0 * asym_overlap(&vocabs[a], &vocabs[b]).stage("overlap")?;
                overlap_graph.push(OverlapEdgeReport { source: a.clone(), target: b.clone(), percent: pct });
            }
        }
    }

    let target_vocab = &vocabs[&roles.target];
    let aux_vocab = censor(&vocabs[&roles.auxiliary], target_vocab);
    let censored_aux_overlap = asym_overlap(&aux_vocab, target_vocab).stage("censor-verify")?;
    if censored_aux_overlap != 0.0 {
        return Err(HarnessError::new(
            "censor-verify",
            format!("censored {} still overlaps {} ({censored_aux_overlap})", roles.auxiliary, roles.target),
        ));
    }
    let aux_pairs: Vec<ExamplePair> = censor_pairs(data[&roles.auxiliary].train.iter().cloned(), &aux_vocab).collect();
    out.write(&format!("{prefix}vocab/{}.censored.tsv", roles.auxiliary), aux_vocab.to_tsv().as_bytes())?;

    let target_pairs = &data[&roles.target].train;
    let pivot_pairs: Vec<ExamplePair> = roles.pivots.iter().flat_map(|p| data[p].train.iter().cloned()).collect();
    let mut cut_pivot_pairs = Vec::new();
    for p in &roles.pivots {
        let cut = censor(&vocabs[p], target_vocab);
        cut_pivot_pairs.extend(censor_pairs(data[p].train.iter().cloned(), &cut));
    }
    let concat = |parts: &[&[ExamplePair]]| -> Vec<ExamplePair> { parts.iter().flat_map(|p| p.iter().cloned()).collect() };
    let jobs = vec![
        ("baseline".to_string(), concat(&[target_pairs, &pivot_pairs])),
        ("treatment".to_string(), concat(&[target_pairs, &pivot_pairs, &aux_pairs])),
        ("control_baseline".to_string(), concat(&[target_pairs, &cut_pivot_pairs])),
        ("control_treatment".to_string(), concat(&[target_pairs, &cut_pivot_pairs, &aux_pairs])),
    ];
    let legs = train_legs(&jobs, config, seed)?;
    let mut recalls = Vec::new();
    for (leg, (_, pairs)) in legs.iter().zip(&jobs) {
        write_leg(out, &prefix, leg, pairs.len())?;
        let report = eval_leg(leg, &roles.target, &data[&roles.target], config, seed)?;
        out.write_json(&format!("{prefix}eval/{}.{}.json", roles.target, leg.name), &report)?;
        recalls.push(report.recall);
    }
    let diff = |a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
        a.iter().map(|(&k, &v)| (k, v - b[&k])).collect()
    };
    let [baseline, treatment, control_baseline, control_treatment]: [BTreeMap<usize, f64>; 4] =
        recalls.try_into().expect("four legs");
    log::info!("seed {seed}: baseline {baseline:?} treatment {treatment:?}");
    Ok(SeedOutcome {
        seed,
        delta: diff(&treatment, &baseline),
        control_delta: diff(&control_treatment, &control_baseline),
        baseline,
        treatment,
        control_baseline,
        control_treatment,
        overlap_graph,
        censored_aux_overlap,
    })
}
