use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{PairKind, DEFAULT_MIN_WORDS};
use crate::encoder::{ModelConfig, TrainConfig};
use crate::eval::EvalConfig;
use crate::mixture::MixtureSpec;
use crate::synth::SynthSpec;

/// Desk-scale default vocabulary cap.
pub const DEFAULT_VOCAB_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorDirective {
    pub aux: String,
    pub target: String,
}

/// Language roles for the transitive-transfer recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub target: String,
    pub pivots: Vec<String>,
    pub auxiliary: String,
}

/// Everything a recipe needs. Corpora come either from JSON Lines files
/// (`corpora`) or from a synthetic spec (`synth`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpora: BTreeMap<String, PathBuf>,
    pub synth: Option<SynthSpec>,
    pub task: PairKind,
    pub min_words: usize,
    pub vocab_cap: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub mixture: Option<MixtureSpec>,
    pub censor: Vec<CensorDirective>,
    pub roles: Option<Roles>,
    /// Seeds for multi-seed recipes; each seed drives training and pool sampling.
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    /// Reference language for the overlap factor; defaults to the largest.
    pub reference_lang: Option<String>,
    /// Languages left out of the regression fits.
    pub exclude_from_fit: Vec<String>,
    /// Mixture ratios for the sweep recipe.
    pub ratios: Vec<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpora: BTreeMap::new(),
            synth: None,
            task: PairKind::Nsp,
            min_words: DEFAULT_MIN_WORDS,
            vocab_cap: Some(DEFAULT_VOCAB_CAP),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            mixture: None,
            censor: Vec::new(),
            roles: None,
            seeds: vec![0],
            split_seed: 0,
            reference_lang: None,
            exclude_from_fit: Vec::new(),
            ratios: Vec::new(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::new("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::new("config", format!("{}: {e}", path.display())))
    }

    /// Canonical JSON; the manifest digests this.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Configured languages, from corpus paths or the synthetic spec.
    pub fn languages(&self) -> Vec<String> {
        match &self.synth {
            Some(s) if self.corpora.is_empty() => s.languages.clone(),
            _ => self.corpora.keys().cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.corpora.is_empty() && self.synth.is_none() {
            return Err(HarnessError::new("config", "neither corpora nor synth configured"));
        }
        for (lang, path) in &self.corpora {
            if !path.exists() {
                return Err(HarnessError::new("config", format!("corpus for {lang} not found: {}", path.display())));
            }
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::new("config", "seeds must not be empty"));
        }
        self.model.validate().map_err(|e| HarnessError::new("config", e))?;
        self.train.validate().map_err(|e| HarnessError::new("config", e))?;
        self.eval.validate().map_err(|e| HarnessError::new("config", e))?;
        Ok(())
    }
}

