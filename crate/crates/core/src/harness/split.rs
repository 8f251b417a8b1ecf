//! Deterministic 90/5/5 train/dev/eval assignment by section identity.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{extract_pairs, ExamplePair, PairKind, SectionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

/// Buckets out of 10 000; the first 9 000 train, the next 500 dev.
const TRAIN_BUCKETS: u64 = 9_000;
const DEV_BUCKETS: u64 = 9_500;

/// Pure function of `(doc_id, sec_id, split_seed)`.
pub fn split_of(doc_id: &str, sec_id: &str, split_seed: u64) -> Split {
    let mut h = Sha256::new();
    h.update(split_seed.to_le_bytes());
    h.update((doc_id.len() as u64).to_le_bytes());
    h.update(doc_id.as_bytes());
    h.update(sec_id.as_bytes());
    let d = h.finalize();
    let bucket = u64::from_le_bytes(d[..8].try_into().unwrap()) % 10_000;
    if bucket < TRAIN_BUCKETS {
        Split::Train
    } else if bucket < DEV_BUCKETS {
        Split::Dev
    } else {
        Split::Eval
    }
}

/// One language's pairs by split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LanguageData {
    pub train: Vec<ExamplePair>,
    pub dev: Vec<ExamplePair>,
    pub eval: Vec<ExamplePair>,
}

impl LanguageData {
    pub fn split(&self, s: Split) -> &[ExamplePair] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.dev.len() + self.eval.len()
    }
}

/// Extracts pairs from every section and routes them by split, keeping
/// input order within each language.
pub fn prepare(
    records: &[SectionRecord],
    task: PairKind,
    min_words: usize,
    pair_seed: u64,
    split_seed: u64,
) -> BTreeMap<String, LanguageData> {
    let extracted: Vec<(Split, Vec<ExamplePair>)> = records
        .par_iter()
        .map(|r| (split_of(&r.doc_id, &r.sec_id, split_seed), extract_pairs(r, task, pair_seed, min_words)))
        .collect();
    let mut out: BTreeMap<String, LanguageData> = BTreeMap::new();
    for (r, (split, pairs)) in records.iter().zip(extracted) {
        let slot = out.entry(r.lang.clone()).or_default();
        match split {
            Split::Train => slot.train.extend(pairs),
            Split::Dev => slot.dev.extend(pairs),
            Split::Eval => slot.eval.extend(pairs),
        }
    }
    out
}
