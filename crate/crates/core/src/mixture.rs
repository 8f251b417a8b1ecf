//! Fixed-length training streams mixing a target language with pooled
//! auxiliary data at an exact ratio.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("{source_name} source is empty but its quota is {quota}")]
    EmptySource { source_name: &'static str, quota: usize },
    #[error("mixture ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("mixture total must be at least 1")]
    ZeroTotal,
    #[error("native ratio undefined for an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub target_lang: String,
    pub ratio: f64,
    pub total: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), MixError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(MixError::BadRatio(self.ratio));
        }
        if self.total == 0 {
            return Err(MixError::ZeroTotal);
        }
        Ok(())
    }

    /// Exact number of target examples in the stream.
    pub fn target_quota(&self) -> usize {
        ((self.ratio * self.total as f64).round() as usize).min(self.total)
    }
}

/// Draws `quota` indices into a source of length `len`.
///
/// Without replacement when the source is large enough; otherwise every
/// element is repeated `quota / len` times and the remainder is drawn without
/// replacement, which keeps repetition counts within one of each other.
fn quota_indices(len: usize, quota: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(quota);
    let full = quota / len;
    for _ in 0..full {
        out.extend(0..len);
    }
    out.extend(index::sample(rng, len, quota - full * len));
    out
}

/// Emits exactly `spec.total` items, `spec.target_quota()` of them from
/// `target`, in a seeded uniform shuffle.
pub fn mix<T: Clone>(target: &[T], aux: &[T], spec: &MixtureSpec) -> Result<Vec<T>, MixError> {
    spec.validate()?;
    let n_target = spec.target_quota();
    let n_aux = spec.total - n_target;
    if n_target > 0 && target.is_empty() {
        return Err(MixError::EmptySource { source_name: "target", quota: n_target });
    }
    if n_aux > 0 && aux.is_empty() {
        return Err(MixError::EmptySource { source_name: "auxiliary", quota: n_aux });
    }
    let mut rng = seed::rng(spec.seed, &["mix", &spec.target_lang]);
    let mut out = Vec::with_capacity(spec.total);
    if n_target > 0 {
        out.extend(quota_indices(target.len(), n_target, &mut rng).into_iter().map(|i| target[i].clone()));
    }
    if n_aux > 0 {
        out.extend(quota_indices(aux.len(), n_aux, &mut rng).into_iter().map(|i| aux[i].clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Target share of the pooled corpus.
pub fn native_ratio(counts: &BTreeMap<String, usize>, target_lang: &str) -> Result<f64, MixError> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(MixError::EmptyCorpus);
    }
    Ok(counts.get(target_lang).copied().unwrap_or(0) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(ratio: f64, total: usize) -> MixtureSpec {
        MixtureSpec { target_lang: "uk".into(), ratio, total, seed: 9 }
    }

    fn split(out: &[i32]) -> (usize, usize) {
        let t = out.iter().filter(|&&x| x >= 0).count();
        (t, out.len() - t)
    }

    #[test]
    fn examples() {
        let target: Vec<i32> = (0..50).collect();
        let aux: Vec<i32> = (1..=500).map(|x| -x).collect();
        assert_eq!(split(&mix(&target, &aux, &spec(1.0, 100)).unwrap()), (100, 0));
        assert_eq!(split(&mix(&target, &aux, &spec(0.0, 100)).unwrap()), (0, 100));
        assert_eq!(split(&mix(&target, &aux, &spec(0.1, 1000)).unwrap()), (100, 900));
    }

    #[test]
    fn oversampling_repeats_evenly() {
        let target: Vec<i32> = (0..7).collect();
        let out = mix(&target, &[-1], &spec(0.9, 100)).unwrap();
        let mut counts = [0usize; 7];
        out.iter().filter(|&&x| x >= 0).for_each(|&x| counts[x as usize] += 1);
        assert_eq!(counts.iter().sum::<usize>(), 90);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn errors() {
        let empty: Vec<i32> = vec![];
        assert_eq!(
            mix(&empty, &[-1], &spec(0.5, 10)),
            Err(MixError::EmptySource { source_name: "target", quota: 5 })
        );
        assert!(matches!(mix(&[1], &empty, &spec(0.5, 10)), Err(MixError::EmptySource { source_name: "auxiliary", .. })));
        assert!(mix(&[1], &empty, &spec(1.0, 10)).is_ok());
        assert_eq!(mix(&[1], &[-1], &spec(1.5, 10)), Err(MixError::BadRatio(1.5)));
    }

    #[test]
    fn native_ratio_examples() {
        let counts = BTreeMap::from([("uk".to_string(), 2), ("en".to_string(), 98)]);
        assert!((native_ratio(&counts, "uk").unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(native_ratio(&BTreeMap::from([("uk".to_string(), 5)]), "uk").unwrap(), 1.0);
        assert_eq!(native_ratio(&counts, "fr").unwrap(), 0.0);
        assert_eq!(native_ratio(&BTreeMap::new(), "uk"), Err(MixError::EmptyCorpus));
    }

    proptest! {
        #[test]
        fn quota_is_exact(ratio in 0.0f64..=1.0, total in 1usize..400, nt in 1usize..60, na in 1usize..60, seed in any::<u64>()) {
            let target: Vec<i32> = (0..nt as i32).collect();
            let aux: Vec<i32> = (1..=na as i32).map(|x| -x).collect();
            let s = MixtureSpec { target_lang: "t".into(), ratio, total, seed };
            let out = mix(&target, &aux, &s).unwrap();
            prop_assert_eq!(out.len(), total);
            prop_assert_eq!(split(&out).0, (ratio * total as f64).round() as usize);
            prop_assert_eq!(&out, &mix(&target, &aux, &s).unwrap());
            let in_range = out.iter().all(|&x| if x >= 0 { (x as usize) < nt } else { ((-x) as usize) <= na });
            prop_assert!(in_range);
        }
    }
}
