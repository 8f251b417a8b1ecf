//! N-gram vocabularies: building, capping, merging, censoring and overlap
//! statistics.
//!
//! Ids are dense and follow descending frequency, ties broken by ascending
//! token byte order. Every overlap statistic is computed on token key sets and
//! ignores frequencies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExamplePair, NGramFeature};
use crate::seed;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("asymmetric overlap undefined for an empty source vocabulary")]
    EmptySource,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocab file line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    token: String,
    freq: u64,
    langs: BTreeSet<String>,
}

/// Token to dense id and frequency, with per-token language provenance.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    index: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Vocabulary {
    /// Orders, caps and indexes raw counts.
    fn from_counts(counts: HashMap<String, (u64, BTreeSet<String>)>, cap: Option<usize>) -> Self {
        let mut entries: Vec<Entry> = counts
            .into_iter()
            .filter(|(_, (freq, _))| *freq > 0)
            .map(|(token, (freq, langs))| Entry { token, freq, langs })
            .collect();
        entries.sort_unstable_by(|a, b| {
            b.freq
                .cmp(&a.freq)
                .then_with(|| a.token.as_bytes().cmp(b.token.as_bytes()))
        });
        if let Some(cap) = cap {
            entries.truncate(cap);
        }
        Self::from_ordered(entries)
    }

    fn from_ordered(entries: Vec<Entry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.token.clone(), i as u32))
            .collect();
        Self { entries, index }
    }

    /// A vocabulary where every token has frequency one.
    pub fn from_tokens<I, S>(tokens: I, lang: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut counts = HashMap::new();
        for t in tokens {
            counts
                .entry(t.into())
                .or_insert_with(|| (0, BTreeSet::from([lang.to_string()])))
                .0 = 1;
        }
        Self::from_counts(counts, None)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.token.as_str())
    }

    pub fn freq(&self, token: &str) -> Option<u64> {
        self.id(token).map(|i| self.entries[i as usize].freq)
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.token.as_str())
    }

    /// Union of per-token provenance.
    pub fn langs(&self) -> BTreeSet<String> {
        self.entries.iter().flat_map(|e| e.langs.iter().cloned()).collect()
    }

    /// Maps features to ids, skipping out-of-vocabulary ones.
    pub fn encode(&self, feats: &[NGramFeature]) -> Vec<u32> {
        feats.iter().filter_map(|f| self.id(f.as_str())).collect()
    }

    fn counts(&self) -> HashMap<String, (u64, BTreeSet<String>)> {
        self.entries
            .iter()
            .map(|e| (e.token.clone(), (e.freq, e.langs.clone())))
            .collect()
    }

    /// TSV rendering: header then one row per id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("token\tid\tfreq\tlangs\n");
        for (i, e) in self.entries.iter().enumerate() {
            let langs: Vec<&str> = e.langs.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.token, i, e.freq, langs.join(","));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, VocabError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "token\tid\tfreq\tlangs")) => {}
            _ => {
                return Err(VocabError::Malformed {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let bad = |message: String| VocabError::Malformed { line: i + 1, message };
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", cols.len())));
            }
            let id: usize = cols[1].parse().map_err(|e| bad(format!("id: {e}")))?;
            if id != entries.len() {
                return Err(bad(format!("id {id} out of order")));
            }
            let freq: u64 = cols[2].parse().map_err(|e| bad(format!("freq: {e}")))?;
            if freq == 0 || cols[0].is_empty() {
                return Err(bad("empty token or zero frequency".into()));
            }
            let langs = cols[3]
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            entries.push(Entry {
                token: cols[0].to_string(),
                freq,
                langs,
            });
        }
        let vocab = Self::from_ordered(entries);
        if vocab.index.len() != vocab.entries.len() {
            return Err(VocabError::Malformed {
                line: 0,
                message: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        fs::write(path, self.to_tsv()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    /// SHA-256 of the TSV rendering; checkpoints bind to this.
    pub fn digest(&self) -> String {
        seed::sha256_hex(self.to_tsv().as_bytes())
    }
}

/// Incremental feature counter.
#[derive(Debug, Default)]
pub struct VocabBuilder {
    counts: HashMap<String, (u64, BTreeSet<String>)>,
}

impl VocabBuilder {
    pub fn add_pair(&mut self, pair: &ExamplePair) {
        for f in pair.query_feats.iter().chain(&pair.target_feats) {
            match self.counts.get_mut(f.as_str()) {
                Some((freq, langs)) => {
                    *freq += 1;
                    if !langs.contains(&pair.lang) {
                        langs.insert(pair.lang.clone());
                    }
                }
                None => {
                    self.counts.insert(
                        f.as_str().to_string(),
                        (1, BTreeSet::from([pair.lang.clone()])),
                    );
                }
            }
        }
    }

    fn absorb(&mut self, other: VocabBuilder) {
        for (token, (freq, langs)) in other.counts {
            let slot = self.counts.entry(token).or_default();
            slot.0 += freq;
            slot.1.extend(langs);
        }
    }

    pub fn finish(self, cap: Option<usize>) -> Vocabulary {
        Vocabulary::from_counts(self.counts, cap)
    }
}

/// Counts every feature occurrence on both sides and keeps the top `cap`.
pub fn build_vocab<'a, I>(pairs: I, cap: Option<usize>) -> Vocabulary
where
    I: IntoIterator<Item = &'a ExamplePair>,
{
    let mut b = VocabBuilder::default();
    for p in pairs {
        b.add_pair(p);
    }
    b.finish(cap)
}

/// Sharded counting over a slice; the reduce is order-independent.
pub fn build_vocab_par(pairs: &[ExamplePair], cap: Option<usize>) -> Vocabulary {
    pairs
        .par_chunks(4096)
        .map(|chunk| {
            let mut b = VocabBuilder::default();
            chunk.iter().for_each(|p| b.add_pair(p));
            b
        })
        .reduce(VocabBuilder::default, |mut a, b| {
            a.absorb(b);
            a
        })
        .finish(cap)
}

/// Overlap of two vocabularies' key sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub jaccard: f64,
    pub asym_a_to_b: f64,
    pub asym_b_to_a: f64,
    pub intersection_size: usize,
    pub union_size: usize,
}

pub fn intersection_size(a: &Vocabulary, b: &Vocabulary) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.tokens().filter(|t| large.contains(t)).count()
}

pub fn overlap_stats(a: &Vocabulary, b: &Vocabulary) -> OverlapStats {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    OverlapStats {
        jaccard: ratio(inter, union),
        asym_a_to_b: ratio(inter, a.len()),
        asym_b_to_a: ratio(inter, b.len()),
        intersection_size: inter,
        union_size: union,
    }
}

/// |A ∩ B| / |A ∪ B|; zero when both are empty.
pub fn jaccard(a: &Vocabulary, b: &Vocabulary) -> f64 {
    overlap_stats(a, b).jaccard
}

/// |source ∩ target| / |source|.
pub fn asym_overlap(source: &Vocabulary, target: &Vocabulary) -> Result<f64, VocabError> {
    if source.is_empty() {
        return Err(VocabError::EmptySource);
    }
    Ok(intersection_size(source, target) as f64 / source.len() as f64)
}

/// `aux` restricted to tokens absent from `target`, ids re-densified.
pub fn censor(aux: &Vocabulary, target: &Vocabulary) -> Vocabulary {
    let kept = aux
        .entries
        .iter()
        .filter(|e| !target.contains(&e.token))
        .cloned()
        .collect();
    // Filtering preserves the relative (freq, token) order.
    Vocabulary::from_ordered(kept)
}

/// Sums frequencies and provenance across inputs, then caps.
pub fn merge(vocabs: &[&Vocabulary], cap: Option<usize>) -> Vocabulary {
    let mut counts: HashMap<String, (u64, BTreeSet<String>)> = HashMap::new();
    for v in vocabs {
        for (token, (freq, langs)) in v.counts() {
            let slot = counts.entry(token).or_default();
            slot.0 += freq;
            slot.1.extend(langs);
        }
    }
    Vocabulary::from_counts(counts, cap)
}

/// Drops out-of-vocabulary features; drops pairs left with an empty side.
pub fn censor_pairs<'a, I>(pairs: I, vocab: &'a Vocabulary) -> impl Iterator<Item = ExamplePair> + 'a
where
    I: IntoIterator<Item = ExamplePair>,
    I::IntoIter: 'a,
{
    pairs.into_iter().filter_map(move |mut p| {
        p.query_feats.retain(|f| vocab.contains(f.as_str()));
        p.target_feats.retain(|f| vocab.contains(f.as_str()));
        (!p.query_feats.is_empty() && !p.target_feats.is_empty()).then_some(p)
    })
}

/// Pairwise overlap for a set of named vocabularies.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub langs: Vec<String>,
    /// `stats[i][j]` compares `langs[i]` (as A) with `langs[j]` (as B).
    pub stats: Vec<Vec<OverlapStats>>,
}

impl OverlapMatrix {
    pub fn compute(named: &BTreeMap<String, Vocabulary>) -> Self {
        let langs: Vec<String> = named.keys().cloned().collect();
        let vocabs: Vec<&Vocabulary> = named.values().collect();
        let stats = vocabs
            .iter()
            .map(|a| vocabs.iter().map(|b| overlap_stats(a, b)).collect())
            .collect();
        Self { langs, stats }
    }

    fn render(&self, cell: impl Fn(&OverlapStats) -> f64) -> String {
        let mut out = String::from("lang");
        for l in &self.langs {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (i, row) in self.stats.iter().enumerate() {
            out.push_str(&self.langs[i]);
            for s in row {
                let _ = write!(out, "\t{:.6}", cell(s));
            }
            out.push('\n');
        }
        out
    }

    /// Symmetric Jaccard matrix as TSV.
    pub fn jaccard_tsv(&self) -> String {
        self.render(|s| s.jaccard)
    }

    /// Row language as source, column language as target.
    pub fn asym_tsv(&self) -> String {
        self.render(|s| s.asym_a_to_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PairKind;
    use proptest::prelude::*;

    fn pair(lang: &str, q: &[&str], t: &[&str]) -> ExamplePair {
        ExamplePair {
            lang: lang.into(),
            kind: PairKind::Nsp,
            query_feats: q.iter().map(|&s| s.into()).collect(),
            target_feats: t.iter().map(|&s| s.into()).collect(),
        }
    }

    fn set(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().copied(), "xx")
    }

    #[test]
    fn build_and_cap() {
        let pairs = vec![
            pair("en", &["a", "a", "b"], &["a", "c"]),
            pair("en", &["a", "b"], &["a", "b"]),
        ];
        let v = build_vocab(&pairs, Some(2));
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.freq("a"), Some(5));
        assert_eq!(build_vocab(&pairs, None).len(), 3);

        let tie = vec![pair("en", &["b", "a"], &["a", "b"])];
        let v = build_vocab(&tie, Some(1));
        assert_eq!(v.tokens().collect::<Vec<_>>(), vec!["a"]);
        assert!(build_vocab(&[], None).is_empty());
    }

    #[test]
    fn par_matches_sequential() {
        let pairs: Vec<ExamplePair> = (0..10_000)
            .map(|i| {
                let a = format!("t{}", i % 37);
                let b = format!("t{}", i % 11);
                pair(if i % 2 == 0 { "en" } else { "de" }, &[&a], &[&b, &a])
            })
            .collect();
        assert_eq!(build_vocab_par(&pairs, Some(20)), build_vocab(&pairs, Some(20)));
    }

    #[test]
    fn jaccard_examples() {
        let abc = set(&["a", "b", "c"]);
        assert_eq!(jaccard(&abc, &abc), 1.0);
        assert_eq!(jaccard(&abc, &set(&["x", "y"])), 0.0);
        assert_eq!(jaccard(&abc, &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&Vocabulary::default(), &Vocabulary::default()), 0.0);
    }

    #[test]
    fn asym_examples() {
        let abcd = set(&["a", "b", "c", "d"]);
        assert_eq!(asym_overlap(&set(&["a", "b"]), &abcd).unwrap(), 1.0);
        assert_eq!(asym_overlap(&abcd, &set(&["c", "d", "e"])).unwrap(), 0.5);
        assert_eq!(asym_overlap(&abcd, &set(&["z"])).unwrap(), 0.0);
        assert!(matches!(
            asym_overlap(&Vocabulary::default(), &abcd),
            Err(VocabError::EmptySource)
        ));
    }

    #[test]
    fn censor_examples() {
        let ab = set(&["a", "b"]);
        assert_eq!(censor(&ab, &set(&["x"])), ab);
        let c = censor(&ab, &set(&["b"]));
        assert_eq!(c.tokens().collect::<Vec<_>>(), vec!["a"]);
        assert_eq!(c.id("a"), Some(0));
        assert!(censor(&ab, &set(&["a", "b", "c"])).is_empty());
    }

    #[test]
    fn merge_examples() {
        let a = build_vocab(&[pair("en", &["a"], &[])], None);
        let b = build_vocab(&[pair("de", &["a", "a", "b"], &[])], None);
        let m = merge(&[&a, &b], None);
        assert_eq!(m.freq("a"), Some(3));
        assert_eq!(m.freq("b"), Some(1));
        assert_eq!(m.langs(), BTreeSet::from(["de".to_string(), "en".to_string()]));
        let d = merge(&[&set(&["x"]), &set(&["y"])], None);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn censor_pairs_examples() {
        let v = set(&["a", "b"]);
        let kept: Vec<_> = censor_pairs(vec![pair("en", &["a"], &["b"])], &v).collect();
        assert_eq!(kept.len(), 1);
        let dropped: Vec<_> = censor_pairs(vec![pair("en", &["z"], &["b"])], &v).collect();
        assert!(dropped.is_empty());
        let mixed: Vec<_> = censor_pairs(vec![pair("en", &["a", "z"], &["b", "q", "a"])], &v).collect();
        assert_eq!(mixed[0].query_feats, vec![NGramFeature::from("a")]);
        assert_eq!(mixed[0].target_feats.len(), 2);
    }

    #[test]
    fn tsv_roundtrip_and_errors() {
        let pairs = vec![pair("en", &["a b", "a"], &["c"]), pair("de", &["a"], &["d"])];
        let v = build_vocab(&pairs, None);
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.langs(), v.langs());
        assert_eq!(back.digest(), v.digest());
        assert!(Vocabulary::from_tsv("nope\n").is_err());
        assert!(Vocabulary::from_tsv("token\tid\tfreq\tlangs\na\t1\t1\ten\n").is_err());
    }

    #[test]
    fn matrix_tsv_shape() {
        let mut named = BTreeMap::new();
        named.insert("aa".to_string(), set(&["a", "b", "c", "d"]));
        named.insert("bb".to_string(), set(&["c", "d", "e"]));
        let m = OverlapMatrix::compute(&named);
        let asym = m.asym_tsv();
        assert_eq!(asym.lines().next().unwrap(), "lang\taa\tbb");
        assert_eq!(asym.lines().nth(1).unwrap(), "aa\t1.000000\t0.500000");
        assert_eq!(asym.lines().nth(2).unwrap(), "bb\t0.666667\t1.000000");
    }

    fn token_sets() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-f]{1,2}", 0..20)
    }

    fn counted_pairs() -> impl Strategy<Value = Vec<ExamplePair>> {
        proptest::collection::vec(
            (proptest::collection::vec("[a-h]", 1..5), proptest::collection::vec("[a-h]", 1..5)),
            0..8,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(q, t)| ExamplePair {
                    lang: "xx".into(),
                    kind: PairKind::Nsp,
                    query_feats: q.iter().map(|s| s.as_str().into()).collect(),
                    target_feats: t.iter().map(|s| s.as_str().into()).collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn set_identities(a in token_sets(), b in token_sets()) {
            let (va, vb) = (set_of(&a), set_of(&b));
            prop_assert_eq!(jaccard(&va, &vb), jaccard(&vb, &va));
            let inter = intersection_size(&va, &vb) as f64;
            if !va.is_empty() && !vb.is_empty() {
                prop_assert!((asym_overlap(&va, &vb).unwrap() * va.len() as f64 - inter).abs() < 1e-9);
                prop_assert!((asym_overlap(&vb, &va).unwrap() * vb.len() as f64 - inter).abs() < 1e-9);
            }
            let c = censor(&va, &vb);
            prop_assert_eq!(&censor(&c, &vb), &c);
            prop_assert_eq!(jaccard(&c, &vb), 0.0);
            if !c.is_empty() {
                prop_assert_eq!(asym_overlap(&c, &vb).unwrap(), 0.0);
            }
        }

        #[test]
        fn cap_is_truncation(pairs in counted_pairs(), n in 0usize..10) {
            let full = build_vocab(&pairs, None);
            let capped = build_vocab(&pairs, Some(n));
            let truncated: Vec<&str> = full.tokens().take(n).collect();
            prop_assert_eq!(capped.tokens().collect::<Vec<_>>(), truncated);
            for (i, t) in capped.tokens().enumerate() {
                prop_assert_eq!(capped.id(t), Some(i as u32));
            }
        }

        #[test]
        fn merge_equals_build_over_concatenation(a in counted_pairs(), b in counted_pairs(), cap in proptest::option::of(1usize..8)) {
            let va = build_vocab(&a, None);
            let vb = build_vocab(&b, None);
            let all: Vec<ExamplePair> = a.iter().chain(&b).cloned().collect();
            prop_assert_eq!(merge(&[&va, &vb], cap), build_vocab(&all, cap));
        }
    }

    fn set_of(tokens: &[String]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().cloned(), "xx")
    }
}
