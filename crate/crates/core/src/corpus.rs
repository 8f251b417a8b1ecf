//! Sectioned corpora and extraction of next-sentence and inverse-cloze pairs.
//!
//! A corpus file is JSON Lines, one [`SectionRecord`] per line. Pairs never
//! straddle section boundaries.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::seed;

/// Default minimum raw word count for a sentence to take part in a pair.
pub const DEFAULT_MIN_WORDS: usize = 4;

/// Preceding and following sentences taken as inverse-cloze context.
pub const IC_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// One corpus section: the unit of pair extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub lang: String,
    pub doc_id: String,
    pub sec_id: String,
    pub sentences: Vec<String>,
}

impl SectionRecord {
    fn validate(&self) -> Result<(), String> {
        if self.lang.is_empty() {
            return Err("empty lang".into());
        }
        if let Some(pos) = self.sentences.iter().position(|s| s.is_empty()) {
            return Err(format!("empty sentence at index {pos}"));
        }
        Ok(())
    }
}

/// A unigram, or a bigram rendered as two unigrams joined by one space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NGramFeature(String);

impl NGramFeature {
    pub fn unigram(token: &str) -> Self {
        Self(token.to_owned())
    }

    pub fn bigram(first: &str, second: &str) -> Self {
        let mut s = String::with_capacity(first.len() + second.len() + 1);
        s.push_str(first);
        s.push(' ');
        s.push_str(second);
        Self(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_bigram(&self) -> bool {
        self.0.contains(' ')
    }
}

impl fmt::Display for NGramFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NGramFeature {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    #[default]
    Nsp,
    Ic,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Nsp => "nsp",
            PairKind::Ic => "ic",
        }
    }
}

/// A featurized query/target pair; feature lists are multisets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub lang: String,
    pub kind: PairKind,
    #[serde(rename = "query")]
    pub query_feats: Vec<NGramFeature>,
    #[serde(rename = "target")]
    pub target_feats: Vec<NGramFeature>,
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Whitespace split, case fold, strip edge punctuation, drop emptied runs.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .filter_map(|run| {
            let stripped = run.trim_matches(is_punctuation);
            (!stripped.is_empty()).then(|| stripped.to_lowercase())
        })
        .collect()
}

/// Raw whitespace word count, before any normalization.
pub fn word_count(sentence: &str) -> usize {
    sentence.split_whitespace().count()
}

/// Unigrams followed by adjacent bigrams, multiplicities preserved.
pub fn featurize(sentence: &str) -> Vec<NGramFeature> {
    let tokens = tokenize(sentence);
    let mut feats = Vec::with_capacity(tokens.len() * 2);
    feats.extend(tokens.iter().map(|t| NGramFeature::unigram(t)));
    feats.extend(tokens.windows(2).map(|w| NGramFeature::bigram(&w[0], &w[1])));
    feats
}

/// One pair per consecutive sentence pair where both sentences have at least
/// `min_words` raw words.
pub fn extract_nsp_pairs(section: &SectionRecord, min_words: usize) -> Vec<ExamplePair> {
    let min_words = min_words.max(1);
    let ok: Vec<bool> = section
        .sentences
        .iter()
        .map(|s| word_count(s) >= min_words)
        .collect();
    section
        .sentences
        .windows(2)
        .enumerate()
        .filter(|(i, _)| ok[*i] && ok[*i + 1])
        .filter_map(|(_, w)| {
            let query_feats = featurize(&w[0]);
            let target_feats = featurize(&w[1]);
            // Every sentence passing min_words >= 1 has at least one run, but a
            // run made only of punctuation featurizes to nothing.
            (!query_feats.is_empty() && !target_feats.is_empty()).then(|| ExamplePair {
                lang: section.lang.clone(),
                kind: PairKind::Nsp,
                query_feats,
                target_feats,
            })
        })
        .collect()
}

/// Context window around `index`: up to [`IC_WINDOW`] sentences each side,
/// clamped at the section bounds, the query itself excluded.
pub fn ic_context_indices(len: usize, index: usize) -> Vec<usize> {
    let start = index.saturating_sub(IC_WINDOW);
    let end = (index + IC_WINDOW + 1).min(len);
    (start..end).filter(|&j| j != index).collect()
}

/// Samples at most one inverse-cloze pair from a section.
///
/// The query is drawn uniformly among sentences with at least `min_words` raw
/// words; the draw depends only on `(rng_seed, doc_id, sec_id)`.
pub fn extract_ic_pairs(section: &SectionRecord, rng_seed: u64, min_words: usize) -> Vec<ExamplePair> {
    let n = section.sentences.len();
    if n < 2 {
        return Vec::new();
    }
    let eligible: Vec<usize> = (0..n)
        .filter(|&i| word_count(&section.sentences[i]) >= min_words.max(1))
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let mut rng = seed::rng(rng_seed, &["ic", &section.doc_id, &section.sec_id]);
    let index = eligible[rng.random_range(0..eligible.len())];
    let context: Vec<&str> = ic_context_indices(n, index)
        .into_iter()
        .map(|j| section.sentences[j].as_str())
        .collect();
    let query_feats = featurize(&section.sentences[index]);
    let target_feats = featurize(&context.join(" "));
    if query_feats.is_empty() || target_feats.is_empty() {
        return Vec::new();
    }
    vec![ExamplePair {
        lang: section.lang.clone(),
        kind: PairKind::Ic,
        query_feats,
        target_feats,
    }]
}

/// Extracts pairs of the given kind from a section.
pub fn extract_pairs(section: &SectionRecord, kind: PairKind, rng_seed: u64, min_words: usize) -> Vec<ExamplePair> {
    match kind {
        PairKind::Nsp => extract_nsp_pairs(section, min_words),
        PairKind::Ic => extract_ic_pairs(section, rng_seed, min_words),
    }
}

/// Streaming reader over a JSON Lines corpus. Blank lines are skipped.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<SectionRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(CorpusError::Malformed {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<SectionRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r));
            return Some(parsed.map_err(|message| CorpusError::Malformed {
                line: self.line_no,
                message,
            }));
        }
    }
}

/// Opens a corpus file as a stream of records in file order.
pub fn read_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(CorpusReader::new(BufReader::new(file)))
}

/// Reads a whole corpus file, failing on the first malformed line.
pub fn load_corpus(path: &Path) -> Result<Vec<SectionRecord>, CorpusError> {
    read_corpus(path)?.collect()
}

pub fn write_corpus(path: &Path, records: &[SectionRecord]) -> Result<(), CorpusError> {
    write_jsonl(path, records)
}

pub fn write_pairs(path: &Path, pairs: &[ExamplePair]) -> Result<(), CorpusError> {
    write_jsonl(path, pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<ExamplePair>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ExamplePair = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if pair.query_feats.is_empty() || pair.target_feats.is_empty() {
            return Err(CorpusError::Malformed {
                line: i + 1,
                message: "empty feature list".into(),
            });
        }
        out.push(pair);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn section(sentences: &[&str]) -> SectionRecord {
        SectionRecord {
            lang: "xx".into(),
            doc_id: "d".into(),
            sec_id: "s".into(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn strs(feats: &[NGramFeature]) -> Vec<&str> {
        feats.iter().map(|f| f.as_str()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sat."), vec!["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("¿Dónde está?"), vec!["dónde", "está"]);
        assert_eq!(tokenize("-- hello ..."), vec!["hello"]);
        // interior punctuation is kept
        assert_eq!(tokenize("don't e-mail"), vec!["don't", "e-mail"]);
    }

    #[test]
    fn featurize_examples() {
        assert_eq!(strs(&featurize("a b c")), vec!["a", "b", "c", "a b", "b c"]);
        assert_eq!(strs(&featurize("hello")), vec!["hello"]);
        let f = featurize("a a a");
        assert_eq!(f.iter().filter(|x| x.as_str() == "a").count(), 3);
        assert_eq!(f.iter().filter(|x| x.as_str() == "a a").count(), 2);
        assert_eq!(f.len(), 5);
    }

    #[test]
    fn nsp_examples() {
        let s = section(&["one two three four", "five six seven eight", "nine ten eleven twelve"]);
        let pairs = extract_nsp_pairs(&s, 4);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].query_feats, featurize("one two three four"));
        assert_eq!(pairs[1].target_feats, featurize("nine ten eleven twelve"));

        let short = section(&["one two three four", "five six seven", "nine ten eleven twelve"]);
        assert!(extract_nsp_pairs(&short, 4).is_empty());
        assert!(extract_nsp_pairs(&section(&["one two three four"]), 4).is_empty());
    }

    #[test]
    fn nsp_counts_raw_words() {
        // "- - b c" has four raw words although only two survive normalization.
        let s = section(&["- - b c", "w x y z"]);
        assert_eq!(extract_nsp_pairs(&s, 4).len(), 1);
    }

    #[test]
    fn ic_context_window() {
        assert_eq!(ic_context_indices(5, 2), vec![0, 1, 3, 4]);
        assert_eq!(ic_context_indices(2, 0), vec![1]);
        assert_eq!(ic_context_indices(2, 1), vec![0]);
        assert_eq!(ic_context_indices(7, 6), vec![4, 5]);
        assert!(extract_ic_pairs(&section(&["a b c d"]), 1, 4).is_empty());
    }

    #[test]
    fn ic_pair_uses_window() {
        let sents = ["s0 a b c", "s1 a b c", "s2 a b c", "s3 a b c", "s4 a b c"];
        let s = section(&sents);
        for seed in 0..20 {
            let pairs = extract_ic_pairs(&s, seed, 4);
            assert_eq!(pairs.len(), 1);
            let q = &pairs[0].query_feats;
            let i: usize = q[0].as_str()[1..].parse().unwrap();
            let expected: Vec<&str> = ic_context_indices(5, i).iter().map(|&j| sents[j]).collect();
            assert_eq!(pairs[0].target_feats, featurize(&expected.join(" ")));
            assert!(!pairs[0].target_feats.contains(&q[0]));
        }
    }

    #[test]
    fn ic_only_samples_long_sentences() {
        let s = section(&["short", "this one is long", "tiny"]);
        for seed in 0..10 {
            let p = extract_ic_pairs(&s, seed, 4);
            assert_eq!(strs(&p[0].query_feats)[0], "this");
        }
        assert!(extract_ic_pairs(&section(&["a", "b"]), 3, 4).is_empty());
    }

    #[test]
    fn reader_names_bad_line() {
        let good = r#"{"lang":"en","doc_id":"1","sec_id":"0","sentences":["a b"],"extra":1}"#;
        let text = format!("{good}\n\n{{not json}}\n");
        let mut it = CorpusReader::new(text.as_bytes());
        assert_eq!(it.next().unwrap().unwrap().lang, "en");
        match it.next().unwrap() {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let empty_sentence = r#"{"lang":"en","doc_id":"1","sec_id":"0","sentences":[""]}"#;
        assert!(CorpusReader::new(empty_sentence.as_bytes()).next().unwrap().is_err());
    }

    proptest! {
        #[test]
        fn featurize_counts(words in proptest::collection::vec("[a-z]{1,4}[.,!]?", 0..12)) {
            let sentence = words.join(" ");
            let n = tokenize(&sentence).len();
            let f = featurize(&sentence);
            prop_assert_eq!(f.iter().filter(|x| !x.is_bigram()).count(), n);
            prop_assert_eq!(f.iter().filter(|x| x.is_bigram()).count(), n.saturating_sub(1));
        }

        #[test]
        fn nsp_pair_count(lens in proptest::collection::vec(1usize..7, 0..10)) {
            let sents: Vec<String> = lens.iter().enumerate()
                .map(|(i, &l)| (0..l).map(|w| format!("w{i}x{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = sents.iter().map(|s| s.as_str()).collect();
            let expected = lens.windows(2).filter(|w| w[0] >= 4 && w[1] >= 4).count();
            prop_assert_eq!(extract_nsp_pairs(&section(&refs), 4).len(), expected);
        }

        #[test]
        fn ic_is_deterministic(seed in any::<u64>(), n in 1usize..8) {
            let sents: Vec<String> = (0..n).map(|i| format!("s{i} b c d")).collect();
            let refs: Vec<&str> = sents.iter().map(|s| s.as_str()).collect();
            let s = section(&refs);
            prop_assert_eq!(extract_ic_pairs(&s, seed, 4), extract_ic_pairs(&s, seed, 4));
        }
    }
}
