//! Synthetic multilingual corpora with a controlled vocabulary-overlap graph.
//!
//! Each of `concepts` meaning slots has one surface token per language. For
//! every requested language pair a fixed number of concepts share their token
//! verbatim between the two languages; all other concept tokens are unique to
//! one language. Sharing is allocated in exact blocks: a concept is shared by
//! at most one pair, so requested pairwise counts are realized exactly and
//! unrequested pairs overlap on nothing.
//!
//! Documents pick a topic; every sentence draws [`CONCEPT_SHARE`] of its
//! tokens from the topic's concepts and the rest from language-specific
//! filler, so consecutive sentences are tied together by topic.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SectionRecord;
use crate::seed;
use crate::vocab::Vocabulary;

/// Probability that a sentence position holds a topic concept token.
pub const CONCEPT_SHARE: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error("overlap pattern not realizable: {needed} shared concepts requested for {pair} but only {available} remain; conflicting pairs: {conflicts}")]
    Unrealizable { pair: String, needed: usize, available: usize, conflicts: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEdge {
    pub langs: [String; 2],
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub languages: Vec<String>,
    pub concepts: usize,
    pub topics: usize,
    pub concepts_per_topic: usize,
    #[serde(default)]
    pub overlap: Vec<OverlapEdge>,
    pub sentences_per_doc: usize,
    pub docs_per_language: BTreeMap<String, usize>,
    pub sentence_len: usize,
    pub noise_vocab: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            languages: vec!["aa".into(), "bb".into()],
            concepts: 1000,
            topics: 100,
            concepts_per_topic: 10,
            overlap: vec![OverlapEdge { langs: ["aa".into(), "bb".into()], fraction: 0.3 }],
            sentences_per_doc: 8,
            docs_per_language: BTreeMap::from([("aa".into(), 200), ("bb".into(), 200)]),
            sentence_len: 8,
            noise_vocab: 500,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.languages.is_empty() {
            return bad("no languages".into());
        }
        let mut seen = BTreeSet::new();
        for l in &self.languages {
            if l.is_empty() || !l.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
                return bad(format!("language code {l:?} must be nonempty [a-z0-9]"));
            }
            if !seen.insert(l) {
                return bad(format!("duplicate language {l}"));
            }
            match self.docs_per_language.get(l) {
                Some(&n) if n >= 1 => {}
                _ => return bad(format!("docs_per_language missing or zero for {l}")),
            }
        }
        for (name, v) in [
            ("concepts", self.concepts),
            ("topics", self.topics),
            ("concepts_per_topic", self.concepts_per_topic),
            ("sentences_per_doc", self.sentences_per_doc),
            ("sentence_len", self.sentence_len),
            ("noise_vocab", self.noise_vocab),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.concepts_per_topic > self.concepts {
            return bad("concepts_per_topic exceeds concepts".into());
        }
        let mut pairs = BTreeSet::new();
        for e in &self.overlap {
            let [a, b] = &e.langs;
            if !seen.contains(a) || !seen.contains(b) || a == b {
                return bad(format!("overlap edge {a}-{b} must join two distinct configured languages"));
            }
            if !(0.0..=1.0).contains(&e.fraction) {
                return bad(format!("overlap fraction {} for {a}-{b} outside [0, 1]", e.fraction));
            }
            if !pairs.insert(ordered(a, b)) {
                return bad(format!("duplicate overlap edge {a}-{b}"));
            }
        }
        Ok(())
    }

    /// Requested fraction for an unordered pair; zero if absent.
    pub fn overlap_fraction(&self, a: &str, b: &str) -> f64 {
        self.overlap
            .iter()
            .find(|e| ordered(&e.langs[0], &e.langs[1]) == ordered(a, b))
            .map_or(0.0, |e| e.fraction)
    }

    /// Concepts making up a topic.
    pub fn topic_concepts(&self, topic: usize) -> Vec<usize> {
        (0..self.concepts_per_topic).map(|s| (topic * self.concepts_per_topic + s) % self.concepts).collect()
    }
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Surface tokens per language.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    /// `concept_tokens[c]` is the surface form of concept `c`.
    pub concept_tokens: Vec<String>,
    pub noise_tokens: Vec<String>,
}

/// Concept visiting order for block allocation: slot-major over topics, so
/// shared blocks spread evenly across topics.
fn allocation_order(spec: &SynthSpec) -> Vec<usize> {
    let m = spec.concepts_per_topic;
    let mut order: Vec<usize> = (0..spec.concepts).collect();
    order.sort_by_key(|&c| (c % m, c / m));
    order
}

/// Builds every language's lexicon.
pub fn build_lexicons(spec: &SynthSpec) -> Result<BTreeMap<String, Lexicon>, SynthError> {
    spec.validate()?;
    let n_lang = spec.languages.len();
    let pos = |l: &str| spec.languages.iter().position(|x| x == l).unwrap();
    // partner[lang][concept]
    let mut partner: Vec<Vec<Option<usize>>> = vec![vec![None; spec.concepts]; n_lang];
    let mut edges: Vec<(usize, usize, usize)> = spec
        .overlap
        .iter()
        .map(|e| {
            let (a, b) = ordered(&e.langs[0], &e.langs[1]);
            (pos(a), pos(b), (e.fraction * spec.concepts as f64).round() as usize)
        })
        .filter(|e| e.2 > 0)
        .collect();
    edges.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let order = allocation_order(spec);
    let mut done: Vec<(usize, usize)> = Vec::new();
    for &(a, b, needed) in &edges {
        let free: Vec<usize> = order.iter().copied().filter(|&c| partner[a][c].is_none() && partner[b][c].is_none()).collect();
        if free.len() < needed {
            let conflicts: Vec<String> = done
                .iter()
                .filter(|(x, y)| [a, b].contains(x) || [a, b].contains(y))
                .map(|&(x, y)| format!("{}-{}", spec.languages[x], spec.languages[y]))
                .collect();
            return Err(SynthError::Unrealizable {
                pair: format!("{}-{}", spec.languages[a], spec.languages[b]),
                needed,
                available: free.len(),
                conflicts: if conflicts.is_empty() { "none".into() } else { conflicts.join(", ") },
            });
        }
        for &c in &free[..needed] {
            partner[a][c] = Some(b);
            partner[b][c] = Some(a);
        }
        done.push((a, b));
    }
    Ok(spec
        .languages
        .iter()
        .enumerate()
        .map(|(li, lang)| {
            let concept_tokens = (0..spec.concepts)
                .map(|c| match partner[li][c] {
                    Some(p) => {
                        let (x, y) = ordered(lang, &spec.languages[p]);
                        format!("c{c}_{x}_{y}")
                    }
                    None => format!("c{c}_{lang}"),
                })
                .collect();
            let noise_tokens = (0..spec.noise_vocab).map(|i| format!("n{i}_{lang}")).collect();
            (lang.clone(), Lexicon { concept_tokens, noise_tokens })
        })
        .collect())
}

/// Per-language vocabularies of concept and filler tokens.
pub fn gen_lexicons(spec: &SynthSpec) -> Result<BTreeMap<String, Vocabulary>, SynthError> {
    Ok(build_lexicons(spec)?
        .into_iter()
        .map(|(lang, lex)| {
            let v = Vocabulary::from_tokens(lex.concept_tokens.iter().chain(&lex.noise_tokens).cloned(), &lang);
            (lang, v)
        })
        .collect())
}

fn gen_document(spec: &SynthSpec, lang: &str, lex: &Lexicon, doc: usize) -> SectionRecord {
    let mut rng = seed::rng(spec.seed, &["synth-doc", lang, &doc.to_string()]);
    let topic = rng.random_range(0..spec.topics);
    let concepts = spec.topic_concepts(topic);
    let sentences = (0..spec.sentences_per_doc)
        .map(|_| {
            (0..spec.sentence_len)
                .map(|_| {
                    if rng.random_bool(CONCEPT_SHARE) {
                        lex.concept_tokens[concepts[rng.random_range(0..concepts.len())]].as_str()
                    } else {
                        lex.noise_tokens[rng.random_range(0..lex.noise_tokens.len())].as_str()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    SectionRecord { lang: lang.to_string(), doc_id: format!("{lang}-{doc}"), sec_id: "0".into(), sentences }
}

/// Generates every language's documents, languages in spec order. Each
/// document is one section.
pub fn gen_corpus(spec: &SynthSpec) -> Result<Vec<SectionRecord>, SynthError> {
    let lexicons = build_lexicons(spec)?;
    Ok(spec
        .languages
        .iter()
        .flat_map(|lang| {
            let lex = &lexicons[lang];
            let n = spec.docs_per_language[lang];
            (0..n).into_par_iter().map(|d| gen_document(spec, lang, lex, d)).collect::<Vec<_>>()
        })
        .collect())
}

/// Target / pivot / auxiliary chain: the auxiliary shares tokens with the
/// pivot only, the target with the pivot only, and the target is the
/// smallest language.
pub fn fig7_preset() -> SynthSpec {
    SynthSpec {
        languages: vec!["tgt".into(), "piv".into(), "aux".into()],
        concepts: 10_000,
        topics: 1000,
        concepts_per_topic: 10,
        overlap: vec![
            OverlapEdge { langs: ["tgt".into(), "piv".into()], fraction: 0.4 },
            OverlapEdge { langs: ["aux".into(), "piv".into()], fraction: 0.6 },
        ],
        sentences_per_doc: 8,
        docs_per_language: BTreeMap::from([("tgt".into(), 600), ("piv".into(), 1000), ("aux".into(), 3000)]),
        sentence_len: 8,
        noise_vocab: 400,
        seed: 0,
    }
}

/// Six languages; `l0` is low resource, holding about 2% of the documents,
/// and shares part of its vocabulary with each other language.
pub fn matrix_preset() -> SynthSpec {
    let langs: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
    let mut overlap = Vec::new();
    for i in 0..langs.len() {
        for j in i + 1..langs.len() {
            let fraction = if i == 0 { 0.12 } else { 0.08 };
            overlap.push(OverlapEdge { langs: [langs[i].clone(), langs[j].clone()], fraction });
        }
    }
    let mut docs = BTreeMap::new();
    docs.insert(langs[0].clone(), 300);
    for l in &langs[1..] {
        docs.insert(l.clone(), 2940);
    }
    SynthSpec {
        languages: langs,
        concepts: 2000,
        topics: 200,
        concepts_per_topic: 10,
        overlap,
        sentences_per_doc: 8,
        docs_per_language: docs,
        sentence_len: 8,
        noise_vocab: 400,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{intersection_size, jaccard};

    fn no_noise_pair(fraction: f64, concepts: usize) -> SynthSpec {
        SynthSpec {
            concepts,
            topics: 10,
            overlap: vec![OverlapEdge { langs: ["aa".into(), "bb".into()], fraction }],
            ..Default::default()
        }
    }

    fn concept_vocab(spec: &SynthSpec, lang: &str) -> Vocabulary {
        let lex = build_lexicons(spec).unwrap();
        Vocabulary::from_tokens(lex[lang].concept_tokens.iter().cloned(), lang)
    }

    #[test]
    fn lexicon_examples() {
        let s = no_noise_pair(0.0, 1000);
        assert_eq!(jaccard(&concept_vocab(&s, "aa"), &concept_vocab(&s, "bb")), 0.0);
        let s = no_noise_pair(1.0, 1000);
        assert_eq!(jaccard(&concept_vocab(&s, "aa"), &concept_vocab(&s, "bb")), 1.0);
        let s = no_noise_pair(0.3, 1000);
        assert_eq!(intersection_size(&concept_vocab(&s, "aa"), &concept_vocab(&s, "bb")), 300);
    }

    #[test]
    fn shared_blocks_spread_over_topics() {
        let s = SynthSpec { concepts: 1000, topics: 100, ..no_noise_pair(0.3, 1000) };
        let lex = build_lexicons(&s).unwrap();
        for t in 0..s.topics {
            let shared = s.topic_concepts(t).iter().filter(|&&c| lex["aa"].concept_tokens[c] == lex["bb"].concept_tokens[c]).count();
            assert_eq!(shared, 3);
        }
    }

    #[test]
    fn unrealizable_names_pairs() {
        let mut s = SynthSpec::default();
        s.languages.push("cc".into());
        s.docs_per_language.insert("cc".into(), 1);
        s.overlap = vec![
            OverlapEdge { langs: ["aa".into(), "bb".into()], fraction: 0.6 },
            OverlapEdge { langs: ["aa".into(), "cc".into()], fraction: 0.5 },
        ];
        match build_lexicons(&s) {
            Err(SynthError::Unrealizable { pair, conflicts, .. }) => {
                assert_eq!(pair, "aa-cc");
                assert_eq!(conflicts, "aa-bb");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::default();
        s.overlap[0].fraction = 1.5;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.docs_per_language.remove("bb");
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.languages[1] = "B_B".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn noise_never_collides() {
        let spec = matrix_preset();
        let lex = gen_lexicons(&spec).unwrap();
        let langs: Vec<&String> = lex.keys().collect();
        for (i, a) in langs.iter().enumerate() {
            for b in &langs[i + 1..] {
                let shared: Vec<&str> = lex[*a].tokens().filter(|t| lex[*b].contains(t)).collect();
                assert!(shared.iter().all(|t| t.starts_with('c')));
            }
        }
    }

    #[test]
    fn corpus_shape_and_determinism() {
        let spec = SynthSpec { docs_per_language: BTreeMap::from([("aa".into(), 7), ("bb".into(), 3)]), ..Default::default() };
        let corpus = gen_corpus(&spec).unwrap();
        assert_eq!(corpus.iter().filter(|r| r.lang == "aa").count(), 7);
        assert_eq!(corpus.iter().filter(|r| r.lang == "bb").count(), 3);
        assert!(corpus.iter().all(|r| r.sentences.len() == 8));
        assert!(corpus.iter().flat_map(|r| &r.sentences).all(|s| s.split(' ').count() == 8));
        assert_eq!(corpus, gen_corpus(&spec).unwrap());
        let other = gen_corpus(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(corpus, other);
    }

    #[test]
    fn fig7_preset_graph() {
        let spec = fig7_preset();
        let lex = gen_lexicons(&spec).unwrap();
        assert_eq!(jaccard(&lex["aux"], &lex["tgt"]), 0.0);
        assert!(jaccard(&lex["tgt"], &lex["piv"]) > 0.0);
        assert!(jaccard(&lex["aux"], &lex["piv"]) > 0.0);
        let smallest = spec.docs_per_language.iter().min_by_key(|(_, &n)| n).unwrap().0;
        assert_eq!(smallest, "tgt");
        assert_eq!(gen_corpus(&spec).unwrap()[0], gen_corpus(&fig7_preset()).unwrap()[0]);
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    /// P(two sentences of one document share no concept), computed exactly.
    fn analytic_no_share(m: usize, len: usize, p: f64) -> f64 {
        // distinct[k][d]: P(k uniform draws from m hit exactly d distinct concepts)
        let mut distinct = vec![vec![0.0; m + 1]; len + 1];
        distinct[0][0] = 1.0;
        for k in 0..len {
            for d in 0..=m {
                let pr = distinct[k][d];
                if pr == 0.0 {
                    continue;
                }
                distinct[k + 1][d] += pr * d as f64 / m as f64;
                if d < m {
                    distinct[k + 1][d + 1] += pr * (m - d) as f64 / m as f64;
                }
            }
        }
        let bin = |k: usize| binom(len, k) * p.powi(k as i32) * (1.0 - p).powi((len - k) as i32);
        let mut total = 0.0;
        for k1 in 0..=len {
            for k2 in 0..=len {
                let miss: f64 = (0..=m).map(|d| distinct[k1][d] * ((m - d) as f64 / m as f64).powi(k2 as i32)).sum();
                total += bin(k1) * bin(k2) * miss;
            }
        }
        total
    }

    #[test]
    fn consecutive_sentences_share_topic_tokens() {
        let spec = SynthSpec::default();
        let analytic = 1.0 - analytic_no_share(spec.concepts_per_topic, spec.sentence_len, CONCEPT_SHARE);
        assert!(analytic > 0.95, "analytic {analytic}");

        let big = SynthSpec { docs_per_language: BTreeMap::from([("aa".into(), 3000), ("bb".into(), 1)]), ..spec };
        let lex = build_lexicons(&big).unwrap();
        let concept: BTreeSet<&str> = lex["aa"].concept_tokens.iter().map(String::as_str).collect();
        let corpus = gen_corpus(&big).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for r in corpus.iter().filter(|r| r.lang == "aa") {
            for w in r.sentences.windows(2) {
                let a: BTreeSet<&str> = w[0].split(' ').filter(|t| concept.contains(t)).collect();
                total += 1;
                hits += w[1].split(' ').any(|t| a.contains(t)) as usize;
            }
        }
        let empirical = hits as f64 / total as f64;
        // 21000 Bernoulli trials: 5 standard errors is under 0.005.
        assert!((empirical - analytic).abs() < 0.005, "empirical {empirical} analytic {analytic}");
    }
}
