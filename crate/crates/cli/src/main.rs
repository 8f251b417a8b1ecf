//! `mdr`: extract pairs, build and compare vocabularies, train and score
//! dual encoders, and run the canned transfer experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mdr_core::analysis::{transfer_table, TransferPoint};
use mdr_core::corpus::{extract_pairs, load_corpus, load_pairs, ExamplePair, PairKind, SectionRecord};
use mdr_core::encoder::{encode_checkpoint, encode_pairs, load_checkpoint, train};
use mdr_core::eval::{recall_at_k, EvalReport};
use mdr_core::harness::{
    run_mixture_sweep, run_per_language_vs_combined, run_transitive, split_of, ExperimentConfig, OutputDir, Split,
    TransitivePreset, COMBINED,
};
use mdr_core::synth::{fig7_preset, gen_corpus, matrix_preset, SynthSpec};
use mdr_core::vocab::{build_vocab, censor, censor_pairs, OverlapMatrix, Vocabulary};

#[derive(Parser, Debug)]
#[command(name = "mdr", version, about = "Multilingual dual-encoder retrieval workbench")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training, evaluation and experiment seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sequential, bit-reproducible training (true) or parallel (false).
    #[arg(long, global = true)]
    deterministic: Option<bool>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    task: Option<TaskArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Nsp,
    Ic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Eval,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Fig7,
    Matrix,
    Default,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransitiveArg {
    Fig7,
    Custom,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a corpus into query/target pairs.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Write a synthetic corpus, one JSON Lines file per language.
    Synth {
        #[arg(long, value_enum, default_value = "default")]
        preset: PresetArg,
        /// Spec file; overrides the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Build a capped n-gram vocabulary from pair files.
    BuildVocab {
        #[arg(long, required = true, num_args = 1..)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Jaccard and directed overlap between vocabularies given as `name=path`.
    Overlap {
        #[arg(long, required = true, num_args = 2..)]
        vocab: Vec<String>,
    },
    /// Remove every target token from an auxiliary vocabulary.
    Censor {
        #[arg(long)]
        aux: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Auxiliary pairs to filter against the censored vocabulary.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Train a dual encoder on a pair file.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Sampled recall@k of a checkpoint.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Held-out pairs used as queries.
        #[arg(long)]
        pairs: PathBuf,
        /// Pairs whose targets form the distractor source.
        #[arg(long)]
        distractors: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long, default_value = "model")]
        model_id: String,
    },
    /// Transfer table from paired eval reports and a factors TSV.
    Analyze {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// TSV with header `lang train_share difficulty overlap`.
        #[arg(long)]
        factors: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Per-language models versus one combined model.
    RunMatrix,
    /// Transfer through pivots from an auxiliary language with no target overlap.
    RunTransitive {
        #[arg(long, value_enum, default_value = "fig7")]
        preset: TransitiveArg,
    },
    /// Target-share sweep over mixed training streams.
    RunSweep {
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
        cfg.train.seed = s;
        cfg.eval.seed = s;
        if let Some(m) = cfg.mixture.as_mut() {
            m.seed = s;
        }
    }
    if let Some(d) = g.deterministic {
        cfg.train.deterministic = d;
    }
    if let Some(t) = g.task {
        cfg.task = match t {
            TaskArg::Nsp => PairKind::Nsp,
            TaskArg::Ic => PairKind::Ic,
        };
    }
    cfg.out_dir = Some(g.out_dir.clone());
    Ok(cfg)
}

fn stage<T, E: std::fmt::Display>(name: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow!("stage {name}: {e}"))
}

fn pairs_jsonl(pairs: &[ExamplePair]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn corpus_jsonl(records: &[SectionRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    stage("load", Vocabulary::load(path).with_context(|| path.display().to_string()))
}

fn read_pairs(path: &Path) -> Result<Vec<ExamplePair>> {
    stage("load", load_pairs(path).with_context(|| path.display().to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out_dir = cli.global.out_dir.clone();
    match cli.command {
        Command::Extract { input, split } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            out.input("corpus", &input)?;
            let records = stage("load", load_corpus(&input).with_context(|| input.display().to_string()))?;
            let pair_seed = cfg.seeds[0];
            let mut pairs = Vec::new();
            for r in &records {
                let s = split_of(&r.doc_id, &r.sec_id, cfg.split_seed);
                let keep = match split {
                    SplitArg::All => true,
                    SplitArg::Train => s == Split::Train,
                    SplitArg::Dev => s == Split::Dev,
                    SplitArg::Eval => s == Split::Eval,
                };
                if keep {
                    pairs.extend(extract_pairs(r, cfg.task, pair_seed, cfg.min_words));
                }
            }
            log::info!("{} pairs from {} sections", pairs.len(), records.len());
            out.write("pairs.jsonl", &pairs_jsonl(&pairs)?)?;
            out.commit("extract", &cfg)?;
        }
        Command::Synth { preset, spec } => {
            let spec: SynthSpec = match spec {
                Some(p) => stage("config", serde_json::from_str(&fs::read_to_string(&p)?))?,
                None => match preset {
                    PresetArg::Fig7 => fig7_preset(),
                    PresetArg::Matrix => matrix_preset(),
                    PresetArg::Default => SynthSpec::default(),
                },
            };
            let mut spec = spec;
            if let Some(s) = cli.global.seed {
                spec.seed = s;
            }
            let records = stage("synth", gen_corpus(&spec))?;
            let mut out = OutputDir::new(Some(&out_dir))?;
            out.write_json("spec.json", &spec)?;
            for lang in &spec.languages {
                let mine: Vec<SectionRecord> = records.iter().filter(|r| &r.lang == lang).cloned().collect();
                out.write(&format!("corpus/{lang}.jsonl"), &corpus_jsonl(&mine)?)?;
            }
            out.commit("synth", &cfg)?;
        }
        Command::BuildVocab { pairs, cap } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            let mut all = Vec::new();
            for p in &pairs {
                out.input("pairs", p)?;
                all.extend(read_pairs(p)?);
            }
            let vocab = build_vocab(all.iter(), cap.or(cfg.vocab_cap));
            log::info!("{} features", vocab.len());
            out.write("vocab.tsv", vocab.to_tsv().as_bytes())?;
            out.commit("build-vocab", &cfg)?;
        }
        Command::Overlap { vocab } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            let mut named = BTreeMap::new();
            for item in &vocab {
                let (name, path) =
                    item.split_once('=').ok_or_else(|| anyhow!("stage config: expected name=path, got {item}"))?;
                out.input(name, Path::new(path))?;
                named.insert(name.to_string(), read_vocab(Path::new(path))?);
            }
            let m = OverlapMatrix::compute(&named);
            out.write("jaccard.tsv", m.jaccard_tsv().as_bytes())?;
            out.write("asym_overlap.tsv", m.asym_tsv().as_bytes())?;
            out.commit("overlap", &cfg)?;
        }
        Command::Censor { aux, target, pairs } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            out.input("aux", &aux)?;
            out.input("target", &target)?;
            let aux_v = read_vocab(&aux)?;
            let target_v = read_vocab(&target)?;
            let censored = censor(&aux_v, &target_v);
            if censored.tokens().any(|t| target_v.contains(t)) {
                bail!("stage censor-verify: censored vocabulary still overlaps the target");
            }
            log::info!("kept {} of {} auxiliary features", censored.len(), aux_v.len());
            out.write("censored_vocab.tsv", censored.to_tsv().as_bytes())?;
            if let Some(p) = pairs {
                out.input("pairs", &p)?;
                let kept: Vec<ExamplePair> = censor_pairs(read_pairs(&p)?, &censored).collect();
                out.write("censored_pairs.jsonl", &pairs_jsonl(&kept)?)?;
            }
            out.commit("censor", &cfg)?;
        }
        Command::Train { pairs, vocab } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            out.input("pairs", &pairs)?;
            out.input("vocab", &vocab)?;
            let v = read_vocab(&vocab)?;
            let p = read_pairs(&pairs)?;
            let (model, report) = stage("train", train(&p, cfg.model, &cfg.train, &v))?;
            out.write("model.mdrl", &encode_checkpoint(&model))?;
            out.write_json("train.json", &report)?;
            out.commit("train", &cfg)?;
        }
        Command::Eval { model, vocab, pairs, distractors, lang, model_id } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            for (label, p) in [("model", &model), ("vocab", &vocab), ("pairs", &pairs), ("distractors", &distractors)] {
                out.input(label, p)?;
            }
            let v = read_vocab(&vocab)?;
            let m = stage("load", load_checkpoint(&model, Some(&v)))?;
            let queries = encode_pairs(&read_pairs(&pairs)?, &v);
            let pool: Vec<Vec<u32>> = read_pairs(&distractors)?.iter().map(|p| v.encode(&p.target_feats)).collect();
            let report = stage("eval", recall_at_k(&m, &queries, &pool, &cfg.eval, &lang, &model_id))?;
            for (k, r) in &report.recall {
                println!("recall@{k}\t{r:.6}");
            }
            out.write_json("eval.json", &report)?;
            out.commit("eval", &cfg)?;
        }
        Command::Analyze { reports, factors, k, exclude } => {
            let mut out = OutputDir::new(Some(&out_dir))?;
            let mut per: BTreeMap<String, f64> = BTreeMap::new();
            let mut comb: BTreeMap<String, f64> = BTreeMap::new();
            for p in &reports {
                out.input("report", p)?;
                let r = stage("load", EvalReport::load(p).with_context(|| p.display().to_string()))?;
                let v = r.at(k).ok_or_else(|| anyhow!("stage analyze: {} has no recall@{k}", p.display()))?;
                if r.model_id == COMBINED {
                    comb.insert(r.lang, v);
                } else {
                    per.insert(r.lang, v);
                }
            }
            out.input("factors", &factors)?;
            let points = read_factors(&factors, &per, &comb)?;
            let table = stage("analyze", transfer_table(&points, k, &exclude))?;
            out.write_json("transfer_table.json", &table)?;
            out.write("variance.tsv", table.variance_tsv().as_bytes())?;
            out.write("languages.tsv", table.languages_tsv().as_bytes())?;
            print!("{}", table.variance_tsv());
            out.commit("analyze", &cfg)?;
        }
        Command::RunMatrix => {
            let r = run_per_language_vs_combined(&cfg)?;
            for lang in &r.languages {
                println!("{lang}\tper_language\t{:?}\tcombined\t{:?}", r.mean_per_language[lang], r.mean_combined[lang]);
            }
        }
        Command::RunTransitive { preset } => {
            let preset = match preset {
                TransitiveArg::Fig7 => TransitivePreset::Fig7Synth,
                TransitiveArg::Custom => TransitivePreset::Custom,
            };
            let r = run_transitive(&cfg, preset)?;
            println!("mean delta {:?}", r.mean_delta);
            println!("control mean |delta| {:?}", r.mean_abs_control_delta);
        }
        Command::RunSweep { ratios } => {
            let ratios = if ratios.is_empty() { cfg.ratios.clone() } else { ratios };
            let r = run_mixture_sweep(&cfg, &ratios)?;
            print!("{}", r.to_tsv());
        }
    }
    Ok(())
}

fn read_factors(path: &Path, per: &BTreeMap<String, f64>, comb: &BTreeMap<String, f64>) -> Result<Vec<TransferPoint>> {
    let text = stage("load", fs::read_to_string(path).with_context(|| path.display().to_string()))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            bail!("stage load: {}:{}: expected 4 columns", path.display(), i + 1);
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| anyhow!("stage load: {}:{}: {e}", path.display(), i + 1))
        };
        let lang = cols[0].to_string();
        let (Some(&p), Some(&c)) = (per.get(&lang), comb.get(&lang)) else {
            bail!("stage analyze: missing per-language or combined report for {lang}");
        };
        points.push(TransferPoint {
            lang,
            per_language_recall: p,
            combined_recall: c,
            train_share: num(cols[1])?,
            difficulty: num(cols[2])?,
            overlap_with_reference: num(cols[3])?,
        });
    }
    Ok(points)
}
