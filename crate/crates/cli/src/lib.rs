//! Command-line pipelines: synthetic data, BPE, training, decoding and evaluation.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use docnmt::checkpoint::Checkpoint;
use docnmt::corpus::{
    build_context, format_plain_documents, load_documents, make_contrastive_set, make_synthetic_corpus,
    make_synthetic_split, parse_plain_documents, read_contrastive_set, write_contrastive_set, write_documents,
    ContextMode, Document, GrammarParams,
};
use docnmt::decoder::translate_corpus;
use docnmt::evaluator::{aggregate_contrastive, bleu, d_bleu, score_contrastive_set, ContextProbe};
use docnmt::exec::{sub_seed, Execution};
use docnmt::model::{init_parameters, ModelConfig, ModelParams};
use docnmt::repr::{document_contexts, extract_source_repr, extract_target_repr, write_embeddings};
use docnmt::tokenizer::{train_bpe, BpeModel};
use docnmt::trainer::{encode_examples, train_loop, LogRow};

pub use config::{load_config, ConfigError, Profile, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] docnmt::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "docnmt", version, about = "Context-aware document translation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every model-facing subcommand; flags override `--config`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// `paper` or `desk` defaults.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// prev, random or mix.
    #[arg(long)]
    context_mode: Option<String>,
    /// Number of context sentences.
    #[arg(long)]
    k: Option<usize>,
    /// Scale the loss by the fraction of true-context examples in the batch.
    #[arg(long)]
    adapt_loss: bool,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    beam_size: Option<usize>,
    /// Disable data parallelism.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("profile", self.profile.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("context_mode", self.context_mode.clone());
        push("context_size", self.k.map(|v| v.to_string()));
        push("adapt_loss", self.adapt_loss.then(|| "true".to_string()));
        push("warmup_steps", self.warmup.map(|v| v.to_string()));
        push("max_epochs", self.max_epochs.map(|v| v.to_string()));
        push("vocab_size", self.vocab_size.map(|v| v.to_string()));
        push("beam_size", self.beam_size.map(|v| v.to_string()));
        push("parallel", self.sequential.then(|| "false".to_string()));
        Ok(out)
    }

    fn load(&self) -> CliResult<RunConfig> {
        Ok(load_config(self.config.as_deref(), &self.overrides()?)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE model over the sources and targets of a document file.
    BpeTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pair every sentence with its context under the configured regime.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate the synthetic pronoun corpus and its contrastive test set.
    Synth {
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        #[arg(long, default_value_t = 8)]
        doc_len: usize,
        #[arg(long, default_value_t = 200)]
        test_docs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Preceding sentences stored with each contrastive instance.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and write its best checkpoint.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Existing BPE model; learned from the training data when absent.
        #[arg(long)]
        bpe: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Step and epoch log (TSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Beam-search translation of every source sentence of a document file.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Hypotheses, one per line, blank line between documents; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sentence- and document-level BLEU.
    Bleu {
        /// Hypotheses, one per line, blank line between documents.
        #[arg(long)]
        hyp: PathBuf,
        /// References in the same layout as `--hyp`.
        #[arg(long = "ref", conflicts_with = "ref_docs", required_unless_present = "ref_docs")]
        reference: Option<PathBuf>,
        /// References taken from the target column of a document file.
        #[arg(long)]
        ref_docs: Option<PathBuf>,
    },
    /// Score a contrastive pronoun test set.
    Contrastive {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Number of preceding sentences shown as context.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// `prev` or `self` (the source sentence as its own context).
        #[arg(long, default_value = "prev")]
        probe: String,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Write pooled per-sentence source and target representations.
    ExportEmbeddings {
        /// `TAG=PATH` or `PATH` (tag = file stem); repeatable.
        #[arg(long, required = true)]
        checkpoint: Vec<String>,
        #[arg(long)]
        input: PathBuf,
        /// Document to embed.
        #[arg(long, default_value_t = 0)]
        doc_index: usize,
        #[arg(long, value_delimiter = ',', default_value = "prev,random")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Receives `source.tsv` and `target.tsv`.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Runs one command line; returns the process exit status (0 ok, 1 usage, 2 data).
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn exec_of(parallel: bool) -> Execution {
    if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match command {
        Command::BpeTrain { input, out: path, cfg } => {
            let cfg = cfg.load()?;
            let docs = load_documents(&input)?;
            let bpe = learn_bpe(&docs, cfg.model.vocab_size)?;
            bpe.save(&path)?;
            writeln!(err, "bpe: {} symbols -> {}", bpe.vocab_size(), path.display())?;
        }
        Command::Prepare { input, out: path, cfg } => {
            let cfg = cfg.load()?;
            let docs = load_documents(&input)?;
            let ex = build_context(&docs, cfg.context_mode, cfg.context_size, sub_seed(cfg.seed, "context"))?;
            let text: String = ex.iter().map(|e| e.to_tsv() + "\n").collect();
            std::fs::write(&path, text)?;
            writeln!(err, "prepare: {} examples -> {}", ex.len(), path.display())?;
        }
        Command::Synth {
            docs,
            doc_len,
            test_docs,
            seed,
            k,
            out_dir,
        } => synth(docs, doc_len, test_docs, seed, k, &out_dir, err)?,
        Command::Train {
            train,
            valid,
            bpe,
            out: path,
            log,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let train = train
                .or(cfg.train_data.clone())
                .ok_or_else(|| CliError::Usage("train: --train or train_data is required".into()))?;
            let valid = valid
                .or(cfg.valid_data.clone())
                .ok_or_else(|| CliError::Usage("train: --valid or valid_data is required".into()))?;
            let bpe = bpe.map(|p| BpeModel::load(&p)).transpose()?;
            let ckpt = train_model(&cfg, &load_documents(&train)?, &load_documents(&valid)?, bpe, log.as_deref(), err)?;
            ckpt.save(&path)?;
            writeln!(err, "train: checkpoint -> {}", path.display())?;
        }
        Command::Translate {
            checkpoint,
            input,
            out: path,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let docs = load_documents(&input)?;
            let ex = build_context(&docs, cfg.context_mode, cfg.context_size, sub_seed(cfg.seed, "context"))?;
            let hyps = translate_corpus(&ckpt.params, &ckpt.bpe, &ex, &cfg.decode, exec_of(cfg.parallel))?;
            let mut it = hyps.into_iter();
            let grouped: Vec<Vec<String>> = docs
                .iter()
                .map(|d| it.by_ref().take(d.sentences.len()).collect())
                .collect();
            let text = format_plain_documents(&grouped);
            match path {
                Some(p) => std::fs::write(p, text)?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Bleu {
            hyp,
            reference,
            ref_docs,
        } => {
            let hyps = parse_plain_documents(&std::fs::read_to_string(&hyp)?);
            let refs: Vec<Vec<String>> = match (reference, ref_docs) {
                (Some(r), _) => parse_plain_documents(&std::fs::read_to_string(r)?),
                (None, Some(d)) => load_documents(&d)?
                    .iter()
                    .map(|d| d.targets().map(str::to_string).collect())
                    .collect(),
                (None, None) => return Err(CliError::Usage("bleu: --ref or --ref-docs is required".into())),
            };
            let shape = |d: &[Vec<String>]| d.iter().map(Vec::len).collect::<Vec<_>>();
            if shape(&hyps) != shape(&refs) {
                return Err(docnmt::Error::InvalidArgument(format!(
                    "bleu: hypothesis documents {:?} do not line up with reference documents {:?}",
                    shape(&hyps),
                    shape(&refs)
                ))
                .into());
            }
            let flat = |d: &[Vec<String>]| d.iter().flatten().cloned().collect::<Vec<_>>();
            writeln!(out, "s-BLEU {:.1}", bleu(&flat(&hyps), &flat(&refs))?)?;
            writeln!(out, "d-BLEU {:.1}", d_bleu(&hyps, &refs)?)?;
        }
        Command::Contrastive {
            checkpoint,
            test,
            k,
            probe,
            out: path,
            sequential,
        } => {
            let probe = match probe.as_str() {
                "prev" if k > 0 => ContextProbe::Prev(k),
                "prev" => return Err(CliError::Usage("contrastive: --k must be at least 1".into())),
                "self" => ContextProbe::SelfSource,
                p => return Err(CliError::Usage(format!("contrastive: unknown probe `{p}` (expected prev or self)"))),
            };
            let ckpt = Checkpoint::load(&checkpoint)?;
            let set = read_contrastive_set(&test)?;
            let results = score_contrastive_set(&ckpt.params, &ckpt.bpe, &set, probe, exec_of(!sequential))?;
            let report = aggregate_contrastive(&results)?;
            if let Some(p) = path {
                std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            out.write_all(report.to_table().as_bytes())?;
        }
        Command::ExportEmbeddings {
            checkpoint,
            input,
            doc_index,
            modes,
            k,
            seed,
            out_dir,
        } => {
            let modes = modes
                .iter()
                .map(|m| match m.parse::<ContextMode>() {
                    Ok(c @ (ContextMode::Prev | ContextMode::Random)) => Ok(c),
                    _ => Err(CliError::Usage(format!("export-embeddings: mode `{m}` is not prev or random"))),
                })
                .collect::<CliResult<Vec<_>>>()?;
            let docs = load_documents(&input)?;
            let doc = docs.get(doc_index).ok_or_else(|| {
                docnmt::Error::InvalidArgument(format!(
                    "export-embeddings: document {doc_index} out of range ({} documents)",
                    docs.len()
                ))
            })?;
            let mut source = Vec::new();
            let mut target = Vec::new();
            for spec in &checkpoint {
                let (tag, path) = match spec.split_once('=') {
                    Some((t, p)) => (t.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let tag = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                        (tag, p)
                    }
                };
                let ckpt = Checkpoint::load(&path)?;
                for &mode in &modes {
                    let ex = document_contexts(doc, &docs, mode, k, seed)?;
                    let name = mode.to_string();
                    source.extend(extract_source_repr(&ckpt.params, &ckpt.bpe, &ex, &tag, &name)?);
                    target.extend(extract_target_repr(&ckpt.params, &ckpt.bpe, &ex, &tag, &name)?);
                }
            }
            std::fs::create_dir_all(&out_dir)?;
            write_embeddings(&source, &out_dir.join("source.tsv"))?;
            write_embeddings(&target, &out_dir.join("target.tsv"))?;
            writeln!(err, "export-embeddings: {} rows per table -> {}", source.len(), out_dir.display())?;
        }
    }
    Ok(())
}

fn synth(n_docs: usize, doc_len: usize, test_docs: usize, seed: u64, k: usize, dir: &Path, err: &mut dyn Write) -> CliResult {
    let grammar = GrammarParams::default();
    let (train, valid) = make_synthetic_corpus(n_docs, doc_len, seed, &grammar)?;
    let test = make_synthetic_split(test_docs, doc_len, seed, &grammar, "test")?;
    std::fs::create_dir_all(dir)?;
    let plain = |s: &[docnmt::corpus::SyntheticDocument]| s.iter().map(|d| d.doc.clone()).collect::<Vec<Document>>();
    write_documents(&plain(&train), &dir.join("train.tsv"))?;
    write_documents(&plain(&valid), &dir.join("valid.tsv"))?;
    write_documents(&plain(&test), &dir.join("test.tsv"))?;
    let set = make_contrastive_set(&test, k);
    write_contrastive_set(&set, &dir.join("contrastive.jsonl"))?;
    let meta: String = test
        .iter()
        .map(|d| serde_json::to_string(&d.meta).map(|s| s + "\n"))
        .collect::<Result<_, _>>()?;
    std::fs::write(dir.join("test.meta.jsonl"), meta)?;
    writeln!(
        err,
        "synth: {} train, {} valid, {} test documents, {} contrastive instances -> {}",
        train.len(),
        valid.len(),
        test.len(),
        set.len(),
        dir.display()
    )?;
    Ok(())
}

/// BPE over every source and target sentence.
pub fn learn_bpe(docs: &[Document], vocab_size: usize) -> CliResult<BpeModel> {
    let lines: Vec<&str> = docs.iter().flat_map(|d| d.sources().chain(d.targets())).collect();
    Ok(train_bpe(&lines, vocab_size)?)
}

/// Full training pipeline; every random choice derives from `cfg.seed`.
pub fn train_model(
    cfg: &RunConfig,
    train: &[Document],
    valid: &[Document],
    bpe: Option<BpeModel>,
    log: Option<&Path>,
    err: &mut dyn Write,
) -> CliResult<Checkpoint> {
    let bpe = match bpe {
        Some(b) => b,
        None => learn_bpe(train, cfg.model.vocab_size)?,
    };
    let model = ModelConfig {
        vocab_size: bpe.vocab_size(),
        ..cfg.model.clone()
    };
    let k = cfg.context_size;
    let train_ex = build_context(train, cfg.context_mode, k, sub_seed(cfg.seed, "context"))?;
    let valid_ex = build_context(valid, cfg.context_mode, k, sub_seed(cfg.seed, "valid-context"))?;
    let train_enc = encode_examples(&bpe, &train_ex, model.max_len);
    let valid_enc = encode_examples(&bpe, &valid_ex, model.max_len);
    let params: ModelParams<f32> = init_parameters(&model, sub_seed(cfg.seed, "init"))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    writeln!(
        err,
        "train: {} examples, {} parameters, context {}@{}{}",
        train_enc.len(),
        params.num_values(),
        cfg.context_mode,
        k,
        if train_cfg.adapt_loss { " adapt-loss" } else { "" }
    )?;
    let outcome = train_loop(&train_cfg, params, &train_enc, &valid_enc, exec_of(cfg.parallel), |row| {
        if let LogRow::Epoch { epoch, step, perplexity } = row {
            let _ = writeln!(err, "epoch {epoch} step {step} valid perplexity {perplexity:.4}");
        }
    })?;
    if let Some(reason) = &outcome.aborted {
        writeln!(err, "train: stopped early: {reason}")?;
    }
    if let Some(p) = log {
        std::fs::write(p, outcome.log.to_tsv())?;
    }
    let meta = format!(
        "context_mode = {}\ncontext_size = {}\nadapt_loss = {}\nseed = {}\nbest_epoch = {}\nepochs = {}\nsteps = {}\nbest_perplexity = {}\n",
        cfg.context_mode,
        k,
        train_cfg.adapt_loss,
        cfg.seed,
        outcome.best_epoch,
        outcome.epochs,
        outcome.steps,
        outcome.best_perplexity.map_or_else(|| "none".to_string(), |p| p.to_string()),
    );
    Ok(Checkpoint {
        params: outcome.best,
        bpe,
        meta,
        adam: Some(outcome.adam),
    })
}

