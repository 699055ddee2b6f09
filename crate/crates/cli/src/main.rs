//! `ranlab`: train and evaluate recurrent language models, trace their
//! weighted-sum decompositions, count parameters, and run the invariant
//! suite.
//!
//! Exit codes: 0 ok, 1 check failure, 2 configuration (and usage), 3 input
//! or file integrity, 4 numeric abort.

mod params;
mod render;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ranlab::cells::Stack;
use ranlab::decomposition::attribute_sequence;
use ranlab::lm::config::DEFAULT_SEED;
use ranlab::lm::{evaluate, load_checkpoint, metrics, read_corpus, AnyCheckpoint, Checkpoint, TrainConfig, Trainer};
use ranlab::selfcheck::{run_selfcheck, Fault};
use ranlab::{CellKind, Error, OutputActivation, Real};

pub const SEED_ENV: &str = "RANLAB_SEED";

#[derive(Parser)]
#[command(name = "ranlab", version, about = "Recurrent additive network laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Dot,
    Tsv,
}

#[derive(Subcommand)]
enum Command {
    /// Train a language model and write a checkpoint and a metrics log.
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Training corpus (UTF-8).
        #[arg(long)]
        corpus: PathBuf,
        /// Validation corpus (UTF-8).
        #[arg(long)]
        valid: PathBuf,
        /// Checkpoint path, rewritten after every epoch.
        #[arg(long)]
        out: PathBuf,
        /// Metrics log path [default: <out>.metrics.tsv].
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Seed; falls back to the config, then RANLAB_SEED, then 1.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint; its config replaces --config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many epochs are complete [default: max_epochs].
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Report cross-entropy, perplexity, and bits per token of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Require this vocabulary digest (hex SHA-256).
        #[arg(long)]
        vocab_digest: Option<String>,
    },
    /// Attribute every position of an input to its strongest predecessor.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        format: TraceFormat,
        #[arg(long)]
        out: PathBuf,
        /// 0-based layer to trace [default: top layer].
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Count recurrent parameters (weights and biases, no embeddings or softmax).
    Params {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        dh: usize,
        #[arg(long)]
        di: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        /// Output projection width.
        #[arg(long)]
        projection: Option<usize>,
        /// Count weight matrices only.
        #[arg(long)]
        no_biases: bool,
    },
    /// Run the invariant suite; one line per property.
    Selfcheck {
        /// Reduced sizes.
        #[arg(long)]
        quick: bool,
        /// Corrupt a computation to show the suite catches it (forget-sign).
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

enum Failure {
    Check(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Contract(_) | Error::Index { .. } => 2,
        Error::Ingestion(_) | Error::Integrity(_) | Error::Io { .. } => 3,
        Error::NumericAbort { .. } | Error::NonFinite { .. } => 4,
    }
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn append_line(path: &Path, line: &str) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(io)?;
    writeln!(f, "{line}").map_err(io)
}

#[allow(clippy::too_many_arguments)]
fn run_training<T: Real>(
    mut trainer: Trainer<T>,
    out: &Path,
    metrics_path: &Path,
    stop_after: Option<usize>,
) -> Result<(), Failure> {
    let stop = stop_after.unwrap_or(usize::MAX).min(trainer.state.config.max_epochs);
    while trainer.state.epochs_completed < stop {
        match trainer.run_epoch() {
            Ok(m) => {
                append_line(metrics_path, &m.to_line())?;
                trainer.state.save(out)?;
                println!(
                    "epoch {:>3}  lr {:.4}  train {:.4} nats  valid {:.4} nats  ppl {:.3}  bpc {:.4}",
                    m.epoch, m.lr, m.train_nats, m.valid_nats, m.valid_ppl, m.valid_bpc
                );
            }
            Err(Error::NumericAbort {
                epoch,
                block,
                diagnostic,
                last_good,
            }) => {
                if let Some(ckpt) = &last_good {
                    ckpt.save(out)?;
                }
                return Err(Failure::Error(Error::NumericAbort {
                    epoch,
                    block,
                    diagnostic: format!("{diagnostic}; last good state written to {}", out.display()),
                    last_good: None,
                }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &Path,
    corpus: &Path,
    valid: &Path,
    out: &Path,
    metrics_path: Option<PathBuf>,
    seed: Option<u64>,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
) -> Result<(), Failure> {
    let metrics_path = metrics_path.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".metrics.tsv");
        PathBuf::from(p)
    });
    if let Some(path) = resume {
        let ckpt = load_checkpoint(&path)?;
        let train_text = read_corpus(corpus)?;
        let valid_text = read_corpus(valid)?;
        if !metrics_path.exists() {
            write_file(&metrics_path, metrics::header().as_bytes())?;
        }
        return match ckpt {
            AnyCheckpoint::F64(c) => run_training(
                Trainer::resume(c, &train_text, &valid_text)?,
                out,
                &metrics_path,
                stop_after,
            ),
            AnyCheckpoint::F32(c) => run_training(
                Trainer::resume(c, &train_text, &valid_text)?,
                out,
                &metrics_path,
                stop_after,
            ),
        };
    }
    let text = fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", config.display())))?;
    let mut cfg = TrainConfig::parse(&text)?;
    cfg.seed = Some(resolve_seed(seed, cfg.seed)?);
    let train_text = read_corpus(corpus)?;
    let valid_text = read_corpus(valid)?;
    write_file(&metrics_path, metrics::header().as_bytes())?;
    match cfg.precision {
        ranlab::Precision::F64 => run_training(
            Trainer::<f64>::new(&cfg, &train_text, &valid_text)?,
            out,
            &metrics_path,
            stop_after,
        ),
        ranlab::Precision::F32 => run_training(
            Trainer::<f32>::new(&cfg, &train_text, &valid_text)?,
            out,
            &metrics_path,
            stop_after,
        ),
    }
}

fn cmd_eval(checkpoint: &Path, corpus: &Path, digest: Option<&str>) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let text = read_corpus(corpus)?;
    let report = match &ckpt {
        AnyCheckpoint::F64(c) => evaluate(c, &text, digest)?,
        AnyCheckpoint::F32(c) => evaluate(c, &text, digest)?,
    };
    println!(
        "tokens={} mean_nats={:?} perplexity={:?} bpc={:?}",
        report.tokens, report.mean_nats, report.perplexity, report.bpc
    );
    Ok(())
}

fn trace_artifact<T: Real>(
    ckpt: &Checkpoint<T>,
    text: &str,
    format: TraceFormat,
    layer: Option<usize>,
) -> Result<String, Error> {
    let tokenized = ckpt.vocab.tokenize(text)?;
    if tokenized.len() < 2 {
        return Err(Error::Ingestion(format!(
            "trace input needs at least 2 tokens, got {}",
            tokenized.len()
        )));
    }
    let (tokens, ids): (Vec<String>, Vec<usize>) = tokenized.into_iter().unzip();
    let depth = ckpt.model.stack().depth();
    let layer = layer.unwrap_or(depth - 1);
    if layer >= depth {
        return Err(Error::Config(format!(
            "--layer {layer} but the model has {depth} layers"
        )));
    }
    let traces = ckpt.model.trace(&ids)?;
    let attributions = attribute_sequence(&traces[layer], 0)?;
    Ok(match format {
        TraceFormat::Dot => render::dot(&tokens, &attributions),
        TraceFormat::Tsv => render::tsv(&tokens, &attributions),
    })
}

fn cmd_trace(
    checkpoint: &Path,
    input: &Path,
    format: TraceFormat,
    out: &Path,
    layer: Option<usize>,
) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let text = read_corpus(input)?;
    let artifact = match &ckpt {
        AnyCheckpoint::F64(c) => trace_artifact(c, &text, format, layer)?,
        AnyCheckpoint::F32(c) => trace_artifact(c, &text, format, layer)?,
    };
    write_file(out, artifact.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_params(
    kind: &str,
    dh: usize,
    di: usize,
    layers: usize,
    projection: Option<usize>,
    no_biases: bool,
) -> Result<(), Failure> {
    let kind: CellKind = kind.parse()?;
    if layers == 0 {
        return Err(Error::Config("--layers must be at least 1".into()).into());
    }
    let stack = Stack::uniform(kind, di, dh, layers, OutputActivation::Tanh, projection)?;
    let count = stack.count_parameters(!no_biases)?;
    println!("{} ({})", params::with_separators(count), params::millions(count));
    println!("count={count}");
    if let Some(r) = (!no_biases)
        .then(|| params::reference_for(kind, dh, di, layers, projection))
        .flatten()
    {
        let diff = count as f64 / 1e6 - r.millions;
        if diff.abs() < 0.005 {
            println!(
                "note: matches the {:.2}M reference figure for the {}",
                r.millions, r.label
            );
        } else {
            println!(
                "note: the reference figure for the {} is {:.2}M; this exact count differs by {:+.2}M",
                r.label, r.millions, diff
            );
        }
    }
    Ok(())
}

fn cmd_selfcheck(quick: bool, fault: Option<&str>, seed: u64) -> Result<(), Failure> {
    let fault: Option<Fault> = fault.map(str::parse).transpose()?;
    let results = run_selfcheck(quick, fault, seed)?;
    let mut failed = Vec::new();
    for r in &results {
        println!("{r}");
        if !r.pass {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} properties passed", results.len());
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train {
            config,
            corpus,
            valid,
            out,
            metrics,
            seed,
            resume,
            stop_after,
        } => cmd_train(&config, &corpus, &valid, &out, metrics, seed, resume, stop_after),
        Command::Eval {
            checkpoint,
            corpus,
            vocab_digest,
        } => cmd_eval(&checkpoint, &corpus, vocab_digest.as_deref()),
        Command::Trace {
            checkpoint,
            input,
            format,
            out,
            layer,
        } => cmd_trace(&checkpoint, &input, format, &out, layer),
        Command::Params {
            kind,
            dh,
            di,
            layers,
            projection,
            no_biases,
        } => cmd_params(&kind, dh, di, layers, projection, no_biases),
        Command::Selfcheck {
            quick,
            inject_fault,
            seed,
        } => cmd_selfcheck(quick, inject_fault.as_deref(), seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(names)) => {
            eprintln!("failed properties: {names}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
