use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxlm::config::{Precision, TrainConfig};
use ctxlm::corpus::{build_vocabulary, load_corpus, Document, RawDocument, Vocabulary};
use ctxlm::evaluation::{
    corpus_perplexity, perplexity_by_tag, report_csv, unk_rate, SentenceScorer, TagAnnotation, TagMean,
};
use ctxlm::ngram::NGramModel;
use ctxlm::numeric::Real;
use ctxlm::synth::{generate, SynthSpec};
use ctxlm::training::{train, AnyCheckpoint, Checkpoint, TrainStatus, LOG_HEADER};
use ctxlm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctxlm",
    version,
    about = "Larger-context LSTM language models and a Kneser-Ney baseline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a `key = value` config file.
    Train {
        config: PathBuf,
        /// Checkpoint to write.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with `.log` appended.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write 0 in the seconds column so reruns produce identical logs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Perplexity of a checkpoint on a corpus, as CSV.
    Eval(EvalArgs),
    /// Perplexity per part-of-speech tag; `eval` with `--tags` required.
    PosPpl(EvalArgs),
    /// Train a modified Kneser-Ney model and report its perplexity.
    Ngram {
        #[arg(long, default_value_t = 5)]
        order: usize,
        train: PathBuf,
        eval: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        vocab_size: usize,
        /// Also write the model as text.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Generate a synthetic topical corpus (train/valid/test files).
    Synth(SynthArgs),
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    corpus: PathBuf,
    /// Context sentences; defaults to the value the model was trained with.
    #[arg(long)]
    n: Option<usize>,
    /// Tag file aligned with the corpus.
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, value_enum, default_value_t = MeanArg::Geometric)]
    tag_mean: MeanArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanArg {
    Geometric,
    Arithmetic,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    topics: usize,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 2000)]
    train_docs: usize,
    #[arg(long, default_value_t = 200)]
    valid_docs: usize,
    #[arg(long, default_value_t = 200)]
    test_docs: usize,
    #[arg(long, default_value_t = 10)]
    sentences_per_doc: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 1.5)]
    sharpness: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CTXLM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CTXLM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train {
            config,
            out,
            log,
            no_timing,
        } => cmd_train(&config, &out, log, !no_timing),
        Command::Eval(args) => cmd_eval(&args),
        Command::PosPpl(args) => {
            if args.tags.is_none() {
                return Err(Error::Config("pos-ppl needs --tags".into()));
            }
            cmd_eval(&args)
        }
        Command::Ngram {
            order,
            train,
            eval,
            vocab_size,
            export,
        } => cmd_ngram(order, &train, &eval, vocab_size, export.as_deref()),
        Command::Synth(a) => {
            let spec = SynthSpec {
                topics: a.topics,
                vocab_size: a.vocab_size,
                train_docs: a.train_docs,
                valid_docs: a.valid_docs,
                test_docs: a.test_docs,
                sentences_per_doc: a.sentences_per_doc,
                min_len: a.min_len,
                max_len: a.max_len,
                sharpness: a.sharpness,
                seed: a.seed,
            };
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            generate(&spec)?.write_to(&a.out_dir)?;
            Ok(0)
        }
    }
}

fn read_raw(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    load_corpus(BufReader::new(file))
}

fn read_docs(path: &Path, vocab: &Vocabulary) -> Result<Vec<Document>> {
    let docs = vocab.encode_documents(&read_raw(path)?);
    let rate = unk_rate(&docs);
    if rate > 0.5 {
        log::warn!(
            "{}: {:.1}% of tokens are outside the vocabulary; is this the right corpus?",
            path.display(),
            100.0 * rate
        );
    }
    Ok(docs)
}

/// Relative corpus paths in a config file are resolved against its directory.
fn resolve(base: &Path, p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_ref()
        .map(|p| if p.is_relative() { base.join(p) } else { p.clone() })
}

fn cmd_train(config_path: &Path, out: &Path, log: Option<PathBuf>, timing: bool) -> Result<u8> {
    let text =
        std::fs::read_to_string(config_path).map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let config = TrainConfig::parse_for_training(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let train_path = resolve(base, &config.train_path).expect("required key");
    let valid_path = resolve(base, &config.valid_path).expect("required key");
    let raw_train = read_raw(&train_path)?;
    let vocab = build_vocabulary(&raw_train, config.vocab_size)?;
    let train_docs = vocab.encode_documents(&raw_train);
    let valid_docs = read_docs(&valid_path, &vocab)?;
    let log_path = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log");
        PathBuf::from(p)
    });
    match config.precision {
        Precision::F32 => train_and_save::<f32>(&config, &vocab, &train_docs, &valid_docs, out, &log_path, timing),
        Precision::F64 => train_and_save::<f64>(&config, &vocab, &train_docs, &valid_docs, out, &log_path, timing),
    }
}

fn train_and_save<T: Real>(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train_docs: &[Document],
    valid_docs: &[Document],
    out: &Path,
    log_path: &Path,
    timing: bool,
) -> Result<u8> {
    let mut log = File::create(log_path)?;
    writeln!(log, "{LOG_HEADER}")?;
    eprintln!("{LOG_HEADER}");
    let mut io_error = None;
    let outcome = train::<T>(config, vocab, train_docs, valid_docs, |r| {
        let line = r.csv_line(timing);
        eprintln!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    outcome.best.save(out)?;
    match outcome.status {
        TrainStatus::Diverged { epoch, message } => {
            eprintln!(
                "error: training diverged in epoch {epoch} ({message}); wrote the checkpoint from epoch {}",
                outcome.best.epoch
            );
            Ok(3)
        }
        _ => {
            log::info!(
                "best epoch {} (valid NLL {:.4})",
                outcome.best.epoch,
                outcome.best.best_valid_nll
            );
            Ok(0)
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    match AnyCheckpoint::load(&args.checkpoint)? {
        AnyCheckpoint::F32(c) => eval_checkpoint(&c, args),
        AnyCheckpoint::F64(c) => eval_checkpoint(&c, args),
    }
}

fn eval_checkpoint<T: Real>(ckpt: &Checkpoint<T>, args: &EvalArgs) -> Result<u8> {
    let model = ckpt.model()?;
    let n = args.n.unwrap_or(ckpt.config.n);
    let docs = read_docs(&args.corpus, &ckpt.vocab)?;
    print_report(&model, &docs, n, args)
}

fn print_report<S: SentenceScorer>(scorer: &S, docs: &[Document], n: usize, args: &EvalArgs) -> Result<u8> {
    let tags = match &args.tags {
        Some(path) => {
            let text = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let text = String::from_utf8(text).map_err(|e| Error::Utf8 {
                offset: e.utf8_error().valid_up_to(),
            })?;
            let mean = match args.tag_mean {
                MeanArg::Geometric => TagMean::Geometric,
                MeanArg::Arithmetic => TagMean::Arithmetic,
            };
            Some(perplexity_by_tag(scorer, docs, &TagAnnotation::parse(&text), n, mean)?)
        }
        None => None,
    };
    let report = corpus_perplexity(scorer, docs, n)?;
    print!("{}", report_csv(&report, tags.as_ref().map(|t| (t, args.top_k))));
    Ok(0)
}

fn cmd_ngram(
    order: usize,
    train_path: &Path,
    eval_path: &Path,
    vocab_size: usize,
    export: Option<&Path>,
) -> Result<u8> {
    if order == 0 {
        return Err(Error::Config("--order must be at least 1".into()));
    }
    let raw = read_raw(train_path)?;
    let vocab = build_vocabulary(&raw, vocab_size).map_err(|e| Error::Config(e.to_string()))?;
    let docs = vocab.encode_documents(&raw);
    let model = NGramModel::train(&docs, order, vocab.len())?;
    if let Some(path) = export {
        std::fs::write(path, model.export(&vocab))?;
    }
    let eval_docs = read_docs(eval_path, &vocab)?;
    let report = corpus_perplexity(&model, &eval_docs, 0)?;
    print!("{}", report_csv(&report, None));
    Ok(0)
}
