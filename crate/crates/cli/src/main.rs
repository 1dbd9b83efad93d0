//! `fixpoint` — train and evaluate recurrent language models whose forward
//! pass can run either as the classic sequential recurrence or as a
//! row-parallel fixed-point iteration.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or
//! validation error, 4 training divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use fixpoint_lm::corpus::{self, EncodedCorpus, Vocabulary};
use fixpoint_lm::{elman, eval_bench, trainer, Error, ForwardEngine, WorkerPool};

use config::{GradArgs, HyperArgs};

/// Anything that can stop a command, tagged with how it should exit.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// Everything the library can report: exit 3, or 4 for divergence.
    Lib(Error),
}

impl CliError {
    fn usage(msg: String) -> Self {
        CliError::Usage(msg)
    }

    /// A library error that was detected while assembling configuration,
    /// so it counts as a usage problem.
    fn usage_from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(Error::Diverged { .. }) => 4,
            CliError::Lib(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fixpoint",
    version,
    about = "Recurrent language models with a parallel fixed-point forward pass"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a text corpus.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write checkpoints, metrics, and the best model.
    Train(TrainArgs),
    /// Score a text file with a trained model.
    Eval(EvalArgs),
    /// Retrain across sweep counts and tabulate test perplexities.
    SweepRho(SweepArgs),
    /// Time the sequential and fixed-point forward passes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Corpus file, one sentence per line.
    #[arg(long, value_name = "FILE")]
    text: PathBuf,
    /// Where to write the vocabulary.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Drop words seen fewer than this many times.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus, one sentence per line.
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Validation corpus for model selection.
    #[arg(long, value_name = "FILE")]
    valid: PathBuf,
    /// Output directory for vocab, checkpoints, metrics, and the best model.
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    #[command(flatten)]
    grad: GradArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Vocabulary the model was trained with.
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Text to score, one sentence per line.
    #[arg(long, value_name = "FILE")]
    text: PathBuf,
    /// Forward pass: `sequential` or `fpi:N` (N sweeps).
    #[arg(long, default_value = "sequential")]
    engine: String,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    #[arg(long, value_name = "FILE")]
    valid: PathBuf,
    /// Held-out corpus the table reports perplexity on.
    #[arg(long, value_name = "FILE")]
    test: PathBuf,
    /// Comma-separated sweep counts, e.g. `1,2,5,10`.
    #[arg(long, value_name = "LIST")]
    rho_list: NumList,
    /// Where to write the results table.
    #[arg(long, value_name = "FILE", default_value = "sweep.csv")]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Hidden state width of the benchmarked model.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Vocabulary size of the benchmarked model.
    #[arg(long, default_value_t = 100)]
    vocab: usize,
    /// Comma-separated sequence lengths.
    #[arg(long, value_name = "LIST", default_value = "64,256")]
    t_list: NumList,
    /// Comma-separated sweep counts for the fixed-point engine.
    #[arg(long, value_name = "LIST", default_value = "1,2,4,8")]
    rho_list: NumList,
    /// Comma-separated worker counts (1 is always added as the baseline).
    #[arg(long, value_name = "LIST", default_value = "1,2,4")]
    workers_list: NumList,
    /// Timed repetitions per configuration; the median is reported.
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Where to write the results table.
    #[arg(long, value_name = "FILE", default_value = "bench.csv")]
    out: PathBuf,
    /// Corrupt one value before the engine-equivalence gate (self-test).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Comma-separated positive integers as a single flag value.
#[derive(Clone, Debug)]
struct NumList(Vec<usize>);

impl FromStr for NumList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let nums = s
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("{part:?} is not a number: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if nums.is_empty() {
            return Err("list must not be empty".into());
        }
        Ok(NumList(nums))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildVocab(args) => build_vocab(&args),
        Command::Train(args) => train(&args),
        Command::Eval(args) => eval(&args),
        Command::SweepRho(args) => sweep_rho(&args),
        Command::Bench(args) => bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_corpus(vocab: &Vocabulary, path: &Path) -> Result<EncodedCorpus, CliError> {
    let lines = corpus::read_lines(path)?;
    Ok(corpus::encode(vocab, &lines))
}

fn build_vocab(args: &BuildVocabArgs) -> Result<(), CliError> {
    let lines = corpus::read_lines(&args.text)?;
    let vocab = corpus::build_vocab(&lines, args.min_count)?;
    vocab.write(&args.out)?;
    println!("vocab size {} written to {}", vocab.size(), args.out.display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let settings = args.hyper.resolve(Some(&args.grad))?;
    settings
        .echo(std::io::stdout().lock())
        .map_err(|e| CliError::Lib(Error::io(Path::new("stdout"), e)))?;

    let train_lines = corpus::read_lines(&args.train)?;
    let vocab = corpus::build_vocab(&train_lines, settings.min_count)?;
    let train_corpus = corpus::encode(&vocab, &train_lines);
    let valid_corpus = load_corpus(&vocab, &args.valid)?;
    println!(
        "corpus: {} train words, {} valid words, vocab {}",
        train_corpus.word_count(),
        valid_corpus.word_count(),
        vocab.size()
    );

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Lib(Error::io(&args.out, e)))?;
    vocab.write(&args.out.join("vocab.txt"))?;

    let pool = WorkerPool::new(settings.workers)?;
    let outcome = pool.run(|| {
        trainer::train(
            &settings.train,
            &train_corpus,
            &valid_corpus,
            Some(&args.out),
        )
    })?;

    for m in &outcome.metrics {
        println!(
            "epoch {}: train {:.4} nats/word, valid ppl {:.3}, {:.1}s",
            m.epoch, m.train_loss_nats_per_word, m.valid_ppl, m.seconds
        );
    }
    let best = &outcome.metrics[outcome.best_epoch - 1];
    let model_path = args.out.join("model.bin");
    elman::write_model(&outcome.params, &model_path)?;
    println!(
        "best epoch {} (valid ppl {:.3}); model written to {}",
        outcome.best_epoch,
        best.valid_ppl,
        model_path.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let engine = ForwardEngine::parse(&args.engine).map_err(CliError::usage_from)?;
    let vocab = Vocabulary::read(&args.vocab)?;
    let params = elman::read_model(&args.model)?;
    let text = load_corpus(&vocab, &args.text)?;
    let pool = WorkerPool::new(args.workers)?;
    let ppl = pool.run(|| eval_bench::perplexity(&text, &params, engine))?;
    println!(
        "perplexity {:.6} over {} words ({} engine)",
        ppl,
        text.word_count(),
        engine
    );
    Ok(())
}

/// Reject empty or zero-containing count lists before they reach the library,
/// so a bad flag value reads as a usage error rather than a data error.
fn check_count_list(flag: &str, list: &[usize]) -> Result<(), CliError> {
    if list.is_empty() {
        return Err(CliError::usage(format!("{flag} must name at least one value")));
    }
    if list.contains(&0) {
        return Err(CliError::usage(format!("{flag} values must be at least 1")));
    }
    Ok(())
}

fn sweep_rho(args: &SweepArgs) -> Result<(), CliError> {
    check_count_list("--rho-list", &args.rho_list.0)?;
    let settings = args.hyper.resolve(None)?;
    settings
        .echo(std::io::stdout().lock())
        .map_err(|e| CliError::Lib(Error::io(Path::new("stdout"), e)))?;

    let train_lines = corpus::read_lines(&args.train)?;
    let vocab = corpus::build_vocab(&train_lines, settings.min_count)?;
    let train_corpus = corpus::encode(&vocab, &train_lines);
    let valid_corpus = load_corpus(&vocab, &args.valid)?;
    let test_corpus = load_corpus(&vocab, &args.test)?;
    println!(
        "corpus: {} train words, {} valid words, {} test words, vocab {}",
        train_corpus.word_count(),
        valid_corpus.word_count(),
        test_corpus.word_count(),
        vocab.size()
    );

    let pool = WorkerPool::new(settings.workers)?;
    let outcome = pool.run(|| {
        eval_bench::sweep_rho(
            &settings.train,
            &args.rho_list.0,
            &train_corpus,
            &valid_corpus,
            &test_corpus,
        )
    })?;

    println!(
        "reference bptt: test ppl {:.3} ({:.1}s)",
        outcome.bptt_test_ppl, outcome.bptt_seconds
    );
    for row in &outcome.rows {
        println!(
            "rho {:3} {}: test ppl {:.3} ({:.1}s)",
            row.rho,
            if row.detach { "detached" } else { "full    " },
            row.test_ppl,
            row.seconds
        );
    }
    eval_bench::write_sweep_csv(&outcome, &args.out)?;
    println!("table written to {}", args.out.display());
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<(), CliError> {
    check_count_list("--t-list", &args.t_list.0)?;
    check_count_list("--rho-list", &args.rho_list.0)?;
    check_count_list("--workers-list", &args.workers_list.0)?;
    if args.trials < 3 {
        return Err(CliError::usage("--trials must be at least 3 for a stable median".into()));
    }
    let spec = eval_bench::BenchSpec {
        hidden: args.hidden,
        vocab: args.vocab,
        t_list: args.t_list.0.clone(),
        rho_list: args.rho_list.0.clone(),
        workers_list: args.workers_list.0.clone(),
        trials: args.trials,
        seed: args.seed,
        inject_fault: args.inject_fault,
    };
    let rows = eval_bench::bench_forward(&spec)?;
    println!("T      rho  workers  median_s      speedup");
    for r in &rows {
        let engine = if r.rho == 0 {
            "seq".to_string()
        } else {
            format!("{:3}", r.rho)
        };
        println!(
            "{:<6} {:<4} {:<8} {:<13.6} {:.3}",
            r.t, engine, r.workers, r.median_seconds, r.speedup
        );
    }
    eval_bench::write_bench_csv(&rows, &args.out)?;
    println!("table written to {}", args.out.display());
    Ok(())
}
