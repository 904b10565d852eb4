//! One binary whose subcommands chain the pipeline stages, from synthetic
//! data through training and filtering to evaluation reports, plus an
//! interactive demo loop.
//!
//! Exit codes: 0 on success, 1 for usage problems, 2 for missing or
//! malformed data and artifacts. Progress goes to standard error; the paths
//! of every file a subcommand writes go to standard output, one per line.

mod demo;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use replylab_core::corpus::{load_dataset, save_dataset, Split};
use replylab_core::decoding::Method;
use replylab_core::pipeline::{
    stage_eval, stage_filter, stage_gen_data, stage_sweep, stage_train_classifiers,
    stage_train_lm, stage_train_retriever, RunConfig, RunPaths, ACTION_CLF_FILE, ENCODER_FILE,
    EVAL_CLF_FILE, EVAL_REPORT_JSON, EVAL_REPORT_TEXT, FILTERED_TEST_FILE, FILTERED_TRAIN_FILE,
    FILTERED_VALID_FILE, FILTER_REPORT_JSON, FILTER_REPORT_TEXT, INDEX_FILE, INTENT_CLF_FILE,
    LM_FILE, REJECTED_IDS_FILE, SWEEP_JSON, SWEEP_TEXT, TEST_FILE, TRACES_FILE, TRAIN_FILE,
    VALID_FILE,
};
use replylab_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "replylab",
    version,
    about = "Smart-reply retrieval, user simulation, guided generation, and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug)]
struct Shared {
    /// JSON run configuration; other flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config seed, or stands alone with defaults.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Directory that holds the run's data/, artifacts/, and reports/.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic corpus and write its three splits.
    GenData(Shared),
    /// Rewrite a JSONL dataset into the canonical schema.
    Convert {
        #[command(flatten)]
        shared: Shared,
        /// Dataset to normalize.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Where the canonical JSONL goes.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Train the n-gram generator on the train-split replies.
    TrainLm(Shared),
    /// Train the intent, action, and scoring classifiers.
    TrainClassifiers(Shared),
    /// Train the dual encoder and build the reply index.
    TrainRetriever(Shared),
    /// Simulate the user over every split and keep the rejected examples.
    Filter(Shared),
    /// Score the configured methods on the rejected test split.
    Eval {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated subset of methods to run.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Sweep the guidance strength for the intent-guided method.
    SweepAlpha {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated guidance strengths.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Type a message, accept a suggestion, or reject all and compare replies.
    Demo(Shared),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().expect("usage text is writable");
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Bad invocations and bad knob values exit 1; everything about the state of
/// the world (files, formats, artifacts) exits 2.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

/// Builds the effective configuration: `--config` loads a file, `--seed`
/// overrides or stands alone, `--out` re-roots the three run directories.
fn resolve_config(shared: &Shared) -> Result<RunConfig> {
    let mut config = match (&shared.config, shared.seed) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(seed)) => RunConfig::with_seed(seed),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "pass --config FILE or --seed N".into(),
            ))
        }
    };
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    if let Some(out) = &shared.out {
        config.paths = RunPaths {
            data: out.join("data"),
            artifacts: out.join("artifacts"),
            reports: out.join("reports"),
        };
    }
    config.validate()?;
    Ok(config)
}

fn print_written(dir: &Path, files: &[&str]) {
    for file in files {
        println!("{}", dir.join(file).display());
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| Method::from_str(n)).collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(shared) => {
            let config = resolve_config(&shared)?;
            let corpus = stage_gen_data(&config)?;
            eprintln!(
                "generated {} train / {} valid / {} test examples",
                corpus.train.len(),
                corpus.valid.len(),
                corpus.test.len()
            );
            print_written(&config.paths.data, &[TRAIN_FILE, VALID_FILE, TEST_FILE]);
        }
        Command::Convert {
            shared: _,
            input,
            output,
        } => {
            let outcome = load_dataset(&input, Split::Train, None)?;
            save_dataset(&outcome.dataset, &output)?;
            eprintln!(
                "normalized {} examples, skipped {} blank lines",
                outcome.dataset.len(),
                outcome.skipped_empty
            );
            println!("{}", output.display());
        }
        Command::TrainLm(shared) => {
            let config = resolve_config(&shared)?;
            let lm = stage_train_lm(&config)?;
            eprintln!(
                "trained order-{} generator over {} token types",
                lm.order(),
                lm.vocab_size()
            );
            print_written(&config.paths.artifacts, &[LM_FILE]);
        }
        Command::TrainClassifiers(shared) => {
            let config = resolve_config(&shared)?;
            let trained = stage_train_classifiers(&config)?;
            eprintln!(
                "trained classifiers: {} intents, {} actions",
                trained.intent.class_names().len(),
                trained.action.class_names().len()
            );
            print_written(
                &config.paths.artifacts,
                &[INTENT_CLF_FILE, ACTION_CLF_FILE, EVAL_CLF_FILE],
            );
        }
        Command::TrainRetriever(shared) => {
            let config = resolve_config(&shared)?;
            let (_, index) = stage_train_retriever(&config)?;
            eprintln!("indexed {} candidate replies", index.len());
            print_written(&config.paths.artifacts, &[ENCODER_FILE, INDEX_FILE]);
        }
        Command::Filter(shared) => {
            let config = resolve_config(&shared)?;
            let report = stage_filter(&config)?;
            let pre: usize = report.splits.iter().map(|s| s.pre_count).sum();
            let post: usize = report.splits.iter().map(|s| s.post_count).sum();
            eprintln!("user rejected {post} of {pre} suggestion sets");
            print_written(
                &config.paths.data,
                &[FILTERED_TRAIN_FILE, FILTERED_VALID_FILE, FILTERED_TEST_FILE],
            );
            print_written(&config.paths.artifacts, &[REJECTED_IDS_FILE]);
            print_written(
                &config.paths.reports,
                &[FILTER_REPORT_JSON, FILTER_REPORT_TEXT],
            );
        }
        Command::Eval { shared, methods } => {
            let config = resolve_config(&shared)?;
            let methods = methods.as_deref().map(parse_methods).transpose()?;
            let report = stage_eval(&config, methods.as_deref())?;
            eprintln!(
                "scored {} methods on {} rejected test examples",
                report.rows.len(),
                report.n_examples
            );
            print_written(
                &config.paths.reports,
                &[EVAL_REPORT_JSON, EVAL_REPORT_TEXT, TRACES_FILE],
            );
        }
        Command::SweepAlpha { shared, alphas } => {
            let config = resolve_config(&shared)?;
            let table = stage_sweep(&config, alphas.as_deref())?;
            eprintln!(
                "swept {} guidance strengths on {} examples",
                table.rows.len(),
                table.n_examples
            );
            print_written(&config.paths.reports, &[SWEEP_JSON, SWEEP_TEXT]);
        }
        Command::Demo(shared) => {
            let config = resolve_config(&shared)?;
            let stdin = io::stdin();
            let stdout = io::stdout();
            demo::run(&config, &mut stdin.lock(), &mut stdout.lock())?;
        }
    }
    Ok(())
}
