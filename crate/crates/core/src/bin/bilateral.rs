use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilateral_core::cli;
use bilateral_core::config::RunConfig;
use bilateral_core::curator::ConfidenceKind;
use bilateral_core::error::Error;
use bilateral_core::rewards::RewardVariant;
use bilateral_core::textnorm::F1Mode;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Bilateral reward scoring, toy T-GRPO training, evaluation and curation.
#[derive(Debug, Parser)]
#[command(name = "bilateral", version)]
struct Cli {
    /// TOML config file; missing keys take the defaults listed below.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides train.seed and curate.random_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides reward.variant.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<RewardVariant>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score rollouts (JSONL of {id?, output, gold, length?}) as one batch.
    Score {
        /// Input JSONL, or `-` for stdin.
        input: PathBuf,
        /// Write breakdowns here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy policy and write report, summary, policy and cache.
    Train {
        /// Overrides paths.out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides train.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides train.workers.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate predictions against multiple-choice items.
    Eval {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Overrides reward.f1_mode.
        #[arg(long)]
        f1_mode: Option<Mode>,
        /// Also write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// What to print on stdout.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Build a fine-tuning set from confident, well-formed predictions.
    Curate {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Overrides curate.tau.
        #[arg(long)]
        tau: Option<f64>,
        /// Overrides curate.confidence_kind.
        #[arg(long)]
        confidence_kind: Option<Kind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a trajectory-cache checkpoint.
    InspectCache { input: PathBuf },
    /// Advantages and objective for JSONL of {final_reward, logprobs}.
    Objective { input: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Set,
    Bag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    MaxOptionF1,
    MeanTokenProb,
}

fn parse_variant(s: &str) -> Result<RewardVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_DATA: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let defaults = RunConfig::default().to_toml_string();
    let matches = Cli::command()
        .after_help(format!("Config keys and defaults:\n\n{defaults}"))
        .get_matches();
    let args = match Cli::from_arg_matches(&matches) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (e.g. `| head`) is not an error
        Err(f) if is_broken_pipe(&f) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownVariant(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn is_broken_pipe(f: &Failure) -> bool {
    matches!(f, Failure::Data(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe)
}

fn open(path: &Path) -> Result<Box<dyn BufRead>, Failure> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path)
        .map_err(|e| Failure::Data(Error::Data(format!("{}: {e}", path.display()))))?;
    Ok(Box::new(BufReader::new(f)))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut w = sink(None)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn run(args: Cli) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(args.seed, args.variant);

    match args.command {
        Command::Score { input, out } => {
            cfg.validate()?;
            let report = cli::score(open(&input)?, &cfg.reward)?;
            let mut w = sink(out.as_deref())?;
            report.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Command::Train {
            out_dir,
            steps,
            workers,
        } => {
            if let Some(d) = out_dir {
                cfg.paths.out_dir = d;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            cfg.validate()?;
            let summary = cli::train(&cfg, &cfg.paths.out_dir)?;
            print_json(&summary)?;
        }
        Command::Eval {
            items,
            predictions,
            f1_mode,
            json,
            format,
        } => {
            if let Some(m) = f1_mode {
                cfg.reward.f1_mode = match m {
                    Mode::Set => F1Mode::Set,
                    Mode::Bag => F1Mode::Bag,
                };
            }
            cfg.validate()?;
            let report = cli::eval(open(&items)?, open(&predictions)?, cfg.reward.f1_mode)?;
            if let Some(path) = json {
                let mut w = sink(Some(&path))?;
                serde_json::to_writer_pretty(&mut w, &report).map_err(Error::from)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            let mut w = sink(None)?;
            if format == Format::Json {
                serde_json::to_writer_pretty(&mut w, &report).map_err(Error::from)?;
                w.write_all(b"\n")?;
            } else {
                w.write_all(report.table().as_bytes())?;
            }
            w.flush()?;
        }
        Command::Curate {
            items,
            predictions,
            tau,
            confidence_kind,
            out,
        } => {
            if let Some(t) = tau {
                cfg.curate.tau = t;
            }
            if let Some(k) = confidence_kind {
                cfg.curate.confidence_kind = match k {
                    Kind::MaxOptionF1 => ConfidenceKind::MaxOptionF1,
                    Kind::MeanTokenProb => ConfidenceKind::MeanTokenProb,
                };
            }
            cfg.validate()?;
            let examples = cli::curate(open(&items)?, open(&predictions)?, &cfg.curate)?;
            let mut w = sink(out.as_deref())?;
            for ex in &examples {
                serde_json::to_writer(&mut w, ex).map_err(Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::InspectCache { input } => {
            let mut text = String::new();
            open(&input)?.read_to_string(&mut text)?;
            let info = cli::inspect_cache(&text)?;
            print_json(&info)?;
        }
        Command::Objective { input } => {
            cfg.validate()?;
            let report = cli::objective(open(&input)?, &cfg.tgrpo)?;
            print_json(&report)?;
        }
    }
    Ok(())
}
