use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use noisecar::config::RunConfig;
use noisecar::data::{self, NoiseSpec};
use noisecar::gradcheck::{self, CheckedLoss, GradcheckOptions};
use noisecar::theory::{self, SuiteOptions};
use noisecar::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "noisecar",
    version,
    about = "Training under label noise with confidence-adaptive losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Blobs,
    Rings,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Symmetric,
    AsymmetricCircular,
    AsymmetricMap,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file with clean labels.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        classes: u64,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Radial jitter for rings.
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add a noisy-label column to a dataset file.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: NoiseArg,
        #[arg(long)]
        rate: f64,
        /// Class map for asymmetric-map noise: `from:to` pairs separated by
        /// commas, or `cifar10`.
        #[arg(long)]
        map: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON run configuration.
    Train {
        config: PathBuf,
        /// Replaces `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Check the noise-tolerance bounds on random toy distributions.
    VerifyTheory {
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = theory::DEFAULT_RESOLUTION)]
        resolution: f64,
        #[arg(long, default_value_t = noisecar::losses::DEFAULT_LOG_ZERO, allow_negative_numbers = true)]
        log_zero: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with finite differences and closed forms.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_CASES)]
        cases: usize,
        /// Restrict the finite-difference suite to one loss.
        #[arg(long)]
        loss: Option<CheckedLoss>,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Lib(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::NonFinite(_) => EXIT_RUNTIME,
        Error::Verification(_) => EXIT_VERIFICATION,
        _ => EXIT_VALIDATION,
    }
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_map(text: &str) -> Result<Vec<(usize, usize)>, Error> {
    if text == "cifar10" {
        return Ok(data::cifar10_asymmetric_map());
    }
    text.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("map entry '{pair}' is not from:to")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad class index '{s}' in map")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData {
            kind,
            classes,
            per_class,
            dim,
            separation,
            spread,
            noise_std,
            seed,
            out,
        } => {
            let k = classes as usize;
            let ds = match kind {
                DataKind::Blobs => data::gen_blobs(k, per_class, dim, separation, spread, seed)?,
                DataKind::Rings => data::gen_rings(k, per_class, noise_std, seed)?,
            };
            data::csv::write_dataset_file(&out, &ds)?;
            eprintln!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::InjectNoise {
            input,
            kind,
            rate,
            map,
            seed,
            out,
        } => {
            let ds = data::csv::load_dataset_file(&input)?;
            let spec = match (kind, map) {
                (NoiseArg::Symmetric, None) => NoiseSpec::symmetric(rate, seed),
                (NoiseArg::AsymmetricCircular, None) => NoiseSpec::circular(rate, seed),
                (NoiseArg::AsymmetricMap, Some(m)) => NoiseSpec::with_map(rate, parse_map(&m)?, seed),
                (NoiseArg::AsymmetricMap, None) => {
                    return Err(Error::InvalidArgument("asymmetric-map noise requires --map".into()).into())
                }
                (_, Some(_)) => {
                    return Err(Error::InvalidArgument("--map only applies to asymmetric-map".into()).into())
                }
            };
            let noisy = data::inject_noise(&ds, &spec)?;
            data::csv::write_dataset_file(&out, &noisy)?;
            let changed = noisy
                .observed_labels()
                .iter()
                .zip(&noisy.clean_labels)
                .filter(|(a, b)| a != b)
                .count();
            eprintln!("flipped {changed} of {} labels; wrote {}", noisy.len(), out.display());
        }
        Command::Train { config, out, quiet } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let output = noisecar::run::execute(&cfg, |r| {
                if !quiet {
                    let acc = r.test_accuracy.map_or(String::from("-"), |a| format!("{a:.4}"));
                    eprintln!(
                        "epoch {:>4}  lr {:.5}  loss {:.4}  train_acc {:.4}  test_acc {acc}  correction {:.4}",
                        r.epoch, r.lr, r.train_loss, r.train_accuracy, r.correction_accuracy
                    );
                }
            })?;
            emit(&output.summary, None)?;
        }
        Command::VerifyTheory {
            seeds,
            eta,
            classes,
            resolution,
            log_zero,
            seed,
            out,
        } => {
            let opts = SuiteOptions {
                seeds,
                log_zero,
                resolution,
                eta,
                classes,
                base_seed: seed,
            };
            let report = theory::run_suite(&opts)?;
            emit(&report, out.as_deref())?;
            if !report.passed {
                return Err(Failure::Verification(format!(
                    "{} theorem 1, {} theorem 2 and {} lemma 2 violations",
                    report.theorem1_violations.len(),
                    report.theorem2_violations.len(),
                    report.lemma2_violations
                )));
            }
        }
        Command::Gradcheck {
            cases,
            loss,
            tolerance,
            step,
            seed,
            out,
        } => {
            let mut opts = GradcheckOptions {
                cases,
                tolerance,
                step,
                seed,
                ..GradcheckOptions::default()
            };
            if let Some(l) = loss {
                opts.losses = vec![l];
            }
            let report = gradcheck::run(&opts)?;
            emit(&report, out.as_deref())?;
            if !report.passed {
                let failing: Vec<&str> = report
                    .finite_difference
                    .iter()
                    .filter(|r| !r.passed)
                    .map(|r| r.loss.name())
                    .chain(report.closed_form.iter().filter(|r| !r.passed).map(|r| r.loss))
                    .collect();
                return Err(Failure::Verification(format!(
                    "gradient check failed for {}",
                    failing.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFICATION)
        }
    }
}
