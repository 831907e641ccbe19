use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icl_bayes::io::pipeline::{self, forecast_rows};
use icl_bayes::io::{json, tables, RunConfig};
use icl_bayes::{EvalMode, FitParams, PredictorKind, Result};

#[derive(Parser)]
#[command(
    name = "icl-bayes",
    version,
    about = "Memorization vs generalization in in-context learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Id,
    Ood,
    Iwl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    M,
    G,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::load(&self.config)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out)?;
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample mixtures and write eval sets (and optionally training sequences).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "id")]
        modes: Vec<Mode>,
        /// Number of training sequences to write per diversity.
        #[arg(long, default_value_t = 0)]
        train: u64,
    },
    /// Write one Bayes-optimal predictor's outputs as a prediction log.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        predictor: Predictor,
    },
    /// Relative distances of a model's log to the two predictors.
    Distance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
    },
    /// Compressed sizes of both predictors and the loss gap, per diversity.
    Complexity {
        #[command(flatten)]
        common: Common,
    },
    /// Fit (alpha, beta, gamma) to a model's log.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
    },
    /// Crossover forecasts from fitted parameters.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// A `fit_report.json` written by `fit`.
        #[arg(long)]
        report: PathBuf,
        /// Optional log, to add the empirical crossover column.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Everything from eval sets to forecasts in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
    },
    /// Write a log whose cells follow the model under given parameters.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report(files: &[String], dir: &Path) {
    for f in files {
        println!("{}", dir.join(f).display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, modes, train } => {
            let (cfg, out) = common.load()?;
            let modes: Vec<EvalMode> = modes
                .iter()
                .map(|m| match m {
                    Mode::Id => EvalMode::Id,
                    Mode::Ood => EvalMode::Ood,
                    Mode::Iwl => EvalMode::Iwl,
                })
                .collect();
            report(&pipeline::write_generated(&cfg, &out, &modes, train)?, &out);
        }
        Command::Predict { common, predictor } => {
            let (cfg, out) = common.load()?;
            let kind = match predictor {
                Predictor::M => PredictorKind::Memorizing,
                Predictor::G => PredictorKind::Generalizing,
            };
            let prepared = pipeline::prepare(&cfg)?;
            let name = format!("predictions_{}.jsonl", kind.tag());
            pipeline::write_predictor_log(&prepared, kind, &out.join(&name))?;
            report(&[name], &out);
        }
        Command::Distance { common, log } => {
            let (cfg, out) = common.load()?;
            let (_, diag) = pipeline::diagnose(&cfg, &log)?;
            tables::write_table(&out, &tables::METRICS, &pipeline::metrics_rows(&diag))?;
            report(&[tables::METRICS.file.to_string()], &out);
        }
        Command::Complexity { common } => {
            let (cfg, out) = common.load()?;
            pipeline::write_complexity(&pipeline::prepare(&cfg)?, &out)?;
            report(
                &[tables::COMPLEXITY.file.to_string(), tables::DELTA_L.file.to_string()],
                &out,
            );
        }
        Command::Fit { common, log } => {
            let (cfg, out) = common.load()?;
            let outcome = pipeline::run_fit(&cfg, &log, &out)?;
            let p = outcome.report.params;
            println!("alpha={} beta={} gamma={}", p.alpha, p.beta, p.gamma);
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            report(&[tables::METRICS.file.to_string(), "fit_report.json".to_string()], &out);
        }
        Command::Forecast {
            common,
            report: path,
            log,
        } => {
            let (cfg, out) = common.load()?;
            let params = pipeline::read_fit_params(&path)?;
            let (prepared, diag) = match &log {
                Some(log) => {
                    let (p, d) = pipeline::diagnose(&cfg, log)?;
                    (p, Some(d))
                }
                None => (pipeline::prepare(&cfg)?, None),
            };
            tables::write_table(
                &out,
                &tables::FORECASTS,
                &forecast_rows(&prepared, &params, diag.as_ref()),
            )?;
            report(&[tables::FORECASTS.file.to_string()], &out);
        }
        Command::Pipeline { common, log } => {
            let (cfg, out) = common.load()?;
            let summary = pipeline::run_pipeline(&cfg, &log, &out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            report(&summary.files, &out);
        }
        Command::Synthesize {
            common,
            alpha,
            beta,
            gamma,
            jitter,
            seed,
        } => {
            let (cfg, out) = common.load()?;
            let params = FitParams::new(alpha, beta, gamma)?;
            let prepared = pipeline::prepare(&cfg)?;
            let name = "synthetic_log.jsonl".to_string();
            pipeline::synthesize_log(&prepared, &params, jitter, seed, &out.join(&name))?;
            json::write_pretty(&out.join("synthetic_params.json"), &params)?;
            report(&[name, "synthetic_params.json".to_string()], &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
