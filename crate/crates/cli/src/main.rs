use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use wristsat::experiment::{
    self, resolve_input, ExperimentConfig, ExperimentError, Invocation, Outcome, MANIFEST_FILE,
};
use wristsat::pipeline::{SweepAxis, SWEEP_HEADER};
use wristsat::spo2::Algorithm;
use wristsat::synth::CohortConfig;
use wristsat::{CalibrationCurve, EnhancedConfig};

/// SpO2 extraction, window reliability classification and pruning for
/// wrist-worn pulse oximeters.
#[derive(Parser)]
#[command(name = "wristsat", version)]
struct Cli {
    /// Directory for outputs and the run manifest.
    #[arg(long, short = 'o', global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the seed of the config (simulate, train, evaluate, sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print per-fold details and output paths; repeat for more.
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Baseline,
    Enhanced,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and an experiment config pointing at it.
    Simulate {
        /// Cohort config (JSON). Missing fields take their defaults.
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Compute per-window SpO2 readings of a wrist stream.
    Spo2 {
        /// Wrist stream CSV.
        stream: PathBuf,
        #[arg(long, value_enum, default_value = "enhanced")]
        algo: Algo,
        /// Calibration line as `Y0,M` (SpO2 = Y0 - M * R).
        #[arg(long, value_parser = parse_calib, default_value = "110,25")]
        calib: CalibrationCurve,
        /// Window length in samples.
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// Step between window starts in samples; defaults to the window length.
        #[arg(long)]
        step: Option<usize>,
        /// Minimum red/infrared correlation for the enhanced algorithm.
        #[arg(long, default_value_t = 0.4)]
        corr_threshold: f64,
    },
    /// Select features and train a classifier on the whole cohort.
    Train {
        /// Experiment config (JSON) or a manifest of an earlier run.
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Evaluate a trained model per subject, or run leave-one-subject-out
    /// cross-validation when no model is given.
    Evaluate {
        #[arg(long, short)]
        config: PathBuf,
        /// Model file written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Keep the enhanced readings of a stream that the model trusts.
    Prune {
        stream: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_calib, default_value = "110,25")]
        calib: CalibrationCurve,
        #[arg(long, default_value_t = 0.4)]
        corr_threshold: f64,
        /// Minimum predicted probability for a reading to be kept.
        #[arg(long, default_value_t = 0.5)]
        decision_threshold: f64,
    },
    /// Cross-validate once per value of one parameter.
    Sweep {
        #[arg(long, short)]
        config: PathBuf,
        /// window_len, reliability_threshold or decision_threshold.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Re-run the invocation recorded in a manifest.
    Replay { manifest: PathBuf },
}

fn parse_calib(s: &str) -> Result<CalibrationCurve, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `Y0,M`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(CalibrationCurve {
        y0: num(a)?,
        m: num(b)?,
    })
}

fn load_cohort_config(path: &Path) -> Result<CohortConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    let cfg: CohortConfig = serde_json::from_str(&text)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn experiment_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn invocation(cli: &Cli) -> Result<Option<Invocation>, ExperimentError> {
    let inv = match &cli.command {
        Command::Simulate { config } => {
            let mut config = load_cohort_config(config)?;
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            Invocation::Simulate { config }
        }
        Command::Spo2 {
            stream,
            algo,
            calib,
            window,
            step,
            corr_threshold,
        } => Invocation::Spo2 {
            stream: resolve_input(stream)?,
            algorithm: match algo {
                Algo::Baseline => Algorithm::Baseline,
                Algo::Enhanced => Algorithm::Enhanced,
            },
            calibration: *calib,
            enhanced: EnhancedConfig {
                corr_threshold: *corr_threshold,
            },
            window_len: *window,
            step: step.unwrap_or(*window),
        },
        Command::Train { config } => Invocation::Train {
            config: experiment_config(config, cli.seed)?,
        },
        Command::Evaluate { config, model } => Invocation::Evaluate {
            config: experiment_config(config, cli.seed)?,
            model: model.as_deref().map(resolve_input).transpose()?,
        },
        Command::Prune {
            stream,
            model,
            calib,
            corr_threshold,
            decision_threshold,
        } => Invocation::Prune {
            stream: resolve_input(stream)?,
            model: resolve_input(model)?,
            calibration: *calib,
            enhanced: EnhancedConfig {
                corr_threshold: *corr_threshold,
            },
            decision_threshold: *decision_threshold,
        },
        Command::Sweep {
            config,
            axis,
            values,
        } => Invocation::Sweep {
            config: experiment_config(config, cli.seed)?,
            axis: *axis,
            values: values.clone(),
        },
        Command::Replay { .. } => return Ok(None),
    };
    Ok(Some(inv))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

fn report(outcome: &Outcome, verbose: u8) {
    match outcome {
        Outcome::Simulate {
            subjects,
            experiment,
        } => {
            println!(
                "{:<12} {:<7} {:>7} {:>7} {:>8}",
                "subject", "tone", "hr_bpm", "clean", "samples"
            );
            for s in subjects {
                println!(
                    "{:<12} {:<7} {:>7.1} {:>7.3} {:>8}",
                    s.id, s.tone, s.heart_rate_bpm, s.clean_fraction, s.n_samples
                );
            }
            println!("experiment config: {}", experiment.display());
        }
        Outcome::Spo2 { estimates } | Outcome::Prune { estimates } => {
            let emitted: Vec<f64> = estimates.iter().filter_map(|e| e.spo2_pct).collect();
            let mean =
                (!emitted.is_empty()).then(|| emitted.iter().sum::<f64>() / emitted.len() as f64);
            let rejected = estimates.len() - emitted.len();
            let rate = (!estimates.is_empty()).then(|| rejected as f64 / estimates.len() as f64);
            println!(
                "windows {}  emitted {}  mean_spo2 {}  rejection_rate {}",
                estimates.len(),
                emitted.len(),
                fmt_opt(mean, 2),
                fmt_opt(rate, 4)
            );
        }
        Outcome::Train { trained, n_rows } => {
            let meta = &trained.model.training_meta;
            println!(
                "rows {}  positives {}  features {}/{}  trees {}",
                n_rows,
                meta.n_positive,
                trained.model.catalog.len(),
                trained.selection.p_values.len(),
                trained.model.booster.trees.len()
            );
        }
        Outcome::Evaluate { folds, aggregate } => {
            println!(
                "{:<12} {:>9} {:>9} {:>9} {:>9} {:>10}",
                "subject", "precision", "rmse_base", "rmse_enh", "rmse_prn", "silent_s"
            );
            for f in folds {
                match &f.report {
                    Some(r) => println!(
                        "{:<12} {:>9} {:>9} {:>9} {:>9} {:>10.1}",
                        f.subject_id,
                        fmt_opt(r.precision, 3),
                        fmt_opt(r.rmse_baseline, 3),
                        fmt_opt(r.rmse_enhanced, 3),
                        fmt_opt(r.rmse_pruned, 3),
                        r.max_silent_interval_s
                    ),
                    None => println!(
                        "{:<12} skipped: {}",
                        f.subject_id,
                        f.diagnostic.as_deref().unwrap_or("")
                    ),
                }
                if verbose > 0 && f.report.is_some() {
                    println!("  train rows {}  features {}", f.n_train_rows, f.n_selected);
                }
            }
            println!(
                "{:<12} {:>9} {:>9} {:>9} {:>9} {:>10}",
                "mean",
                fmt_opt(aggregate.mean_precision, 3),
                fmt_opt(aggregate.mean_rmse_baseline, 3),
                fmt_opt(aggregate.mean_rmse_enhanced, 3),
                fmt_opt(aggregate.mean_rmse_pruned, 3),
                fmt_opt(aggregate.mean_max_silent_s, 1)
            );
        }
        Outcome::Sweep { rows } => {
            println!("{SWEEP_HEADER}");
            for r in rows {
                let a = &r.aggregate;
                println!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.value,
                    fmt_opt(a.mean_precision, 4),
                    fmt_opt(a.mean_rmse_baseline, 4),
                    fmt_opt(a.mean_rmse_enhanced, 4),
                    fmt_opt(a.mean_rmse_pruned, 4),
                    fmt_opt(a.mean_max_silent_s, 2),
                    r.n_train_rows,
                    r.n_emitted,
                    r.n_folds
                );
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = invocation(&cli).and_then(|inv| match (&cli.command, inv) {
        (Command::Replay { manifest }, _) => experiment::replay(manifest, &cli.out_dir),
        (_, Some(inv)) => experiment::run(&inv, &cli.out_dir),
        (_, None) => unreachable!("only replay has no invocation"),
    });
    match result {
        Ok((outcome, manifest)) => {
            report(&outcome, cli.verbose);
            if cli.verbose > 0 {
                for rel in manifest.outputs.keys() {
                    println!("wrote {}", cli.out_dir.join(rel).display());
                }
                println!("wrote {}", cli.out_dir.join(MANIFEST_FILE).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
