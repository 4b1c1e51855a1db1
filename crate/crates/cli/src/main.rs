//! `hedgebench` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hedgebench::config::{load_config, parse_config, LoadedConfig};
use hedgebench::eval_stats::{compare, evaluate, load_report, save_report};
use hedgebench::market_sim::{compute_norm_stats, read_paths, simulate_paths_with_stats, split_at, write_paths};
use hedgebench::pipeline::{configure_threads, run_pipeline};
use hedgebench::train::{load_model, save_model, train, write_curve_csv, Dataset, Model, ObjectiveSpec, OptimizerKind};

#[derive(Debug, Parser)]
#[command(name = "hedgebench", version, about = "Deep hedging under Heston dynamics: Adam vs output-layer K-FAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate `sim.n_train_paths + sim.n_val_paths` Heston paths to CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one optimizer; the first `sim.n_train_paths` rows train and the
    /// rest validate.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        paths: PathBuf,
        /// Defaults to `optim.kind`.
        #[arg(long, value_parser = ["adam", "kfac"])]
        optimizer: Option<String>,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        curve_out: PathBuf,
    },
    /// Evaluate a model on every path of a CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
    },
    /// Compare two reports (A is the baseline) and print the tables.
    Compare {
        #[arg(long)]
        report_a: PathBuf,
        #[arg(long)]
        report_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole experiment into a directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<LoadedConfig> {
    Ok(match path {
        Some(p) => load_config(p).with_context(|| format!("loading config {}", p.display()))?,
        None => parse_config("")?,
    })
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let loaded = config_or_default(config.as_deref())?;
            let cfg = &loaded.config;
            let seed = seed.unwrap_or(cfg.sim_seed);
            let (batch, stats) = simulate_paths_with_stats(&cfg.heston, cfg.n_paths(), seed)?;
            if stats.price_floor_hits > 0 {
                log::warn!("{} prices hit the price floor", stats.price_floor_hits);
            }
            write_paths(&batch, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} paths x {} steps to {}", batch.n_paths(), batch.n_steps(), out.display());
        }
        Command::Train {
            config,
            paths,
            optimizer,
            model_out,
            curve_out,
        } => {
            let loaded = config_or_default(config.as_deref())?;
            let cfg = &loaded.config;
            let batch = read_paths(&paths).with_context(|| format!("reading {}", paths.display()))?;
            if batch.params != cfg.heston {
                log::warn!("path file parameters differ from the config's heston.* values");
            }
            if batch.n_paths() < cfg.n_train_paths + 2 {
                bail!(
                    "{} has {} paths; sim.n_train_paths = {} leaves fewer than 2 for validation",
                    paths.display(),
                    batch.n_paths(),
                    cfg.n_train_paths
                );
            }
            let (train_batch, val_batch) = split_at(&batch, cfg.n_train_paths)?;
            let stats = compute_norm_stats(&train_batch)?;
            let kind: OptimizerKind = match optimizer {
                Some(name) => name.parse()?,
                None => cfg.train.optimizer,
            };
            let tc = hedgebench::train::TrainConfig {
                optimizer: kind,
                ..cfg.train
            };
            let spec = cfg.option();
            let outcome = train(
                &tc,
                cfg.arch,
                &Dataset::from_batch(&train_batch, &stats)?,
                &Dataset::from_batch(&val_batch, &stats)?,
                &spec,
                &cfg.cost,
            )?;
            let model = Model {
                params: outcome.params,
                norm_stats: stats,
                train_seed: tc.seed,
                optimizer: kind,
                objective: ObjectiveSpec {
                    option: spec,
                    cost: cfg.cost,
                    lambda: tc.lambda,
                },
            };
            save_model(&model, &model_out).with_context(|| format!("writing {}", model_out.display()))?;
            let file = std::fs::File::create(&curve_out).with_context(|| format!("creating {}", curve_out.display()))?;
            write_curve_csv(&outcome.curve, std::io::BufWriter::new(file))?;
            let last = outcome.curve.last().expect("at least one epoch");
            println!(
                "{} trained {} epochs in {:.1}s; final validation loss {:.6}",
                kind.name(),
                outcome.curve.len(),
                outcome.total_seconds,
                last.val_loss
            );
        }
        Command::Evaluate {
            model,
            paths,
            report_out,
        } => {
            let m = load_model(&model).with_context(|| format!("reading model {}", model.display()))?;
            let batch = read_paths(&paths).with_context(|| format!("reading {}", paths.display()))?;
            let report = evaluate(&m, &batch, &m.objective.option, &m.objective.cost)?;
            save_report(&report, &report_out).with_context(|| format!("writing {}", report_out.display()))?;
            println!(
                "{} paths: pnl variance {:.6}, mean cost {:.6}, sharpe {:.4}",
                report.n_paths, report.pnl_variance, report.mean_cost, report.sharpe
            );
        }
        Command::Compare { report_a, report_b, out } => {
            let a = load_report(&report_a).with_context(|| format!("reading {}", report_a.display()))?;
            let b = load_report(&report_b).with_context(|| format!("reading {}", report_b.display()))?;
            let c = compare(&a, &b)?;
            std::fs::write(&out, c.to_json()?).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", c.table);
        }
        Command::Pipeline { config, out_dir } => {
            let loaded = load_config(&config).with_context(|| format!("loading config {}", config.display()))?;
            let outcome = run_pipeline(&loaded, &out_dir)?;
            print!("{}", outcome.comparison.table);
            println!("run digest {}", outcome.manifest.run_digest);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
