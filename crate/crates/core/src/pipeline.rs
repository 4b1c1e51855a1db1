//! End-to-end experiment: simulate, split, train both optimizers from the
//! same initialization, evaluate, compare, and write a hashed manifest.
//!
//! Each stage writes its files with a `.partial` suffix and renames them
//! once the stage succeeds, so a failed run leaves only `.partial` files
//! for the stage that broke.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::error::{Error, Result};
use crate::eval_stats::{
    compare, evaluate_records, histogram, increment_correlation, level_correlation, write_histogram_csv,
    ComparisonReport, ConvergenceSummary, MetricsReport, Provenance, HISTOGRAM_BINS,
};
use crate::market_sim::{
    compute_norm_stats, fmt_f64, normalize, provenance_path, simulate_paths_with_stats, split_at, write_paths, PathBatch,
};
use crate::objective::write_eval_csv;
use crate::train::{
    convergence_epoch, save_model, train, write_curve_csv, Dataset, EpochRecord, Model, ObjectiveSpec,
    OptimizerKind, TrainConfig,
};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "hedgebench-manifest";
pub const THREADS_ENV: &str = "HEDGEBENCH_THREADS";
/// Validation paths shown in the hedge-trajectory CSV.
pub const HEDGE_SAMPLE_PATHS: usize = 5;
/// Validation paths pooled for the level-correlation diagnostic.
pub const CORRELATION_SAMPLE_PATHS: usize = 1000;
/// Automatic convergence threshold as a multiple of the baseline's final
/// validation loss.
pub const AUTO_THRESHOLD_FACTOR: f64 = 1.1;

/// Caps the rayon worker count from `HEDGEBENCH_THREADS`. Results do not
/// depend on the worker count; only wall-clock time does.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(THREADS_ENV, format!("`{raw}` is not a positive integer")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::warn!("worker pool already initialized; {THREADS_ENV}={n} ignored");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// SHA-256 of the canonical content (see [`canonical_content`]).
    pub sha256: String,
    /// Volatile files (wall-clock timings) are listed but excluded from
    /// the run digest.
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub crate_version: String,
    pub config_hash: String,
    pub sim_seed: u64,
    pub train_seed: u64,
    pub n_train_paths: usize,
    pub n_val_paths: usize,
    pub price_floor_hits: u64,
    pub dropped_paths_per_epoch: usize,
    /// Digest over the config hash and every non-volatile file hash.
    pub run_digest: String,
    pub files: BTreeMap<String, FileEntry>,
}

fn is_curve(name: &str) -> bool {
    name.starts_with("curve_") && name.ends_with(".csv")
}

/// Bytes that enter a file's manifest hash. Curve CSVs carry a wall-clock
/// `seconds` column, which is blanked; every other file hashes verbatim.
pub fn canonical_content(name: &str, bytes: &[u8]) -> Vec<u8> {
    if !is_curve(name) {
        return bytes.to_vec();
    }
    let text = String::from_utf8_lossy(bytes);
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        match line.rsplit_once(',') {
            Some((head, _)) if i > 0 => {
                out.push_str(head);
                out.push_str(",\n");
            }
            _ => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out.into_bytes()
}

fn file_hash(name: &str, path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(canonical_content(name, &bytes))))
}

fn run_digest(config_hash: &str, files: &BTreeMap<String, FileEntry>) -> String {
    let mut h = Sha256::new();
    h.update(config_hash.as_bytes());
    h.update(b"\n");
    for (name, entry) in files.iter().filter(|(_, e)| !e.volatile) {
        h.update(format!("{name} {}\n", entry.sha256).as_bytes());
    }
    hex::encode(h.finalize())
}

/// Re-hashes every file listed in `dir/manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Validation(format!("not a run manifest: format `{}`", manifest.format)));
    }
    for (name, entry) in &manifest.files {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::Validation(format!("manifest lists missing file `{name}`")));
        }
        if !entry.volatile && file_hash(name, &path)? != entry.sha256 {
            return Err(Error::Validation(format!("hash mismatch for `{name}`")));
        }
    }
    if run_digest(&manifest.config_hash, &manifest.files) != manifest.run_digest {
        return Err(Error::Validation("run digest does not match the listed files".into()));
    }
    Ok(manifest)
}

/// Files of one stage, written under `.partial` names until committed.
struct Stage<'a> {
    dir: &'a Path,
    name: &'static str,
    pending: Vec<String>,
}

impl<'a> Stage<'a> {
    fn new(dir: &'a Path, name: &'static str) -> Self {
        log::info!("stage {name}");
        Stage {
            dir,
            name,
            pending: Vec::new(),
        }
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.pending.push(name.to_string());
        self.dir.join(format!("{name}.partial"))
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.file(name))?))
    }

    fn commit(self, written: &mut Vec<String>) -> Result<()> {
        for name in self.pending {
            let from = self.dir.join(format!("{name}.partial"));
            std::fs::rename(&from, self.dir.join(&name)).map_err(|e| Error::from(e).in_stage(self.name))?;
            written.push(name);
        }
        Ok(())
    }
}

/// Everything a pipeline run produced, for programmatic inspection.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub adam: MetricsReport,
    pub kfac: MetricsReport,
    pub comparison: ComparisonReport,
    pub adam_curve: Vec<EpochRecord>,
    pub kfac_curve: Vec<EpochRecord>,
    pub level_correlation: f64,
    pub increment_correlation: f64,
    pub adam_seconds: f64,
    pub kfac_seconds: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    sample_paths: usize,
    level_correlation: f64,
    increment_correlation: f64,
    price_floor_hits: u64,
}

fn write_json<T: Serialize>(stage: &mut Stage, name: &str, value: &T) -> Result<()> {
    let mut w = stage.create(name)?;
    w.write_all((serde_json::to_string_pretty(value)? + "\n").as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_hedges_csv<W: Write>(val: &PathBatch, adam: &Model, kfac: &Model, mut w: W) -> Result<()> {
    let sample = val.select_rows(0..HEDGE_SAMPLE_PATHS.min(val.n_paths()));
    let ha = adam.hedges(&sample)?;
    let hk = kfac.hedges(&sample)?;
    writeln!(w, "path,step,price,variance,hedge_{},hedge_{}", adam.optimizer.name(), kfac.optimizer.name())?;
    for i in 0..sample.n_paths() {
        for t in 0..sample.n_steps() {
            writeln!(
                w,
                "{i},{t},{},{},{},{}",
                fmt_f64(sample.prices[[i, t]]),
                fmt_f64(sample.variances[[i, t]]),
                fmt_f64(ha[[i, t]]),
                fmt_f64(hk[[i, t]])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Normalized price and variance levels of the first validation path.
fn write_correlation_csv<W: Write>(val: &PathBatch, model: &Model, mut w: W) -> Result<()> {
    let features = normalize(&val.select_rows(0..1), &model.norm_stats)?;
    writeln!(w, "step,norm_price,norm_variance")?;
    for t in 0..features.dim().1 {
        writeln!(w, "{t},{},{}", fmt_f64(features[[0, t, 0]]), fmt_f64(features[[0, t, 1]]))?;
    }
    w.flush()?;
    Ok(())
}

fn train_config(loaded: &LoadedConfig, optimizer: OptimizerKind) -> TrainConfig {
    TrainConfig {
        optimizer,
        ..loaded.config.train
    }
}

/// Runs `body` as the named stage: its files are committed on success and
/// any error is tagged with the stage name.
fn run_stage<T>(
    dir: &Path,
    name: &'static str,
    written: &mut Vec<String>,
    body: impl FnOnce(&mut Stage) -> Result<T>,
) -> Result<T> {
    let mut stage = Stage::new(dir, name);
    let value = body(&mut stage).map_err(|e| e.in_stage(name))?;
    stage.commit(written)?;
    Ok(value)
}

struct Trained {
    model: Model,
    curve: Vec<EpochRecord>,
    seconds: f64,
    dropped: usize,
}

/// Runs the full experiment into `out_dir` (created if needed).
pub fn run_pipeline(loaded: &LoadedConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    let cfg = &loaded.config;
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let spec = cfg.option();
    let objective = ObjectiveSpec {
        option: spec,
        cost: cfg.cost,
        lambda: cfg.train.lambda,
    };

    let (batch, sim_stats) = run_stage(out_dir, "simulate", &mut written, |stage| {
        let (batch, stats) = simulate_paths_with_stats(&cfg.heston, cfg.n_paths(), cfg.sim_seed)?;
        if stats.price_floor_hits > 0 {
            log::warn!("{} simulated prices hit the price floor", stats.price_floor_hits);
        }
        let csv = stage.file("paths.csv");
        let meta = stage.file("paths.csv.meta.json");
        write_paths(&batch, &csv)?;
        std::fs::rename(provenance_path(&csv), meta)?;
        Ok((batch, stats))
    })?;

    let (val_batch, norm_stats, train_data, val_data) = run_stage(out_dir, "split", &mut written, |_| {
        let (train_batch, val_batch) = split_at(&batch, cfg.n_train_paths)?;
        let norm_stats = compute_norm_stats(&train_batch)?;
        let train_data = Dataset::from_batch(&train_batch, &norm_stats)?;
        let val_data = Dataset::from_batch(&val_batch, &norm_stats)?;
        Ok((val_batch, norm_stats, train_data, val_data))
    })?;
    drop(batch);

    let mut runs = Vec::new();
    for (kind, stage_name) in [(OptimizerKind::Adam, "train_adam"), (OptimizerKind::Kfac, "train_kfac")] {
        let trained = run_stage(out_dir, stage_name, &mut written, |stage| {
            let tc = train_config(loaded, kind);
            let outcome = train(&tc, cfg.arch, &train_data, &val_data, &spec, &cfg.cost)?;
            let model = Model {
                params: outcome.params,
                norm_stats,
                train_seed: tc.seed,
                optimizer: kind,
                objective,
            };
            save_model(&model, &stage.file(&format!("model_{}.json", kind.name())))?;
            write_curve_csv(&outcome.curve, stage.create(&format!("curve_{}.csv", kind.name()))?)?;
            Ok(Trained {
                model,
                curve: outcome.curve,
                seconds: outcome.total_seconds,
                dropped: outcome.dropped_per_epoch,
            })
        })?;
        runs.push(trained);
    }
    drop(train_data);
    let kfac_run = runs.pop().expect("two runs");
    let adam_run = runs.pop().expect("two runs");

    let (adam, kfac) = run_stage(out_dir, "evaluate", &mut written, |stage| {
        let mut reports = Vec::new();
        for model in [&adam_run.model, &kfac_run.model] {
            let name = model.optimizer.name();
            let records = evaluate_records(model, &val_batch, &spec, &cfg.cost)?;
            write_eval_csv(&records, stage.create(&format!("eval_{name}.csv"))?)?;
            let provenance = Provenance {
                label: name.into(),
                train_seed: Some(model.train_seed),
                path_seed: Some(cfg.sim_seed),
                config_hash: Some(loaded.hash.clone()),
                pnl_pairing: "per-path terminal P&L".into(),
            };
            let report = MetricsReport::from_records(&records, provenance)?;
            write_json(stage, &format!("report_{name}.json"), &report)?;
            reports.push(report);
        }
        let kfac = reports.pop().expect("two reports");
        Ok((reports.pop().expect("two reports"), kfac))
    })?;

    let comparison = run_stage(out_dir, "compare", &mut written, |stage| {
        let threshold = cfg.train.convergence_threshold.unwrap_or_else(|| {
            AUTO_THRESHOLD_FACTOR * adam_run.curve.last().map_or(f64::INFINITY, |r| r.val_loss)
        });
        let comparison = compare(&adam, &kfac)?.with_convergence(ConvergenceSummary {
            threshold,
            epoch_a: convergence_epoch(&adam_run.curve, threshold),
            epoch_b: convergence_epoch(&kfac_run.curve, threshold),
        });
        write_json(stage, "comparison.json", &comparison)?;
        let mut w = stage.create("comparison.txt")?;
        w.write_all(comparison.table.as_bytes())?;
        w.flush()?;
        let bins = histogram(&adam.pnl, &kfac.pnl, HISTOGRAM_BINS)?;
        write_histogram_csv(&bins, stage.create("histogram.csv")?)?;
        Ok(comparison)
    })?;

    let diagnostics = run_stage(out_dir, "diagnostics", &mut written, |stage| {
        let sample = val_batch.select_rows(0..CORRELATION_SAMPLE_PATHS.min(val_batch.n_paths()));
        let diagnostics = Diagnostics {
            sample_paths: sample.n_paths(),
            level_correlation: level_correlation(&sample)?,
            increment_correlation: increment_correlation(&sample)?,
            price_floor_hits: sim_stats.price_floor_hits,
        };
        write_json(stage, "diagnostics.json", &diagnostics)?;
        write_hedges_csv(&val_batch, &adam_run.model, &kfac_run.model, stage.create("hedges.csv")?)?;
        write_correlation_csv(&val_batch, &adam_run.model, stage.create("correlation.csv")?)?;
        let mut w = stage.create("durations.csv")?;
        writeln!(w, "optimizer,epochs,total_seconds,mean_epoch_seconds")?;
        for run in [&adam_run, &kfac_run] {
            let mean_epoch = run.seconds / run.curve.len().max(1) as f64;
            writeln!(
                w,
                "{},{},{},{}",
                run.model.optimizer.name(),
                run.curve.len(),
                fmt_f64(run.seconds),
                fmt_f64(mean_epoch)
            )?;
        }
        w.flush()?;
        Ok(diagnostics)
    })?;

    let manifest = run_stage(out_dir, "manifest", &mut Vec::new(), |stage| {
        let mut files = BTreeMap::new();
        for name in &written {
            let entry = FileEntry {
                sha256: file_hash(name, &out_dir.join(name))?,
                volatile: name == "durations.csv",
            };
            files.insert(name.clone(), entry);
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: loaded.hash.clone(),
            sim_seed: cfg.sim_seed,
            train_seed: cfg.train.seed,
            n_train_paths: cfg.n_train_paths,
            n_val_paths: cfg.n_val_paths,
            price_floor_hits: sim_stats.price_floor_hits,
            dropped_paths_per_epoch: adam_run.dropped,
            run_digest: run_digest(&loaded.hash, &files),
            files,
        };
        write_json(stage, MANIFEST_NAME, &manifest)?;
        Ok(manifest)
    })?;

    Ok(PipelineOutcome {
        manifest,
        adam,
        kfac,
        comparison,
        adam_seconds: adam_run.seconds,
        kfac_seconds: kfac_run.seconds,
        adam_curve: adam_run.curve,
        kfac_curve: kfac_run.curve,
        level_correlation: diagnostics.level_correlation,
        increment_correlation: diagnostics.increment_correlation,
    })
}
