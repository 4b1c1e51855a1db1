//! Heston market simulation.
//!
//! Paths follow the full-truncation Euler scheme
//!
//! ```text
//! S' = S + mu S dt + sqrt(V+) S sqrt(dt) w_s          (floored at price_floor)
//! V' = max(V + kappa (theta - V+) dt + xi sqrt(V+) sqrt(dt) w_v, 0)
//! ```
//!
//! with `V+ = max(V, 0)` and `(w_s, w_v)` obtained from two independent
//! standard normals through the Cholesky factor of the 2x2 correlation matrix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_std};
use crate::rng::{Domain, NormalStream};

pub const DEFAULT_PRICE_FLOOR: f64 = 1e-8;
pub const PATH_CSV_HEADER: &str = "path,step,price,variance";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub s0: f64,
    pub v0: f64,
    pub theta: f64,
    pub kappa: f64,
    pub xi: f64,
    pub rho: f64,
    pub mu: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Lower clamp applied to simulated prices.
    pub price_floor: f64,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self {
            s0: 100.0,
            v0: 0.04,
            theta: 0.04,
            kappa: 2.0,
            xi: 0.5,
            rho: -0.7,
            mu: 0.0,
            dt: 1.0 / 250.0,
            n_steps: 250,
            price_floor: DEFAULT_PRICE_FLOOR,
        }
    }
}

impl HestonParams {
    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("s0", self.s0),
            ("v0", self.v0),
            ("theta", self.theta),
            ("kappa", self.kappa),
            ("xi", self.xi),
            ("rho", self.rho),
            ("mu", self.mu),
            ("dt", self.dt),
            ("price_floor", self.price_floor),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid(name, format!("{value} is not finite")));
            }
        }
        let checks = [
            ("s0", self.s0 > 0.0, "must be > 0"),
            ("v0", self.v0 >= 0.0, "must be >= 0"),
            ("theta", self.theta >= 0.0, "must be >= 0"),
            ("kappa", self.kappa >= 0.0, "must be >= 0"),
            ("xi", self.xi >= 0.0, "must be >= 0"),
            ("rho", (-1.0..=1.0).contains(&self.rho), "must lie in [-1, 1]"),
            ("dt", self.dt > 0.0, "must be > 0"),
            ("n_steps", self.n_steps >= 1, "must be >= 1"),
            ("price_floor", self.price_floor > 0.0, "must be > 0"),
        ];
        for (name, ok, reason) in checks {
            if !ok {
                return Err(Error::invalid(name, reason));
            }
        }
        Ok(())
    }
}

/// Simulated trajectories, one row per path, column `j` is time `j * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub prices: Array2<f64>,
    pub variances: Array2<f64>,
    pub seed: u64,
    pub params: HestonParams,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.prices.ncols() - 1
    }

    /// Checks shapes and the batch invariants.
    pub fn validate(&self) -> Result<()> {
        let cols = self.params.n_steps + 1;
        if self.prices.dim() != self.variances.dim() || self.prices.ncols() != cols {
            return Err(Error::shape(format!(
                "prices {:?} / variances {:?} do not match n_steps = {}",
                self.prices.dim(),
                self.variances.dim(),
                self.params.n_steps
            )));
        }
        if self.prices.nrows() == 0 {
            return Err(Error::Validation("batch has no paths".into()));
        }
        for ((i, j), &p) in self.prices.indexed_iter() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Validation(format!(
                    "price {p} at path {i}, step {j} is not positive"
                )));
            }
        }
        for ((i, j), &v) in self.variances.indexed_iter() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "variance {v} at path {i}, step {j} is negative"
                )));
            }
        }
        for i in 0..self.n_paths() {
            if self.prices[[i, 0]] != self.params.s0 || self.variances[[i, 0]] != self.params.v0 {
                return Err(Error::Validation(format!(
                    "path {i} does not start at (s0, v0)"
                )));
            }
        }
        Ok(())
    }

    /// Rows `range` as a new batch with the same provenance.
    pub fn select_rows(&self, range: std::ops::Range<usize>) -> PathBatch {
        PathBatch {
            prices: self.prices.slice(s![range.clone(), ..]).to_owned(),
            variances: self.variances.slice(s![range, ..]).to_owned(),
            seed: self.seed,
            params: self.params,
        }
    }
}

/// Counters gathered while simulating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub price_floor_hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub price_mean: f64,
    pub price_std: f64,
    pub var_mean: f64,
    pub var_std: f64,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.price_mean, self.price_std, self.var_mean, self.var_std]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite || self.price_std <= 0.0 || self.var_std <= 0.0 {
            return Err(Error::Degenerate(format!("invalid normalization stats {self:?}")));
        }
        Ok(())
    }
}

/// Maps two independent standard normals to a pair with correlation `rho`.
pub fn correlate(z1: f64, z2: f64, rho: f64) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho", format!("|{rho}| > 1")));
    }
    Ok((z1, rho * z1 + (1.0 - rho * rho).sqrt() * z2))
}

/// One full-truncation Euler step. Returns the new state and whether the
/// price floor was hit.
pub fn heston_step_counted(
    s: f64,
    v: f64,
    params: &HestonParams,
    w_s: f64,
    w_v: f64,
) -> Result<(f64, f64, bool)> {
    if !(s.is_finite() && v.is_finite() && w_s.is_finite() && w_v.is_finite()) {
        return Err(Error::numeric(format!(
            "heston step input (s={s}, v={v}, w_s={w_s}, w_v={w_v})"
        )));
    }
    let v_pos = v.max(0.0);
    let sqrt_v = v_pos.sqrt();
    let sqrt_dt = params.dt.sqrt();
    let raw_s = s + params.mu * s * params.dt + sqrt_v * s * sqrt_dt * w_s;
    let v_next = (v + params.kappa * (params.theta - v_pos) * params.dt
        + params.xi * sqrt_v * sqrt_dt * w_v)
        .max(0.0);
    let floored = raw_s < params.price_floor;
    let s_next = if floored { params.price_floor } else { raw_s };
    if !(s_next.is_finite() && v_next.is_finite()) {
        return Err(Error::numeric(format!(
            "heston step output (s={s_next}, v={v_next})"
        )));
    }
    Ok((s_next, v_next, floored))
}

pub fn heston_step(s: f64, v: f64, params: &HestonParams, w_s: f64, w_v: f64) -> Result<(f64, f64)> {
    heston_step_counted(s, v, params, w_s, w_v).map(|(s, v, _)| (s, v))
}

pub fn simulate_paths(params: &HestonParams, n_paths: usize, seed: u64) -> Result<PathBatch> {
    simulate_paths_with_stats(params, n_paths, seed).map(|(batch, _)| batch)
}

/// Simulates `n_paths` paths. Path `i` draws from the stream keyed by
/// `(seed, Domain::Paths, i)`, consuming one Box-Muller pair per step.
pub fn simulate_paths_with_stats(
    params: &HestonParams,
    n_paths: usize,
    seed: u64,
) -> Result<(PathBatch, SimStats)> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be >= 1"));
    }
    let cols = params.n_steps + 1;
    let rows: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_one(params, seed, i))
        .collect::<Result<_>>()?;

    let mut prices = Array2::zeros((n_paths, cols));
    let mut variances = Array2::zeros((n_paths, cols));
    let mut stats = SimStats::default();
    for (i, (p, v, hits)) in rows.into_iter().enumerate() {
        prices.row_mut(i).assign(&ndarray::ArrayView1::from(&p));
        variances.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        stats.price_floor_hits += hits;
    }
    Ok((
        PathBatch {
            prices,
            variances,
            seed,
            params: *params,
        },
        stats,
    ))
}

fn simulate_one(params: &HestonParams, seed: u64, path: usize) -> Result<(Vec<f64>, Vec<f64>, u64)> {
    let mut normals = NormalStream::new(seed, Domain::Paths, path as u64);
    let mut prices = Vec::with_capacity(params.n_steps + 1);
    let mut variances = Vec::with_capacity(params.n_steps + 1);
    let (mut s, mut v) = (params.s0, params.v0);
    prices.push(s);
    variances.push(v);
    let mut hits = 0;
    for step in 0..params.n_steps {
        let (z1, z2) = normals.next_pair();
        let (w_s, w_v) = correlate(z1, z2, params.rho)?;
        let (s_next, v_next, floored) = heston_step_counted(s, v, params, w_s, w_v)
            .map_err(|e| match e {
                Error::Numeric { context } => {
                    Error::numeric(format!("path {path}, step {step}: {context}"))
                }
                other => other,
            })?;
        hits += floored as u64;
        s = s_next;
        v = v_next;
        prices.push(s);
        variances.push(v);
    }
    Ok((prices, variances, hits))
}

/// Means and sample standard deviations over the decision-point columns
/// `0..n_steps` (the columns that become network features).
pub fn compute_norm_stats(batch: &PathBatch) -> Result<NormStats> {
    if batch.n_paths() == 0 || batch.n_steps() == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let steps = batch.n_steps();
    let collect = |m: &Array2<f64>| -> Vec<f64> {
        m.slice(s![.., ..steps]).iter().copied().collect()
    };
    let prices = collect(&batch.prices);
    let variances = collect(&batch.variances);
    if prices.len() < 2 {
        return Err(Error::Degenerate("need at least two entries".into()));
    }
    let stats = NormStats {
        price_mean: mean(&prices),
        price_std: sample_std(&prices),
        var_mean: mean(&variances),
        var_std: sample_std(&variances),
    };
    if !(stats.price_std > 0.0) {
        return Err(Error::Degenerate("prices have zero spread".into()));
    }
    if !(stats.var_std > 0.0) {
        return Err(Error::Degenerate("variances have zero spread".into()));
    }
    Ok(stats)
}

/// Feature tensor `[n_paths, n_steps, 2]` of normalized (price, variance)
/// at the decision points `0..n_steps`.
pub fn normalize(batch: &PathBatch, stats: &NormStats) -> Result<Array3<f64>> {
    stats.validate()?;
    if batch.prices.dim() != batch.variances.dim() || batch.prices.ncols() < 2 {
        return Err(Error::shape(format!(
            "prices {:?} vs variances {:?}",
            batch.prices.dim(),
            batch.variances.dim()
        )));
    }
    let (n, steps) = (batch.n_paths(), batch.n_steps());
    let mut out = Array3::zeros((n, steps, 2));
    for i in 0..n {
        for t in 0..steps {
            out[[i, t, 0]] = (batch.prices[[i, t]] - stats.price_mean) / stats.price_std;
            out[[i, t, 1]] = (batch.variances[[i, t]] - stats.var_mean) / stats.var_std;
        }
    }
    Ok(out)
}

/// Prefix split: the first `floor(n * train_fraction)` rows train.
pub fn split(batch: &PathBatch, train_fraction: f64) -> Result<(PathBatch, PathBatch)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", "must lie in (0, 1)"));
    }
    let n = batch.n_paths();
    // Nudge so that ratios such as 10000/12000 land on the intended integer.
    let n_train = ((n as f64) * train_fraction + 1e-9).floor() as usize;
    split_at(batch, n_train)
}

pub fn split_at(batch: &PathBatch, n_train: usize) -> Result<(PathBatch, PathBatch)> {
    let n = batch.n_paths();
    if n_train == 0 || n_train >= n {
        return Err(Error::Validation(format!(
            "split of {n} paths at {n_train} leaves an empty side"
        )));
    }
    Ok((batch.select_rows(0..n_train), batch.select_rows(n_train..n)))
}

/// Shortest round-trip decimal rendering used by every text format.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Serialize, Deserialize)]
struct PathProvenance {
    seed: u64,
    params: HestonParams,
}

/// Sidecar file holding the seed and parameters for a path CSV.
pub fn provenance_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_paths_csv<W: Write>(batch: &PathBatch, mut w: W) -> Result<()> {
    writeln!(w, "{PATH_CSV_HEADER}")?;
    for i in 0..batch.n_paths() {
        for j in 0..batch.prices.ncols() {
            writeln!(
                w,
                "{},{},{},{}",
                i,
                j,
                fmt_f64(batch.prices[[i, j]]),
                fmt_f64(batch.variances[[i, j]])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV body; `seed` and `params` come from the provenance sidecar.
pub fn parse_paths_csv<R: BufRead>(reader: R, seed: u64, params: HestonParams) -> Result<PathBatch> {
    let cols = params.n_steps + 1;
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim_end_matches('\r') != PATH_CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header `{PATH_CSV_HEADER}`, found `{header}`"),
                });
            }
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut prices = Vec::new();
    let mut variances = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let path: usize = fields[0].parse().map_err(|_| bad(format!("bad path `{}`", fields[0])))?;
        let step: usize = fields[1].parse().map_err(|_| bad(format!("bad step `{}`", fields[1])))?;
        let row = prices.len();
        if path != row / cols || step != row % cols {
            return Err(bad(format!(
                "expected (path, step) = ({}, {}), found ({path}, {step})",
                row / cols,
                row % cols
            )));
        }
        let price: f64 = fields[2].parse().map_err(|_| bad(format!("bad price `{}`", fields[2])))?;
        let var: f64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad variance `{}`", fields[3])))?;
        prices.push(price);
        variances.push(var);
    }
    if prices.is_empty() || prices.len() % cols != 0 {
        return Err(Error::Parse {
            line: prices.len() + 1,
            msg: format!("{} rows is not a whole number of {cols}-step paths", prices.len()),
        });
    }
    let n = prices.len() / cols;
    let batch = PathBatch {
        prices: Array2::from_shape_vec((n, cols), prices).map_err(|e| Error::shape(e.to_string()))?,
        variances: Array2::from_shape_vec((n, cols), variances)
            .map_err(|e| Error::shape(e.to_string()))?,
        seed,
        params,
    };
    batch.validate()?;
    Ok(batch)
}

/// Writes the CSV and its `.meta.json` provenance sidecar.
pub fn write_paths(batch: &PathBatch, destination: &Path) -> Result<()> {
    write_paths_csv(batch, BufWriter::new(File::create(destination)?))?;
    let meta = PathProvenance {
        seed: batch.seed,
        params: batch.params,
    };
    std::fs::write(provenance_path(destination), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_paths(source: &Path) -> Result<PathBatch> {
    let meta: PathProvenance =
        serde_json::from_str(&std::fs::read_to_string(provenance_path(source))?)?;
    meta.params.validate()?;
    parse_paths_csv(BufReader::new(File::open(source)?), meta.seed, meta.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_params(n_steps: usize) -> HestonParams {
        HestonParams {
            n_steps,
            ..HestonParams::default()
        }
    }

    #[test]
    fn correlate_examples() {
        assert_eq!(correlate(1.0, 0.5, 0.0).unwrap(), (1.0, 0.5));
        assert_eq!(correlate(1.0, 0.0, -0.7).unwrap(), (1.0, -0.7));
        let (ws, wv) = correlate(1.0, 1.0, -0.7).unwrap();
        assert_eq!(ws, 1.0);
        assert_abs_diff_eq!(wv, 0.0141428, epsilon = 1e-7);
        assert!(matches!(
            correlate(1.0, 1.0, 1.5),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn heston_step_examples() {
        let p = HestonParams {
            xi: 0.0,
            ..HestonParams::default()
        };
        assert_eq!(heston_step(100.0, 0.04, &p, 0.0, 0.3).unwrap(), (100.0, 0.04));

        let p = HestonParams::default();
        let (s, v) = heston_step(100.0, 0.04, &p, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(s, 101.26491106406735, epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.04, epsilon = 1e-15);

        for &(ws, wv) in &[(3.0, -5.0), (-2.0, 4.0), (0.0, -10.0)] {
            let (s, v) = heston_step(100.0, -1e-9, &p, ws, wv).unwrap();
            assert_eq!(s, 100.0);
            assert!(v >= 0.0);
            assert_abs_diff_eq!(v, -1e-9 + p.kappa * p.theta * p.dt, epsilon = 1e-15);
        }
    }

    #[test]
    fn heston_step_floors_price_and_rejects_nan() {
        let p = HestonParams::default();
        let (s, _, hit) = heston_step_counted(100.0, 4.0, &p, -100.0, 0.0).unwrap();
        assert!(hit);
        assert_eq!(s, DEFAULT_PRICE_FLOOR);
        assert!(matches!(
            heston_step(f64::NAN, 0.04, &p, 0.0, 0.0),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn default_parameterization_batch_shape() {
        let p = HestonParams::default();
        let b = simulate_paths(&p, 20, 1).unwrap();
        assert_eq!(b.prices.dim(), (20, 251));
        b.validate().unwrap();
    }

    #[test]
    fn stationary_variance_without_vol_of_vol() {
        let p = HestonParams {
            xi: 0.0,
            ..small_params(30)
        };
        let b = simulate_paths(&p, 5, 3).unwrap();
        assert!(b.variances.iter().all(|&v| v == 0.04));
        assert!(matches!(compute_norm_stats(&b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn simulation_is_deterministic_across_thread_counts() {
        let p = small_params(40);
        let a = simulate_paths(&p, 64, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_paths(&p, 64, 9).unwrap());
        assert_eq!(a, b);
        // Path i only depends on (seed, i).
        let c = simulate_paths(&p, 10, 9).unwrap();
        assert_eq!(c.prices.row(7), a.prices.row(7));
    }

    #[test]
    fn norm_stats_textbook() {
        let params = small_params(3);
        // one path; the terminal column is not a decision point
        let prices = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 50.0]).unwrap();
        let variances = Array2::from_shape_vec((1, 4), vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        let batch = PathBatch {
            prices,
            variances,
            seed: 0,
            params: HestonParams { s0: 1.0, v0: 0.0, ..params },
        };
        let stats = compute_norm_stats(&batch).unwrap();
        assert_eq!(stats.price_mean, 2.0);
        assert_eq!(stats.price_std, 1.0);
        assert_eq!(stats.var_mean, 1.0);
    }

    #[test]
    fn self_normalization_is_centered() {
        let b = simulate_paths(&small_params(50), 200, 5).unwrap();
        let stats = compute_norm_stats(&b).unwrap();
        let f = normalize(&b, &stats).unwrap();
        assert_eq!(f.dim(), (200, 50, 2));
        for k in 0..2 {
            let xs: Vec<f64> = f.slice(s![.., .., k]).iter().copied().collect();
            assert!(mean(&xs).abs() < 1e-12);
            assert_abs_diff_eq!(sample_std(&xs), 1.0, epsilon = 1e-9);
        }
        // a price equal to the mean maps to zero
        let mut b2 = b.clone();
        b2.prices[[0, 3]] = stats.price_mean;
        assert_eq!(normalize(&b2, &stats).unwrap()[[0, 3, 0]], 0.0);
    }

    #[test]
    fn frozen_stats_do_not_center_other_batches() {
        let p = small_params(50);
        let train = simulate_paths(&p, 100, 1).unwrap();
        let val = simulate_paths(&p, 100, 2).unwrap();
        let stats = compute_norm_stats(&train).unwrap();
        let f = normalize(&val, &stats).unwrap();
        let xs: Vec<f64> = f.slice(s![.., .., 0]).iter().copied().collect();
        assert!(mean(&xs).abs() > 1e-6);
    }

    #[test]
    fn split_examples() {
        let b = simulate_paths(&small_params(2), 10, 0).unwrap();
        let (tr, va) = split(&b, 0.8).unwrap();
        assert_eq!((tr.n_paths(), va.n_paths()), (8, 2));
        assert_eq!(tr.prices.row(7), b.prices.row(7));
        assert_eq!(va.prices.row(0), b.prices.row(8));
        assert!(split(&b, 0.01).is_err());
        assert!(split(&b, 1.0).is_err());

        let big = simulate_paths(&small_params(1), 12_000, 0).unwrap();
        let (tr, va) = split(&big, 10_000.0 / 12_000.0).unwrap();
        assert_eq!((tr.n_paths(), va.n_paths()), (10_000, 2_000));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("paths.csv");
        let b = simulate_paths(&small_params(7), 3, 42).unwrap();
        write_paths(&b, &file).unwrap();
        let back = read_paths(&file).unwrap();
        assert_eq!(b, back);
    }

    #[test]
    fn csv_rejects_bad_header_and_negative_price() {
        let p = small_params(1);
        let err = parse_paths_csv("path,step,px,variance\n".as_bytes(), 0, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let body = "path,step,price,variance\n0,0,100.0,0.04\n0,1,-3.0,0.04\n";
        let err = parse_paths_csv(body.as_bytes(), 0, p).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");

        let body = "path,step,price,variance\n0,0,100.0,0.04\n0,1,abc,0.04\n";
        let err = parse_paths_csv(body.as_bytes(), 0, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
