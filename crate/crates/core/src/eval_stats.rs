//! Validation metrics, Welch t-tests, correlation diagnostics and the
//! baseline/candidate comparison report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_sim::{fmt_f64, PathBatch};
use crate::numeric::{mean, sample_std, sample_variance, stable_sum};
use crate::objective::{batch_pnl, CostModel, OptionSpec, PnLRecord};
use crate::train::Model;

/// Standard deviations below this make the Sharpe ratio zero.
pub const SHARPE_STD_FLOOR: f64 = 1e-15;
pub const HISTOGRAM_BINS: usize = 50;
pub const HISTOGRAM_CSV_HEADER: &str = "bin_left,bin_right,count_a,count_b";

pub const REPORT_FORMAT: &str = "hedgebench-report";
pub const COMPARISON_FORMAT: &str = "hedgebench-comparison";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Optimizer label of the evaluated model (`adam`, `kfac`, ...).
    pub label: String,
    pub train_seed: Option<u64>,
    pub path_seed: Option<u64>,
    pub config_hash: Option<String>,
    /// How the P&L samples entering the t-test are formed.
    pub pnl_pairing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub n_paths: usize,
    pub pnl_variance: f64,
    pub mean_cost: f64,
    pub mean_pnl: f64,
    pub sharpe: f64,
    pub provenance: Provenance,
    pub pnl: Vec<f64>,
    pub cost: Vec<f64>,
}

fn sharpe_ratio(pnl: &[f64]) -> f64 {
    let sd = sample_std(pnl);
    if sd < SHARPE_STD_FLOOR {
        0.0
    } else {
        mean(pnl) / sd
    }
}

impl MetricsReport {
    pub fn from_vectors(pnl: Vec<f64>, cost: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if pnl.len() != cost.len() {
            return Err(Error::shape(format!("{} pnl values vs {} costs", pnl.len(), cost.len())));
        }
        if pnl.len() < 2 {
            return Err(Error::Degenerate(format!("metrics need at least 2 paths, got {}", pnl.len())));
        }
        if let Some(i) = pnl.iter().chain(&cost).position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("metrics input entry {i}")));
        }
        Ok(MetricsReport {
            format: REPORT_FORMAT.into(),
            n_paths: pnl.len(),
            pnl_variance: sample_variance(&pnl),
            mean_cost: mean(&cost),
            mean_pnl: mean(&pnl),
            sharpe: sharpe_ratio(&pnl),
            provenance,
            pnl,
            cost,
        })
    }

    pub fn from_records(records: &[PnLRecord], provenance: Provenance) -> Result<Self> {
        Self::from_vectors(
            records.iter().map(|r| r.pnl).collect(),
            records.iter().map(|r| r.cost).collect(),
            provenance,
        )
    }

    /// Checks that the stored scalars agree with the stored vectors.
    pub fn validate(&self) -> Result<()> {
        if self.format != REPORT_FORMAT {
            return Err(Error::Validation(format!("not a metrics report: format `{}`", self.format)));
        }
        let fresh = Self::from_vectors(self.pnl.clone(), self.cost.clone(), Provenance::default())?;
        if fresh.n_paths != self.n_paths {
            return Err(Error::Validation(format!(
                "n_paths {} disagrees with {} stored samples",
                self.n_paths, fresh.n_paths
            )));
        }
        let checks = [
            ("pnl_variance", self.pnl_variance, fresh.pnl_variance),
            ("mean_cost", self.mean_cost, fresh.mean_cost),
            ("mean_pnl", self.mean_pnl, fresh.mean_pnl),
            ("sharpe", self.sharpe, fresh.sharpe),
        ];
        for (name, stored, recomputed) in checks {
            if !((stored - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0)) {
                return Err(Error::Validation(format!(
                    "{name} = {stored} disagrees with the per-path vectors ({recomputed})"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: MetricsReport = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        report.validate()?;
        Ok(report)
    }
}

pub fn save_report(report: &MetricsReport, location: &Path) -> Result<()> {
    std::fs::write(location, report.to_json()?)?;
    Ok(())
}

pub fn load_report(location: &Path) -> Result<MetricsReport> {
    MetricsReport::from_json(&std::fs::read_to_string(location)?)
}

/// Per-path records of a trained model on a path batch.
pub fn evaluate_records(
    model: &Model,
    paths: &PathBatch,
    spec: &OptionSpec,
    cost: &CostModel,
) -> Result<Vec<PnLRecord>> {
    if paths.n_paths() < 2 {
        return Err(Error::Degenerate(format!(
            "evaluation needs at least 2 paths, got {}",
            paths.n_paths()
        )));
    }
    let hedges = model.hedges(paths)?;
    batch_pnl(paths.prices.view(), hedges.view(), spec, cost)
}

pub fn evaluate(model: &Model, paths: &PathBatch, spec: &OptionSpec, cost: &CostModel) -> Result<MetricsReport> {
    let records = evaluate_records(model, paths, spec, cost)?;
    let provenance = Provenance {
        label: model.optimizer.name().into(),
        train_seed: Some(model.train_seed),
        path_seed: Some(paths.seed),
        config_hash: None,
        pnl_pairing: "per-path terminal P&L".into(),
    };
    MetricsReport::from_records(&records, provenance)
}

// ---------------------------------------------------------------------------
// Special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 1000;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::numeric(format!("incomplete beta continued fraction (a={a}, b={b}, x={x})")))
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("a, b", format!("must be positive, got a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("x", format!("must lie in [0, 1], got {x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::invalid("df", format!("must be positive, got {df}")));
    }
    if t.is_nan() {
        return Err(Error::numeric("t statistic"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(0.5 * df, 0.5, x)?.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Tests and correlation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

/// Welch two-sample t-test with Welch–Satterthwaite degrees of freedom.
///
/// Two constant samples give `t = 0, p = 1` when their means agree and
/// `t = ±inf, p = 0` otherwise; `df` then falls back to `n + m - 2`.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Degenerate(format!(
            "welch test needs at least 2 samples per group, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::numeric("welch test input"));
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mx, my) = (mean(x), mean(y));
    let (qx, qy) = (sample_variance(x) / n, sample_variance(y) / m);
    let se2 = qx + qy;
    let diff = mx - my;
    if se2 == 0.0 {
        let df = n + m - 2.0;
        return Ok(if diff == 0.0 {
            TTestResult {
                t_statistic: 0.0,
                degrees_of_freedom: df,
                p_value: 1.0,
            }
        } else {
            TTestResult {
                t_statistic: f64::INFINITY.copysign(diff),
                degrees_of_freedom: df,
                p_value: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (qx * qx / (n - 1.0) + qy * qy / (m - 1.0));
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_two_sided_p(t, df)?,
    })
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least 2 samples".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy = stable_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = stable_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = stable_sum(y.iter().map(|b| (b - my) * (b - my)));
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("correlation of a constant series".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(Error::numeric("pearson correlation"));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Pearson correlation between price and variance levels pooled over every
/// path and time column of the batch.
pub fn level_correlation(batch: &PathBatch) -> Result<f64> {
    let prices: Vec<f64> = batch.prices.iter().copied().collect();
    let variances: Vec<f64> = batch.variances.iter().copied().collect();
    pearson_correlation(&prices, &variances)
}

/// Pearson correlation between per-step price and variance increments
/// pooled over paths.
pub fn increment_correlation(batch: &PathBatch) -> Result<f64> {
    let steps = batch.n_steps();
    let mut ds = Vec::with_capacity(batch.n_paths() * steps);
    let mut dv = Vec::with_capacity(batch.n_paths() * steps);
    for (p, v) in batch.prices.outer_iter().zip(batch.variances.outer_iter()) {
        for t in 0..steps {
            ds.push(p[t + 1] - p[t]);
            dv.push(v[t + 1] - v[t]);
        }
    }
    pearson_correlation(&ds, &dv)
}

// ---------------------------------------------------------------------------
// Comparison

/// `100 (b - a) / |a|`; zero when the values agree, `None` for a zero
/// baseline with a nonzero candidate.
pub fn percent_change(a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(0.0)
    } else if a == 0.0 {
        None
    } else {
        Some(100.0 * (b - a) / a.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub pnl_variance: f64,
    pub mean_cost: f64,
    pub mean_pnl: f64,
    pub sharpe: f64,
}

impl Summary {
    fn of(r: &MetricsReport) -> Self {
        Summary {
            label: r.provenance.label.clone(),
            pnl_variance: r.pnl_variance,
            mean_cost: r.mean_cost,
            mean_pnl: r.mean_pnl,
            sharpe: r.sharpe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentChanges {
    pub pnl_variance: Option<f64>,
    pub mean_cost: Option<f64>,
    pub sharpe: Option<f64>,
}

/// Epochs each run needed to reach a shared validation-loss threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub threshold: f64,
    pub epoch_a: Option<usize>,
    pub epoch_b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format: String,
    pub n_paths: usize,
    pub baseline: Summary,
    pub candidate: Summary,
    pub pnl_test: TTestResult,
    pub cost_test: TTestResult,
    pub percent_change: PercentChanges,
    pub convergence: Option<ConvergenceSummary>,
    pub table: String,
}

/// Compares a baseline report `a` against a candidate `b` on the same paths.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<ComparisonReport> {
    if a.n_paths != b.n_paths || a.pnl.len() != b.pnl.len() {
        return Err(Error::Validation(format!(
            "reports cover different path counts ({} vs {})",
            a.n_paths, b.n_paths
        )));
    }
    let mut report = ComparisonReport {
        format: COMPARISON_FORMAT.into(),
        n_paths: a.n_paths,
        baseline: Summary::of(a),
        candidate: Summary::of(b),
        pnl_test: welch_t_test(&a.pnl, &b.pnl)?,
        cost_test: welch_t_test(&a.cost, &b.cost)?,
        percent_change: PercentChanges {
            pnl_variance: percent_change(a.pnl_variance, b.pnl_variance),
            mean_cost: percent_change(a.mean_cost, b.mean_cost),
            sharpe: percent_change(a.sharpe, b.sharpe),
        },
        convergence: None,
        table: String::new(),
    };
    report.table = render_tables(&report);
    Ok(report)
}

impl ComparisonReport {
    pub fn with_convergence(mut self, convergence: ConvergenceSummary) -> Self {
        self.convergence = Some(convergence);
        self.table = render_tables(&self);
        self
    }

    /// Percent reduction of mean cost, candidate relative to baseline.
    pub fn cost_reduction(&self) -> Option<f64> {
        self.percent_change.mean_cost.map(|c| -c)
    }

    pub fn variance_reduction(&self) -> Option<f64> {
        self.percent_change.pnl_variance.map(|c| -c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ComparisonReport = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if report.format != COMPARISON_FORMAT {
            return Err(Error::Validation(format!("not a comparison report: format `{}`", report.format)));
        }
        Ok(report)
    }
}

pub fn format_p(p: f64) -> String {
    if p < 1e-6 {
        "< 1e-6".into()
    } else {
        format!("{p:.4}")
    }
}

fn format_pct(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:+.2}%"),
        None => "n/a".into(),
    }
}

fn format_epoch(e: Option<usize>) -> String {
    e.map_or_else(|| "not reached".into(), |e| e.to_string())
}

/// Plain-text rendering of the significance and performance tables.
pub fn render_tables(r: &ComparisonReport) -> String {
    let (a, b) = (&r.baseline.label, &r.candidate.label);
    let mut out = String::new();
    let _ = writeln!(out, "Table 1. Statistical significance ({} paths, Welch two-sided)", r.n_paths);
    let _ = writeln!(out, "{:<32}{:>14}{:>12}{:>12}", "Comparison", "t-statistic", "df", "p-value");
    for (name, t) in [("P&L", &r.pnl_test), ("Transaction cost", &r.cost_test)] {
        let _ = writeln!(
            out,
            "{:<32}{:>14.4}{:>12.2}{:>12}",
            name,
            t.t_statistic,
            t.degrees_of_freedom,
            format_p(t.p_value)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Table 2. Performance metrics");
    let _ = writeln!(out, "{:<32}{:>14}{:>14}{:>12}", "Metric", a, b, "Change");
    let rows = [
        ("P&L variance", r.baseline.pnl_variance, r.candidate.pnl_variance, r.percent_change.pnl_variance),
        ("Mean transaction cost", r.baseline.mean_cost, r.candidate.mean_cost, r.percent_change.mean_cost),
        ("Sharpe ratio", r.baseline.sharpe, r.candidate.sharpe, r.percent_change.sharpe),
    ];
    for (name, x, y, pct) in rows {
        let _ = writeln!(out, "{:<32}{:>14.6}{:>14.6}{:>12}", name, x, y, format_pct(pct));
    }
    let _ = writeln!(out, "{:<32}{:>14.6}{:>14.6}{:>12}", "Mean P&L", r.baseline.mean_pnl, r.candidate.mean_pnl, "");
    if let Some(c) = &r.convergence {
        let _ = writeln!(
            out,
            "{:<32}{:>14}{:>14}{:>12}",
            format!("Epochs to val loss <= {:.4}", c.threshold),
            format_epoch(c.epoch_a),
            format_epoch(c.epoch_b),
            ""
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Histogram

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count_a: usize,
    pub count_b: usize,
}

/// Counts of both samples over `bins` equal-width bins spanning the pooled
/// range. The last bin is closed on the right.
pub fn histogram(a: &[f64], b: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }
    if a.is_empty() && b.is_empty() {
        return Err(Error::Degenerate("histogram of empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::numeric("histogram input"));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count_a: 0,
            count_b: 0,
        })
        .collect();
    let index = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    for &x in a {
        out[index(x)].count_a += 1;
    }
    for &x in b {
        out[index(x)].count_b += 1;
    }
    Ok(out)
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], mut w: W) -> Result<()> {
    writeln!(w, "{HISTOGRAM_CSV_HEADER}")?;
    for bin in bins {
        writeln!(w, "{},{},{},{}", fmt_f64(bin.left), fmt_f64(bin.right), bin.count_a, bin.count_b)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn report(pnl: Vec<f64>, cost: Vec<f64>) -> MetricsReport {
        MetricsReport::from_vectors(pnl, cost, Provenance::default()).unwrap()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(10.0), 362_880f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn incomplete_beta_edges_and_symmetry() {
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        // I_x(1, 1) = x and I_x(a, b) = 1 - I_{1-x}(b, a).
        assert_relative_eq!(regularized_incomplete_beta(1.0, 1.0, 0.3).unwrap(), 0.3, epsilon = 1e-14);
        let l = regularized_incomplete_beta(2.5, 0.5, 0.7).unwrap();
        let r = regularized_incomplete_beta(0.5, 2.5, 0.3).unwrap();
        assert_relative_eq!(l, 1.0 - r, epsilon = 1e-13);
        assert!(regularized_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(regularized_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn cauchy_tail_is_closed_form() {
        // df = 1: p = 1 - 2 atan(t) / pi.
        for t in [0.3, 1.0, 7.0] {
            let want = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert_relative_eq!(student_t_two_sided_p(t, 1.0).unwrap(), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn welch_small_example() {
        // Reference values from an independent implementation.
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_relative_eq!(r.t_statistic, -1.549_193_338_482_966_8, max_relative = 1e-12);
        assert_relative_eq!(r.degrees_of_freedom, 2.941_176_470_588_234_6, max_relative = 1e-12);
        assert_relative_eq!(r.p_value, 0.220_880_840_494_095_8, max_relative = 1e-8);
    }

    #[test]
    fn welch_identical_samples() {
        let x = [0.4, 1.3, -2.0, 0.7];
        let r = welch_t_test(&x, &x).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn welch_constant_samples() {
        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t_statistic, r.p_value, r.degrees_of_freedom), (0.0, 1.0, 3.0));
        let r = welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r.t_statistic, f64::NEG_INFINITY);
        assert_eq!(r.p_value, 0.0);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_one_constant_sample() {
        let r = welch_t_test(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(r.t_statistic, -2.0 / (1.0f64 / 3.0).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(r.degrees_of_freedom, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert_relative_eq!(pearson_correlation(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert_relative_eq!(pearson_correlation(&x, &y).unwrap(), -1.0, epsilon = 1e-15);
        assert!(pearson_correlation(&x, &[1.0; 4]).is_err());
        assert!(pearson_correlation(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metrics_scalars() {
        let r = report(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]);
        assert_relative_eq!(r.pnl_variance, 1.0);
        assert_relative_eq!(r.mean_cost, 0.2, epsilon = 1e-15);
        assert_relative_eq!(r.sharpe, 2.0);
        r.validate().unwrap();
        let flat = report(vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!((flat.pnl_variance, flat.mean_cost, flat.sharpe), (0.0, 0.0, 0.0));
        assert!(MetricsReport::from_vectors(vec![1.0], vec![1.0], Provenance::default()).is_err());
    }

    #[test]
    fn sharpe_is_scale_invariant() {
        let pnl = vec![0.3, -1.1, 2.4, 0.9];
        let r = report(pnl.clone(), vec![0.0; 4]);
        let k = 3.5;
        let s = report(pnl.iter().map(|x| k * x).collect(), vec![0.0; 4]);
        assert_relative_eq!(s.pnl_variance, k * k * r.pnl_variance, max_relative = 1e-14);
        assert_relative_eq!(s.sharpe, r.sharpe, max_relative = 1e-14);
    }

    #[test]
    fn tampered_report_is_rejected() {
        let mut r = report(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]);
        let text = r.to_json().unwrap();
        assert_eq!(MetricsReport::from_json(&text).unwrap(), r);
        r.mean_cost += 1e-6;
        assert!(matches!(MetricsReport::from_json(&r.to_json().unwrap()), Err(Error::Validation(_))));
        assert!(matches!(MetricsReport::from_json("{\n\"format\": 3"), Err(Error::Parse { .. })));
    }

    #[test]
    fn compare_with_self_is_neutral() {
        let r = report(vec![1.0, -2.0, 0.5], vec![0.1, 0.4, 0.2]);
        let c = compare(&r, &r).unwrap();
        assert_eq!(c.pnl_test.t_statistic, 0.0);
        assert_eq!(c.cost_test.t_statistic, 0.0);
        assert_eq!(c.percent_change.pnl_variance, Some(0.0));
        assert_eq!(c.percent_change.mean_cost, Some(0.0));
        assert_eq!(c.percent_change.sharpe, Some(0.0));
    }

    #[test]
    fn compare_rejects_mismatched_sizes() {
        let a = report(vec![1.0, 2.0], vec![0.0, 0.1]);
        let b = report(vec![1.0, 2.0, 3.0], vec![0.0, 0.1, 0.2]);
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn comparison_round_trip_and_table() {
        let mut a = report(vec![1.0, -2.0, 0.5, 0.1], vec![0.3, 0.4, 0.2, 0.3]);
        let mut b = report(vec![0.9, -1.0, 0.4, 0.2], vec![0.05, 0.06, 0.04, 0.05]);
        a.provenance.label = "adam".into();
        b.provenance.label = "kfac".into();
        let c = compare(&a, &b).unwrap().with_convergence(ConvergenceSummary {
            threshold: 1.5,
            epoch_a: Some(12),
            epoch_b: None,
        });
        assert!(c.table.contains("Table 1") && c.table.contains("Table 2"));
        assert!(c.table.contains("not reached"));
        assert!(c.cost_reduction().unwrap() > 80.0);
        assert_eq!(ComparisonReport::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn percent_change_edges() {
        assert_eq!(percent_change(0.0, 0.0), Some(0.0));
        assert_eq!(percent_change(0.0, 1.0), None);
        assert_relative_eq!(percent_change(-0.0025, 0.0401).unwrap(), 1704.0, max_relative = 1e-12);
        assert_eq!(format_p(1e-9), "< 1e-6");
        assert_eq!(format_p(0.1243), "0.1243");
    }

    #[test]
    fn histogram_counts_everything() {
        let a = [0.0, 0.1, 0.5, 1.0];
        let b = [0.95, 0.2];
        let h = histogram(&a, &b, 10).unwrap();
        assert_eq!(h.len(), 10);
        assert_eq!(h.iter().map(|x| x.count_a).sum::<usize>(), 4);
        assert_eq!(h.iter().map(|x| x.count_b).sum::<usize>(), 2);
        assert_eq!(h[9].count_a, 1);
        assert_eq!(h[9].right, 1.0);
        assert_eq!(h[0].left, 0.0);
        let flat = histogram(&[2.0, 2.0], &[2.0], 4).unwrap();
        assert_eq!(flat.iter().map(|x| x.count_a + x.count_b).sum::<usize>(), 3);
        let mut buf = Vec::new();
        write_histogram_csv(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(HISTOGRAM_CSV_HEADER));
        assert_eq!(text.lines().count(), 11);
    }
}
