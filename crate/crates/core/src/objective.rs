//! Hedged-portfolio P&L and the training objective.
//!
//! A path carries prices `S_0..S_T` and hedge levels `δ_0..δ_{T-1}` (units of
//! the underlying held over `[t, t+1)`). Proportional costs are charged on
//! entry, on every rebalance and on the terminal unwind:
//!
//! ```text
//! cost = rate * ( S_0 |δ_0| + Σ_{t=1}^{T-1} S_t |δ_t - δ_{t-1}| + S_T |δ_{T-1}| )
//! gain = Σ_t δ_t (S_{t+1} - S_t)
//! pnl  = gain - cost - side * payoff(S_T)          (side = +1 short, -1 long)
//! ```
//!
//! The loss over a batch is `Var_sample(pnl) + lambda * mean(cost)`.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_variance, stable_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Short,
    Long,
}

impl Side {
    /// Sign with which the payoff is subtracted from the hedger's P&L.
    pub fn sign(self) -> f64 {
        match self {
            Side::Short => 1.0,
            Side::Long => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    EuropeanCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub side: Side,
    pub kind: OptionKind,
}

impl OptionSpec {
    pub fn short_call(strike: f64) -> Self {
        Self {
            strike,
            side: Side::Short,
            kind: OptionKind::EuropeanCall,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::invalid("strike", "must be a finite value > 0"));
        }
        Ok(())
    }
}

impl Default for OptionSpec {
    fn default() -> Self {
        Self::short_call(100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub rate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { rate: 0.001 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid("rate", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnLRecord {
    pub pnl: f64,
    pub cost: f64,
    pub trading_gain: f64,
}

pub fn option_payoff(s_t: f64, spec: &OptionSpec) -> f64 {
    match spec.kind {
        OptionKind::EuropeanCall => (s_t - spec.strike).max(0.0),
    }
}

fn check_lengths(hedges: &ArrayView1<f64>, prices: &ArrayView1<f64>) -> Result<()> {
    if hedges.is_empty() || prices.len() != hedges.len() + 1 {
        return Err(Error::shape(format!(
            "{} hedges need {} prices, found {}",
            hedges.len(),
            hedges.len() + 1,
            prices.len()
        )));
    }
    Ok(())
}

pub fn transaction_costs(hedges: ArrayView1<f64>, prices: ArrayView1<f64>, model: &CostModel) -> Result<f64> {
    check_lengths(&hedges, &prices)?;
    let t_last = hedges.len();
    let mut notional = prices[0] * hedges[0].abs();
    for t in 1..t_last {
        notional += prices[t] * (hedges[t] - hedges[t - 1]).abs();
    }
    notional += prices[t_last] * hedges[t_last - 1].abs();
    Ok(model.rate * notional)
}

pub fn compute_pnl(
    prices: ArrayView1<f64>,
    hedges: ArrayView1<f64>,
    spec: &OptionSpec,
    model: &CostModel,
) -> Result<PnLRecord> {
    let cost = transaction_costs(hedges, prices, model)?;
    let mut gain = 0.0;
    for t in 0..hedges.len() {
        gain += hedges[t] * (prices[t + 1] - prices[t]);
    }
    let payoff = option_payoff(prices[hedges.len()], spec);
    let pnl = gain - cost - spec.side.sign() * payoff;
    if !(pnl.is_finite() && cost.is_finite()) {
        return Err(Error::numeric("path P&L"));
    }
    Ok(PnLRecord {
        pnl,
        cost,
        trading_gain: gain,
    })
}

/// P&L records for every row of `prices [B x (T+1)]` / `hedges [B x T]`.
pub fn batch_pnl(
    prices: ArrayView2<f64>,
    hedges: ArrayView2<f64>,
    spec: &OptionSpec,
    model: &CostModel,
) -> Result<Vec<PnLRecord>> {
    if prices.nrows() != hedges.nrows() {
        return Err(Error::shape(format!(
            "{} price rows vs {} hedge rows",
            prices.nrows(),
            hedges.nrows()
        )));
    }
    prices
        .outer_iter()
        .zip(hedges.outer_iter())
        .map(|(p, h)| compute_pnl(p, h, spec, model))
        .collect()
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Var_sample(pnl) + lambda * mean(cost)` over the batch.
pub fn composite_loss(records: &[PnLRecord], lambda: f64) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::Validation("loss needs at least two paths".into()));
    }
    let pnl: Vec<f64> = records.iter().map(|r| r.pnl).collect();
    let cost: Vec<f64> = records.iter().map(|r| r.cost).collect();
    Ok(sample_variance(&pnl) + lambda * mean(&cost))
}

/// Composite loss and its exact gradient with respect to every hedge ratio.
/// Uses the subgradient `sign(0) = 0` at rebalancing kinks.
pub fn loss_and_grad(
    records: &[PnLRecord],
    hedges: ArrayView2<f64>,
    prices: ArrayView2<f64>,
    model: &CostModel,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    let n = records.len();
    if n < 2 {
        return Err(Error::Validation("loss needs at least two paths".into()));
    }
    let (rows, steps) = hedges.dim();
    if rows != n || prices.dim() != (n, steps + 1) {
        return Err(Error::shape(format!(
            "records {n}, hedges {:?}, prices {:?}",
            hedges.dim(),
            prices.dim()
        )));
    }
    let loss = composite_loss(records, lambda)?;
    let pnl_mean = stable_sum(records.iter().map(|r| r.pnl)) / n as f64;
    let var_scale = 2.0 / (n - 1) as f64;
    let cost_scale = lambda / n as f64;

    let mut grad = Array2::zeros((n, steps));
    for i in 0..n {
        let d_var = var_scale * (records[i].pnl - pnl_mean);
        let h = hedges.row(i);
        let s = prices.row(i);
        // ∂cost/∂δ_t in notional units (rate applied below)
        let mut d_cost = vec![0.0; steps];
        d_cost[0] += s[0] * sign0(h[0]);
        for t in 1..steps {
            let sg = s[t] * sign0(h[t] - h[t - 1]);
            d_cost[t] += sg;
            d_cost[t - 1] -= sg;
        }
        d_cost[steps - 1] += s[steps] * sign0(h[steps - 1]);
        for t in 0..steps {
            let dc = model.rate * d_cost[t];
            let d_pnl = (s[t + 1] - s[t]) - dc;
            grad[[i, t]] = d_var * d_pnl + cost_scale * dc;
        }
    }
    Ok((loss, grad))
}

pub const EVAL_CSV_HEADER: &str = "path,pnl,cost,trading_gain";

pub fn write_eval_csv<W: Write>(records: &[PnLRecord], mut w: W) -> Result<()> {
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for (i, r) in records.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{}",
            crate::market_sim::fmt_f64(r.pnl),
            crate::market_sim::fmt_f64(r.cost),
            crate::market_sim::fmt_f64(r.trading_gain)
        )?;
    }
    w.flush()?;
    Ok(())
}
