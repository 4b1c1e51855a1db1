//! Mini-batch training, convergence measurement and model documents.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_sim::{fmt_f64, normalize, NormStats, PathBatch};
use crate::numeric::mean;
use crate::objective::{batch_pnl, composite_loss, loss_and_grad, CostModel, OptionSpec};
use crate::optim::{
    adam_step, hybrid_step, AdamHyper, AdamState, KfacHyper, KfacState, KfacStats, LossProbe,
};
use crate::policy::{self, backward, forward, init_policy, output_hedges, ArchConfig, PolicyParams};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Kfac,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Kfac => "kfac",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "kfac" => Ok(OptimizerKind::Kfac),
            other => Err(Error::invalid("optimizer", format!("`{other}` is not adam|kfac"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamHyper,
    pub kfac: KfacHyper,
    /// Weight of the mean-cost term in the loss.
    pub lambda: f64,
    /// Seeds both the initial weights and the per-epoch shuffles.
    pub seed: u64,
    pub convergence_threshold: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            adam: AdamHyper::default(),
            kfac: KfacHyper::default(),
            lambda: 1.0,
            seed: 1,
            convergence_threshold: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("train.epochs", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("train.batch_size", "must be >= 2"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("train.lambda", "must be finite and >= 0"));
        }
        self.adam.validate()?;
        self.kfac.validate()
    }
}

/// Network inputs and the raw prices the objective needs, row-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array3<f64>,
    pub prices: Array2<f64>,
}

impl Dataset {
    pub fn from_batch(batch: &PathBatch, stats: &NormStats) -> Result<Self> {
        Ok(Self {
            features: normalize(batch, stats)?,
            prices: batch.prices.clone(),
        })
    }

    pub fn n_paths(&self) -> usize {
        self.features.dim().0
    }

    fn check(&self) -> Result<()> {
        let (n, steps, _) = self.features.dim();
        if self.prices.dim() != (n, steps + 1) {
            return Err(Error::shape(format!(
                "features {:?} and prices {:?} are not aligned",
                self.features.dim(),
                self.prices.dim()
            )));
        }
        Ok(())
    }

    fn gather(&self, rows: &[usize]) -> (Array3<f64>, Array2<f64>) {
        (
            self.features.select(Axis(0), rows),
            self.prices.select(Axis(0), rows),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mean_pnl: f64,
    pub val_mean_cost: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<EpochRecord>,
    /// Paths left out of every epoch because they do not fill a batch.
    pub dropped_per_epoch: usize,
    pub total_seconds: f64,
}

/// Fisher-Yates permutation driven by the `(seed, Shuffle, epoch)` stream:
/// for `i` from `n-1` down to 1, swap `i` with `floor(u * (i + 1))`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, Domain::Shuffle, epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng::uniform(&mut rng) * (i + 1) as f64) as usize).min(i);
        idx.swap(i, j);
    }
    idx
}

enum Optimizer {
    Adam(AdamState),
    Hybrid { adam: AdamState, kfac: KfacState },
}

/// Composite loss, mean P&L and mean cost of a policy over a dataset.
pub fn validation_metrics(
    params: &PolicyParams,
    data: &Dataset,
    spec: &OptionSpec,
    cost: &CostModel,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let hedges = policy::predict(params, &data.features)?;
    let recs = batch_pnl(data.prices.view(), hedges.view(), spec, cost)?;
    let loss = composite_loss(&recs, lambda)?;
    let pnl: Vec<f64> = recs.iter().map(|r| r.pnl).collect();
    let costs: Vec<f64> = recs.iter().map(|r| r.cost).collect();
    Ok((loss, mean(&pnl), mean(&costs)))
}

/// Trains from the seeded initialization `init_policy(arch, config.seed)`.
pub fn train(
    config: &TrainConfig,
    arch: ArchConfig,
    train_data: &Dataset,
    validation: &Dataset,
    spec: &OptionSpec,
    cost: &CostModel,
) -> Result<TrainOutcome> {
    let init = init_policy(arch, config.seed)?;
    train_from(config, init, train_data, validation, spec, cost)
}

pub fn train_from(
    config: &TrainConfig,
    initial: PolicyParams,
    train_data: &Dataset,
    validation: &Dataset,
    spec: &OptionSpec,
    cost: &CostModel,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_data.check()?;
    validation.check()?;
    let arch = *initial.arch();
    let n = train_data.n_paths();
    if n < config.batch_size {
        return Err(Error::Validation(format!(
            "{n} training paths cannot fill a batch of {}",
            config.batch_size
        )));
    }
    if validation.n_paths() < 2 {
        return Err(Error::Validation("validation needs at least two paths".into()));
    }
    let dropped = n % config.batch_size;
    if dropped > 0 {
        log::info!("dropping {dropped} ragged paths per epoch (batch size {})", config.batch_size);
    }

    let mut params = initial;
    let mut opt = match config.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(AdamState::new(arch.n_params(), config.adam)),
        OptimizerKind::Kfac => Optimizer::Hybrid {
            adam: AdamState::new(arch.output_offset(), config.adam),
            kfac: KfacState::new(arch.hidden_dim + 1, arch.output_dim, config.kfac),
        },
    };

    let run_start = Instant::now();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let order = epoch_permutation(n, config.seed, epoch);
        let mut losses = Vec::with_capacity(n / config.batch_size);
        for (b, rows) in order.chunks_exact(config.batch_size).enumerate() {
            let (features, prices) = train_data.gather(rows);
            let (hedges, cache) = forward(&params, &features)?;
            let recs = batch_pnl(prices.view(), hedges.view(), spec, cost)?;
            let (loss, d_hedges) = loss_and_grad(&recs, hedges.view(), prices.view(), cost, config.lambda)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("training loss at epoch {epoch}, batch {b}")));
            }
            losses.push(loss);
            let grads = backward(&params, &cache, &d_hedges)?;
            match &mut opt {
                Optimizer::Adam(state) => {
                    adam_step(state, params.as_mut_slice(), grads.grads.as_slice())
                        .map_err(|e| with_position(e, epoch, b))?;
                }
                Optimizer::Hybrid { adam, kfac } => {
                    let acts = cache.output_activations();
                    let sig = grads.out_signals_time_major();
                    let eval = |out: &[f64]| -> Result<f64> {
                        let h = output_hedges(&arch, out, &cache);
                        composite_loss(&batch_pnl(prices.view(), h.view(), spec, cost)?, config.lambda)
                    };
                    let probe = LossProbe {
                        current_loss: loss,
                        eval: &eval,
                    };
                    let stats = KfacStats {
                        activations: acts.view(),
                        out_grads: sig.view(),
                    };
                    hybrid_step(adam, kfac, &mut params, &grads.grads, stats, Some(probe))
                        .map_err(|e| with_position(e, epoch, b))?;
                }
            }
        }
        let (val_loss, val_mean_pnl, val_mean_cost) =
            validation_metrics(&params, validation, spec, cost, config.lambda)?;
        let record = EpochRecord {
            epoch,
            train_loss: mean(&losses),
            val_loss,
            val_mean_pnl,
            val_mean_cost,
            seconds: start.elapsed().as_secs_f64(),
        };
        if !(record.train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::numeric(format!("epoch {epoch} losses")));
        }
        log::debug!(
            "{} epoch {epoch}: train {:.6} val {:.6} cost {:.6}",
            config.optimizer.name(),
            record.train_loss,
            val_loss,
            val_mean_cost
        );
        curve.push(record);
    }
    Ok(TrainOutcome {
        params,
        curve,
        dropped_per_epoch: dropped,
        total_seconds: run_start.elapsed().as_secs_f64(),
    })
}

fn with_position(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { context } => Error::numeric(format!("{context} (epoch {epoch}, batch {batch})")),
        other => other,
    }
}

/// First (1-based) epoch whose validation loss is at or below `threshold`.
pub fn convergence_epoch(curve: &[EpochRecord], threshold: f64) -> Option<usize> {
    curve.iter().find(|r| r.val_loss <= threshold).map(|r| r.epoch)
}

pub const CURVE_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_mean_pnl,val_mean_cost,seconds";

pub fn write_curve_csv<W: Write>(curve: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CURVE_CSV_HEADER}")?;
    for r in curve {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.train_loss),
            fmt_f64(r.val_loss),
            fmt_f64(r.val_mean_pnl),
            fmt_f64(r.val_mean_cost),
            fmt_f64(r.seconds)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Objective settings a model was trained under; evaluation reuses them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub option: OptionSpec,
    pub cost: CostModel,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: PolicyParams,
    pub norm_stats: NormStats,
    pub train_seed: u64,
    pub optimizer: OptimizerKind,
    pub objective: ObjectiveSpec,
}

pub const MODEL_FORMAT: &str = "hedgebench-model";
pub const MODEL_VERSION: u32 = 1;
pub const GATE_ORDER: &str = "input,forget,cell,output";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk model document. Tensors are row-major and keyed
/// `lstm.<layer>.w_x`, `lstm.<layer>.w_h`, `lstm.<layer>.b`, `out.w`, `out.b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    gate_order: String,
    arch: ArchConfig,
    norm_stats: NormStats,
    train_seed: u64,
    optimizer: OptimizerKind,
    objective: ObjectiveSpec,
    tensors: BTreeMap<String, Tensor>,
}

impl Model {
    fn to_document(&self) -> ModelDocument {
        let p = &self.params;
        let arch = *p.arch();
        let mut tensors = BTreeMap::new();
        let mut put = |key: String, shape: Vec<usize>, data: Vec<f64>| {
            tensors.insert(key, Tensor { shape, data });
        };
        for l in 0..arch.n_lstm_layers {
            let layer = p.layer(l);
            put(format!("lstm.{l}.w_x"), layer.w_x.shape().to_vec(), layer.w_x.iter().copied().collect());
            put(format!("lstm.{l}.w_h"), layer.w_h.shape().to_vec(), layer.w_h.iter().copied().collect());
            put(format!("lstm.{l}.b"), layer.b.shape().to_vec(), layer.b.to_vec());
        }
        put("out.w".into(), p.w_out().shape().to_vec(), p.w_out().iter().copied().collect());
        put("out.b".into(), p.b_out().shape().to_vec(), p.b_out().to_vec());
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            gate_order: GATE_ORDER.into(),
            arch,
            norm_stats: self.norm_stats,
            train_seed: self.train_seed,
            optimizer: self.optimizer,
            objective: self.objective,
            tensors,
        }
    }

    fn from_document(mut doc: ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model document {} v{} (expected {MODEL_FORMAT} v{MODEL_VERSION})",
                doc.format, doc.version
            )));
        }
        if doc.gate_order != GATE_ORDER {
            return Err(Error::Validation(format!("unsupported gate order `{}`", doc.gate_order)));
        }
        doc.arch.validate()?;
        doc.norm_stats.validate()?;
        let mut params = PolicyParams::zeros(doc.arch)?;
        let mut take = |key: &str, expect: &[usize]| -> Result<Vec<f64>> {
            let t = doc
                .tensors
                .remove(key)
                .ok_or_else(|| Error::Validation(format!("missing tensor `{key}`")))?;
            if t.shape != expect || t.data.len() != expect.iter().product::<usize>() {
                return Err(Error::Validation(format!(
                    "tensor `{key}` has shape {:?} with {} values, architecture expects {expect:?}",
                    t.shape,
                    t.data.len()
                )));
            }
            Ok(t.data)
        };
        let arch = doc.arch;
        let h = arch.hidden_dim;
        for l in 0..arch.n_lstm_layers {
            let inp = if l == 0 { arch.input_dim } else { h };
            let wx = take(&format!("lstm.{l}.w_x"), &[4 * h, inp])?;
            let wh = take(&format!("lstm.{l}.w_h"), &[4 * h, h])?;
            let b = take(&format!("lstm.{l}.b"), &[4 * h])?;
            let mut layer = params.layer_mut(l);
            layer.w_x.as_slice_mut().expect("contiguous").copy_from_slice(&wx);
            layer.w_h.as_slice_mut().expect("contiguous").copy_from_slice(&wh);
            layer.b.as_slice_mut().expect("contiguous").copy_from_slice(&b);
        }
        let w = take("out.w", &[arch.output_dim, h])?;
        let b = take("out.b", &[arch.output_dim])?;
        let out = params.output_mut();
        out[..w.len()].copy_from_slice(&w);
        out[w.len()..].copy_from_slice(&b);
        if let Some(extra) = doc.tensors.keys().next() {
            return Err(Error::Validation(format!("unexpected tensor `{extra}`")));
        }
        let params = PolicyParams::from_flat(arch, params.into_flat())?;
        doc.objective.option.validate()?;
        doc.objective.cost.validate()?;
        Ok(Model {
            params,
            norm_stats: doc.norm_stats,
            train_seed: doc.train_seed,
            optimizer: doc.optimizer,
            objective: doc.objective,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::from_document(doc)
    }

    /// Hedge ratios for a path batch, normalized with the stored stats.
    pub fn hedges(&self, batch: &PathBatch) -> Result<Array2<f64>> {
        policy::predict(&self.params, &normalize(batch, &self.norm_stats)?)
    }
}

pub fn save_model(model: &Model, location: &Path) -> Result<()> {
    std::fs::write(location, model.to_json()?)?;
    Ok(())
}

pub fn load_model(location: &Path) -> Result<Model> {
    Model::from_json(&std::fs::read_to_string(location)?)
}

/// First `n` rows of a dataset (used for quick diagnostics).
pub fn head(data: &Dataset, n: usize) -> Dataset {
    let n = n.min(data.n_paths());
    Dataset {
        features: data.features.slice(s![..n, .., ..]).to_owned(),
        prices: data.prices.slice(s![..n, ..]).to_owned(),
    }
}
