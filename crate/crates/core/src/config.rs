//! Run configuration: a flat `section.key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and
//! unknown keys are rejected. The resolved configuration renders to a
//! canonical text whose SHA-256 digest identifies the run.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market_sim::{fmt_f64, HestonParams};
use crate::objective::{CostModel, OptionSpec, Side};
use crate::policy::ArchConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub heston: HestonParams,
    pub n_train_paths: usize,
    pub n_val_paths: usize,
    pub sim_seed: u64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Strike of the hedged option; `None` means at the money (`heston.s0`).
    pub strike: Option<f64>,
    pub side: Side,
    pub cost: CostModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            heston: HestonParams::default(),
            n_train_paths: 10_000,
            n_val_paths: 2_000,
            sim_seed: 1,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            strike: None,
            side: Side::Short,
            cost: CostModel::default(),
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "heston.s0",
    "heston.v0",
    "heston.theta",
    "heston.kappa",
    "heston.xi",
    "heston.rho",
    "heston.mu",
    "heston.dt",
    "heston.n_steps",
    "heston.price_floor",
    "sim.n_train_paths",
    "sim.n_val_paths",
    "sim.seed",
    "net.hidden_dim",
    "net.layers",
    "train.epochs",
    "train.batch_size",
    "train.seed",
    "train.lambda",
    "train.convergence_threshold",
    "optim.kind",
    "optim.lr",
    "optim.weight_decay",
    "optim.beta1",
    "optim.beta2",
    "optim.epsilon",
    "kfac.lr",
    "kfac.damping",
    "kfac.ema_decay",
    "option.strike",
    "option.side",
    "cost.rate",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_side(value: &str) -> std::result::Result<Side, String> {
    match value {
        "short" => Ok(Side::Short),
        "long" => Ok(Side::Long),
        other => Err(format!("`{other}` is not short|long")),
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Short => "short",
        Side::Long => "long",
    }
}

fn message(e: Error) -> String {
    match e {
        Error::InvalidParameter { reason, .. } => reason,
        other => other.to_string(),
    }
}

impl RunConfig {
    pub fn option(&self) -> OptionSpec {
        OptionSpec {
            strike: self.strike.unwrap_or(self.heston.s0),
            side: self.side,
            ..OptionSpec::default()
        }
    }

    /// Total simulated paths (training prefix followed by validation).
    pub fn n_paths(&self) -> usize {
        self.n_train_paths + self.n_val_paths
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let h = &mut self.heston;
        let t = &mut self.train;
        match key {
            "heston.s0" => h.s0 = parse(value)?,
            "heston.v0" => h.v0 = parse(value)?,
            "heston.theta" => h.theta = parse(value)?,
            "heston.kappa" => h.kappa = parse(value)?,
            "heston.xi" => h.xi = parse(value)?,
            "heston.rho" => h.rho = parse(value)?,
            "heston.mu" => h.mu = parse(value)?,
            "heston.dt" => h.dt = parse(value)?,
            "heston.n_steps" => h.n_steps = parse(value)?,
            "heston.price_floor" => h.price_floor = parse(value)?,
            "sim.n_train_paths" => self.n_train_paths = parse(value)?,
            "sim.n_val_paths" => self.n_val_paths = parse(value)?,
            "sim.seed" => self.sim_seed = parse(value)?,
            "net.hidden_dim" => self.arch.hidden_dim = parse(value)?,
            "net.layers" => self.arch.n_lstm_layers = parse(value)?,
            "train.epochs" => t.epochs = parse(value)?,
            "train.batch_size" => t.batch_size = parse(value)?,
            "train.seed" => t.seed = parse(value)?,
            "train.lambda" => t.lambda = parse(value)?,
            "train.convergence_threshold" => t.convergence_threshold = Some(parse(value)?),
            "optim.kind" => t.optimizer = value.parse().map_err(message)?,
            "optim.lr" => t.adam.lr = parse(value)?,
            "optim.weight_decay" => t.adam.weight_decay = parse(value)?,
            "optim.beta1" => t.adam.beta1 = parse(value)?,
            "optim.beta2" => t.adam.beta2 = parse(value)?,
            "optim.epsilon" => t.adam.epsilon = parse(value)?,
            "kfac.lr" => t.kfac.lr = parse(value)?,
            "kfac.damping" => t.kfac.damping = parse(value)?,
            "kfac.ema_decay" => t.kfac.ema_decay = parse(value)?,
            "option.strike" => self.strike = Some(parse(value)?),
            "option.side" => self.side = parse_side(value)?,
            "cost.rate" => self.cost.rate = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        self.check_key(key)
    }

    /// Invariants owned by a single key.
    fn check_key(&self, key: &str) -> std::result::Result<(), String> {
        let section = key.split('.').next().unwrap_or_default();
        match section {
            "heston" => self.heston.validate().map_err(message),
            "sim" => {
                if self.n_train_paths < 2 || self.n_val_paths < 2 {
                    Err("path counts must be >= 2".into())
                } else {
                    Ok(())
                }
            }
            "net" => self.arch.validate().map_err(message),
            "train" | "optim" | "kfac" => {
                if let Some(c) = self.train.convergence_threshold {
                    if !c.is_finite() {
                        return Err("must be finite".into());
                    }
                }
                self.train.validate().map_err(message)
            }
            "option" => self.option().validate().map_err(message),
            "cost" => self.cost.validate().map_err(message),
            _ => Ok(()),
        }
    }

    /// Invariants spanning several keys.
    pub fn validate(&self) -> Result<()> {
        for key in KEYS {
            self.check_key(key).map_err(|msg| Error::Config {
                key: key.to_string(),
                line: 0,
                msg,
            })?;
        }
        if self.n_train_paths < self.train.batch_size {
            return Err(Error::Config {
                key: "sim.n_train_paths".into(),
                line: 0,
                msg: format!(
                    "{} training paths cannot fill one batch of {}",
                    self.n_train_paths, self.train.batch_size
                ),
            });
        }
        Ok(())
    }

    /// Every key with its resolved value, in canonical order.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let h = &self.heston;
        let t = &self.train;
        let f = fmt_f64;
        let values = vec![
            f(h.s0),
            f(h.v0),
            f(h.theta),
            f(h.kappa),
            f(h.xi),
            f(h.rho),
            f(h.mu),
            f(h.dt),
            h.n_steps.to_string(),
            f(h.price_floor),
            self.n_train_paths.to_string(),
            self.n_val_paths.to_string(),
            self.sim_seed.to_string(),
            self.arch.hidden_dim.to_string(),
            self.arch.n_lstm_layers.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.seed.to_string(),
            f(t.lambda),
            t.convergence_threshold.map_or_else(|| "auto".into(), f),
            t.optimizer.name().into(),
            f(t.adam.lr),
            f(t.adam.weight_decay),
            f(t.adam.beta1),
            f(t.adam.beta2),
            f(t.adam.epsilon),
            f(t.kfac.lr),
            f(t.kfac.damping),
            f(t.kfac.ema_decay),
            f(self.option().strike),
            side_name(self.side).into(),
            f(self.cost.rate),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn render(&self) -> String {
        self.resolved()
            .into_iter()
            .filter(|(k, v)| match *k {
                "train.convergence_threshold" => v != "auto",
                "option.strike" => self.strike.is_some(),
                _ => true,
            })
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 (hex) of the canonical rendering.
    pub fn content_hash(&self) -> String {
        let text: String = self
            .resolved()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A parsed configuration and its content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let mut config = RunConfig::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or_default().trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Parse {
                line,
                msg: format!("expected `section.key = value`, found `{body}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let fail = |msg: String| Error::Config {
            key: key.to_string(),
            line,
            msg,
        };
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(fail(format!("duplicate key (first set on line {first})")));
        }
        if value.is_empty() {
            return Err(fail("missing value".into()));
        }
        config.set(key, value).map_err(fail)?;
    }
    config.validate()?;
    let hash = config.content_hash();
    Ok(LoadedConfig { config, hash })
}

pub fn load_config(source: &Path) -> Result<LoadedConfig> {
    parse_config(&std::fs::read_to_string(source)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::OptimizerKind;

    fn err_key(text: &str) -> (String, usize) {
        match parse_config(text) {
            Err(Error::Config { key, line, .. }) => (key, line),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("").unwrap().config;
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.heston.s0, 100.0);
        assert_eq!(c.heston.v0, 0.04);
        assert_eq!(c.heston.n_steps, 250);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.option().strike, 100.0);
    }

    #[test]
    fn keys_comments_and_whitespace() {
        let text = "# desk run\n\nsim.n_train_paths = 2000   # smaller\n  train.epochs=50\noption.side = long\noptim.kind = kfac\n";
        let c = parse_config(text).unwrap().config;
        assert_eq!(c.n_train_paths, 2000);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.side, Side::Long);
        assert_eq!(c.train.optimizer, OptimizerKind::Kfac);
    }

    #[test]
    fn strike_follows_s0_unless_set() {
        let c = parse_config("heston.s0 = 50").unwrap().config;
        assert_eq!(c.option().strike, 50.0);
        let c = parse_config("heston.s0 = 50\noption.strike = 55").unwrap().config;
        assert_eq!(c.option().strike, 55.0);
    }

    #[test]
    fn invariant_errors_name_key_and_line() {
        assert_eq!(err_key("heston.rho = -1.5"), ("heston.rho".into(), 1));
        assert_eq!(err_key("\nnet.hidden_dim = 0"), ("net.hidden_dim".into(), 2));
        assert_eq!(err_key("kfac.ema_decay = 1"), ("kfac.ema_decay".into(), 1));
        assert_eq!(err_key("cost.rate = -0.1"), ("cost.rate".into(), 1));
        assert_eq!(err_key("option.side = sideways"), ("option.side".into(), 1));
    }

    #[test]
    fn unknown_type_and_duplicate_errors() {
        assert_eq!(err_key("heston.sigma = 0.2"), ("heston.sigma".into(), 1));
        assert_eq!(err_key("train.epochs = many"), ("train.epochs".into(), 1));
        assert_eq!(err_key("train.epochs = 3\ntrain.epochs = 4"), ("train.epochs".into(), 2));
        assert_eq!(err_key("sim.seed ="), ("sim.seed".into(), 1));
        assert!(matches!(parse_config("just words"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn batch_must_fit_training_set() {
        let (key, _) = err_key("sim.n_train_paths = 10\ntrain.batch_size = 32");
        assert_eq!(key, "sim.n_train_paths");
    }

    #[test]
    fn hash_is_stable_and_canonical() {
        let a = parse_config("train.epochs = 5").unwrap();
        let b = parse_config("# same\ntrain.epochs=5\n").unwrap();
        assert_eq!(a.hash, b.hash);
        // An explicit at-the-money strike resolves to the same run.
        let c = parse_config("train.epochs = 5\noption.strike = 100").unwrap();
        assert_eq!(a.hash, c.hash);
        let d = parse_config("train.epochs = 6").unwrap();
        assert_ne!(a.hash, d.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn render_round_trips() {
        let text = "heston.dt = 0.01\nheston.n_steps = 20\ntrain.lambda = 0.25\ntrain.convergence_threshold = 1.5\n";
        let a = parse_config(text).unwrap();
        let b = parse_config(&a.config.render()).unwrap();
        assert_eq!(a, b);
        let d = parse_config("").unwrap();
        assert_eq!(parse_config(&d.config.render()).unwrap(), d);
    }
}
