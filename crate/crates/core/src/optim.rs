//! Optimizers: the Adam baseline and the hybrid K-FAC/Adam step.
//!
//! The hybrid optimizer treats the fully connected output layer as a single
//! `[out x (h + 1)]` weight matrix `W` (bias in the last column) acting on
//! homogeneous activations `a = [h_t; 1]`. Its Fisher block is approximated
//! by `G ⊗ A`, with `A = E[a aᵀ]` and `G = E[g gᵀ]` tracked as exponential
//! moving averages, where `g` are the backprop signals at the output
//! pre-activations. The update direction is
//!
//! ```text
//! (G + sqrt(λ) I)^-1 · ∇W · (A + sqrt(λ) I)^-1
//! ```
//!
//! and `λ` follows a Levenberg-Marquardt rule driven by the ratio of actual
//! to predicted loss reduction. LSTM weights are updated by Adam in the same
//! step.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{output_as_matrix, output_from_matrix, PolicyParams};

pub const DAMPING_MIN: f64 = 1e-8;
pub const DAMPING_MAX: f64 = 1e2;
pub const LM_LOWER: f64 = 0.25;
pub const LM_UPPER: f64 = 0.75;
pub const LM_FACTOR: f64 = 1.5;
/// Eigenvalue floor used when inverting damped factors.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("optim.lr", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::invalid("optim.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("optim.beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("optim.epsilon", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("optim.weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Self {
        Self {
            hyper,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam state has {} slots, params {}, grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("gradient coordinate {i}")));
    }
    let hp = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g + hp.weight_decay * *p;
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfacHyper {
    /// Step size applied to the preconditioned direction.
    pub lr: f64,
    /// Initial Tikhonov damping λ.
    pub damping: f64,
    pub ema_decay: f64,
}

impl Default for KfacHyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            damping: 1e-2,
            ema_decay: 0.95,
        }
    }
}

impl KfacHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("kfac.lr", "must be finite and >= 0"));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("kfac.damping", "must be finite and > 0"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid("kfac.ema_decay", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KfacState {
    /// EMA of `a aᵀ` over homogeneous activations, `(h+1) x (h+1)`.
    pub a: DMatrix<f64>,
    /// EMA of `g gᵀ` over output backprop signals, `out x out`.
    pub g: DMatrix<f64>,
    pub damping: f64,
    pub ema_decay: f64,
    pub lr: f64,
    step: u64,
    /// Reduction ratio measured on the previous step, consumed by the next
    /// damping adjustment.
    pending_ratio: Option<f64>,
}

impl KfacState {
    pub fn new(activation_dim: usize, output_dim: usize, hyper: KfacHyper) -> Self {
        Self {
            a: DMatrix::zeros(activation_dim, activation_dim),
            g: DMatrix::zeros(output_dim, output_dim),
            damping: hyper.damping,
            ema_decay: hyper.ema_decay,
            lr: hyper.lr,
            step: 0,
            pending_ratio: None,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn pending_ratio(&self) -> Option<f64> {
        self.pending_ratio
    }

    /// Folds one batch of statistics into the factors. The first call
    /// replaces the zero initial factors with the plain batch averages.
    pub fn update_factors(&mut self, activations: ArrayView2<f64>, out_grads: ArrayView2<f64>) -> Result<()> {
        let n = activations.nrows();
        if n == 0 || out_grads.nrows() != n {
            return Err(Error::shape(format!(
                "{} activation rows vs {} gradient rows",
                n,
                out_grads.nrows()
            )));
        }
        if activations.ncols() != self.a.nrows() || out_grads.ncols() != self.g.nrows() {
            return Err(Error::shape(format!(
                "statistics {}x{} / {}x{} do not match factors {} / {}",
                n,
                activations.ncols(),
                n,
                out_grads.ncols(),
                self.a.nrows(),
                self.g.nrows()
            )));
        }
        let batch_a = second_moment(activations);
        let batch_g = second_moment(out_grads);
        if self.step == 0 {
            self.a = batch_a;
            self.g = batch_g;
        } else {
            let rho = self.ema_decay;
            self.a = &self.a * rho + batch_a * (1.0 - rho);
            self.g = &self.g * rho + batch_g * (1.0 - rho);
        }
        self.step += 1;
        Ok(())
    }

    pub fn precondition(&self, grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.precondition_with_damping(grad, self.damping)
    }

    /// `(G + sqrt(λ) I)^-1 · grad · (A + sqrt(λ) I)^-1` via symmetric
    /// eigendecompositions of both factors.
    pub fn precondition_with_damping(&self, grad: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
        if grad.nrows() != self.g.nrows() || grad.ncols() != self.a.nrows() {
            return Err(Error::shape(format!(
                "gradient {}x{} does not match factors {} / {}",
                grad.nrows(),
                grad.ncols(),
                self.g.nrows(),
                self.a.nrows()
            )));
        }
        let shift = damping.max(0.0).sqrt();
        let g_inv = damped_inverse(&self.g, shift, "G")?;
        let a_inv = damped_inverse(&self.a, shift, "A")?;
        Ok(g_inv * grad * a_inv)
    }

    /// Levenberg-Marquardt adjustment of λ.
    pub fn adjust_damping(&mut self, reduction_ratio: f64) {
        if !(reduction_ratio >= LM_LOWER) {
            // includes NaN: treat an unusable measurement as a poor model
            self.damping *= LM_FACTOR;
        } else if reduction_ratio > LM_UPPER {
            self.damping /= LM_FACTOR;
        }
        self.damping = self.damping.clamp(DAMPING_MIN, DAMPING_MAX);
    }

    /// Local quadratic model `∇ᵀΔ + ½ Δᵀ (G ⊗ A + λ I) Δ` for the output layer.
    pub fn quadratic_model(&self, grad: &DMatrix<f64>, delta: &DMatrix<f64>) -> f64 {
        let linear = grad.dot(delta);
        let curvature = (&self.g * delta * &self.a).dot(delta);
        linear + 0.5 * (curvature + self.damping * delta.norm_squared())
    }
}

fn second_moment(x: ArrayView2<f64>) -> DMatrix<f64> {
    let (n, d) = x.dim();
    let mut m = Array2::zeros((d, d));
    general_mat_mul(1.0 / n as f64, &x.t(), &x, 0.0, &mut m);
    // exact symmetry regardless of the kernel's summation order
    DMatrix::from_fn(d, d, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]))
}

fn damped_inverse(m: &DMatrix<f64>, shift: f64, name: &str) -> Result<DMatrix<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric(format!("K-FAC factor {name}")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut inv_vals = eig.eigenvalues.clone();
    for x in inv_vals.iter_mut() {
        let damped = *x + shift;
        if damped < -1e-10 * scale {
            return Err(Error::numeric(format!(
                "K-FAC factor {name} is not positive definite after damping (eigenvalue {damped})"
            )));
        }
        *x = 1.0 / damped.max(EIGEN_FLOOR);
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_vals) * v.transpose())
}

/// Output-layer statistics for one batch: homogeneous activations
/// `[n x (h+1)]` and output backprop signals `[n x out]`.
#[derive(Debug, Clone, Copy)]
pub struct KfacStats<'a> {
    pub activations: ArrayView2<'a, f64>,
    pub out_grads: ArrayView2<'a, f64>,
}

/// Loss of the current batch as a function of the output-layer parameters
/// (flat layout), with everything upstream held fixed.
pub struct LossProbe<'a> {
    pub current_loss: f64,
    pub eval: &'a dyn Fn(&[f64]) -> Result<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridReport {
    pub damping: f64,
    pub reduction_ratio: Option<f64>,
}

/// One hybrid update on the mean-over-samples output objective, where the
/// samples are the rows of `stats`. Order: factor update, damping adjustment from the
/// previous step's ratio, K-FAC step on the output layer, Adam step on the
/// LSTM layers. When a probe is supplied the reduction ratio of this step is
/// measured and stored for the next call.
pub fn hybrid_step(
    adam: &mut AdamState,
    kfac: &mut KfacState,
    params: &mut PolicyParams,
    grads: &PolicyParams,
    stats: KfacStats<'_>,
    probe: Option<LossProbe<'_>>,
) -> Result<HybridReport> {
    let arch = *params.arch();
    if grads.arch() != &arch {
        return Err(Error::shape("gradient layout does not match parameters".to_string()));
    }
    let split = arch.output_offset();
    if adam.len() != split {
        return Err(Error::shape(format!(
            "hybrid Adam state covers {} parameters, LSTM has {split}",
            adam.len()
        )));
    }
    if let Some(i) = grads.output().iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("output-layer gradient coordinate {i}")));
    }

    kfac.update_factors(stats.activations, stats.out_grads)?;
    if let Some(ratio) = kfac.pending_ratio.take() {
        kfac.adjust_damping(ratio);
    }

    // The factors are per-sample averages while the gradient sums over all
    // n samples, so the step preconditions the mean gradient and the
    // reduction ratio compares mean-loss changes.
    let n = stats.activations.nrows() as f64;
    let grad_m = output_as_matrix(&arch, grads.output()) / n;
    let delta = kfac.precondition(&grad_m)? * (-kfac.lr);

    let current = output_as_matrix(&arch, params.output());
    let mut updated = params.output().to_vec();
    output_from_matrix(&arch, &(current + &delta), &mut updated);

    let mut ratio = None;
    if let Some(probe) = probe {
        let predicted = -kfac.quadratic_model(&grad_m, &delta);
        let new_loss = (probe.eval)(&updated)?;
        let actual = (probe.current_loss - new_loss) / n;
        let r = if predicted > 0.0 { actual / predicted } else { f64::NAN };
        kfac.pending_ratio = Some(r);
        ratio = Some(r);
    }
    params.output_mut().copy_from_slice(&updated);

    let (lstm_params, _) = params.as_mut_slice().split_at_mut(split);
    adam_step(adam, lstm_params, &grads.as_slice()[..split])?;

    Ok(HybridReport {
        damping: kfac.damping,
        reduction_ratio: ratio,
    })
}
