//! LSTM hedging policy.
//!
//! The network reads the normalized (price, variance) pair at each decision
//! point, runs it through `n_lstm_layers` stacked LSTM layers with zero
//! initial state, and maps the top hidden state to a hedge ratio through a
//! fully connected layer followed by `tanh`.
//!
//! Gate order in every weight block is input, forget, cell, output.
//! Parameters live in one flat vector laid out as
//!
//! ```text
//! for each layer l:  w_x[4h x in_l] | w_h[4h x h] | b[4h]     (row-major)
//! then:              w_out[out x h] | b_out[out]
//! ```
//!
//! Internally all per-step tensors are time-major: row `t * batch + b` holds
//! path `b` at step `t`.

use nalgebra::DMatrix;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain, NormalStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_lstm_layers: usize,
    pub output_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 32,
            n_lstm_layers: 1,
            output_dim: 1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_lstm_layers", self.n_lstm_layers),
            ("output_dim", self.output_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be >= 1"));
            }
        }
        if self.output_dim != 1 {
            return Err(Error::invalid(
                "output_dim",
                "the policy hedges a single instrument; output_dim must be 1",
            ));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let h4 = 4 * self.hidden_dim;
        h4 * self.layer_input(layer) + h4 * self.hidden_dim + h4
    }

    /// Offset of the output layer in the flat parameter vector.
    pub fn output_offset(&self) -> usize {
        (0..self.n_lstm_layers).map(|l| self.layer_len(l)).sum()
    }

    pub fn output_len(&self) -> usize {
        self.output_dim * self.hidden_dim + self.output_dim
    }

    pub fn n_params(&self) -> usize {
        self.output_offset() + self.output_len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }
}

/// Network weights in the flat layout described in the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: ArchConfig,
    data: Vec<f64>,
}

/// Views into one LSTM layer's weights.
pub struct LayerView<'a> {
    pub w_x: ArrayView2<'a, f64>,
    pub w_h: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
}

pub struct LayerViewMut<'a> {
    pub w_x: ArrayViewMut2<'a, f64>,
    pub w_h: ArrayViewMut2<'a, f64>,
    pub b: ndarray::ArrayViewMut1<'a, f64>,
}

impl PolicyParams {
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            data: vec![0.0; arch.n_params()],
        })
    }

    pub fn from_flat(arch: ArchConfig, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if data.len() != arch.n_params() {
            return Err(Error::shape(format!(
                "{} parameters supplied, architecture needs {}",
                data.len(),
                arch.n_params()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("parameter {i}")));
        }
        Ok(Self { arch, data })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn layer(&self, l: usize) -> LayerView<'_> {
        let (h, inp) = (self.arch.hidden_dim, self.arch.layer_input(l));
        let off = self.arch.layer_offset(l);
        let block = &self.data[off..off + self.arch.layer_len(l)];
        let (wx, rest) = block.split_at(4 * h * inp);
        let (wh, b) = rest.split_at(4 * h * h);
        LayerView {
            w_x: ArrayView2::from_shape((4 * h, inp), wx).expect("layout"),
            w_h: ArrayView2::from_shape((4 * h, h), wh).expect("layout"),
            b: ArrayView1::from(b),
        }
    }

    pub fn layer_mut(&mut self, l: usize) -> LayerViewMut<'_> {
        let (h, inp) = (self.arch.hidden_dim, self.arch.layer_input(l));
        let off = self.arch.layer_offset(l);
        let len = self.arch.layer_len(l);
        let block = &mut self.data[off..off + len];
        let (wx, rest) = block.split_at_mut(4 * h * inp);
        let (wh, b) = rest.split_at_mut(4 * h * h);
        LayerViewMut {
            w_x: ArrayViewMut2::from_shape((4 * h, inp), wx).expect("layout"),
            w_h: ArrayViewMut2::from_shape((4 * h, h), wh).expect("layout"),
            b: ndarray::ArrayViewMut1::from(b),
        }
    }

    /// Output-layer slice: `w_out` (row-major) followed by `b_out`.
    pub fn output(&self) -> &[f64] {
        &self.data[self.arch.output_offset()..]
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        let off = self.arch.output_offset();
        &mut self.data[off..]
    }

    pub fn w_out(&self) -> ArrayView2<'_, f64> {
        let (o, h) = (self.arch.output_dim, self.arch.hidden_dim);
        ArrayView2::from_shape((o, h), &self.output()[..o * h]).expect("layout")
    }

    pub fn b_out(&self) -> ArrayView1<'_, f64> {
        let (o, h) = (self.arch.output_dim, self.arch.hidden_dim);
        ArrayView1::from(&self.output()[o * h..])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Output-layer parameters as the `[out x (h + 1)]` matrix whose last column
/// is the bias; this is the shape K-FAC preconditions.
pub fn output_as_matrix(arch: &ArchConfig, flat_output: &[f64]) -> DMatrix<f64> {
    let (o, h) = (arch.output_dim, arch.hidden_dim);
    DMatrix::from_fn(o, h + 1, |r, c| {
        if c < h {
            flat_output[r * h + c]
        } else {
            flat_output[o * h + r]
        }
    })
}

pub fn output_from_matrix(arch: &ArchConfig, m: &DMatrix<f64>, flat_output: &mut [f64]) {
    let (o, h) = (arch.output_dim, arch.hidden_dim);
    for r in 0..o {
        for c in 0..h {
            flat_output[r * h + c] = m[(r, c)];
        }
        flat_output[o * h + r] = m[(r, h)];
    }
}

/// Orthogonal matrix from the QR factorization of a Gaussian matrix, with
/// columns of `Q` sign-corrected by `sign(diag(R))`. Rows are orthonormal
/// when `rows <= cols`, columns otherwise.
pub fn orthogonal_init(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    orthogonal_from(rows, cols, &mut NormalStream::new(seed, Domain::Orthogonal, 0))
}

fn orthogonal_from(rows: usize, cols: usize, normals: &mut NormalStream) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let gauss = DMatrix::from_fn(tall, short, |_, _| normals.next_normal());
    let qr = gauss.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| if rows >= cols { q[(i, j)] } else { q[(j, i)] })
}

fn xavier_fill(mut w: ArrayViewMut2<'_, f64>, fan_in: usize, fan_out: usize, rng: &mut impl rand::RngCore) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in w.iter_mut() {
        *x = a * (2.0 * rng::uniform(rng) - 1.0);
    }
}

/// Xavier-uniform input and output weights, orthogonal recurrent blocks
/// (one per gate), zero biases except the forget gate which starts at 1.
pub fn init_policy(arch: ArchConfig, seed: u64) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeros(arch)?;
    let h = arch.hidden_dim;
    for l in 0..arch.n_lstm_layers {
        let inp = arch.layer_input(l);
        let mut layer = params.layer_mut(l);
        let mut uni = rng::stream(seed, Domain::Init, l as u64);
        xavier_fill(layer.w_x.view_mut(), inp, 4 * h, &mut uni);
        for gate in 0..4 {
            let mut normals = NormalStream::new(seed, Domain::Orthogonal, (4 * l + gate) as u64);
            let q = orthogonal_from(h, h, &mut normals);
            layer.w_h.slice_mut(s![gate * h..(gate + 1) * h, ..]).assign(&q);
        }
        layer.b.slice_mut(s![h..2 * h]).fill(1.0);
    }
    let mut uni = rng::stream(seed, Domain::Init, u32::MAX as u64);
    let o = arch.output_dim;
    let out = params.output_mut();
    let w = ArrayViewMut2::from_shape((o, h), &mut out[..o * h]).expect("layout");
    xavier_fill(w, h, o, &mut uni);
    Ok(params)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything backward needs; features are never re-read.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Layer inputs, `[T*B x in]`.
    inputs: Array2<f64>,
    /// Activated gates (i, f, g, o), `[T*B x 4h]`.
    gates: Array2<f64>,
    /// Cell states with a leading zero block, `[(T+1)*B x h]`.
    cells: Array2<f64>,
    /// Hidden states with a leading zero block, `[(T+1)*B x h]`.
    hidden: Array2<f64>,
    /// `tanh(c_t)`, `[T*B x h]`.
    tanh_cells: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    steps: usize,
    layers: Vec<LayerCache>,
    /// Output-layer pre-activations, `[T*B x out]`.
    out_pre: Array2<f64>,
    /// Hedge ratios, `[B x T]`.
    hedges: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Top-layer hidden states `h_0 .. h_{T-1}`, time-major `[T*B x h]`.
    pub fn top_hidden(&self) -> ArrayView2<'_, f64> {
        let top = self.layers.last().expect("at least one layer");
        top.hidden.slice(s![self.batch.., ..])
    }

    /// Homogeneous activations `[h_t; 1]` feeding the output layer, one row
    /// per (step, path): the K-FAC input statistics.
    pub fn output_activations(&self) -> Array2<f64> {
        let hid = self.top_hidden();
        let (n, h) = hid.dim();
        let mut a = Array2::ones((n, h + 1));
        a.slice_mut(s![.., ..h]).assign(&hid);
        a
    }

    pub fn output_preactivations(&self) -> ArrayView2<'_, f64> {
        self.out_pre.view()
    }

    pub fn hedges(&self) -> ArrayView2<'_, f64> {
        self.hedges.view()
    }
}

/// Recomputes hedges for replacement output-layer weights from the cached
/// top hidden states. Used to probe the loss of output-layer-only updates.
pub fn output_hedges(arch: &ArchConfig, flat_output: &[f64], cache: &ForwardCache) -> Array2<f64> {
    let h = arch.hidden_dim;
    let w = ArrayView1::from(&flat_output[..h]);
    let b = flat_output[h];
    let hid = cache.top_hidden();
    let (bsz, steps) = (cache.batch, cache.steps);
    let mut hedges = Array2::zeros((bsz, steps));
    for t in 0..steps {
        for p in 0..bsz {
            let z = hid.row(t * bsz + p).dot(&w) + b;
            hedges[[p, t]] = z.tanh();
        }
    }
    hedges
}

/// Forward pass over `features [B x T x input_dim]`, returning hedge ratios
/// `[B x T]` in (-1, 1) and the cache for [`backward`].
pub fn forward(params: &PolicyParams, features: &Array3<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    let arch = params.arch;
    let (bsz, steps, dim) = features.dim();
    if dim != arch.input_dim {
        return Err(Error::shape(format!(
            "features have {dim} channels, architecture expects {}",
            arch.input_dim
        )));
    }
    if bsz == 0 || steps == 0 {
        return Err(Error::shape("empty feature tensor".to_string()));
    }
    let h = arch.hidden_dim;
    let n = bsz * steps;

    // time-major copy of the features
    let mut input = Array2::zeros((n, dim));
    for t in 0..steps {
        for p in 0..bsz {
            for k in 0..dim {
                input[[t * bsz + p, k]] = features[[p, t, k]];
            }
        }
    }

    let mut layers = Vec::with_capacity(arch.n_lstm_layers);
    for l in 0..arch.n_lstm_layers {
        let w = params.layer(l);
        let mut pre = Array2::<f64>::zeros((n, 4 * h));
        general_mat_mul(1.0, &input, &w.w_x.t(), 0.0, &mut pre);
        pre += &w.b;

        let mut gates = Array2::zeros((n, 4 * h));
        let mut cells = Array2::<f64>::zeros((n + bsz, h));
        let mut hidden = Array2::<f64>::zeros((n + bsz, h));
        let mut tanh_cells = Array2::zeros((n, h));
        for t in 0..steps {
            {
                let h_prev = hidden.slice(s![t * bsz..(t + 1) * bsz, ..]);
                let mut z = pre.slice_mut(s![t * bsz..(t + 1) * bsz, ..]);
                general_mat_mul(1.0, &h_prev, &w.w_h.t(), 1.0, &mut z);
            }
            for p in 0..bsz {
                let r = t * bsz + p;
                for j in 0..h {
                    let i_g = sigmoid(pre[[r, j]]);
                    let f_g = sigmoid(pre[[r, h + j]]);
                    let g_g = pre[[r, 2 * h + j]].tanh();
                    let o_g = sigmoid(pre[[r, 3 * h + j]]);
                    let c = f_g * cells[[r, j]] + i_g * g_g;
                    let tc = c.tanh();
                    gates[[r, j]] = i_g;
                    gates[[r, h + j]] = f_g;
                    gates[[r, 2 * h + j]] = g_g;
                    gates[[r, 3 * h + j]] = o_g;
                    cells[[r + bsz, j]] = c;
                    tanh_cells[[r, j]] = tc;
                    hidden[[r + bsz, j]] = o_g * tc;
                }
            }
        }
        let next_input = hidden.slice(s![bsz.., ..]).to_owned();
        layers.push(LayerCache {
            inputs: std::mem::replace(&mut input, next_input),
            gates,
            cells,
            hidden,
            tanh_cells,
        });
    }

    let mut out_pre = Array2::zeros((n, arch.output_dim));
    general_mat_mul(1.0, &input, &params.w_out().t(), 0.0, &mut out_pre);
    out_pre += &params.b_out();

    let mut hedges = Array2::zeros((bsz, steps));
    for t in 0..steps {
        for p in 0..bsz {
            let y = out_pre[[t * bsz + p, 0]];
            if !y.is_finite() {
                return Err(Error::numeric(format!("policy output at step {t}, path {p}")));
            }
            hedges[[p, t]] = y.tanh();
        }
    }
    let cache = ForwardCache {
        batch: bsz,
        steps,
        layers,
        out_pre,
        hedges: hedges.clone(),
    };
    Ok((hedges, cache))
}

/// Forward pass in chunks without keeping caches around.
pub fn predict(params: &PolicyParams, features: &Array3<f64>) -> Result<Array2<f64>> {
    const CHUNK: usize = 64;
    let (bsz, steps, _) = features.dim();
    let mut hedges = Array2::zeros((bsz, steps));
    let mut start = 0;
    while start < bsz {
        let end = (start + CHUNK).min(bsz);
        let chunk = features.slice(s![start..end, .., ..]).to_owned();
        let (hc, _) = forward(params, &chunk).map_err(|e| match e {
            Error::Numeric { context } => Error::numeric(format!("{context} (chunk at path {start})")),
            other => other,
        })?;
        hedges.slice_mut(s![start..end, ..]).assign(&hc);
        start = end;
    }
    Ok(hedges)
}

/// Result of backpropagation: parameter gradients in the flat layout of
/// [`PolicyParams`], and the output-layer backprop signals
/// `g = d_hedges * (1 - hedge^2)` as `[B x T]`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: PolicyParams,
    pub out_signals: Array2<f64>,
}

impl Gradients {
    /// Output signals time-major `[T*B x out]`, row-aligned with
    /// [`ForwardCache::output_activations`].
    pub fn out_signals_time_major(&self) -> Array2<f64> {
        let (bsz, steps) = self.out_signals.dim();
        let mut g = Array2::zeros((bsz * steps, 1));
        for t in 0..steps {
            for p in 0..bsz {
                g[[t * bsz + p, 0]] = self.out_signals[[p, t]];
            }
        }
        g
    }
}

/// Exact gradient of `sum(d_hedges * hedges)` with respect to every
/// parameter, by backpropagation through time.
pub fn backward(params: &PolicyParams, cache: &ForwardCache, d_hedges: &Array2<f64>) -> Result<Gradients> {
    let arch = params.arch;
    let (bsz, steps) = (cache.batch, cache.steps);
    if d_hedges.dim() != (bsz, steps) {
        return Err(Error::shape(format!(
            "d_hedges {:?} does not match cache ({bsz}, {steps})",
            d_hedges.dim()
        )));
    }
    if cache.layers.len() != arch.n_lstm_layers {
        return Err(Error::shape("cache was produced by a different architecture".to_string()));
    }
    let h = arch.hidden_dim;
    let n = bsz * steps;
    let mut grads = PolicyParams::zeros(arch)?;

    let mut out_signals = Array2::zeros((bsz, steps));
    let mut g = Array2::zeros((n, 1));
    for t in 0..steps {
        for p in 0..bsz {
            let hedge = cache.hedges[[p, t]];
            let s = d_hedges[[p, t]] * (1.0 - hedge * hedge);
            out_signals[[p, t]] = s;
            g[[t * bsz + p, 0]] = s;
        }
    }

    {
        let top = cache.top_hidden();
        let mut dw = Array2::zeros((1, h));
        general_mat_mul(1.0, &g.t(), &top, 0.0, &mut dw);
        let out = grads.output_mut();
        out[..h].copy_from_slice(dw.as_slice().expect("contiguous"));
        out[h] = g.sum();
    }

    // gradient flowing into the top layer's hidden states
    let mut d_hidden = Array2::zeros((n, h));
    general_mat_mul(1.0, &g, &params.w_out(), 0.0, &mut d_hidden);

    for l in (0..arch.n_lstm_layers).rev() {
        let c = &cache.layers[l];
        let w = params.layer(l);
        let mut dz = Array2::zeros((n, 4 * h));
        let mut dh_rec = Array2::<f64>::zeros((bsz, h));
        let mut dc_next = Array2::<f64>::zeros((bsz, h));
        for t in (0..steps).rev() {
            for p in 0..bsz {
                let r = t * bsz + p;
                for j in 0..h {
                    let dh = d_hidden[[r, j]] + dh_rec[[p, j]];
                    let i_g = c.gates[[r, j]];
                    let f_g = c.gates[[r, h + j]];
                    let g_g = c.gates[[r, 2 * h + j]];
                    let o_g = c.gates[[r, 3 * h + j]];
                    let tc = c.tanh_cells[[r, j]];
                    let c_prev = c.cells[[r, j]];
                    let d_o = dh * tc;
                    let dc = dc_next[[p, j]] + dh * o_g * (1.0 - tc * tc);
                    dz[[r, j]] = dc * g_g * i_g * (1.0 - i_g);
                    dz[[r, h + j]] = dc * c_prev * f_g * (1.0 - f_g);
                    dz[[r, 2 * h + j]] = dc * i_g * (1.0 - g_g * g_g);
                    dz[[r, 3 * h + j]] = d_o * o_g * (1.0 - o_g);
                    dc_next[[p, j]] = dc * f_g;
                }
            }
            let dz_t = dz.slice(s![t * bsz..(t + 1) * bsz, ..]);
            general_mat_mul(1.0, &dz_t, &w.w_h, 0.0, &mut dh_rec);
        }

        let h_prev = c.hidden.slice(s![..n, ..]);
        let mut gl = grads.layer_mut(l);
        general_mat_mul(1.0, &dz.t(), &c.inputs, 0.0, &mut gl.w_x);
        general_mat_mul(1.0, &dz.t(), &h_prev, 0.0, &mut gl.w_h);
        gl.b.assign(&dz.sum_axis(Axis(0)));

        if l > 0 {
            let mut d_in = Array2::zeros((n, c.inputs.ncols()));
            general_mat_mul(1.0, &dz, &w.w_x, 0.0, &mut d_in);
            d_hidden = d_in;
        }
    }

    Ok(Gradients { grads, out_signals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn random_features(b: usize, t: usize, seed: u64) -> Array3<f64> {
        let mut s = NormalStream::new(seed, Domain::Paths, 99);
        Array3::from_shape_fn((b, t, 2), |_| s.next_normal())
    }

    fn assert_orthonormal_columns(q: &Array2<f64>) {
        let qtq = q.t().dot(q);
        for ((i, j), &x) in qtq.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(x, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn orthogonal_square_and_wide() {
        assert_orthonormal_columns(&orthogonal_init(4, 4, 1));
        let wide = orthogonal_init(2, 5, 2);
        assert_eq!(wide.dim(), (2, 5));
        assert_orthonormal_columns(&wide.t().to_owned());
        let tall = orthogonal_init(6, 3, 3);
        assert_orthonormal_columns(&tall);
    }

    #[test]
    fn orthogonal_singular_values_are_one() {
        for &(r, c) in &[(4, 4), (2, 5), (7, 3)] {
            let q = orthogonal_init(r, c, 17);
            let m = DMatrix::from_fn(r, c, |i, j| q[[i, j]]);
            let svd = m.svd(false, false);
            for s in svd.singular_values.iter() {
                assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn init_respects_bounds_and_is_deterministic() {
        let arch = ArchConfig::default();
        let p = init_policy(arch, 5).unwrap();
        let bound = (6.0f64 / (2.0 + 128.0)).sqrt();
        assert!(p.layer(0).w_x.iter().all(|x| x.abs() <= bound));
        let out_bound = (6.0f64 / 33.0).sqrt();
        assert!(p.w_out().iter().all(|x| x.abs() <= out_bound));
        let h = arch.hidden_dim;
        for gate in 0..4 {
            let block = p.layer(0).w_h.slice(s![gate * h..(gate + 1) * h, ..]).to_owned();
            assert_orthonormal_columns(&block);
        }
        let b = p.layer(0).b;
        assert!(b.slice(s![..h]).iter().all(|&x| x == 0.0));
        assert!(b.slice(s![h..2 * h]).iter().all(|&x| x == 1.0));
        assert!(b.slice(s![2 * h..]).iter().all(|&x| x == 0.0));
        assert!(p.b_out().iter().all(|&x| x == 0.0));
        assert_eq!(p, init_policy(arch, 5).unwrap());
        assert_ne!(p, init_policy(arch, 6).unwrap());
    }

    #[test]
    fn zero_params_give_zero_hedges() {
        let p = PolicyParams::zeros(ArchConfig::default()).unwrap();
        let (hedges, _) = forward(&p, &random_features(3, 6, 0)).unwrap();
        assert!(hedges.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hedges_are_bounded_and_rows_pure() {
        let arch = ArchConfig {
            hidden_dim: 8,
            n_lstm_layers: 2,
            ..ArchConfig::default()
        };
        let mut p = init_policy(arch, 1).unwrap();
        for x in p.as_mut_slice() {
            *x *= 3.0;
        }
        let mut f = random_features(4, 12, 3);
        for t in 0..12 {
            for k in 0..2 {
                f[[1, t, k]] = f[[0, t, k]];
            }
        }
        let (hedges, _) = forward(&p, &f).unwrap();
        assert!(hedges.iter().all(|&x| x > -1.0 && x < 1.0));
        assert_eq!(hedges.row(0), hedges.row(1));
        let predicted = predict(&p, &f).unwrap();
        assert_eq!(hedges, predicted);
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let p = PolicyParams::zeros(ArchConfig::default()).unwrap();
        let f = Array3::zeros((2, 3, 3));
        assert!(matches!(forward(&p, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_linearity_and_zero_signal() {
        let arch = ArchConfig {
            hidden_dim: 8,
            ..ArchConfig::default()
        };
        let p = init_policy(arch, 4).unwrap();
        let f = random_features(4, 5, 8);
        let (_, cache) = forward(&p, &f).unwrap();
        let zero = backward(&p, &cache, &Array2::zeros((4, 5))).unwrap();
        assert!(zero.grads.as_slice().iter().all(|&x| x == 0.0));

        let mut s = NormalStream::new(1, Domain::Paths, 1);
        let d = Array2::from_shape_fn((4, 5), |_| s.next_normal());
        let g1 = backward(&p, &cache, &d).unwrap();
        let g2 = backward(&p, &cache, &(&d * 2.0)).unwrap();
        for (a, b) in g1.grads.as_slice().iter().zip(g2.grads.as_slice()) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(matches!(
            backward(&p, &cache, &Array2::zeros((3, 5))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn output_hedges_match_forward() {
        let arch = ArchConfig {
            hidden_dim: 6,
            ..ArchConfig::default()
        };
        let p = init_policy(arch, 2).unwrap();
        let f = random_features(3, 4, 1);
        let (hedges, cache) = forward(&p, &f).unwrap();
        let again = output_hedges(&arch, p.output(), &cache);
        for (a, b) in hedges.iter().zip(again.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn output_matrix_layout_round_trips() {
        let arch = ArchConfig {
            hidden_dim: 3,
            ..ArchConfig::default()
        };
        let flat = vec![1.0, 2.0, 3.0, 4.0];
        let m = output_as_matrix(&arch, &flat);
        assert_eq!(m.ncols(), 4);
        assert_eq!(m[(0, 3)], 4.0);
        let mut back = vec![0.0; 4];
        output_from_matrix(&arch, &m, &mut back);
        assert_eq!(back, flat);
    }
}
