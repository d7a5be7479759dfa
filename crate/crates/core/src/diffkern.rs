//! Minimal differentiable kernel: parameter storage, dense and gated
//! recurrent layers with hand-written backward passes, softmax with the
//! class-prior weighted cross-entropy, an adaptive-moment optimizer and a
//! central-difference gradient checker.
//!
//! Layers do not own their weights. They hold [`ParamId`] handles into a
//! [`ParamStore`]; backward passes accumulate into a [`Gradients`] buffer that
//! mirrors the store shape for shape. Every reduction runs in a fixed order so
//! results are bit-for-bit reproducible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Probabilities are clipped to at least this value before taking logs.
pub const PROB_CLIP: f64 = 1e-12;

/// Dense array of up to three axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::validation(format!(
                "tensors have 1 to 3 axes, got {}",
                shape.len()
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::validation(format!(
                "tensor shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Param {
    name: String,
    value: Tensor,
    #[serde(skip)]
    first_moment: Vec<f64>,
    #[serde(skip)]
    second_moment: Vec<f64>,
}

/// Adaptive-moment optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Named parameters plus optimizer state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    step: u64,
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.bufs.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    /// All gradients concatenated in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.bufs.iter().flatten().copied().collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::validation(format!("duplicate parameter name `{name}`")));
        }
        let n = value.len();
        self.params.push(Param {
            name,
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform initialized `rows × cols` matrix parameter.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::from_vec(&[rows, cols], data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape)?)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.params[id.0].value.data()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            bufs: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Copies values of same-named, same-shaped parameters from `other`.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::validation(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape != p.value.shape {
                return Err(Error::validation(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name, src.value.shape, p.value.shape
                )));
            }
            p.value.data.copy_from_slice(&src.value.data);
        }
        Ok(())
    }

    /// Adaptive-moment update with bias correction; gradients are zeroed
    /// afterwards. A non-finite gradient aborts before any parameter moves.
    pub fn optimizer_step(&mut self, grads: &mut Gradients, cfg: &AdamConfig) -> Result<()> {
        for (p, g) in self.params.iter().zip(&grads.bufs) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&mut grads.bufs) {
            for i in 0..g.len() {
                let gi = g[i];
                let m = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * gi * gi;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                g[i] = 0.0;
            }
        }
        Ok(())
    }

    /// Restores optimizer buffers after deserialization.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.first_moment = vec![0.0; p.value.len()];
            p.second_moment = vec![0.0; p.value.len()];
        }
    }

    fn flat_get(&self, mut i: usize) -> f64 {
        for p in &self.params {
            if i < p.value.len() {
                return p.value.data[i];
            }
            i -= p.value.len();
        }
        panic!("flat index out of range")
    }

    fn flat_set(&mut self, mut i: usize, v: f64) {
        for p in &mut self.params {
            if i < p.value.len() {
                p.value.data[i] = v;
                return;
            }
            i -= p.value.len();
        }
        panic!("flat index out of range")
    }

    fn flat_name(&self, mut i: usize) -> (String, usize) {
        for p in &self.params {
            if i < p.value.len() {
                return (p.name.clone(), i);
            }
            i -= p.value.len();
        }
        panic!("flat index out of range")
    }
}

/// `y = xW + b` for a row vector `x`; `W` is `in × out` row-major.
pub fn dense_forward(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let (n_in, n_out) = matrix_dims(w)?;
    if x.len() != n_in || b.len() != n_out {
        return Err(Error::validation(format!(
            "dense shapes disagree: x {}, W {n_in}x{n_out}, b {}",
            x.len(),
            b.len()
        )));
    }
    let mut y = b.to_vec();
    affine_acc(x, w.data(), &mut y);
    Ok(y)
}

/// Gradients of [`dense_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn dense_backward(x: &[f64], w: &Tensor, grad_y: &[f64]) -> Result<DenseGrads> {
    let (n_in, n_out) = matrix_dims(w)?;
    if x.len() != n_in || grad_y.len() != n_out {
        return Err(Error::validation("dense backward shapes disagree"));
    }
    let mut gw = vec![0.0; n_in * n_out];
    let gx = affine_backward(x, w.data(), grad_y, &mut gw);
    Ok(DenseGrads {
        x: gx,
        w: gw,
        b: grad_y.to_vec(),
    })
}

fn matrix_dims(w: &Tensor) -> Result<(usize, usize)> {
    match *w.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::validation("weight tensor must be two-dimensional")),
    }
}

/// `y += x W`.
fn affine_acc(x: &[f64], w: &[f64], y: &mut [f64]) {
    let n_out = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n_out..(i + 1) * n_out];
        for (yo, wo) in y.iter_mut().zip(row) {
            *yo += xi * wo;
        }
    }
}

/// Accumulates `dW += xᵀ g` and returns `dx = g Wᵀ`.
fn affine_backward(x: &[f64], w: &[f64], g: &[f64], gw: &mut [f64]) -> Vec<f64> {
    let n_out = g.len();
    let mut gx = vec![0.0; x.len()];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        let grow = &mut gw[i * n_out..(i + 1) * n_out];
        let mut acc = 0.0;
        for o in 0..n_out {
            grow[o] += xi * g[o];
            acc += g[o] * row[o];
        }
        gx[i] = acc;
    }
    gx
}

/// Fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), input, output, rng)?;
        let b = store.add_zeros(format!("{name}.b"), &[output])?;
        Ok(Dense { w, b, input, output })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let mut y = store.value(self.b).to_vec();
        affine_acc(x, store.value(self.w), &mut y);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, x: &[f64], grad_y: &[f64], grads: &mut Gradients) -> Vec<f64> {
        for (gb, g) in grads.get_mut(self.b).iter_mut().zip(grad_y) {
            *gb += g;
        }
        affine_backward(x, store.value(self.w), grad_y, grads.get_mut(self.w))
    }
}

/// Two dense layers with a tanh in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden_layer: Dense,
    pub output_layer: Dense,
}

/// Activations kept for [`Mlp::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            hidden_layer: Dense::new(store, &format!("{name}.0"), input, hidden, rng)?,
            output_layer: Dense::new(store, &format!("{name}.1"), hidden, output, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> MlpCache {
        let mut hidden = self.hidden_layer.forward(store, x);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let output = self.output_layer.forward(store, &hidden);
        MlpCache {
            input: x.to_vec(),
            hidden,
            output,
        }
    }

    pub fn backward(&self, store: &ParamStore, cache: &MlpCache, grad_y: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let mut gh = self.output_layer.backward(store, &cache.hidden, grad_y, grads);
        for (g, h) in gh.iter_mut().zip(&cache.hidden) {
            *g *= 1.0 - h * h;
        }
        self.hidden_layer.backward(store, &cache.input, &gh, grads)
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent cell with update gate `z`, reset gate `r` and tanh candidate:
///
/// ```text
/// r  = σ(x W_r + h U_r + b_r)
/// z  = σ(x W_z + h U_z + b_z)
/// n  = tanh(x W_n + r ⊙ (h U_n) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

/// Intermediate values of one [`GruCell`] step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hu_n: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut ids = [ParamId(0); 9];
        for (g, gate) in ["r", "z", "n"].iter().enumerate() {
            ids[3 * g] = store.add_glorot(format!("{name}.w_{gate}"), input, hidden, rng)?;
            ids[3 * g + 1] = store.add_glorot(format!("{name}.u_{gate}"), hidden, hidden, rng)?;
            ids[3 * g + 2] = store.add_zeros(format!("{name}.b_{gate}"), &[hidden])?;
        }
        let [w_r, u_r, b_r, w_z, u_z, b_z, w_n, u_n, b_n] = ids;
        Ok(GruCell {
            input,
            hidden,
            w_r,
            u_r,
            b_r,
            w_z,
            u_z,
            b_z,
            w_n,
            u_n,
            b_n,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], h_prev: &[f64]) -> GruStep {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(h_prev.len(), self.hidden);
        let gate = |w: ParamId, u: ParamId, b: ParamId| {
            let mut a = store.value(b).to_vec();
            affine_acc(x, store.value(w), &mut a);
            affine_acc(h_prev, store.value(u), &mut a);
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
            a
        };
        let r = gate(self.w_r, self.u_r, self.b_r);
        let z = gate(self.w_z, self.u_z, self.b_z);
        let mut hu_n = vec![0.0; self.hidden];
        affine_acc(h_prev, store.value(self.u_n), &mut hu_n);
        let mut n = store.value(self.b_n).to_vec();
        affine_acc(x, store.value(self.w_n), &mut n);
        for j in 0..self.hidden {
            n[j] = (n[j] + r[j] * hu_n[j]).tanh();
        }
        let h = (0..self.hidden)
            .map(|j| (1.0 - z[j]) * n[j] + z[j] * h_prev[j])
            .collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            hu_n,
            h,
        }
    }

    /// Accumulates parameter gradients; returns `(grad_x, grad_h_prev)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        step: &GruStep,
        grad_h: &[f64],
        grads: &mut Gradients,
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut gh_prev: Vec<f64> = (0..hd).map(|j| grad_h[j] * step.z[j]).collect();
        let mut da_n = vec![0.0; hd];
        let mut da_z = vec![0.0; hd];
        let mut d_hu_n = vec![0.0; hd];
        let mut da_r = vec![0.0; hd];
        for j in 0..hd {
            let dn = grad_h[j] * (1.0 - step.z[j]);
            let dz = grad_h[j] * (step.h_prev[j] - step.n[j]);
            da_n[j] = dn * (1.0 - step.n[j] * step.n[j]);
            da_z[j] = dz * step.z[j] * (1.0 - step.z[j]);
            d_hu_n[j] = da_n[j] * step.r[j];
            let dr = da_n[j] * step.hu_n[j];
            da_r[j] = dr * step.r[j] * (1.0 - step.r[j]);
        }
        let mut gx = vec![0.0; self.input];
        for (w, u, b, da) in [
            (self.w_n, self.u_n, self.b_n, &da_n),
            (self.w_z, self.u_z, self.b_z, &da_z),
            (self.w_r, self.u_r, self.b_r, &da_r),
        ] {
            grads.get_mut(b).iter_mut().zip(da.iter()).for_each(|(g, d)| *g += d);
            let dx = affine_backward(&step.x, store.value(w), da, grads.get_mut(w));
            add_into(&mut gx, &dx);
            // The candidate's recurrent term enters through r ⊙ (h U_n).
            let g_u = if u == self.u_n { &d_hu_n } else { da };
            let dh = affine_backward(&step.h_prev, store.value(u), g_u, grads.get_mut(u));
            add_into(&mut gh_prev, &dh);
        }
        (gx, gh_prev)
    }
}

/// Explicit weights for a single stateless [`rnn_cell_forward`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    /// `input × hidden` input weights for the r, z and n gates.
    pub w: [Tensor; 3],
    /// `hidden × hidden` recurrent weights for the r, z and n gates.
    pub u: [Tensor; 3],
    pub b: [Vec<f64>; 3],
}

/// One gated recurrent step with shape validation.
pub fn rnn_cell_forward(x: &[f64], h_prev: &[f64], weights: &GruWeights) -> Result<Vec<f64>> {
    let hidden = h_prev.len();
    for g in 0..3 {
        let (wi, wo) = matrix_dims(&weights.w[g])?;
        let (ui, uo) = matrix_dims(&weights.u[g])?;
        if wi != x.len() || wo != hidden || ui != hidden || uo != hidden || weights.b[g].len() != hidden {
            return Err(Error::validation("recurrent cell shapes disagree"));
        }
    }
    let mut store = ParamStore::new();
    let mut ids = Vec::new();
    for (g, gate) in ["r", "z", "n"].iter().enumerate() {
        ids.push(store.add(format!("w_{gate}"), weights.w[g].clone())?);
        ids.push(store.add(format!("u_{gate}"), weights.u[g].clone())?);
        ids.push(store.add(format!("b_{gate}"), Tensor::from_vec(&[hidden], weights.b[g].clone())?)?);
    }
    let cell = GruCell {
        input: x.len(),
        hidden,
        w_r: ids[0],
        u_r: ids[1],
        b_r: ids[2],
        w_z: ids[3],
        u_z: ids[4],
        b_z: ids[5],
        w_n: ids[6],
        u_n: ids[7],
        b_n: ids[8],
    };
    Ok(cell.forward(&store, x, h_prev).h)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Given `dL/dp` for `p = softmax(z)`, returns `dL/dz`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Shannon entropy (natural log) with clipped probabilities.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&q| q * q.max(PROB_CLIP).ln()).sum::<f64>()
}

/// `dH/dz` for `p = softmax(z)`: `−p_j (ln p_j + H)`.
pub fn entropy_logit_grad(p: &[f64]) -> Vec<f64> {
    let h = entropy(p);
    p.iter().map(|&q| -q * (q.max(PROB_CLIP).ln() + h)).collect()
}

/// `−Σ_c w_c · y_c · ln max(p_c, 1e-12)` with explicit per-class weights.
fn weighted_ce(y: &[f64], p: &[f64], weights: &[f64]) -> f64 {
    -y.iter()
        .zip(p)
        .zip(weights)
        .filter(|((yc, _), _)| **yc != 0.0)
        .map(|((yc, pc), wc)| wc * yc * pc.max(PROB_CLIP).ln())
        .sum::<f64>()
}

fn check_loss_args(y: &[f64], p: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    if y.len() != p.len() || y.len() != alpha.len() {
        return Err(Error::validation(format!(
            "label, prediction and prior lengths differ: {}, {}, {}",
            y.len(),
            p.len(),
            alpha.len()
        )));
    }
    if let Some(c) = alpha.iter().position(|a| !(*a > 0.0)) {
        return Err(Error::validation(format!(
            "alpha_{c} = {} but loss weights need every alpha_c > 0",
            alpha[c]
        )));
    }
    Ok(alpha.iter().map(|a| 1.0 / a).collect())
}

/// Class-prior weighted cross-entropy `−Σ_c (1/α_c) y_c ln p_c`.
pub fn cross_entropy_weighted(y: &[f64], p: &[f64], alpha: &[f64]) -> Result<f64> {
    let w = check_loss_args(y, p, alpha)?;
    Ok(weighted_ce(y, p, &w))
}

/// Weighted cross-entropy on `softmax(logits)`: returns `(loss, probs, dL/dlogits)`.
/// Classes whose probability sits below the clip contribute no gradient.
pub fn softmax_cross_entropy_weighted(y: &[f64], logits: &[f64], alpha: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let w = check_loss_args(y, logits, alpha)?;
    Ok(softmax_ce_with_weights(y, logits, &w))
}

/// As [`softmax_cross_entropy_weighted`] with precomputed weights `1/α_c`.
pub fn softmax_ce_with_weights(y: &[f64], logits: &[f64], weights: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = softmax(logits);
    let loss = weighted_ce(y, &p, weights);
    let mut grad = vec![0.0; p.len()];
    for c in 0..p.len() {
        let coef = weights[c] * y[c];
        if coef == 0.0 || p[c] < PROB_CLIP {
            continue;
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g += coef * (p[j] - if j == c { 1.0 } else { 0.0 });
        }
    }
    (loss, p, grad)
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Floor on the relative-error denominator so vanishing gradients are
/// compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient produced by `loss` with central
/// differences of step `eps` on every parameter coordinate.
///
/// `loss` receives zeroed gradient buffers and accumulates into them.
pub fn grad_check<F>(mut loss: F, store: &mut ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Gradients) -> Result<f64>,
{
    let mut grads = store.zero_grads();
    let base = loss(store, &mut grads)?;
    if !base.is_finite() {
        return Err(Error::validation("loss is not finite at the checked parameters"));
    }
    let analytic = grads.flatten();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut scratch = store.zero_grads();
    for i in 0..analytic.len() {
        let orig = store.flat_get(i);
        scratch.zero();
        store.flat_set(i, orig + eps);
        let up = loss(store, &mut scratch)?;
        store.flat_set(i, orig - eps);
        let down = loss(store, &mut scratch)?;
        store.flat_set(i, orig);
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::validation("loss is not finite near the checked parameters"));
        }
        let num = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(GRAD_CHECK_FLOOR);
        if rel > max_rel_error || worst.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst = Some(store.flat_name(i));
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
