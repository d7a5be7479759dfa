//! SOM-VAE: a per-timestep autoencoder whose latent codes are quantized onto
//! the nodes of a small self-organizing map, with a Markov model over node
//! transitions.
//!
//! Two decoders are trained, one from the continuous code `z_e` and one from
//! the node embedding `z_q`, so no straight-through estimator is needed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffkern::{AdamConfig, Gradients, Mlp, ParamId, ParamStore, Tensor};
use crate::rng;
use crate::trace::AssignmentTrace;
use crate::tskm::kmeans_vectors;
use crate::{Error, Matrix, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Rectangular SOM with 4-connected neighbors. Node `k` sits at
/// row `k / cols`, column `k % cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SomGrid {
    pub rows: usize,
    pub cols: usize,
}

impl SomGrid {
    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    /// Grid neighbors of `k`, excluding `k`.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let (r, c) = (k / self.cols, k % self.cols);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(k - self.cols);
        }
        if c > 0 {
            out.push(k - 1);
        }
        if c + 1 < self.cols {
            out.push(k + 1);
        }
        if r + 1 < self.rows {
            out.push(k + self.cols);
        }
        out
    }

    /// Nodes pulled toward a code quantized to `k`: the node and its neighbors.
    pub fn neighborhood(&self, k: usize) -> Vec<usize> {
        let mut out = vec![k];
        out.extend(self.neighbors(k));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub commit: f64,
    pub som: f64,
    pub transition: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            commit: 0.25,
            som: 0.25,
            transition: 0.1,
            smooth: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomVaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub loss_weights: LossWeights,
    /// Reconstruction-only epochs before the embeddings are seeded.
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Patients per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    pub laplace: f64,
    pub seed: u64,
}

impl Default for SomVaeConfig {
    fn default() -> Self {
        SomVaeConfig {
            latent_dim: 8,
            hidden: 16,
            grid_rows: 2,
            grid_cols: 2,
            loss_weights: LossWeights::default(),
            warmup_epochs: 5,
            epochs: 30,
            batch_size: 16,
            lr: 3e-3,
            laplace: 1.0,
            seed: 0,
        }
    }
}

impl SomVaeConfig {
    pub fn grid(&self) -> SomGrid {
        SomGrid {
            rows: self.grid_rows,
            cols: self.grid_cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if self.latent_dim == 0 || self.hidden == 0 || self.grid().k() == 0 || self.batch_size == 0 {
            return Err(Error::validation("SOM-VAE dimensions and batch size must be positive"));
        }
        if [w.commit, w.som, w.transition, w.smooth].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::validation("SOM-VAE loss weights must be non-negative"));
        }
        if !(self.lr > 0.0) || !(self.laplace >= 0.0) {
            return Err(Error::validation(
                "learning rate must be positive and laplace non-negative",
            ));
        }
        Ok(())
    }
}

/// Layer handles into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SomVaeNet {
    pub encoder: Mlp,
    pub dec_e: Mlp,
    pub dec_q: Mlp,
    pub embeddings: ParamId,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub k: usize,
}

/// Values of the individual loss terms for one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub recon_e: f64,
    pub recon_q: f64,
    pub commit: f64,
    pub som: f64,
    pub transition: f64,
    pub smooth: f64,
    pub total: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `embeddings` (K×d, row-major); ties go to
/// the lowest index.
pub fn quantize(z: &[f64], embeddings: &[f64]) -> usize {
    let d = z.len();
    let mut best = (0, f64::INFINITY);
    for (j, e) in embeddings.chunks(d).enumerate() {
        let dist = sq_dist(z, e);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best.0
}

impl SomVaeNet {
    pub fn build(store: &mut ParamStore, input_dim: usize, config: &SomVaeConfig) -> Result<Self> {
        let mut rng = rng::stream(config.seed, 0);
        let (h, l, k) = (config.hidden, config.latent_dim, config.grid().k());
        Ok(SomVaeNet {
            encoder: Mlp::new(store, "encoder", input_dim, h, l, &mut rng)?,
            dec_e: Mlp::new(store, "decoder_e", l, h, input_dim, &mut rng)?,
            dec_q: Mlp::new(store, "decoder_q", l, h, input_dim, &mut rng)?,
            embeddings: store.add("embeddings", Tensor::zeros(&[k, l])?)?,
            input_dim,
            latent_dim: l,
            k,
        })
    }

    pub fn encode(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        self.encoder.forward(store, x).output
    }

    pub fn embedding<'a>(&self, store: &'a ParamStore, j: usize) -> &'a [f64] {
        &store.value(self.embeddings)[j * self.latent_dim..(j + 1) * self.latent_dim]
    }

    /// Evaluates the loss of one timestep and, when `grads` is given,
    /// accumulates `scale`·∂L into it. Returns the terms and the chosen node.
    ///
    /// The commitment term treats `z_q` as a constant and the SOM term treats
    /// `z_e` as a constant; those constants are computed from `frozen`, which
    /// is `store` itself during training. The transition term has no
    /// parameter gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        store: &ParamStore,
        frozen: &ParamStore,
        grid: &SomGrid,
        x: &[f64],
        prev: Option<usize>,
        transition: &Matrix,
        w: &LossWeights,
        grads: Option<(&mut Gradients, f64)>,
    ) -> (LossTerms, usize) {
        let enc = self.encoder.forward(store, x);
        let z = &enc.output;
        let emb = store.value(self.embeddings);
        let k = quantize(z, emb);
        let zq = self.embedding(store, k);
        let z_stop = if core::ptr::eq(store, frozen) {
            z.clone()
        } else {
            self.encode(frozen, x)
        };
        let zq_stop = self.embedding(frozen, k);
        let de = self.dec_e.forward(store, z);
        let dq = self.dec_q.forward(store, zq);
        let hood = grid.neighborhood(k);

        let mut t = LossTerms {
            recon_e: sq_dist(x, &de.output),
            recon_q: sq_dist(x, &dq.output),
            commit: w.commit * sq_dist(z, zq_stop),
            som: w.som
                * hood
                    .iter()
                    .map(|&j| sq_dist(&z_stop, self.embedding(store, j)))
                    .sum::<f64>(),
            ..LossTerms::default()
        };
        if let Some(p) = prev {
            let row = transition.row(p);
            t.transition = -w.transition * row[k].max(crate::diffkern::PROB_CLIP).ln();
            t.smooth = w.smooth
                * (0..self.k)
                    .map(|j| row[j] * sq_dist(z, self.embedding(store, j)))
                    .sum::<f64>();
        }
        t.total = t.recon_e + t.recon_q + t.commit + t.som + t.transition + t.smooth;

        if let Some((g, scale)) = grads {
            let d = self.latent_dim;
            let mut gz = vec![0.0; d];
            let mut gemb = vec![0.0; self.k * d];

            let ge: Vec<f64> = de.output.iter().zip(x).map(|(o, xi)| 2.0 * scale * (o - xi)).collect();
            let back = self.dec_e.backward(store, &de, &ge, g);
            gz.iter_mut().zip(&back).for_each(|(a, b)| *a += b);

            let gq: Vec<f64> = dq.output.iter().zip(x).map(|(o, xi)| 2.0 * scale * (o - xi)).collect();
            let back = self.dec_q.backward(store, &dq, &gq, g);
            gemb[k * d..(k + 1) * d]
                .iter_mut()
                .zip(&back)
                .for_each(|(a, b)| *a += b);

            for i in 0..d {
                gz[i] += 2.0 * scale * w.commit * (z[i] - zq_stop[i]);
            }
            for &j in &hood {
                let e = self.embedding(store, j);
                for i in 0..d {
                    gemb[j * d + i] += 2.0 * scale * w.som * (e[i] - z_stop[i]);
                }
            }
            if let Some(p) = prev {
                let row = transition.row(p);
                for j in 0..self.k {
                    let e = self.embedding(store, j);
                    let c = 2.0 * scale * w.smooth * row[j];
                    for i in 0..d {
                        gz[i] += c * (z[i] - e[i]);
                        gemb[j * d + i] += c * (e[i] - z[i]);
                    }
                }
            }
            g.get_mut(self.embeddings)
                .iter_mut()
                .zip(&gemb)
                .for_each(|(a, b)| *a += b);
            self.encoder.backward(store, &enc, &gz, g);
        }
        (t, k)
    }

    /// Reconstruction through `z_e` only, used during warm-up.
    fn recon_loss(&self, store: &ParamStore, x: &[f64], grads: &mut Gradients, scale: f64) -> f64 {
        let enc = self.encoder.forward(store, x);
        let de = self.dec_e.forward(store, &enc.output);
        let ge: Vec<f64> = de.output.iter().zip(x).map(|(o, xi)| 2.0 * scale * (o - xi)).collect();
        let gz = self.dec_e.backward(store, &de, &ge, grads);
        self.encoder.backward(store, &enc, &gz, grads);
        sq_dist(x, &de.output)
    }
}

/// Row-stochastic transition estimate
/// `(count(i→j) + laplace) / (count(i→·) + laplace·K)`.
/// Rows with no outgoing transitions and `laplace = 0` are uniform.
pub fn fit_transition(traces: &[AssignmentTrace], k: usize, laplace: f64) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    if !(laplace >= 0.0) {
        return Err(Error::validation("laplace must be non-negative"));
    }
    let mut counts = Matrix::zeros(k, k);
    for tr in traces {
        if let Some(&bad) = tr.ids.iter().find(|&&i| i >= k) {
            return Err(Error::validation(format!("node {bad} is outside 0..{k}")));
        }
        for w in tr.ids.windows(2) {
            counts.set(w[0], w[1], counts.get(w[0], w[1]) + 1.0);
        }
    }
    for i in 0..k {
        let row = counts.row_mut(i);
        let total: f64 = row.iter().sum::<f64>() + laplace * k as f64;
        for v in row.iter_mut() {
            *v = if total > 0.0 {
                (*v + laplace) / total
            } else {
                1.0 / k as f64
            };
        }
    }
    Ok(counts)
}

/// A trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SomVaeState", try_from = "SomVaeState")]
pub struct SomVaeModel {
    pub config: SomVaeConfig,
    pub params: ParamStore,
    pub net: SomVaeNet,
    pub transition: Matrix,
    /// Mean per-timestep reconstruction loss of each warm-up epoch.
    pub warmup_history: Vec<f64>,
    /// Mean per-timestep total loss of each training epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SomVaeState {
    format_version: u32,
    input_dim: usize,
    #[serde(flatten)]
    config: SomVaeConfig,
    params: ParamStore,
    transition: Matrix,
    warmup_history: Vec<f64>,
    loss_history: Vec<f64>,
}

impl From<SomVaeModel> for SomVaeState {
    fn from(m: SomVaeModel) -> Self {
        SomVaeState {
            format_version: FORMAT_VERSION,
            input_dim: m.net.input_dim,
            config: m.config,
            params: m.params,
            transition: m.transition,
            warmup_history: m.warmup_history,
            loss_history: m.loss_history,
        }
    }
}

impl TryFrom<SomVaeState> for SomVaeModel {
    type Error = Error;

    fn try_from(s: SomVaeState) -> Result<Self> {
        if s.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported SOM-VAE format version {}",
                s.format_version
            )));
        }
        let mut model = SomVaeModel::init(s.input_dim, s.config)?;
        model.params.load_values(&s.params)?;
        let k = model.net.k;
        if s.transition.shape() != (k, k) {
            return Err(Error::validation("transition matrix does not match the grid"));
        }
        model.transition = s.transition;
        model.warmup_history = s.warmup_history;
        model.loss_history = s.loss_history;
        Ok(model)
    }
}

impl SomVaeModel {
    /// Untrained model with a uniform transition matrix.
    pub fn init(input_dim: usize, config: SomVaeConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let net = SomVaeNet::build(&mut params, input_dim, &config)?;
        let k = net.k;
        Ok(SomVaeModel {
            config,
            params,
            net,
            transition: Matrix::filled(k, k, 1.0 / k as f64),
            warmup_history: Vec::new(),
            loss_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.net.k
    }

    pub fn grid(&self) -> SomGrid {
        self.config.grid()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.net.encode(&self.params, x)
    }

    /// Nearest node and its embedding.
    pub fn quantize(&self, z: &[f64]) -> (usize, Vec<f64>) {
        let k = quantize(z, self.params.value(self.net.embeddings));
        (k, self.net.embedding(&self.params, k).to_vec())
    }

    /// Node embeddings as a K×latent matrix.
    pub fn embeddings(&self) -> Matrix {
        Matrix::from_vec(
            self.net.k,
            self.net.latent_dim,
            self.params.value(self.net.embeddings).to_vec(),
        )
        .expect("embedding shape")
    }

    /// Loss terms of one timestep at the current parameters.
    pub fn loss(&self, x: &[f64], prev: Option<usize>) -> LossTerms {
        let grid = self.grid();
        self.net
            .loss(
                &self.params,
                &self.params,
                &grid,
                x,
                prev,
                &self.transition,
                &self.config.loss_weights,
                None,
            )
            .0
    }

    pub fn assign(&self, series: &Matrix) -> Result<AssignmentTrace> {
        if series.cols() != self.net.input_dim {
            return Err(Error::validation(format!(
                "series has {} channels, model expects {}",
                series.cols(),
                self.net.input_dim
            )));
        }
        Ok(AssignmentTrace::new(
            series.iter_rows().map(|x| self.quantize(&self.encode(x)).0).collect(),
        ))
    }
}

/// Per-timestep encode and quantize.
pub fn somvae_assign(model: &SomVaeModel, series: &Matrix) -> Result<AssignmentTrace> {
    model.assign(series)
}

fn check_series(series: &[Matrix]) -> Result<usize> {
    let first = series
        .first()
        .ok_or_else(|| Error::validation("training needs at least one series"))?;
    if first.rows() == 0 || series.iter().any(|s| s.cols() != first.cols() || s.rows() == 0) {
        return Err(Error::validation(
            "series must be non-empty with a common channel count",
        ));
    }
    if series.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("series must be finite"));
    }
    Ok(first.cols())
}

/// Unsupervised training: reconstruction warm-up, k-means++ seeding of the
/// node embeddings on warm-up codes, then minibatch epochs of the full loss
/// with the transition matrix re-estimated after every epoch.
pub fn somvae_train(series: &[Matrix], config: SomVaeConfig) -> Result<SomVaeModel> {
    let input_dim = check_series(series)?;
    let mut model = SomVaeModel::init(input_dim, config)?;
    let cfg = model.config.clone();
    let grid = cfg.grid();
    let net = model.net;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..series.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, 1);
    let mut grads = model.params.zero_grads();

    for epoch in 0..cfg.warmup_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let steps: usize = batch.iter().map(|&i| series[i].rows()).sum();
            let scale = 1.0 / steps as f64;
            for &i in batch {
                for x in series[i].iter_rows() {
                    sum += net.recon_loss(&model.params, x, &mut grads, scale);
                }
            }
            count += steps;
            model.params.optimizer_step(&mut grads, &adam)?;
        }
        let mean = sum / count as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "somvae warm-up",
                index: epoch,
            });
        }
        model.warmup_history.push(mean);
    }

    let codes: Vec<Vec<f64>> = series
        .iter()
        .flat_map(|s| s.iter_rows().map(|x| net.encode(&model.params, x)).collect::<Vec<_>>())
        .collect();
    let (centroids, _) = kmeans_vectors(&codes, net.k, rng::derive_seed(cfg.seed, 2), 10)?;
    let emb = model.params.value_mut(net.embeddings);
    for (j, c) in centroids.iter().enumerate() {
        emb[j * net.latent_dim..(j + 1) * net.latent_dim].copy_from_slice(c);
    }
    let traces = series.iter().map(|s| model.assign(s)).collect::<Result<Vec<_>>>()?;
    model.transition = fit_transition(&traces, net.k, cfg.laplace)?;
    model.params.reset_optimizer();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let steps: usize = batch.iter().map(|&i| series[i].rows()).sum();
            let scale = 1.0 / steps as f64;
            for &i in batch {
                let mut prev = None;
                for x in series[i].iter_rows() {
                    let (terms, k) = net.loss(
                        &model.params,
                        &model.params,
                        &grid,
                        x,
                        prev,
                        &model.transition,
                        &cfg.loss_weights,
                        Some((&mut grads, scale)),
                    );
                    sum += terms.total;
                    prev = Some(k);
                }
            }
            count += steps;
            model.params.optimizer_step(&mut grads, &adam)?;
        }
        let mean = sum / count as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "somvae",
                index: epoch,
            });
        }
        model.loss_history.push(mean);
        let traces = series.iter().map(|s| model.assign(s)).collect::<Result<Vec<_>>>()?;
        model.transition = fit_transition(&traces, net.k, cfg.laplace)?;
    }
    Ok(model)
}
