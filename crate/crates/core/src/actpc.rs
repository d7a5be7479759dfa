//! Actor-critic temporal phenotype clustering.
//!
//! A recurrent encoder summarizes each history prefix into a state `h_t`.
//! The selector (actor) maps `h_t` to a distribution over K clusters, a
//! cluster is sampled, and the predictor (critic) maps that cluster's
//! embedding to outcome probabilities. All prediction losses use the
//! class-prior weighted cross-entropy `−Σ_c (1/α_c) y_c ln p_c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cohort::{ClassPrior, Outcome, OutcomeLabel, N_OUTCOMES};
use crate::diffkern::{
    entropy_logit_grad, softmax, softmax_backward, softmax_ce_with_weights, AdamConfig, Dense, Gradients, GruCell,
    GruStep, ParamId, ParamStore, Tensor,
};
use crate::rng::{self, Rng};
use crate::trace::AssignmentTrace;
use crate::tskm::kmeans_vectors;
use crate::{Error, Matrix, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActpcConfig {
    pub k: usize,
    pub hidden: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Epochs fitting the selector to the initial k-means assignments.
    pub selector_epochs: usize,
    pub epochs: usize,
    /// Patients per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    pub subseq_per_patient: usize,
    pub weight_entropy_sample: f64,
    pub weight_entropy_batch: f64,
    /// Weight of the state-to-outcome prediction loss kept during main training.
    pub weight_direct: f64,
    pub init_restarts: usize,
    pub seed: u64,
}

impl Default for ActpcConfig {
    fn default() -> Self {
        ActpcConfig {
            k: 4,
            hidden: 16,
            pretrain_epochs: 15,
            pretrain_lr: 3e-3,
            selector_epochs: 5,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            subseq_per_patient: 4,
            weight_entropy_sample: 0.1,
            weight_entropy_batch: 1.0,
            weight_direct: 1.0,
            init_restarts: 5,
            seed: 0,
        }
    }
}

impl ActpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::validation("AC-TPC needs K >= 2"));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.subseq_per_patient == 0 {
            return Err(Error::validation(
                "hidden size, batch size and subsequences must be positive",
            ));
        }
        let nonneg = [
            self.weight_entropy_sample,
            self.weight_entropy_batch,
            self.weight_direct,
        ];
        if nonneg.iter().any(|w| !(*w >= 0.0)) || !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) {
            return Err(Error::validation(
                "AC-TPC weights must be non-negative and learning rates positive",
            ));
        }
        Ok(())
    }
}

/// Layer handles into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActpcNet {
    pub encoder: GruCell,
    pub selector: Dense,
    pub predictor: Dense,
    pub embeddings: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub n_classes: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `l(y, p) = −Σ_c (1/α_c)·y_c·ln p_c` with `p` clipped below.
pub fn weighted_loss(y: OutcomeLabel, p: &[f64], alpha: &ClassPrior) -> Result<f64> {
    crate::diffkern::cross_entropy_weighted(&y.one_hot(), p, alpha.alpha())
}

/// Draws an index from `p` with one uniform variate.
pub fn sample_cluster(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
}

/// Score-function estimate of `∇_z E_{k∼softmax(z)}[l_k]` from one draw:
/// `(l_k − b)·(e_k − π)`.
pub fn score_function_sample(probs: &[f64], k: usize, loss: f64, baseline: f64) -> Vec<f64> {
    let a = loss - baseline;
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| a * (if j == k { 1.0 } else { 0.0 } - p))
        .collect()
}

/// Exact `∇_z Σ_k π_k l_k` with `π = softmax(z)`, by enumerating clusters.
pub fn score_function_expectation(probs: &[f64], losses: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    for (k, (&pk, &lk)) in probs.iter().zip(losses).enumerate() {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += pk * lk * (if j == k { 1.0 } else { 0.0 } - probs[j]);
        }
    }
    g
}

impl ActpcNet {
    pub fn build(store: &mut ParamStore, input_dim: usize, n_classes: usize, config: &ActpcConfig) -> Result<Self> {
        let mut rng = rng::stream(config.seed, 0);
        let h = config.hidden;
        Ok(ActpcNet {
            encoder: GruCell::new(store, "encoder", input_dim, h, &mut rng)?,
            selector: Dense::new(store, "selector", h, config.k, &mut rng)?,
            predictor: Dense::new(store, "predictor", h, n_classes, &mut rng)?,
            embeddings: store.add("embeddings", Tensor::zeros(&[config.k, h])?)?,
            input_dim,
            hidden: h,
            k: config.k,
            n_classes,
        })
    }

    /// Recurrent fold over the first `upto` rows of `x` from `h_0 = 0`.
    pub fn encode_steps(&self, store: &ParamStore, x: &Matrix, upto: usize) -> Vec<GruStep> {
        let mut steps: Vec<GruStep> = Vec::with_capacity(upto);
        let mut h = vec![0.0; self.hidden];
        for row in x.iter_rows().take(upto) {
            let step = self.encoder.forward(store, row, &h);
            h.clone_from(&step.h);
            steps.push(step);
        }
        steps
    }

    /// `h_t` for every prefix length `t = 1..=T`.
    pub fn states(&self, store: &ParamStore, x: &Matrix) -> Vec<Vec<f64>> {
        self.encode_steps(store, x, x.rows()).into_iter().map(|s| s.h).collect()
    }

    pub fn policy(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        softmax(&self.selector.forward(store, h))
    }

    pub fn embedding<'a>(&self, store: &'a ParamStore, k: usize) -> &'a [f64] {
        &store.value(self.embeddings)[k * self.hidden..(k + 1) * self.hidden]
    }

    /// Backpropagates per-step state gradients through the recurrence.
    pub fn backprop_states(&self, store: &ParamStore, steps: &[GruStep], grad_h: &[Vec<f64>], grads: &mut Gradients) {
        let mut carry = vec![0.0; self.hidden];
        for t in (0..steps.len()).rev() {
            let g: Vec<f64> = carry.iter().zip(&grad_h[t]).map(|(a, b)| a + b).collect();
            carry = self.encoder.backward(store, &steps[t], &g, grads).1;
        }
    }

    /// Critic loss `l(y, softmax(predictor(e_k)))`; gradients reach the
    /// predictor and embedding `k`.
    pub fn critic_loss(
        &self,
        store: &ParamStore,
        k: usize,
        y: &[f64],
        weights: &[f64],
        grads: Option<(&mut Gradients, f64)>,
    ) -> (f64, Vec<f64>) {
        let e = self.embedding(store, k);
        let (loss, probs, dlogits) = softmax_ce_with_weights(y, &self.predictor.forward(store, e), weights);
        if let Some((g, scale)) = grads {
            let dl: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
            let ge = self.predictor.backward(store, e, &dl, g);
            let d = self.hidden;
            g.get_mut(self.embeddings)[k * d..(k + 1) * d]
                .iter_mut()
                .zip(&ge)
                .for_each(|(a, b)| *a += b);
        }
        (loss, probs)
    }

    /// State-to-outcome loss `l(y, softmax(predictor(h)))`. Returns the loss
    /// and, with `grads`, accumulates predictor gradients and returns `dL/dh`.
    pub fn direct_loss(
        &self,
        store: &ParamStore,
        h: &[f64],
        y: &[f64],
        weights: &[f64],
        grads: Option<(&mut Gradients, f64)>,
    ) -> (f64, Vec<f64>) {
        let (loss, _, dlogits) = softmax_ce_with_weights(y, &self.predictor.forward(store, h), weights);
        match grads {
            Some((g, scale)) => {
                let dl: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
                (loss, self.predictor.backward(store, h, &dl, g))
            }
            None => (loss, vec![0.0; self.hidden]),
        }
    }

    /// Actor surrogate `A·ln π_k(h) + w_s·H(π(h))` for a fixed advantage `A`.
    /// Accumulates selector gradients and returns `dL/dh`.
    #[allow(clippy::too_many_arguments)]
    pub fn actor_surrogate(
        &self,
        store: &ParamStore,
        h: &[f64],
        k: usize,
        advantage: f64,
        w_sample: f64,
        grads: &mut Gradients,
        scale: f64,
    ) -> (f64, Vec<f64>) {
        let pi = self.policy(store, h);
        let value = advantage * pi[k].max(crate::diffkern::PROB_CLIP).ln() + w_sample * crate::diffkern::entropy(&pi);
        let mut g = score_function_sample(&pi, k, advantage, 0.0);
        for (gj, ej) in g.iter_mut().zip(entropy_logit_grad(&pi)) {
            *gj = scale * (*gj + w_sample * ej);
        }
        (value, self.selector.backward(store, h, &g, grads))
    }
}

/// Runs k-means++-seeded Euclidean k-means over encoder states; returns the
/// centroids and per-state assignments.
pub fn init_clusters(states: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut keys: Vec<Vec<u64>> = states.iter().map(|s| s.iter().map(|v| v.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.len() < k {
        return Err(Error::validation(format!(
            "only {} distinct encoder states for K = {k} clusters",
            keys.len()
        )));
    }
    kmeans_vectors(states, k, seed, restarts)
}

/// A trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ActpcState", try_from = "ActpcState")]
pub struct ActpcModel {
    pub config: ActpcConfig,
    pub params: ParamStore,
    pub net: ActpcNet,
    /// Priors used as loss weights (uniform for the unweighted variant).
    pub alpha: ClassPrior,
    pub pretrain_history: Vec<f64>,
    pub selector_history: Vec<f64>,
    /// Mean critic loss of each main-training epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ActpcState {
    format_version: u32,
    input_dim: usize,
    #[serde(flatten)]
    config: ActpcConfig,
    alpha: ClassPrior,
    params: ParamStore,
    pretrain_history: Vec<f64>,
    selector_history: Vec<f64>,
    loss_history: Vec<f64>,
}

impl From<ActpcModel> for ActpcState {
    fn from(m: ActpcModel) -> Self {
        ActpcState {
            format_version: FORMAT_VERSION,
            input_dim: m.net.input_dim,
            config: m.config,
            alpha: m.alpha,
            params: m.params,
            pretrain_history: m.pretrain_history,
            selector_history: m.selector_history,
            loss_history: m.loss_history,
        }
    }
}

impl TryFrom<ActpcState> for ActpcModel {
    type Error = Error;

    fn try_from(s: ActpcState) -> Result<Self> {
        if s.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported AC-TPC format version {}",
                s.format_version
            )));
        }
        let mut m = ActpcModel::init(s.input_dim, s.alpha, s.config)?;
        m.params.load_values(&s.params)?;
        m.pretrain_history = s.pretrain_history;
        m.selector_history = s.selector_history;
        m.loss_history = s.loss_history;
        Ok(m)
    }
}

fn one_hot(o: Outcome) -> Vec<f64> {
    OutcomeLabel::from(o).one_hot()
}

fn check_inputs(series: &[Matrix], labels: &[Outcome]) -> Result<usize> {
    let first = series
        .first()
        .ok_or_else(|| Error::validation("training needs at least one series"))?;
    if series.len() != labels.len() {
        return Err(Error::validation("series and labels must align"));
    }
    if first.rows() == 0
        || series
            .iter()
            .any(|s| s.cols() != first.cols() || s.rows() == 0 || !s.is_finite())
    {
        return Err(Error::validation(
            "series must be finite, non-empty and share a channel count",
        ));
    }
    Ok(first.cols())
}

fn finite_or(mean: f64, stage: &'static str, index: usize) -> Result<f64> {
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::NonFiniteLoss { stage, index })
    }
}

impl ActpcModel {
    /// Untrained model; `alpha` supplies the loss weights.
    pub fn init(input_dim: usize, alpha: ClassPrior, config: ActpcConfig) -> Result<Self> {
        config.validate()?;
        alpha.inverse_weights()?;
        let mut params = ParamStore::new();
        let net = ActpcNet::build(&mut params, input_dim, alpha.n_classes(), &config)?;
        Ok(ActpcModel {
            config,
            params,
            net,
            alpha,
            pretrain_history: Vec::new(),
            selector_history: Vec::new(),
            loss_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.net.k
    }

    fn weights(&self) -> Vec<f64> {
        self.alpha.inverse_weights().expect("priors validated at construction")
    }

    fn check_series(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.net.input_dim {
            return Err(Error::validation(format!(
                "series has {} channels, model expects {}",
                x.cols(),
                self.net.input_dim
            )));
        }
        Ok(())
    }

    /// `h_t` after the first `t` rows.
    pub fn encode_history(&self, x: &Matrix, t: usize) -> Result<Vec<f64>> {
        self.check_series(x)?;
        if t == 0 || t > x.rows() {
            return Err(Error::validation(format!("prefix length {t} outside 1..={}", x.rows())));
        }
        Ok(self.net.encode_steps(&self.params, x, t).pop().expect("t >= 1").h)
    }

    pub fn select(&self, h: &[f64]) -> Vec<f64> {
        self.net.policy(&self.params, h)
    }

    /// Outcome probabilities predicted from cluster `k`'s embedding.
    pub fn predict(&self, k: usize) -> Vec<f64> {
        softmax(
            &self
                .net
                .predictor
                .forward(&self.params, self.net.embedding(&self.params, k)),
        )
    }

    pub fn embeddings(&self) -> Matrix {
        Matrix::from_vec(
            self.net.k,
            self.net.hidden,
            self.params.value(self.net.embeddings).to_vec(),
        )
        .expect("embedding shape")
    }

    /// Argmax cluster per timestep (ties to the lowest id).
    pub fn assign_trace(&self, x: &Matrix) -> Result<AssignmentTrace> {
        self.check_series(x)?;
        Ok(AssignmentTrace::new(
            self.net
                .states(&self.params, x)
                .iter()
                .map(|h| argmax(&self.select(h)))
                .collect(),
        ))
    }

    /// Trains encoder and predictor on `l(y, softmax(predictor(h_t)))` at
    /// every timestep, bypassing selector and embeddings.
    pub fn pretrain(&mut self, series: &[Matrix], labels: &[Outcome]) -> Result<()> {
        check_inputs(series, labels)?;
        let cfg = self.config.clone();
        let (net, w) = (self.net, self.weights());
        let adam = AdamConfig::with_lr(cfg.pretrain_lr);
        let mut order: Vec<usize> = (0..series.len()).collect();
        let mut rng = rng::stream(cfg.seed, 1);
        let mut grads = self.params.zero_grads();
        self.params.reset_optimizer();
        for epoch in 0..cfg.pretrain_epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let steps_total: usize = batch.iter().map(|&i| series[i].rows()).sum();
                let scale = 1.0 / steps_total as f64;
                for &i in batch {
                    let y = one_hot(labels[i]);
                    let steps = net.encode_steps(&self.params, &series[i], series[i].rows());
                    let gh: Vec<Vec<f64>> = steps
                        .iter()
                        .map(|s| {
                            let (l, g) = net.direct_loss(&self.params, &s.h, &y, &w, Some((&mut grads, scale)));
                            sum += l;
                            g
                        })
                        .collect();
                    net.backprop_states(&self.params, &steps, &gh, &mut grads);
                }
                count += steps_total;
                self.params.optimizer_step(&mut grads, &adam)?;
            }
            self.pretrain_history
                .push(finite_or(sum / count as f64, "actpc pretraining", epoch)?);
        }
        Ok(())
    }

    /// Seeds the embeddings with k-means centroids of all encoder states and
    /// returns the per-patient initial assignments.
    pub fn init_clusters(&mut self, series: &[Matrix]) -> Result<Vec<Vec<usize>>> {
        let states: Vec<Vec<Vec<f64>>> = series.iter().map(|x| self.net.states(&self.params, x)).collect();
        let flat: Vec<Vec<f64>> = states.iter().flatten().cloned().collect();
        let (centroids, ids) = init_clusters(
            &flat,
            self.net.k,
            rng::derive_seed(self.config.seed, 3),
            self.config.init_restarts,
        )?;
        let d = self.net.hidden;
        let emb = self.params.value_mut(self.net.embeddings);
        for (j, c) in centroids.iter().enumerate() {
            emb[j * d..(j + 1) * d].copy_from_slice(c);
        }
        let mut out = Vec::with_capacity(series.len());
        let mut offset = 0;
        for s in &states {
            out.push(ids[offset..offset + s.len()].to_vec());
            offset += s.len();
        }
        Ok(out)
    }

    /// Fits the selector alone to reproduce `targets` (cross-entropy).
    pub fn warm_start_selector(&mut self, series: &[Matrix], targets: &[Vec<usize>]) -> Result<()> {
        let cfg = self.config.clone();
        let net = self.net;
        let states: Vec<Vec<Vec<f64>>> = series.iter().map(|x| net.states(&self.params, x)).collect();
        let adam = AdamConfig::with_lr(cfg.pretrain_lr);
        let uniform = vec![1.0; net.k];
        let mut order: Vec<usize> = (0..series.len()).collect();
        let mut rng = rng::stream(cfg.seed, 4);
        let mut grads = self.params.zero_grads();
        self.params.reset_optimizer();
        for epoch in 0..cfg.selector_epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let n: usize = batch.iter().map(|&i| states[i].len()).sum();
                for &i in batch {
                    for (h, &k) in states[i].iter().zip(&targets[i]) {
                        let mut y = vec![0.0; net.k];
                        y[k] = 1.0;
                        let (l, _, dl) = softmax_ce_with_weights(&y, &net.selector.forward(&self.params, h), &uniform);
                        let dl: Vec<f64> = dl.iter().map(|v| v / n as f64).collect();
                        net.selector.backward(&self.params, h, &dl, &mut grads);
                        sum += l;
                    }
                }
                count += n;
                self.params.optimizer_step(&mut grads, &adam)?;
            }
            self.selector_history
                .push(finite_or(sum / count as f64, "actpc selector warm-start", epoch)?);
        }
        Ok(())
    }

    /// Actor-critic epochs over random history prefixes.
    pub fn train_actor_critic(&mut self, series: &[Matrix], labels: &[Outcome]) -> Result<()> {
        check_inputs(series, labels)?;
        let cfg = self.config.clone();
        let (net, w) = (self.net, self.weights());
        let adam = AdamConfig::with_lr(cfg.lr);
        let mut order: Vec<usize> = (0..series.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, 5);
        let mut sample_rng = rng::stream(cfg.seed, 6);
        let mut grads = self.params.zero_grads();
        self.params.reset_optimizer();
        let mut batch_index = 0;

        struct Sample {
            patient: usize,
            t: usize,
            pi: Vec<f64>,
            k: usize,
            loss: f64,
        }

        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                let mut traces = Vec::with_capacity(batch.len());
                let mut samples = Vec::with_capacity(batch.len() * cfg.subseq_per_patient);
                for (b, &i) in batch.iter().enumerate() {
                    let x = &series[i];
                    let steps = net.encode_steps(&self.params, x, x.rows());
                    for _ in 0..cfg.subseq_per_patient {
                        let t = sample_rng.random_range(1..=x.rows());
                        let pi = net.policy(&self.params, &steps[t - 1].h);
                        let k = sample_cluster(&pi, &mut sample_rng);
                        let (loss, _) = net.critic_loss(&self.params, k, &one_hot(labels[i]), &w, None);
                        samples.push(Sample {
                            patient: b,
                            t,
                            pi,
                            k,
                            loss,
                        });
                    }
                    traces.push(steps);
                }
                let s = samples.len() as f64;
                let baseline = samples.iter().map(|x| x.loss).sum::<f64>() / s;
                let mut pbar = vec![0.0; net.k];
                for x in &samples {
                    pbar.iter_mut().zip(&x.pi).for_each(|(a, b)| *a += b / s);
                }
                let dh_dpbar: Vec<f64> = pbar
                    .iter()
                    .map(|p| cfg.weight_entropy_batch * (p.max(crate::diffkern::PROB_CLIP).ln() + 1.0) / s)
                    .collect();

                let mut gh: Vec<Vec<Vec<f64>>> =
                    traces.iter().map(|st| vec![vec![0.0; net.hidden]; st.len()]).collect();
                for x in &samples {
                    let y = one_hot(labels[batch[x.patient]]);
                    net.critic_loss(&self.params, x.k, &y, &w, Some((&mut grads, 1.0 / s)));
                    let h = &traces[x.patient][x.t - 1].h;
                    let (_, mut g) = net.actor_surrogate(
                        &self.params,
                        h,
                        x.k,
                        x.loss - baseline,
                        cfg.weight_entropy_sample,
                        &mut grads,
                        1.0 / s,
                    );
                    let batch_logits = softmax_backward(&x.pi, &dh_dpbar);
                    let gb = net.selector.backward(&self.params, h, &batch_logits, &mut grads);
                    g.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
                    if cfg.weight_direct > 0.0 {
                        let (_, gd) =
                            net.direct_loss(&self.params, h, &y, &w, Some((&mut grads, cfg.weight_direct / s)));
                        g.iter_mut().zip(&gd).for_each(|(a, b)| *a += b);
                    }
                    gh[x.patient][x.t - 1].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                for (steps, g) in traces.iter().zip(&gh) {
                    net.backprop_states(&self.params, steps, g, &mut grads);
                }
                let batch_loss = finite_or(baseline, "actpc", batch_index)?;
                sum += batch_loss * s;
                count += samples.len();
                self.params.optimizer_step(&mut grads, &adam)?;
                batch_index += 1;
            }
            self.loss_history.push(sum / count as f64);
        }
        Ok(())
    }
}

/// Pretraining, cluster initialization, selector warm start and actor-critic
/// training. `priors` supplies α; pass [`ClassPrior::uniform`] for the
/// unweighted variant.
pub fn actpc_train(
    series: &[Matrix],
    labels: &[Outcome],
    priors: &ClassPrior,
    config: ActpcConfig,
) -> Result<ActpcModel> {
    let input_dim = check_inputs(series, labels)?;
    if priors.n_classes() != N_OUTCOMES {
        return Err(Error::validation("priors must cover the four outcomes"));
    }
    let mut model = ActpcModel::init(input_dim, priors.clone(), config)?;
    model.pretrain(series, labels)?;
    let targets = model.init_clusters(series)?;
    model.warm_start_selector(series, &targets)?;
    model.train_actor_critic(series, labels)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkern::grad_check;

    fn small(seed: u64) -> ActpcConfig {
        ActpcConfig {
            k: 2,
            hidden: 4,
            pretrain_epochs: 3,
            selector_epochs: 2,
            epochs: 3,
            batch_size: 4,
            subseq_per_patient: 2,
            seed,
            ..ActpcConfig::default()
        }
    }

    fn toy() -> (Vec<Matrix>, Vec<Outcome>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..12 {
            let level = if i % 2 == 0 { 1.0 } else { -1.0 };
            let rows: Vec<Vec<f64>> = (0..5).map(|t| vec![level, 0.1 * t as f64 * level, 0.3]).collect();
            xs.push(Matrix::from_rows(&rows).unwrap());
            ys.push(if i % 2 == 0 { Outcome::Discharge } else { Outcome::Death });
        }
        (xs, ys)
    }

    fn uniform() -> ClassPrior {
        ClassPrior::uniform(N_OUTCOMES)
    }

    #[test]
    fn zero_selector_is_uniform_and_sampling_reproducible() {
        let mut m = ActpcModel::init(3, uniform(), small(0)).unwrap();
        let (w, b) = (m.net.selector.w, m.net.selector.b);
        m.params.value_mut(w).fill(0.0);
        m.params.value_mut(b).fill(0.0);
        assert_eq!(m.select(&[0.3, -0.1, 0.2, 0.9]), vec![0.5, 0.5]);
        let p = [0.2, 0.5, 0.3];
        let draw = |seed| {
            let mut r = rng::stream(seed, 0);
            (0..20).map(|_| sample_cluster(&p, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn sampling_frequencies_match_policy() {
        let p = [0.1, 0.6, 0.3];
        let mut r = rng::stream(11, 0);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_cluster(&p, &mut r)] += 1;
        }
        for (c, q) in counts.iter().zip(p) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.01);
        }
    }

    #[test]
    fn encoder_bounds_and_prefix_fold() {
        let m = ActpcModel::init(3, uniform(), small(1)).unwrap();
        let (xs, _) = toy();
        let all = m.net.states(&m.params, &xs[0]);
        for t in 1..=5 {
            assert_eq!(m.encode_history(&xs[0], t).unwrap(), all[t - 1]);
        }
        assert!(all.iter().flatten().all(|v| v.abs() < 1.0));
        assert!(m.encode_history(&xs[0], 0).is_err());

        let mut zero = m.clone();
        for id in zero.params.ids().collect::<Vec<_>>() {
            zero.params.value_mut(id).fill(0.0);
        }
        assert!(zero
            .net
            .states(&zero.params, &xs[0])
            .iter()
            .flatten()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn score_function_identities() {
        let p = softmax(&[0.3, -0.4]);
        let l = [2.0, 5.0];
        let exact = score_function_expectation(&p, &l);
        let mean: Vec<f64> = (0..2)
            .map(|j| (0..2).map(|k| p[k] * score_function_sample(&p, k, l[k], 1.5)[j]).sum())
            .collect();
        for j in 0..2 {
            assert!((exact[j] - mean[j]).abs() < 1e-15);
        }
        // d/dz0 of p0·l0 + p1·l1 = p0·p1·(l0 − l1)
        assert!((exact[0] - p[0] * p[1] * (l[0] - l[1])).abs() < 1e-15);
    }

    fn check<F>(mut m: ActpcModel, f: F) -> f64
    where
        F: FnMut(&ParamStore, &mut Gradients) -> Result<f64>,
    {
        grad_check(f, &mut m.params, 1e-5).unwrap().max_rel_error
    }

    fn randomized(seed: u64) -> ActpcModel {
        let mut m = ActpcModel::init(
            3,
            ClassPrior::from_alpha(vec![0.7, 0.1, 0.05, 0.15]).unwrap(),
            small(seed),
        )
        .unwrap();
        let mut r = rng::stream(seed, 77);
        let e = m.net.embeddings;
        m.params
            .value_mut(e)
            .iter_mut()
            .for_each(|v| *v = r.random_range(-1.0..1.0));
        m
    }

    #[test]
    fn gradient_paths_match_finite_differences() {
        let (xs, _) = toy();
        for seed in 0..3 {
            let m = randomized(seed);
            let (net, w) = (m.net, m.weights());
            let y = one_hot(Outcome::CardiacArrest);
            let err = check(m.clone(), |s, g| Ok(net.critic_loss(s, 1, &y, &w, Some((g, 1.0))).0));
            assert!(err < 1e-4, "critic {err}");
            let x = xs[seed as usize].clone();
            let err = check(m.clone(), |s, g| {
                let steps = net.encode_steps(s, &x, 4);
                let (l, gh) = net.direct_loss(s, &steps[3].h, &y, &w, Some((g, 1.0)));
                let mut all = vec![vec![0.0; net.hidden]; 4];
                all[3] = gh;
                net.backprop_states(s, &steps, &all, g);
                Ok(l)
            });
            assert!(err < 1e-4, "direct {err}");
            let err = check(m.clone(), |s, g| {
                let steps = net.encode_steps(s, &x, 3);
                let (l, gh) = net.actor_surrogate(s, &steps[2].h, 1, 0.7, 0.1, g, 1.0);
                let mut all = vec![vec![0.0; net.hidden]; 3];
                all[2] = gh;
                net.backprop_states(s, &steps, &all, g);
                Ok(l)
            });
            assert!(err < 1e-4, "actor {err}");
        }
    }

    #[test]
    fn init_clusters_examples() {
        let states = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0]];
        let (c, a) = init_clusters(&states, 2, 3, 3).unwrap();
        assert_eq!(a[0], a[1]);
        assert_ne!(a[0], a[2]);
        assert!((c[a[0]][0] - 0.05).abs() < 1e-12);
        let (c, _) = init_clusters(&states, 1, 3, 1).unwrap();
        assert!((c[0][0] - 2.55).abs() < 1e-12 && (c[0][1] - 2.5).abs() < 1e-12);
        assert!(init_clusters(&vec![vec![1.0, 1.0]; 5], 2, 0, 1).is_err());
    }

    #[test]
    fn pretraining_starts_at_uniform_loss() {
        // Zero predictor under uniform priors: −(1/0.25)·ln(1/4) per step.
        let (xs, ys) = toy();
        let mut model = ActpcModel::init(3, uniform(), small(2)).unwrap();
        let (net, pred) = (model.net, model.net.predictor);
        model.params.value_mut(pred.w).fill(0.0);
        model.params.value_mut(pred.b).fill(0.0);
        let h = net.states(&model.params, &xs[0]);
        let (l, _) = net.direct_loss(&model.params, &h[0], &one_hot(ys[0]), &model.weights(), None);
        assert!((l - 4.0 * 4f64.ln()).abs() < 1e-12);
        model.pretrain(&xs, &ys).unwrap();
        let hist = &model.pretrain_history;
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn training_is_deterministic_and_traces_are_valid() {
        let (xs, ys) = toy();
        let a = actpc_train(&xs, &ys, &uniform(), small(3)).unwrap();
        let b = actpc_train(&xs, &ys, &uniform(), small(3)).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
        let tr = a.assign_trace(&xs[0]).unwrap();
        assert_eq!(tr.len(), 5);
        assert!(tr.ids.iter().all(|&k| k < 2));
        let json = serde_json::to_string(&a).unwrap();
        let back: ActpcModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.assign_trace(&xs[1]).unwrap(), a.assign_trace(&xs[1]).unwrap());
        assert_eq!(back.alpha, a.alpha);
    }

    #[test]
    fn weighted_loss_examples() {
        let two = ClassPrior::from_alpha(vec![0.5, 0.5]).unwrap();
        let y = OutcomeLabel::new(0, 2).unwrap();
        assert_eq!(weighted_loss(y, &[1.0, 0.0], &two).unwrap(), 0.0);
        assert!((weighted_loss(y, &[0.5, 0.5], &two).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let imb = ClassPrior::from_alpha(vec![0.939, 0.030, 0.011, 0.020]).unwrap();
        let l = weighted_loss(Outcome::Death.into(), &[0.25; 4], &imb).unwrap();
        assert!((l - 4f64.ln() / 0.020).abs() < 1e-9);
    }

    #[test]
    fn batch_entropy_keeps_mean_policy_near_uniform() {
        let (xs, ys) = toy();
        let cfg = ActpcConfig {
            epochs: 1,
            weight_entropy_batch: 50.0,
            ..small(5)
        };
        let mut m = ActpcModel::init(3, uniform(), cfg).unwrap();
        m.init_clusters(&xs).unwrap();
        m.train_actor_critic(&xs, &ys).unwrap();
        let mut mean = vec![0.0; 2];
        let mut n = 0.0;
        for x in &xs {
            for h in m.net.states(&m.params, x) {
                m.select(&h).iter().zip(mean.iter_mut()).for_each(|(p, a)| *a += p);
                n += 1.0;
            }
        }
        assert!(mean.iter().all(|a| (a / n - 0.5).abs() < 0.1), "{mean:?}");
    }

    #[test]
    fn constant_input_gives_constant_trace_tail() {
        let (xs, ys) = toy();
        let m = actpc_train(&xs, &ys, &uniform(), small(6)).unwrap();
        let x = Matrix::from_rows(&vec![vec![0.5, -0.2, 0.1]; 60]).unwrap();
        let tr = m.assign_trace(&x).unwrap();
        assert!(tr.ids[40..].iter().all(|&k| k == tr.ids[59]));
    }

    #[test]
    fn zero_prior_rejected() {
        let alpha = ClassPrior::from_alpha(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(ActpcModel::init(3, alpha, small(0)).is_err());
    }
}
