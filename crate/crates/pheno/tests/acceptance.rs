//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pheno --test acceptance`; pass criterion numbers
//! (e.g. `-- 1 5`) to run a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use pheno::cli::{execute, Cli};
use pheno_core::actpc::{sample_cluster, score_function_sample, weighted_loss, ActpcConfig, ActpcModel};
use pheno_core::cohort::{ClassPrior, OutcomeLabel};
use pheno_core::diffkern::{
    grad_check, softmax_ce_with_weights, softmax_cross_entropy_weighted, Dense, GruCell, ParamStore,
};
use pheno_core::dtw::{dtw_distance, Metric};
use pheno_core::eval::{auroc_binary, average_precision, nmi};
use pheno_core::preprocess::{PreprocessConfig, Preprocessor};
use pheno_core::rng::{self, Rng};
use pheno_core::somvae::{fit_transition, SomVaeConfig, SomVaeModel};
use pheno_core::synth::{generate, make_separable_preset, Separability};
use pheno_core::trace::{final_cluster, AssignmentTrace};
use pheno_core::tskm::{elbow_select, inertia_curve, tskm_fit_best, MAX_ITER};
use pheno_core::Matrix;
use rand::Rng as _;

type WarpPath = Vec<(usize, usize)>;
type GradSuite = (&'static str, fn(u64) -> f64);
type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn frame_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every monotone warping path from (0,0) to (n−1,m−1).
fn all_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((i, j));
        if (i, j) == (n - 1, m - 1) {
            out.push(cur.clone());
        } else {
            if i + 1 < n && j + 1 < m {
                walk(i + 1, j + 1, n, m, cur, out);
            }
            if i + 1 < n {
                walk(i + 1, j, n, m, cur, out);
            }
            if j + 1 < m {
                walk(i, j + 1, n, m, cur, out);
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, n, m, &mut Vec::new(), &mut out);
    out
}

fn path_cost(a: &Matrix, b: &Matrix, path: &[(usize, usize)]) -> f64 {
    path.iter().map(|&(i, j)| frame_sq(a.row(i), b.row(j))).sum()
}

/// Minimum squared DTW cost over all paths, and the first minimizing path.
fn brute_dtw(a: &Matrix, b: &Matrix, paths: &[Vec<(usize, usize)>]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (p, path) in paths.iter().enumerate() {
        let c = path_cost(a, b, path);
        if c < best.0 {
            best = (c, p);
        }
    }
    best
}

fn c1_dtw() -> Verdict {
    let mut r = rng::stream(101, 0);
    let mut worst: f64 = 0.0;
    let mut cache: BTreeMap<(usize, usize), Vec<WarpPath>> = BTreeMap::new();
    for _ in 0..200 {
        let d = r.random_range(1..=3);
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let (a, b) = (random_matrix(&mut r, n, d), random_matrix(&mut r, m, d));
        let paths = cache.entry((n, m)).or_insert_with(|| all_paths(n, m));
        let oracle = brute_dtw(&a, &b, paths).0.sqrt();
        worst = worst.max((dtw_distance(&a, &b, None).unwrap() - oracle).abs());
    }
    verdict(worst <= 1e-9, format!("200 pairs, max |error| {worst:.2e}"))
}

/// Set partitions of `0..n` into exactly `k` blocks, as block bitmasks.
fn partitions(n: usize, k: usize) -> Vec<Vec<u32>> {
    fn grow(i: usize, n: usize, k: usize, blocks: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == n {
            if blocks.len() == k {
                out.push(blocks.clone());
            }
            return;
        }
        if blocks.len() + (n - i) < k {
            return;
        }
        for b in 0..blocks.len() {
            blocks[b] |= 1 << i;
            grow(i + 1, n, k, blocks, out);
            blocks[b] &= !(1 << i);
        }
        if blocks.len() < k {
            blocks.push(1 << i);
            grow(i + 1, n, k, blocks, out);
            blocks.pop();
        }
    }
    let mut out = Vec::new();
    grow(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn members(series: &[Matrix], mask: u32) -> Vec<&Matrix> {
    (0..series.len())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| &series[i])
        .collect()
}

fn elementwise_mean(ms: &[&Matrix]) -> Matrix {
    let (t, d) = ms[0].shape();
    let mut out = vec![0.0; t * d];
    for m in ms {
        out.iter_mut().zip(m.as_slice()).for_each(|(o, v)| *o += v);
    }
    Matrix::from_vec(t, d, out.into_iter().map(|v| v / ms.len() as f64).collect()).unwrap()
}

fn euclid_block(ms: &[&Matrix]) -> f64 {
    let c = elementwise_mean(ms);
    ms.iter().map(|m| frame_sq(m.as_slice(), c.as_slice())).sum()
}

/// Barycenter averaging with exhaustive alignment, run until the alignments
/// stop changing; returns the final cost.
fn dba_fixpoint(ms: &[&Matrix], init: &Matrix, paths: &[Vec<(usize, usize)>]) -> f64 {
    let mut center = init.clone();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..500 {
        let aligned: Vec<(f64, usize)> = ms.iter().map(|m| brute_dtw(m, &center, paths)).collect();
        let ids: Vec<usize> = aligned.iter().map(|a| a.1).collect();
        if ids == chosen {
            return aligned.iter().map(|a| a.0).sum();
        }
        chosen = ids;
        let (t, d) = center.shape();
        let mut sums = vec![0.0; t * d];
        let mut counts = vec![0usize; t];
        for (m, &p) in ms.iter().zip(&chosen) {
            for &(i, j) in &paths[p] {
                sums[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(m.row(i))
                    .for_each(|(s, v)| *s += v);
                counts[j] += 1;
            }
        }
        for j in 0..t {
            sums[j * d..(j + 1) * d].iter_mut().for_each(|s| *s /= counts[j] as f64);
        }
        center = Matrix::from_vec(t, d, sums).unwrap();
    }
    ms.iter().map(|m| brute_dtw(m, &center, paths).0).sum()
}

fn dtw_block(ms: &[&Matrix], paths: &[Vec<(usize, usize)>]) -> f64 {
    let mean = elementwise_mean(ms);
    ms.iter()
        .copied()
        .chain(std::iter::once(&mean))
        .map(|init| dba_fixpoint(ms, init, paths))
        .fold(f64::INFINITY, f64::min)
}

fn optimal_partition(series: &[Matrix], k: usize, block: impl Fn(&[&Matrix]) -> f64) -> f64 {
    let mut memo: BTreeMap<u32, f64> = BTreeMap::new();
    let mut best = f64::INFINITY;
    for p in partitions(series.len(), k) {
        let total: f64 = p
            .iter()
            .map(|&mask| *memo.entry(mask).or_insert_with(|| block(&members(series, mask))))
            .sum();
        best = best.min(total);
    }
    best
}

fn c2_kmeans() -> Verdict {
    let mut r = rng::stream(202, 0);
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let n = r.random_range(2..=8);
        let t = r.random_range(1..=4);
        let d = r.random_range(1..=2);
        let k = r.random_range(1..=n.min(4));
        // planted groups: uniform centers in [-3, 3], members within ±0.3
        let centers: Vec<Matrix> = (0..k).map(|_| random_matrix(&mut r, t, d)).collect();
        let series: Vec<Matrix> = (0..n)
            .map(|i| {
                let c = &centers[if i < k { i } else { r.random_range(0..k) }];
                let v = c
                    .as_slice()
                    .iter()
                    .map(|x| 3.0 * x + r.random_range(-0.3..0.3))
                    .collect();
                Matrix::from_vec(t, d, v).unwrap()
            })
            .collect();
        let paths = all_paths(t, t);
        for (name, metric) in [("euclid", Metric::Euclidean), ("dtw", Metric::dtw())] {
            let oracle = match metric {
                Metric::Euclidean => optimal_partition(&series, k, euclid_block),
                _ => optimal_partition(&series, k, |ms| dtw_block(ms, &paths)),
            };
            let got = tskm_fit_best(&series, k, metric, inst, MAX_ITER, 5)
                .unwrap()
                .model
                .inertia;
            let err = (got - oracle).abs();
            worst = worst.max(err);
            if err > 1e-9 {
                fails.push(format!(
                    "#{inst} {name} N={n} T={t} D={d} K={k}: {got:.6} vs {oracle:.6}"
                ));
            }
        }
    }
    let mut detail = format!(
        "50 planted-group instances x 2 metrics, {} mismatched, max |error| {worst:.2e}",
        fails.len()
    );
    if !fails.is_empty() {
        detail.push_str(&format!("; first: {}", fails[..fails.len().min(3)].join("; ")));
    }
    verdict(fails.is_empty(), detail)
}

fn c3_elbow() -> Verdict {
    let curve: Vec<(usize, f64)> = [100.0, 70.0, 45.0, 15.0, 13.0, 12.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| (i + 1, v))
        .collect();
    let tabulated = elbow_select(&curve).unwrap();
    let synth = generate(&make_separable_preset(Separability::Easy, 200, 7)).unwrap();
    let (_, data) = Preprocessor::fit(&synth.cohort, PreprocessConfig::default()).unwrap();
    let ks: Vec<usize> = (1..=8).collect();
    let curve = inertia_curve(&data.matrices(), &ks, Metric::dtw(), 7, 5).unwrap();
    let preset = elbow_select(&curve).unwrap();
    verdict(
        tabulated == 4 && preset == 4,
        format!("tabulated curve -> {tabulated}, easy preset (n=200, seed 7, DTW) -> {preset}"),
    )
}

fn c4_weighted_loss() -> Verdict {
    let two = |a: f64, b: f64| ClassPrior::from_alpha(vec![a, b]).unwrap();
    let y0 = OutcomeLabel::new(0, 2).unwrap();
    let y1 = OutcomeLabel::new(1, 2).unwrap();
    let ln2 = 2f64.ln();
    let cases = [
        (weighted_loss(y0, &[1.0, 0.0], &two(0.5, 0.5)).unwrap(), 0.0),
        (weighted_loss(y0, &[0.5, 0.5], &two(0.5, 0.5)).unwrap(), 2.0 * ln2),
        (weighted_loss(y1, &[0.5, 0.5], &two(0.9, 0.1)).unwrap(), 10.0 * ln2),
    ];
    let tab = cases.iter().map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
    let mut r = rng::stream(404, 0);
    let mut uni: f64 = 0.0;
    for _ in 0..100 {
        let c = r.random_range(2..=6);
        let raw: Vec<f64> = (0..c).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let y = r.random_range(0..c);
        let got = weighted_loss(OutcomeLabel::new(y, c).unwrap(), &p, &ClassPrior::uniform(c)).unwrap();
        uni = uni.max((got - c as f64 * -p[y].ln()).abs());
    }
    verdict(
        tab <= 1e-9 && uni <= 1e-9,
        format!("tabulated max |error| {tab:.2e}; uniform-prior max |error| {uni:.2e} over 100 draws"),
    )
}

fn perturb(store: &mut ParamStore, r: &mut Rng, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        store
            .value_mut(id)
            .iter_mut()
            .for_each(|v| *v += r.random_range(-scale..scale));
    }
}

fn random_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn random_alpha(r: &mut Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn one_hot(c: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| if j == c { 1.0 } else { 0.0 }).collect()
}

const EPS: f64 = 1e-5;

fn gc_dense(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 51);
    let (i, o) = (r.random_range(1..=5), r.random_range(1..=5));
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", i, o, &mut r).unwrap();
    perturb(&mut store, &mut r, 0.3);
    let x = random_vec(&mut r, i);
    let target = random_vec(&mut r, o);
    grad_check(
        |s, g| {
            let y = d.forward(s, &x);
            let gy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            d.backward(s, &x, &gy, g);
            Ok(frame_sq(&y, &target))
        },
        &mut store,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

fn gc_gru(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 52);
    let (i, h, steps) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=4));
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", i, h, &mut r).unwrap();
    perturb(&mut store, &mut r, 0.3);
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut r, i)).collect();
    let h0 = random_vec(&mut r, h);
    let target = random_vec(&mut r, h);
    grad_check(
        |s, g| {
            let mut trace = Vec::new();
            let mut hc = h0.clone();
            for x in &xs {
                let st = cell.forward(s, x, &hc);
                hc.clone_from(&st.h);
                trace.push(st);
            }
            let mut gh: Vec<f64> = hc.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            for st in trace.iter().rev() {
                gh = cell.backward(s, st, &gh, g).1;
            }
            Ok(frame_sq(&hc, &target))
        },
        &mut store,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

fn gc_softmax_ce(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 53);
    let (i, c) = (r.random_range(1..=5), r.random_range(2..=5));
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", i, c, &mut r).unwrap();
    perturb(&mut store, &mut r, 0.3);
    let x = random_vec(&mut r, i);
    let alpha = random_alpha(&mut r, c);
    let y = one_hot(r.random_range(0..c), c);
    grad_check(
        |s, g| {
            let (loss, _, gz) = softmax_cross_entropy_weighted(&y, &d.forward(s, &x), &alpha)?;
            d.backward(s, &x, &gz, g);
            Ok(loss)
        },
        &mut store,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

fn gc_somvae(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 54);
    let input = r.random_range(1..=4);
    let config = SomVaeConfig {
        latent_dim: r.random_range(1..=3),
        hidden: r.random_range(1..=5),
        grid_rows: r.random_range(1..=2),
        grid_cols: r.random_range(2..=3),
        seed,
        ..SomVaeConfig::default()
    };
    let mut m = SomVaeModel::init(input, config).unwrap();
    let k = m.k();
    m.params
        .value_mut(m.net.embeddings)
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    perturb(&mut m.params, &mut r, 0.2);
    let ids: Vec<usize> = (0..12).map(|_| r.random_range(0..k)).collect();
    m.transition = fit_transition(&[AssignmentTrace::new(ids)], k, 1.0).unwrap();
    let x = random_vec(&mut r, input);
    let prev = Some(r.random_range(0..k));
    let (net, grid, tr, w) = (m.net, m.grid(), m.transition.clone(), m.config.loss_weights);
    let frozen = m.params.clone();
    grad_check(
        |s, g| Ok(net.loss(s, &frozen, &grid, &x, prev, &tr, &w, Some((g, 1.0))).0.total),
        &mut m.params,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

fn actpc_model(r: &mut Rng, seed: u64) -> (ActpcModel, Vec<f64>, Vec<f64>) {
    let input = r.random_range(1..=4);
    let cfg = ActpcConfig {
        k: r.random_range(2..=4),
        hidden: r.random_range(1..=5),
        seed,
        ..ActpcConfig::default()
    };
    let alpha = random_alpha(r, 4);
    let mut m = ActpcModel::init(input, ClassPrior::from_alpha(alpha.clone()).unwrap(), cfg).unwrap();
    m.params
        .value_mut(m.net.embeddings)
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.0..1.0));
    perturb(&mut m.params, r, 0.2);
    let weights = alpha.iter().map(|a| 1.0 / a).collect();
    let y = one_hot(r.random_range(0..4), 4);
    (m, weights, y)
}

/// Critic path: gradients reach the predictor and the chosen embedding.
fn gc_actpc_critic(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 55);
    let (mut m, w, y) = actpc_model(&mut r, seed);
    let (net, k) = (m.net, r.random_range(0..m.k()));
    grad_check(
        |s, g| Ok(net.critic_loss(s, k, &y, &w, Some((g, 1.0))).0),
        &mut m.params,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

/// Embedding path alone: the predictor is held fixed by reading it from a
/// frozen copy.
fn gc_actpc_embedding(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 56);
    let (m, w, y) = actpc_model(&mut r, seed);
    let (net, k) = (m.net, r.random_range(0..m.k()));
    let mut store = ParamStore::new();
    let hidden = net.hidden;
    let emb = store.add("embedding", m.params.tensor(net.embeddings).clone()).unwrap();
    grad_check(
        |s, g| {
            let e = &s.value(emb)[k * hidden..(k + 1) * hidden];
            let logits = net.predictor.forward(&m.params, e);
            let (loss, _, gz) = softmax_ce_with_weights(&y, &logits, &w);
            let mut scratch = m.params.zero_grads();
            let ge = net.predictor.backward(&m.params, e, &gz, &mut scratch);
            g.get_mut(emb)[k * hidden..(k + 1) * hidden]
                .iter_mut()
                .zip(&ge)
                .for_each(|(a, b)| *a += b);
            Ok(loss)
        },
        &mut store,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

/// Encoder path: direct and actor losses backpropagated through time.
fn gc_actpc_encoder(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 57);
    let (mut m, w, y) = actpc_model(&mut r, seed);
    let t = r.random_range(1..=5);
    let x = random_matrix(&mut r, t, m.net.input_dim);
    let k = r.random_range(0..m.k());
    let advantage = r.random_range(-2.0..2.0);
    let net = m.net;
    grad_check(
        |s, g| {
            let steps = net.encode_steps(s, &x, t);
            let mut gh = vec![vec![0.0; net.hidden]; t];
            let mut total = 0.0;
            for (i, st) in steps.iter().enumerate() {
                let (l, d) = net.direct_loss(s, &st.h, &y, &w, Some((g, 1.0)));
                total += l;
                gh[i].iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
            let (v, d) = net.actor_surrogate(s, &steps[t - 1].h, k, advantage, 0.1, g, 1.0);
            total += v;
            gh[t - 1].iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            net.backprop_states(s, &steps, &gh, g);
            Ok(total)
        },
        &mut m.params,
        EPS,
    )
    .unwrap()
    .max_rel_error
}

fn c5_gradients() -> Verdict {
    let suites: [GradSuite; 7] = [
        ("dense", gc_dense),
        ("gru", gc_gru),
        ("softmax+wce", gc_softmax_ce),
        ("somvae", gc_somvae),
        ("actpc-critic", gc_actpc_critic),
        ("actpc-embedding", gc_actpc_embedding),
        ("actpc-encoder", gc_actpc_encoder),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, f) in suites {
        let worst = (0..20).map(f).fold(0.0, f64::max);
        pass &= worst <= 1e-4;
        parts.push(format!("{name} {worst:.1e}"));
    }
    verdict(pass, format!("max relative error over 20 seeds: {}", parts.join(", ")))
}

fn brute_auroc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Precision-recall steps at every distinct threshold, highest first.
fn threshold_ap(scores: &[f64], pos: &[bool]) -> f64 {
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for &t in &th {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = sel.iter().filter(|&&i| pos[i]).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev) * tp / sel.len() as f64;
        prev = recall;
    }
    ap
}

fn c6_metrics() -> Verdict {
    let mut r = rng::stream(606, 0);
    let (mut e_roc, mut e_ap): (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    for _ in 0..500 {
        let n = r.random_range(4..=12);
        let levels = r.random_range(2..=8);
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut pos: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        pos[0] = true;
        pos[1] = false;
        e_roc = e_roc.max((auroc_binary(&scores, &pos).unwrap() - brute_auroc(&scores, &pos)).abs());
        e_ap = e_ap.max((average_precision(&scores, &pos).unwrap() - threshold_ap(&scores, &pos)).abs());
        checked += 1;
    }
    let a = [0, 0, 1, 1];
    let same = nmi(&a, &[1, 1, 2, 2]).unwrap();
    let indep = nmi(&a, &[1, 2, 1, 2]).unwrap();
    let pass = e_roc <= 1e-12 && e_ap <= 1e-12 && same == 1.0 && indep == 0.0;
    verdict(pass, format!("{checked} instances: AUROC max |error| {e_roc:.1e}, AP max |error| {e_ap:.1e}; NMI hand cases {same}, {indep}"))
}

fn c7_transition() -> Verdict {
    let m = fit_transition(&[AssignmentTrace::new(vec![0, 1])], 4, 1.0).unwrap();
    let example = m.row(0) == [1.0 / 5.0, 2.0 / 5.0, 1.0 / 5.0, 1.0 / 5.0];
    let mut r = rng::stream(707, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = r.random_range(1..=6);
        let laplace = if r.random_bool(0.3) {
            0.0
        } else {
            r.random_range(0.1..2.0)
        };
        let traces: Vec<AssignmentTrace> = (0..r.random_range(1..=5))
            .map(|_| AssignmentTrace::new((0..r.random_range(0..=20)).map(|_| r.random_range(0..k)).collect()))
            .collect();
        let m = fit_transition(&traces, k, laplace).unwrap();
        for row in m.iter_rows() {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            if row.iter().any(|&v| v < 0.0) {
                worst = f64::INFINITY;
            }
        }
    }
    verdict(
        example && worst <= 1e-9,
        format!("Laplace example row exact: {example}; max |row sum − 1| {worst:.1e} over 100 trace sets"),
    )
}

fn c8_final_window() -> Verdict {
    let mut r = rng::stream(808, 0);
    let mut mismatches = 0;
    let mut ties = 0;
    for _ in 0..1000 {
        let len = r.random_range(12..=40);
        let k = r.random_range(1..=5);
        let ids: Vec<usize> = (0..len).map(|_| r.random_range(0..k)).collect();
        let tail = &ids[len - 12..];
        let mut counts = BTreeMap::new();
        for &c in tail {
            *counts.entry(c).or_insert(0) += 1;
        }
        let top = *counts.values().max().unwrap();
        let winners: Vec<usize> = counts.iter().filter(|(_, &n)| n == top).map(|(&c, _)| c).collect();
        if winners.len() > 1 {
            ties += 1;
        }
        if final_cluster(&ids, 12).unwrap() != winners[0] {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("1000 traces ({ties} with ties), {mismatches} mismatches"),
    )
}

fn cli(args: &[&str]) {
    let parsed = Cli::try_parse_from(std::iter::once("pheno").chain(args.iter().copied())).expect("arguments parse");
    if let Err(e) = execute(parsed.command) {
        panic!("pheno {}: {e}", args.join(" "));
    }
}

#[derive(Debug, Clone)]
struct Row {
    auroc: f64,
    auprc: f64,
    nmi: f64,
    nmi_truth: f64,
}

fn read_comparison(dir: &Path) -> BTreeMap<String, Row> {
    let mut rd = csv::Reader::from_path(dir.join("comparison.csv")).unwrap();
    rd.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let f = |i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
            (
                rec[0].to_string(),
                Row {
                    auroc: f(1),
                    auprc: f(2),
                    nmi: f(3),
                    nmi_truth: f(4),
                },
            )
        })
        .collect()
}

fn distinct_clusters(path: &Path) -> usize {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let mut set = std::collections::BTreeSet::new();
    for rec in rd.records() {
        set.insert(rec.unwrap()[1].to_string());
    }
    set.len()
}

fn c9_easy_recovery() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("easy.csv");
    let truth = tmp.path().join("easy.truth.csv");
    cli(&[
        "synth",
        "--preset",
        "easy",
        "--n",
        "500",
        "--seed",
        "9",
        "--out",
        cohort.to_str().unwrap(),
    ]);
    let tags = ["tskm-dtw", "somvae", "actpc"];
    let mut sums = [0.0; 3];
    let mut slowest = Duration::ZERO;
    for seed in 1..=5u64 {
        for (i, tag) in tags.iter().enumerate() {
            let out = tmp.path().join(format!("s{seed}-{tag}"));
            let start = Instant::now();
            cli(&[
                "compare",
                "--cohort",
                cohort.to_str().unwrap(),
                "--truth",
                truth.to_str().unwrap(),
                "--models",
                tag,
                "--seed",
                &seed.to_string(),
                "--out",
                out.to_str().unwrap(),
            ]);
            slowest = slowest.max(start.elapsed());
            sums[i] += read_comparison(&out)[*tag].nmi_truth;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 5.0).collect();
    let pass = means.iter().all(|&m| m >= 0.7) && slowest <= Duration::from_secs(300);
    let detail = tags
        .iter()
        .zip(&means)
        .map(|(t, m)| format!("{t} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        pass,
        format!(
            "mean NMI vs truth over 5 seeds: {detail}; slowest run {:.1}s",
            slowest.as_secs_f64()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c10_imbalance() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("imb.csv");
    let truth = tmp.path().join("imb.truth.csv");
    cli(&[
        "synth",
        "--preset",
        "easy",
        "--n",
        "2000",
        "--imbalance",
        "0.939,0.030,0.011,0.020",
        "--seed",
        "10",
        "--out",
        cohort.to_str().unwrap(),
    ]);
    let mut rows: BTreeMap<&str, Vec<Row>> = BTreeMap::new();
    let mut min_clusters = usize::MAX;
    for seed in 1..=5u64 {
        let out = tmp.path().join(format!("s{seed}"));
        cli(&[
            "compare",
            "--cohort",
            cohort.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
            "--models",
            "tskm-dtw,actpc-unweighted,actpc",
            "--seed",
            &seed.to_string(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let table = read_comparison(&out);
        for tag in ["tskm-dtw", "actpc-unweighted", "actpc"] {
            rows.entry(tag).or_default().push(table[tag].clone());
        }
        min_clusters = min_clusters.min(distinct_clusters(&out.join("actpc").join("assignments.csv")));
    }
    let med = |tag: &str, f: fn(&Row) -> f64| median(rows[tag].iter().map(f).collect());
    let (w, u, t) = ("actpc", "actpc-unweighted", "tskm-dtw");
    let nmi_f: fn(&Row) -> f64 = |r| r.nmi;
    let roc_f: fn(&Row) -> f64 = |r| r.auroc;
    let prc_f: fn(&Row) -> f64 = |r| r.auprc;
    let checks = [
        med(w, nmi_f) > med(u, nmi_f),
        med(w, roc_f) > med(u, roc_f),
        min_clusters >= 3,
        med(w, roc_f) > med(t, roc_f),
        med(w, prc_f) > med(t, prc_f),
        med(w, nmi_f) > med(t, nmi_f),
    ];
    let fmt = |tag: &str| {
        format!(
            "{tag} NMI {:.3} AUROC {:.3} AUPRC {:.3}",
            med(tag, nmi_f),
            med(tag, roc_f),
            med(tag, prc_f)
        )
    };
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "medians over 5 seeds: {}; {}; {}; fewest weighted clusters {min_clusters}",
            fmt(w),
            fmt(u),
            fmt(t)
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn c11_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("small.csv");
    let truth = tmp.path().join("small.truth.csv");
    let config = tmp.path().join("quick.conf");
    std::fs::write(
        &config,
        "somvae.epochs=3\nsomvae.warmup_epochs=1\nactpc.pretrain_epochs=2\nactpc.selector_epochs=1\nactpc.epochs=2\n",
    )
    .unwrap();
    cli(&[
        "synth",
        "--preset",
        "hard",
        "--n",
        "150",
        "--seed",
        "11",
        "--out",
        cohort.to_str().unwrap(),
    ]);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        cli(&[
            "compare",
            "--config",
            config.to_str().unwrap(),
            "--cohort",
            cohort.to_str().unwrap(),
            "--truth",
            truth.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        files_under(&out)
    };
    let (a, b) = (run("a"), run("b"));
    let checked = a.keys().filter(|k| k.ends_with(".json") || k.ends_with(".csv")).count();
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let same_set = a.keys().eq(b.keys());
    verdict(
        same_set && differing.is_empty() && checked > 0,
        format!(
            "{} files ({checked} JSON/CSV) across all five models, {} differ",
            a.len(),
            differing.len()
        ),
    )
}

fn c12_score_function() -> Verdict {
    let mut r = rng::stream(1212, 0);
    let cfg = ActpcConfig {
        k: 2,
        hidden: 3,
        seed: 12,
        ..ActpcConfig::default()
    };
    let mut m = ActpcModel::init(2, ClassPrior::from_alpha(vec![0.6, 0.2, 0.15, 0.05]).unwrap(), cfg).unwrap();
    m.params
        .value_mut(m.net.embeddings)
        .iter_mut()
        .for_each(|v| *v = r.random_range(-1.5..1.5));
    perturb(&mut m.params, &mut r, 0.5);
    let x = Matrix::from_rows(&[[0.4, -0.3], [0.9, 0.2], [-0.5, 0.7]]).unwrap();
    let h = m.encode_history(&x, 3).unwrap();
    let pi = m.select(&h);
    let y = OutcomeLabel::new(2, 4).unwrap();
    let losses: Vec<f64> = (0..2)
        .map(|k| weighted_loss(y, &m.predict(k), &m.alpha).unwrap())
        .collect();
    // d/dz_0 of π_0·l_0 + π_1·l_1 with π = softmax(z) is π_0·π_1·(l_0 − l_1).
    let g0 = pi[0] * pi[1] * (losses[0] - losses[1]);
    let exact = [g0, -g0];
    let baseline = 0.5 * (losses[0] + losses[1]);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut draws = rng::stream(1212, 1);
    for _ in 0..n {
        let k = sample_cluster(&pi, &mut draws);
        let g = score_function_sample(&pi, k, losses[k], baseline);
        for j in 0..2 {
            sum[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    let nf = n as f64;
    let mut parts = Vec::new();
    let mut pass = true;
    for j in 0..2 {
        let mean = sum[j] / nf;
        let var = (sq[j] / nf - mean * mean) * nf / (nf - 1.0);
        let se = (var / nf).sqrt();
        let z = (mean - exact[j]).abs() / se;
        pass &= z <= 3.0;
        parts.push(format!("dz{j}: mean {mean:.5} vs {:.5} ({z:.2} SE)", exact[j]));
    }
    verdict(
        pass,
        format!("π = [{:.3}, {:.3}], {n} samples; {}", pi[0], pi[1], parts.join(", ")),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "DTW matches exhaustive path enumeration", c1_dtw),
        (2, "k-means matches the brute-force optimal partition", c2_kmeans),
        (3, "elbow selection", c3_elbow),
        (4, "class-prior weighted loss", c4_weighted_loss),
        (5, "gradient suite", c5_gradients),
        (6, "AUROC, AP and NMI oracles", c6_metrics),
        (7, "transition model", c7_transition),
        (8, "48-hour modal rule", c8_final_window),
        (9, "end-to-end recovery on the easy preset", c9_easy_recovery),
        (10, "imbalance ordering", c10_imbalance),
        (11, "compare determinism", c11_determinism),
        (12, "score-function estimator unbiasedness", c12_score_function),
    ];
    let limits: BTreeMap<u32, u64> = [(1, 10), (2, 60), (5, 60)].into_iter().collect();
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        let mut pass = v.pass;
        let mut detail = v.detail;
        if let Some(&limit) = limits.get(&id) {
            pass &= secs < limit as f64;
            detail.push_str(&format!("; runtime limit {limit}s"));
        }
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
