//! Time-series k-means with a pluggable metric, k-means++ seeding,
//! nearest-centroid assignment and elbow-based choice of K.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dtw::Metric;
use crate::rng::{self, Rng};
use crate::{Error, Matrix, Result};

/// DBA iterations per centroid update.
pub const DBA_ITERS: usize = 10;
/// Default Lloyd iteration cap.
pub const MAX_ITER: usize = 50;
/// Default number of seeded restarts in [`inertia_curve`].
pub const RESTARTS: usize = 5;

pub const FORMAT_VERSION: u32 = 1;

/// A fitted clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CentroidState", try_from = "CentroidState")]
pub struct CentroidSet {
    pub metric: Metric,
    pub centroids: Vec<Matrix>,
    /// Sum of squared distances from each series to its centroid.
    pub inertia: f64,
    pub seed: u64,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid and its distance; ties go to the lowest id.
    pub fn nearest(&self, series: &Matrix) -> Result<(usize, f64)> {
        nearest(&self.metric, &self.centroids, series)
    }

    pub fn assign(&self, series: &Matrix) -> Result<usize> {
        self.nearest(series).map(|(k, _)| k)
    }
}

#[derive(Serialize, Deserialize)]
struct CentroidState {
    format_version: u32,
    metric: Metric,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "D")]
    d: usize,
    centroids: Vec<Matrix>,
    inertia: f64,
    seed: u64,
}

impl From<CentroidSet> for CentroidState {
    fn from(c: CentroidSet) -> Self {
        let (t, d) = c.centroids.first().map_or((0, 0), Matrix::shape);
        CentroidState {
            format_version: FORMAT_VERSION,
            metric: c.metric,
            k: c.centroids.len(),
            t,
            d,
            centroids: c.centroids,
            inertia: c.inertia,
            seed: c.seed,
        }
    }
}

impl TryFrom<CentroidState> for CentroidSet {
    type Error = Error;

    fn try_from(s: CentroidState) -> Result<Self> {
        if s.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported centroid format version {}",
                s.format_version
            )));
        }
        if s.k == 0 || s.centroids.len() != s.k || s.centroids.iter().any(|c| c.shape() != (s.t, s.d)) {
            return Err(Error::validation("centroid shapes disagree with K, T and D"));
        }
        Ok(CentroidSet {
            metric: s.metric,
            centroids: s.centroids,
            inertia: s.inertia,
            seed: s.seed,
        })
    }
}

/// Nearest-centroid cluster id for a new series.
pub fn tskm_assign(model: &CentroidSet, series: &Matrix) -> Result<usize> {
    model.assign(series)
}

fn nearest(metric: &Metric, centroids: &[Matrix], series: &Matrix) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = metric.distance(series, c)?;
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best)
}

/// Result of [`tskm_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TskmFit {
    pub model: CentroidSet,
    pub assignments: Vec<usize>,
    /// Inertia after seeding and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

fn validate(series: &[Matrix], k: usize, metric: &Metric) -> Result<()> {
    if k == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    if k > series.len() {
        return Err(Error::validation(format!(
            "K = {k} exceeds the number of series ({})",
            series.len()
        )));
    }
    let first = &series[0];
    for s in series {
        let ok = match metric {
            Metric::Euclidean => s.shape() == first.shape(),
            Metric::Dtw { .. } => s.cols() == first.cols() && s.rows() > 0,
        };
        if !ok {
            return Err(Error::validation("series shapes are incompatible with the metric"));
        }
    }
    Ok(())
}

/// k-means++ seeding with squared metric distances.
fn seed_centroids(series: &[Matrix], k: usize, metric: &Metric, rng: &mut Rng) -> Result<Vec<Matrix>> {
    let n = series.len();
    let mut centroids = vec![series[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = series
        .iter()
        .map(|s| metric.distance(s, &centroids[0]).map(|d| d * d))
        .collect::<Result<_>>()?;
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = series[pick].clone();
        for (s, d) in series.iter().zip(d2.iter_mut()) {
            let nd = metric.distance(s, &c)?;
            *d = d.min(nd * nd);
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn assign_all(series: &[Matrix], centroids: &[Matrix], metric: &Metric) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut ids = Vec::with_capacity(series.len());
    let mut dists = Vec::with_capacity(series.len());
    for s in series {
        let (k, d) = nearest(metric, centroids, s)?;
        ids.push(k);
        dists.push(d);
    }
    Ok((ids, dists))
}

/// Gives every empty cluster the series farthest from its own centroid,
/// taken only from clusters that keep at least one member.
fn repair_empty(series: &[Matrix], centroids: &mut [Matrix], ids: &mut [usize], dists: &mut [f64]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        ids.iter().for_each(|&c| sizes[c] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..series.len())
            .filter(|&i| sizes[ids[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = donor else { return };
        centroids[empty] = series[i].clone();
        ids[i] = empty;
        dists[i] = 0.0;
    }
}

fn inertia_of(dists: &[f64]) -> f64 {
    dists.iter().map(|d| d * d).sum()
}

/// Lloyd iterations from a k-means++ seeding. Centroids are updated with the
/// elementwise mean (Euclidean) or DTW barycenter averaging; iteration stops
/// when assignments no longer change or after `max_iter` rounds.
pub fn tskm_fit(series: &[Matrix], k: usize, metric: Metric, seed: u64, max_iter: usize) -> Result<TskmFit> {
    validate(series, k, &metric)?;
    let mut rng = rng::stream(seed, 0);
    let mut centroids = seed_centroids(series, k, &metric, &mut rng)?;
    let (mut ids, mut dists) = assign_all(series, &centroids, &metric)?;
    repair_empty(series, &mut centroids, &mut ids, &mut dists);
    let mut history = vec![inertia_of(&dists)];
    for _ in 0..max_iter {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Matrix> = ids
                .iter()
                .zip(series)
                .filter(|(&id, _)| id == c)
                .map(|(_, s)| s)
                .collect();
            if !members.is_empty() {
                *centroid = metric.barycenter(&members, centroid, DBA_ITERS)?;
            }
        }
        let (mut new_ids, mut new_dists) = assign_all(series, &centroids, &metric)?;
        repair_empty(series, &mut centroids, &mut new_ids, &mut new_dists);
        history.push(inertia_of(&new_dists));
        let done = new_ids == ids;
        ids = new_ids;
        dists = new_dists;
        if done {
            break;
        }
    }
    Ok(TskmFit {
        model: CentroidSet {
            metric,
            centroids,
            inertia: inertia_of(&dists),
            seed,
        },
        assignments: ids,
        inertia_history: history,
    })
}

/// Best of `restarts` fits (lowest inertia, earliest restart on ties).
pub fn tskm_fit_best(
    series: &[Matrix],
    k: usize,
    metric: Metric,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<TskmFit> {
    let mut best: Option<TskmFit> = None;
    for r in 0..restarts.max(1) {
        let mut fit = tskm_fit(series, k, metric, rng::derive_seed(seed, r as u64), max_iter)?;
        fit.model.seed = seed;
        if best.as_ref().is_none_or(|b| fit.model.inertia < b.model.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Best inertia per K over seeded restarts, made non-increasing in K by a
/// running minimum.
pub fn inertia_curve(
    series: &[Matrix],
    ks: &[usize],
    metric: Metric,
    seed: u64,
    restarts: usize,
) -> Result<Vec<(usize, f64)>> {
    if ks.is_empty() {
        return Err(Error::validation("K range is empty"));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("K range must be ascending"));
    }
    let mut curve = Vec::with_capacity(ks.len());
    let mut running = f64::INFINITY;
    for &k in ks {
        let fit = tskm_fit_best(series, k, metric, seed, MAX_ITER, restarts)?;
        running = running.min(fit.model.inertia);
        curve.push((k, running));
    }
    Ok(curve)
}

/// K with the largest discrete second difference `I(K−1) − 2·I(K) + I(K+1)`.
/// Endpoints are ineligible; ties go to the smallest K.
pub fn elbow_select(curve: &[(usize, f64)]) -> Result<usize> {
    if curve.len() < 3 {
        return Err(Error::validation("elbow selection needs at least three points"));
    }
    if curve.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(Error::validation("elbow selection needs consecutive K values"));
    }
    let mut best = (curve[1].0, f64::NEG_INFINITY);
    for w in curve.windows(3) {
        let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if d2 > best.1 {
            best = (w[1].0, d2);
        }
    }
    Ok(best.0)
}

/// Euclidean k-means on plain vectors: returns centroids and assignments.
pub fn kmeans_vectors(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let series: Vec<Matrix> = points
        .iter()
        .map(|p| Matrix::from_rows(&[p.as_slice()]))
        .collect::<Result<_>>()?;
    let fit = tskm_fit_best(&series, k, Metric::Euclidean, seed, MAX_ITER * 2, restarts)?;
    let centroids = fit.model.centroids.iter().map(|c| c.row(0).to_vec()).collect();
    Ok((centroids, fit.assignments))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants(values: &[f64], t: usize) -> Vec<Matrix> {
        values.iter().map(|&v| Matrix::filled(t, 1, v)).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let s: Vec<Matrix> = [[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]
            .iter()
            .map(|r| Matrix::column(r))
            .collect();
        let fit = tskm_fit(&s, 1, Metric::Euclidean, 3, MAX_ITER).unwrap();
        let c = &fit.model.centroids[0];
        assert!((c.get(0, 0) - 3.0).abs() < 1e-12 && (c.get(1, 0) - 3.0).abs() < 1e-12);
        // Σ (x − mean)² = 8 + 14
        assert!((fit.model.inertia - 22.0).abs() < 1e-12);
    }

    #[test]
    fn two_constant_groups_split_for_both_metrics() {
        let mut vals = vec![0.0; 5];
        vals.extend([10.0; 5]);
        let s = constants(&vals, 4);
        for metric in [Metric::Euclidean, Metric::dtw()] {
            let fit = tskm_fit(&s, 2, metric, 11, MAX_ITER).unwrap();
            let a = &fit.assignments;
            assert!(a[..5].iter().all(|&c| c == a[0]));
            assert!(a[5..].iter().all(|&c| c == a[5]));
            assert_ne!(a[0], a[5]);
            assert_eq!(fit.model.inertia, 0.0);
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let s = constants(&[1.0, 2.0], 3);
        assert!(tskm_fit(&s, 3, Metric::Euclidean, 0, MAX_ITER).is_err());
        assert!(tskm_fit(&s, 0, Metric::Euclidean, 0, MAX_ITER).is_err());
    }

    #[test]
    fn assignment_ties_and_identity() {
        let model = CentroidSet {
            metric: Metric::Euclidean,
            centroids: constants(&[0.0, 2.0], 2),
            inertia: 0.0,
            seed: 0,
        };
        assert_eq!(tskm_assign(&model, &Matrix::filled(2, 1, 2.0)).unwrap(), 1);
        assert_eq!(tskm_assign(&model, &Matrix::filled(2, 1, 1.0)).unwrap(), 0);
        assert!(tskm_assign(&model, &Matrix::filled(3, 1, 1.0)).is_err());
    }

    #[test]
    fn elbow_examples() {
        let curve: Vec<(usize, f64)> = [100.0, 70.0, 45.0, 15.0, 13.0, 12.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| (i + 1, v))
            .collect();
        assert_eq!(elbow_select(&curve).unwrap(), 4);
        let linear = [(1, 40.0), (2, 30.0), (3, 20.0), (4, 10.0)];
        assert_eq!(elbow_select(&linear).unwrap(), 2);
        assert!(elbow_select(&linear[..2]).is_err());
        assert!(elbow_select(&[(1, 3.0), (3, 2.0), (4, 1.0)]).is_err());
    }

    #[test]
    fn curve_is_non_increasing_and_zero_at_n() {
        let s = constants(&[0.0, 1.0, 5.0, 6.0, 20.0], 3);
        let curve = inertia_curve(&s, &[1, 2, 3, 4, 5], Metric::Euclidean, 4, RESTARTS).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(curve[4].1, 0.0);
    }

    #[test]
    fn fit_is_deterministic_and_lloyd_monotone() {
        let s: Vec<Matrix> = (0..12)
            .map(|i| Matrix::column(&[(i % 3) as f64 * 4.0 + i as f64 * 0.1, (i % 2) as f64]))
            .collect();
        for metric in [Metric::Euclidean, Metric::dtw()] {
            let a = tskm_fit(&s, 3, metric, 5, MAX_ITER).unwrap();
            let b = tskm_fit(&s, 3, metric, 5, MAX_ITER).unwrap();
            assert_eq!(a, b);
            assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn json_carries_shape_fields() {
        let c = CentroidSet {
            metric: Metric::Euclidean,
            centroids: constants(&[1.0, 2.5], 3),
            inertia: 0.75,
            seed: 9,
        };
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(
            (v["K"].as_u64(), v["T"].as_u64(), v["D"].as_u64()),
            (Some(2), Some(3), Some(1))
        );
        assert_eq!(v["centroids"][1][2][0].as_f64(), Some(2.5));
        let back: CentroidSet = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, c);
        let mut bad = v;
        bad["K"] = 3.into();
        assert!(serde_json::from_value::<CentroidSet>(bad).is_err());
    }
}
