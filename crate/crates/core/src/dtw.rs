//! Euclidean and dynamic-time-warping distances between multivariate series,
//! plus DTW barycenter averaging (DBA) for centroid updates.
//!
//! Series are `T×D` matrices (rows are time steps). The DTW local cost is the
//! squared Euclidean distance between frames across all channels jointly; the
//! reported distance is the square root of the minimal accumulated cost, so
//! both metrics share units.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// Distance used by time-series k-means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Dtw {
        /// Sakoe-Chiba radius in bins; `None` is unconstrained.
        #[serde(default)]
        band: Option<usize>,
        /// Warp every channel separately instead of jointly.
        #[serde(default)]
        independent: bool,
    },
}

impl Metric {
    pub const fn dtw() -> Self {
        Metric::Dtw {
            band: None,
            independent: false,
        }
    }

    pub fn distance(&self, a: &Matrix, b: &Matrix) -> Result<f64> {
        match *self {
            Metric::Euclidean => euclidean_distance(a, b),
            Metric::Dtw {
                band,
                independent: false,
            } => dtw_distance(a, b, band),
            Metric::Dtw {
                band,
                independent: true,
            } => dtw_distance_independent(a, b, band),
        }
    }

    /// Centroid of `members` under this metric, refining `init`.
    pub fn barycenter(&self, members: &[&Matrix], init: &Matrix, iters: usize) -> Result<Matrix> {
        match *self {
            Metric::Euclidean => mean_series(members),
            Metric::Dtw {
                band,
                independent: false,
            } => dtw_barycenter(members, init, iters, band).map(|b| b.centroid),
            Metric::Dtw {
                band,
                independent: true,
            } => dtw_barycenter_independent(members, init, iters, band),
        }
    }
}

/// `sqrt(Σ_{t,d} (a−b)²)`; shapes must match.
pub fn euclidean_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::validation(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(squared_frame_distance(a.as_slice(), b.as_slice()).sqrt())
}

/// Elementwise mean of equally shaped series.
pub fn mean_series(members: &[&Matrix]) -> Result<Matrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::validation("cannot average an empty member list"))?;
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for m in members {
        if m.shape() != first.shape() {
            return Err(Error::validation("members have different shapes"));
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *o += v;
        }
    }
    let n = members.len() as f64;
    out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

fn squared_frame_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn in_band(i: usize, j: usize, band: Option<usize>) -> bool {
    band.is_none_or(|r| i.abs_diff(j) <= r)
}

/// Accumulated-cost table, row-major `T_a × T_b`; unreachable cells are +∞.
struct CostTable {
    cols: usize,
    acc: Vec<f64>,
}

impl CostTable {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.acc[i * self.cols + j]
    }

    fn total(&self) -> f64 {
        *self.acc.last().expect("non-empty table")
    }
}

fn check_pair(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::validation("DTW needs non-empty series"));
    }
    if a.cols() != b.cols() {
        return Err(Error::validation(format!(
            "channel mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if let Some(r) = band {
        if a.rows().abs_diff(b.rows()) > r {
            return Err(Error::validation(format!(
                "band radius {r} cannot connect series of lengths {} and {}",
                a.rows(),
                b.rows()
            )));
        }
    }
    Ok(())
}

fn accumulate(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<CostTable> {
    check_pair(a, b, band)?;
    let (n, m) = (a.rows(), b.rows());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, band) {
                continue;
            }
            let local = squared_frame_distance(a.row(i), b.row(j));
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[j - 1],
                (_, 0) => acc[(i - 1) * m],
                _ => acc[(i - 1) * m + j - 1]
                    .min(acc[(i - 1) * m + j])
                    .min(acc[i * m + j - 1]),
            };
            acc[i * m + j] = local + best;
        }
    }
    Ok(CostTable { cols: m, acc })
}

/// Dependent multivariate DTW distance.
pub fn dtw_distance(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<f64> {
    Ok(accumulate(a, b, band)?.total().sqrt())
}

/// One optimal warping path as 0-based `(i, j)` pairs from `(0,0)` to
/// `(T_a−1, T_b−1)`. Backtracking prefers diagonal, then vertical
/// (`i−1`), then horizontal (`j−1`) steps on ties.
pub fn dtw_path(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<Vec<(usize, usize)>> {
    let table = accumulate(a, b, band)?;
    let (mut i, mut j) = (a.rows() - 1, b.rows() - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = table.at(i - 1, j - 1);
            let up = table.at(i - 1, j);
            let left = table.at(i, j - 1);
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(path)
}

/// Per-channel DTW: `sqrt(Σ_d cost_d)` with each channel warped on its own.
pub fn dtw_distance_independent(a: &Matrix, b: &Matrix, band: Option<usize>) -> Result<f64> {
    check_pair(a, b, band)?;
    let mut total = 0.0;
    for d in 0..a.cols() {
        total += accumulate(&Matrix::column(&a.col(d)), &Matrix::column(&b.col(d)), band)?.total();
    }
    Ok(total.sqrt())
}

/// Result of [`dtw_barycenter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Barycenter {
    pub centroid: Matrix,
    /// `Σ dtw²(member, centroid)` before the first and after every accepted iteration.
    pub cost_history: Vec<f64>,
}

/// Sum of squared DTW distances from members to `center`.
pub fn dtw_cost(members: &[&Matrix], center: &Matrix, band: Option<usize>) -> Result<f64> {
    members
        .iter()
        .map(|m| accumulate(m, center, band).map(|t| t.total()))
        .sum()
}

/// DTW barycenter averaging starting from `init`.
///
/// Each iteration aligns every member to the current barycenter and replaces
/// each barycenter frame by the mean of the member frames mapped onto it. Runs
/// `iters` iterations or stops once the relative cost decrease drops below
/// 1e-6. The cost history is non-increasing.
pub fn dtw_barycenter(members: &[&Matrix], init: &Matrix, iters: usize, band: Option<usize>) -> Result<Barycenter> {
    if members.is_empty() {
        return Err(Error::validation("DTW barycenter needs at least one member"));
    }
    let mut center = init.clone();
    let mut cost = dtw_cost(members, &center, band)?;
    let mut cost_history = vec![cost];
    for _ in 0..iters {
        let mut sums = Matrix::zeros(center.rows(), center.cols());
        let mut counts = vec![0usize; center.rows()];
        for m in members {
            for (i, j) in dtw_path(m, &center, band)? {
                for (s, v) in sums.row_mut(j).iter_mut().zip(m.row(i)) {
                    *s += v;
                }
                counts[j] += 1;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            let inv = 1.0 / c as f64;
            sums.row_mut(j).iter_mut().for_each(|v| *v *= inv);
        }
        let new_cost = dtw_cost(members, &sums, band)?;
        if new_cost > cost {
            break;
        }
        let decrease = cost - new_cost;
        center = sums;
        cost_history.push(new_cost);
        let converged = decrease <= 1e-6 * cost;
        cost = new_cost;
        if converged {
            break;
        }
    }
    Ok(Barycenter {
        centroid: center,
        cost_history,
    })
}

fn dtw_barycenter_independent(members: &[&Matrix], init: &Matrix, iters: usize, band: Option<usize>) -> Result<Matrix> {
    let mut out = init.clone();
    for d in 0..init.cols() {
        let cols: Vec<Matrix> = members.iter().map(|m| Matrix::column(&m.col(d))).collect();
        let refs: Vec<&Matrix> = cols.iter().collect();
        let b = dtw_barycenter(&refs, &Matrix::column(&init.col(d)), iters, band)?;
        for t in 0..out.rows() {
            out.set(t, d, b.centroid.get(t, 0));
        }
    }
    Ok(out)
}
