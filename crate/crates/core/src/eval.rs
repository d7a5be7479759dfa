//! Supervised cluster-quality metrics and per-cluster profiles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cohort::{Outcome, N_OUTCOMES};
use crate::{Error, Matrix, Result};

/// One-vs-rest AUROC from mid-ranks. `None` unless both classes are present.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision over a descending-score sweep, tied scores taken as one
/// step. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if positive[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Per-class metric values with macro and prevalence-weighted summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub per_class: Vec<Option<f64>>,
    pub macro_avg: f64,
    pub weighted_avg: f64,
}

fn check_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} score vectors for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let c = scores[0].len();
    if scores.iter().any(|s| s.len() != c) || labels.iter().any(|&l| l >= c) {
        return Err(Error::validation(
            "score vectors and labels disagree on the class count",
        ));
    }
    Ok(c)
}

fn per_class(
    scores: &[Vec<f64>],
    labels: &[usize],
    name: &str,
    metric: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<ClassMetric> {
    let c = check_scores(scores, labels)?;
    let mut values = Vec::with_capacity(c);
    let (mut sum, mut count, mut wsum, mut wtot) = (0.0, 0usize, 0.0, 0.0);
    for class in 0..c {
        let col: Vec<f64> = scores.iter().map(|s| s[class]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let v = metric(&col, &pos);
        if let Some(v) = v {
            let w = pos.iter().filter(|&&p| p).count() as f64;
            sum += v;
            count += 1;
            wsum += w * v;
            wtot += w;
        }
        values.push(v);
    }
    if count == 0 {
        return Err(Error::validation(format!("{name} is undefined for every class")));
    }
    Ok(ClassMetric {
        per_class: values,
        macro_avg: sum / count as f64,
        weighted_avg: wsum / wtot,
    })
}

/// One-vs-rest AUROC per class; classes lacking positives or negatives are
/// left out of the averages.
pub fn auroc_macro(scores: &[Vec<f64>], labels: &[usize]) -> Result<ClassMetric> {
    per_class(scores, labels, "AUROC", auroc_binary)
}

/// Average precision per class; classes without positives are left out.
pub fn auprc_macro(scores: &[Vec<f64>], labels: &[usize]) -> Result<ClassMetric> {
    per_class(scores, labels, "AUPRC", average_precision)
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information `I(A;B) / sqrt(H(A)·H(B))`, natural logs;
/// zero when either partition has zero entropy.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::validation("NMI needs two non-empty partitions of equal length"));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy_of(ca.values().copied(), n);
    let hb = entropy_of(cb.values().copied(), n);
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi.max(0.0) / (ha * hb).sqrt()).min(1.0))
}

/// Outcome mix and mean trajectory of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub size: usize,
    pub outcome_distribution: Vec<f64>,
    /// Per-bin, per-channel mean in channel units.
    pub mean_trajectory: Matrix,
}

/// Profiles of every non-empty cluster, largest first (ties by id).
pub fn cluster_profiles(
    assignments: &[usize],
    labels: &[Outcome],
    trajectories: &[Matrix],
) -> Result<Vec<ClusterProfile>> {
    if assignments.is_empty() || assignments.len() != labels.len() || labels.len() != trajectories.len() {
        return Err(Error::validation("assignments, labels and trajectories must align"));
    }
    let shape = trajectories[0].shape();
    if trajectories.iter().any(|t| t.shape() != shape) {
        return Err(Error::validation("trajectories must share one grid"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut profiles: Vec<ClusterProfile> = groups
        .into_iter()
        .map(|(cluster, members)| {
            let size = members.len();
            let mut dist = vec![0.0; N_OUTCOMES];
            let mut mean = Matrix::zeros(shape.0, shape.1);
            for &i in &members {
                dist[labels[i].index()] += 1.0;
                for (m, v) in mean.as_mut_slice().iter_mut().zip(trajectories[i].as_slice()) {
                    *m += v;
                }
            }
            dist.iter_mut().for_each(|d| *d /= size as f64);
            mean.as_mut_slice().iter_mut().for_each(|m| *m /= size as f64);
            ClusterProfile {
                cluster,
                size,
                outcome_distribution: dist,
                mean_trajectory: mean,
            }
        })
        .collect();
    profiles.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster.cmp(&b.cluster)));
    Ok(profiles)
}

/// Each patient's score is the training outcome distribution of its cluster.
pub fn score_patients(assignments: &[usize], profiles: &[ClusterProfile]) -> Result<Vec<Vec<f64>>> {
    assignments
        .iter()
        .map(|&c| {
            profiles
                .iter()
                .find(|p| p.cluster == c)
                .map(|p| p.outcome_distribution.clone())
                .ok_or_else(|| Error::validation(format!("cluster {c} has no training profile")))
        })
        .collect()
}

/// Per-class values behind the headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub auroc: Vec<Option<f64>>,
    pub auprc: Vec<Option<f64>>,
    pub auroc_weighted: f64,
    pub auprc_weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_tag: String,
    pub auroc: f64,
    pub auprc: f64,
    pub nmi: f64,
    pub per_class: PerClass,
    pub n_patients: usize,
    /// NMI against planted phenotypes, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi_truth: Option<f64>,
    /// Number of distinct clusters used.
    pub n_clusters: usize,
}

/// Bundles AUROC, AUPRC and NMI (clusters against outcomes).
pub fn evaluate(
    model_tag: &str,
    assignments: &[usize],
    scores: &[Vec<f64>],
    labels: &[Outcome],
) -> Result<MetricsReport> {
    let y: Vec<usize> = labels.iter().map(|o| o.index()).collect();
    if assignments.len() != y.len() {
        return Err(Error::validation("assignments and labels must align"));
    }
    let auroc = auroc_macro(scores, &y)?;
    let auprc = auprc_macro(scores, &y)?;
    let nmi = nmi(assignments, &y)?;
    let mut ids = assignments.to_vec();
    ids.sort_unstable();
    ids.dedup();
    Ok(MetricsReport {
        model_tag: model_tag.into(),
        auroc: auroc.macro_avg,
        auprc: auprc.macro_avg,
        nmi,
        per_class: PerClass {
            auroc: auroc.per_class,
            auprc: auprc.per_class,
            auroc_weighted: auroc.weighted_avg,
            auprc_weighted: auprc.weighted_avg,
        },
        n_patients: y.len(),
        nmi_truth: None,
        n_clusters: ids.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let pos = [true, false, true, false];
        assert_eq!(auroc_binary(&[0.9, 0.8, 0.7, 0.1], &pos), Some(0.75));
        assert_eq!(auroc_binary(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(auroc_binary(&[0.9, 0.1, 0.8, 0.2], &pos), Some(1.0));
        assert_eq!(auroc_binary(&[0.9, 0.1], &[true, true]), None);
    }

    #[test]
    fn ap_examples() {
        let pos = [true, false, true, false];
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &pos).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[0.9, 0.1, 0.8, 0.2], &pos), Some(1.0));
        assert_eq!(average_precision(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(average_precision(&[0.5; 2], &[false, false]), None);
    }

    #[test]
    fn nmi_examples() {
        let l = [0, 0, 1, 1];
        assert!((nmi(&l, &[1, 1, 2, 2]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&l, &[1, 2, 1, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&l, &[3, 3, 3, 3]).unwrap(), 0.0);
        let a = [0, 0, 1, 1, 2, 2, 2];
        let b = [5, 5, 5, 7, 7, 9, 9];
        assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-15);
    }

    fn traj(v: f64) -> Matrix {
        Matrix::filled(3, 8, v)
    }

    #[test]
    fn profiles_and_scores() {
        let labels = [
            Outcome::Discharge,
            Outcome::Death,
            Outcome::Discharge,
            Outcome::Death,
            Outcome::Death,
        ];
        let t: Vec<Matrix> = (0..5).map(|i| traj(i as f64)).collect();
        let one = cluster_profiles(&[0; 5], &labels, &t).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].outcome_distribution, vec![0.4, 0.0, 0.0, 0.6]);
        assert!((one[0].mean_trajectory.get(2, 7) - 2.0).abs() < 1e-15);

        let split = cluster_profiles(&[3, 1, 3, 1, 1], &labels, &t).unwrap();
        assert_eq!((split[0].cluster, split[0].size), (1, 3));
        assert_eq!(split[0].outcome_distribution, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(split[1].outcome_distribution, vec![1.0, 0.0, 0.0, 0.0]);

        let scores = score_patients(&[1, 1, 3], &split).unwrap();
        assert_eq!(scores[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(scores[0], scores[1]);
        assert!(scores.iter().all(|s| (s.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(score_patients(&[2], &split).is_err());
    }

    #[test]
    fn perfect_and_single_cluster_models() {
        let labels = [
            Outcome::Discharge,
            Outcome::IcuAdmission,
            Outcome::CardiacArrest,
            Outcome::Death,
        ];
        let t: Vec<Matrix> = (0..4).map(|i| traj(i as f64)).collect();
        let a = [0, 1, 2, 3];
        let prof = cluster_profiles(&a, &labels, &t).unwrap();
        let r = evaluate("perfect", &a, &score_patients(&a, &prof).unwrap(), &labels).unwrap();
        assert_eq!((r.auroc, r.auprc), (1.0, 1.0));
        assert!((r.nmi - 1.0).abs() < 1e-12);

        let single = [0; 4];
        let prof = cluster_profiles(&single, &labels, &t).unwrap();
        let r = evaluate("single", &single, &score_patients(&single, &prof).unwrap(), &labels).unwrap();
        assert_eq!((r.auroc, r.nmi, r.n_clusters), (0.5, 0.0, 1));
    }

    #[test]
    fn undefined_metrics_error() {
        let scores = vec![vec![1.0, 0.0]; 3];
        assert!(auroc_macro(&scores, &[0, 0, 0]).is_err());
        assert!(auprc_macro(&scores, &[0, 0, 0]).is_ok());
        assert!(auroc_macro(&scores, &[0, 0]).is_err());
    }
}
