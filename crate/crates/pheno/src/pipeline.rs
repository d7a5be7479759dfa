//! Fit, assign and evaluate steps shared by the commands.

use std::collections::HashMap;

use pheno_core::actpc::actpc_train;
use pheno_core::cohort::{ClassPrior, Cohort, Outcome, N_OUTCOMES};
use pheno_core::eval::{self, ClusterProfile, MetricsReport};
use pheno_core::preprocess::{GridSpec, Preprocessor};
use pheno_core::somvae::somvae_train;
use pheno_core::tskm::{elbow_select, inertia_curve, tskm_fit_best};

use crate::config::{som_shape, KChoice, ModelKind, RunConfig};
use crate::error::{CliError, Result};
use crate::models::{Fitted, ModelFile};
use crate::split::{split_ids, Part};

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: ModelFile,
    pub preprocessor: Preprocessor,
    pub split: Vec<(String, Part)>,
    /// `(stage, per-epoch loss)`.
    pub losses: Vec<(&'static str, Vec<f64>)>,
    /// `(K, inertia)` when K was chosen by the elbow rule.
    pub elbow_curve: Option<Vec<(usize, f64)>>,
}

pub fn split_cohort(cohort: &Cohort, seed: u64, fraction: f64) -> Result<Vec<(String, Part)>> {
    let parts = split_ids(cohort.patients().iter().map(|p| p.patient_id()), seed, fraction)?;
    Ok(cohort
        .patients()
        .iter()
        .map(|p| p.patient_id().to_string())
        .zip(parts)
        .collect())
}

fn indices_of(split: &[(String, Part)], part: Part) -> Vec<usize> {
    split
        .iter()
        .enumerate()
        .filter(|(_, (_, p))| *p == part)
        .map(|(i, _)| i)
        .collect()
}

/// Splits, preprocesses the training part and trains `kind` on it.
pub fn fit(kind: ModelKind, cfg: &RunConfig, seed: u64, cohort: &Cohort) -> Result<FitOutput> {
    cfg.validate()?;
    let split = split_cohort(cohort, seed, cfg.split)?;
    let train = cohort.subset(&indices_of(&split, Part::Train))?;
    let (pre, data) = Preprocessor::fit(&train, cfg.preprocess())?;
    if data.is_empty() {
        return Err(CliError::validation("no training patient passes the coverage filter"));
    }
    let series = data.matrices();
    let fixed_k = |what: &str| match cfg.k {
        KChoice::Fixed(k) => Ok(k),
        KChoice::Auto(_) => Err(CliError::usage(format!(
            "--k auto is only supported for tskm models, not {what}"
        ))),
    };
    let mut losses = Vec::new();
    let mut elbow_curve = None;
    let model = match kind {
        ModelKind::TskmEuclid | ModelKind::TskmDtw => {
            let metric = cfg.metric(kind);
            let k = match cfg.k {
                KChoice::Fixed(k) => k,
                KChoice::Auto(_) => {
                    let ks: Vec<usize> = (cfg.tskm.k_min..=cfg.tskm.k_max).collect();
                    let curve = inertia_curve(&series, &ks, metric, seed, cfg.tskm.restarts)?;
                    let k = elbow_select(&curve)?;
                    elbow_curve = Some(curve);
                    k
                }
            };
            let fit = tskm_fit_best(&series, k, metric, seed, cfg.tskm.max_iter, cfg.tskm.restarts)?;
            losses.push(("lloyd", fit.inertia_history));
            Fitted::Tskm(fit.model)
        }
        ModelKind::Somvae => {
            let (grid_rows, grid_cols) = som_shape(fixed_k("somvae")?);
            let m = somvae_train(
                &series,
                pheno_core::somvae::SomVaeConfig {
                    grid_rows,
                    grid_cols,
                    seed,
                    ..cfg.somvae.clone()
                },
            )?;
            losses.push(("warmup", m.warmup_history.clone()));
            losses.push(("train", m.loss_history.clone()));
            Fitted::Somvae(m)
        }
        ModelKind::Actpc | ModelKind::ActpcUnweighted => {
            let k = fixed_k(kind.tag())?;
            let priors = if kind == ModelKind::Actpc {
                data.priors.clone()
            } else {
                ClassPrior::uniform(N_OUTCOMES)
            };
            let m = actpc_train(
                &series,
                &data.labels,
                &priors,
                pheno_core::actpc::ActpcConfig {
                    k,
                    seed,
                    ..cfg.actpc.clone()
                },
            )?;
            losses.push(("pretrain", m.pretrain_history.clone()));
            losses.push(("selector", m.selector_history.clone()));
            losses.push(("train", m.loss_history.clone()));
            Fitted::Actpc(m)
        }
    };
    Ok(FitOutput {
        model: ModelFile {
            kind,
            grid: pre.config.grid,
            model,
        },
        preprocessor: pre,
        split,
        losses,
        elbow_curve,
    })
}

/// Final cluster of every cohort patient, in cohort order. The coverage
/// filter is not applied, so sparse patients are still assigned.
pub fn assign(model: &ModelFile, pre: &Preprocessor, cohort: &Cohort) -> Result<Vec<(String, usize)>> {
    if model.grid != pre.config.grid {
        return Err(CliError::validation("model grid differs from the preprocessing grid"));
    }
    let mut all = pre.clone();
    all.config.min_coverage = 0.0;
    let data = all.apply(cohort)?;
    data.series
        .iter()
        .map(|s| Ok((s.patient_id.clone(), model.model.final_cluster(&s.values, &model.grid)?)))
        .collect()
}

/// Looks up a per-patient value for each cohort patient.
pub fn align<T: Copy>(cohort: &Cohort, rows: &[(String, T)], what: &str) -> Result<Vec<T>> {
    let map: HashMap<&str, T> = rows.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    cohort
        .patients()
        .iter()
        .map(|p| {
            map.get(p.patient_id())
                .copied()
                .ok_or_else(|| CliError::validation(format!("patient {} is missing from the {what}", p.patient_id())))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub profiles: Vec<ClusterProfile>,
}

/// Training-split profiles score the test split.
pub fn evaluate(
    tag: &str,
    pre: &Preprocessor,
    cohort: &Cohort,
    parts: &[Part],
    clusters: &[usize],
    truth: Option<&[usize]>,
) -> Result<Evaluation> {
    let grid = GridSpec::visualization();
    let traj = pre.trajectories(cohort, &grid)?;
    let labels = cohort.labels();
    let pick = |part: Part| -> Vec<usize> { (0..parts.len()).filter(|&i| parts[i] == part).collect() };
    let (train, test) = (pick(Part::Train), pick(Part::Test));
    if train.is_empty() || test.is_empty() {
        return Err(CliError::validation("evaluation needs patients in both splits"));
    }
    let sel_usize = |v: &[usize], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let sel_out = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<Outcome>>();
    let profiles = eval::cluster_profiles(
        &sel_usize(clusters, &train),
        &sel_out(&train),
        &train.iter().map(|&i| traj[i].clone()).collect::<Vec<_>>(),
    )?;
    let test_clusters = sel_usize(clusters, &test);
    let scores = eval::score_patients(&test_clusters, &profiles)?;
    let mut report = eval::evaluate(tag, &test_clusters, &scores, &sel_out(&test))?;
    if let Some(t) = truth {
        report.nmi_truth = Some(eval::nmi(&test_clusters, &sel_usize(t, &test))?);
    }
    Ok(Evaluation { report, profiles })
}
