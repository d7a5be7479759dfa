//! Patients, vital-sign channels, outcome labels and class priors.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of vital-sign channels in every series.
pub const N_CHANNELS: usize = 8;
/// Number of outcome classes.
pub const N_OUTCOMES: usize = 4;

/// Tolerance on `Σ α_c = 1`.
pub const PRIOR_SUM_TOL: f64 = 1e-12;

/// Vital-sign channel. The discriminant is the column index used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VitalChannel {
    /// Heart rate, beats/min.
    Hr = 0,
    /// Respiratory rate, breaths/min.
    Rr = 1,
    /// Diastolic blood pressure, mmHg.
    Dbp = 2,
    /// Systolic blood pressure, mmHg.
    Sbp = 3,
    /// Oxygen saturation, %.
    Spo2 = 4,
    /// Temperature, °C.
    Temp = 5,
    /// Alert/Verbal/Pain/Unresponsive as ordinal 1..=4.
    Avpu = 6,
    /// Estimated fraction of inspired oxygen, 0.21..=1.0.
    Fio2 = 7,
}

impl VitalChannel {
    pub const ALL: [VitalChannel; N_CHANNELS] = [
        VitalChannel::Hr,
        VitalChannel::Rr,
        VitalChannel::Dbp,
        VitalChannel::Sbp,
        VitalChannel::Spo2,
        VitalChannel::Temp,
        VitalChannel::Avpu,
        VitalChannel::Fio2,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    /// Column name used in the cohort CSV header.
    pub const fn name(self) -> &'static str {
        match self {
            VitalChannel::Hr => "HR",
            VitalChannel::Rr => "RR",
            VitalChannel::Dbp => "DBP",
            VitalChannel::Sbp => "SBP",
            VitalChannel::Spo2 => "SPO2",
            VitalChannel::Temp => "TEMP",
            VitalChannel::Avpu => "AVPU",
            VitalChannel::Fio2 => "FIO2",
        }
    }

    pub const fn unit(self) -> &'static str {
        match self {
            VitalChannel::Hr => "beats/min",
            VitalChannel::Rr => "breaths/min",
            VitalChannel::Dbp | VitalChannel::Sbp => "mmHg",
            VitalChannel::Spo2 => "%",
            VitalChannel::Temp => "°C",
            VitalChannel::Avpu => "ordinal",
            VitalChannel::Fio2 => "fraction",
        }
    }

    /// Case-insensitive lookup by column name.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for VitalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// FIO2 given as a percentage (> 1) is converted to a fraction.
pub fn fio2_fraction(value: f64) -> f64 {
    if value > 1.0 {
        value / 100.0
    } else {
        value
    }
}

/// Terminal event of an admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Discharge = 0,
    IcuAdmission = 1,
    CardiacArrest = 2,
    Death = 3,
}

impl Outcome {
    pub const ALL: [Outcome; N_OUTCOMES] = [
        Outcome::Discharge,
        Outcome::IcuAdmission,
        Outcome::CardiacArrest,
        Outcome::Death,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Spelling used in the `outcome` CSV column.
    pub const fn as_str(self) -> &'static str {
        match self {
            Outcome::Discharge => "discharge",
            Outcome::IcuAdmission => "icu",
            Outcome::CardiacArrest => "cardiac_arrest",
            Outcome::Death => "death",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.as_str() == s.trim())
            .ok_or_else(|| Error::validation(format!("unknown outcome `{}`", s.trim())))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-hot outcome label over `n_classes` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OutcomeLabel {
    class: usize,
    n_classes: usize,
}

impl OutcomeLabel {
    pub fn new(class: usize, n_classes: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::validation(format!(
                "class {class} out of range for {n_classes} classes"
            )));
        }
        Ok(OutcomeLabel { class, n_classes })
    }

    /// Parses a one-hot vector; entries must be 0 or 1 and sum to exactly 1.
    pub fn from_one_hot(one_hot: &[f64]) -> Result<Self> {
        let mut class = None;
        for (c, &v) in one_hot.iter().enumerate() {
            if v == 1.0 {
                if class.replace(c).is_some() {
                    return Err(Error::validation("one-hot label has several ones"));
                }
            } else if v != 0.0 {
                return Err(Error::validation("one-hot entries must be 0 or 1"));
            }
        }
        let class = class.ok_or_else(|| Error::validation("one-hot label has no one"))?;
        Self::new(class, one_hot.len())
    }

    pub fn class(self) -> usize {
        self.class
    }

    pub fn n_classes(self) -> usize {
        self.n_classes
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        v[self.class] = 1.0;
        v
    }
}

impl From<Outcome> for OutcomeLabel {
    fn from(o: Outcome) -> Self {
        OutcomeLabel {
            class: o.index(),
            n_classes: N_OUTCOMES,
        }
    }
}

/// Class proportions `α_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    alpha: Vec<f64>,
}

impl ClassPrior {
    /// Validates `α_c ≥ 0` and `Σ α_c = 1` within [`PRIOR_SUM_TOL`].
    pub fn from_alpha(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::validation("class prior needs at least one class"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::validation("class proportions must be finite and >= 0"));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::validation(format!("class proportions sum to {sum}, expected 1")));
        }
        Ok(ClassPrior { alpha })
    }

    pub fn uniform(n_classes: usize) -> Self {
        ClassPrior {
            alpha: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    /// `1/α_c` per class; every class must be present.
    pub fn inverse_weights(&self) -> Result<Vec<f64>> {
        if let Some(c) = self.alpha.iter().position(|a| *a <= 0.0) {
            return Err(Error::validation(format!(
                "class {c} has prior {}; loss weights need every alpha_c > 0",
                self.alpha[c]
            )));
        }
        Ok(self.alpha.iter().map(|a| 1.0 / a).collect())
    }
}

/// `α_c = count(c) / N`.
pub fn compute_priors(labels: &[OutcomeLabel]) -> Result<ClassPrior> {
    let first = labels
        .first()
        .ok_or_else(|| Error::validation("cannot compute priors of an empty label list"))?;
    let n_classes = first.n_classes();
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        if l.n_classes() != n_classes {
            return Err(Error::validation("labels disagree on the number of classes"));
        }
        counts[l.class()] += 1;
    }
    let n = labels.len() as f64;
    Ok(ClassPrior {
        alpha: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// One patient's observations, stored in chronological order
/// (hours-to-outcome strictly decreasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeries {
    patient_id: String,
    times: Vec<f64>,
    values: Vec<[f64; N_CHANNELS]>,
    mask: Vec<[bool; N_CHANNELS]>,
}

/// A reading per channel, `None` when not observed.
pub type ObservationRow = [Option<f64>; N_CHANNELS];

impl PatientSeries {
    /// Builds a series from chronologically ordered rows. Rows must be exactly
    /// [`N_CHANNELS`] wide.
    pub fn new(
        patient_id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if values.len() != times.len() || mask.len() != times.len() {
            return Err(Error::validation(format!(
                "patient {patient_id}: times, values and mask lengths differ"
            )));
        }
        let mut vals = Vec::with_capacity(values.len());
        let mut msk = Vec::with_capacity(mask.len());
        for (row, mrow) in values.iter().zip(&mask) {
            if row.len() != N_CHANNELS || mrow.len() != N_CHANNELS {
                return Err(Error::validation(format!(
                    "patient {patient_id}: rows must have exactly {N_CHANNELS} channels, got {}",
                    if row.len() != N_CHANNELS { row.len() } else { mrow.len() }
                )));
            }
            let mut v = [0.0; N_CHANNELS];
            let mut m = [false; N_CHANNELS];
            v.copy_from_slice(row);
            m.copy_from_slice(mrow);
            vals.push(v);
            msk.push(m);
        }
        Self::from_parts(patient_id, times, vals, msk)
    }

    /// Builds a series from `(hours_to_outcome, readings)` pairs in any order;
    /// rows are sorted chronologically (largest hours-to-outcome first).
    pub fn from_observations(patient_id: impl Into<String>, mut rows: Vec<(f64, ObservationRow)>) -> Result<Self> {
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut times = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        let mut mask = Vec::with_capacity(rows.len());
        for (t, row) in rows {
            times.push(t);
            values.push(row.map(|r| r.unwrap_or(0.0)));
            mask.push(row.map(|r| r.is_some()));
        }
        Self::from_parts(patient_id.into(), times, values, mask)
    }

    fn from_parts(
        patient_id: String,
        times: Vec<f64>,
        values: Vec<[f64; N_CHANNELS]>,
        mask: Vec<[bool; N_CHANNELS]>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::validation(format!(
                "patient {patient_id} has no observation rows"
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::validation(format!(
                "patient {patient_id}: hours_to_outcome {t} must be finite and non-negative"
            )));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::validation(format!(
                "patient {patient_id}: times must be strictly decreasing in hours-to-outcome \
                 (found {} then {})",
                w[0], w[1]
            )));
        }
        for (row, m) in values.iter().zip(&mask) {
            if row.iter().zip(m).any(|(v, &obs)| obs && !v.is_finite()) {
                return Err(Error::validation(format!(
                    "patient {patient_id}: observed readings must be finite"
                )));
            }
        }
        Ok(PatientSeries {
            patient_id,
            times,
            values,
            mask,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Hours before outcome of each row, chronological.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[[f64; N_CHANNELS]] {
        &self.values
    }

    pub fn mask(&self) -> &[[bool; N_CHANNELS]] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observed reading of `channel` at row `row`.
    pub fn reading(&self, row: usize, channel: VitalChannel) -> Option<f64> {
        let c = channel.index();
        self.mask[row][c].then(|| self.values[row][c])
    }

    /// Number of observed cells.
    pub fn observation_count(&self) -> usize {
        self.mask.iter().flatten().filter(|m| **m).count()
    }

    /// Copy with the given cells unobserved.
    pub fn with_mask(&self, mask: Vec<[bool; N_CHANNELS]>) -> Self {
        debug_assert_eq!(mask.len(), self.mask.len());
        PatientSeries { mask, ..self.clone() }
    }

    /// Equality on ids, times, masks and observed values within `tol`.
    pub fn approx_eq(&self, other: &PatientSeries, tol: f64) -> bool {
        self.patient_id == other.patient_id
            && self.times.len() == other.times.len()
            && self.mask == other.mask
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= tol)
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), m)| (0..N_CHANNELS).all(|c| !m[c] || (a[c] - b[c]).abs() <= tol))
    }
}

/// Labeled patients with their class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<PatientSeries>,
    labels: Vec<Outcome>,
    priors: ClassPrior,
}

impl Cohort {
    pub fn new(patients: Vec<PatientSeries>, labels: Vec<Outcome>) -> Result<Self> {
        if patients.is_empty() {
            return Err(Error::validation("cohort needs at least one patient"));
        }
        if patients.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} patients but {} labels",
                patients.len(),
                labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id()) {
                return Err(Error::validation(format!("duplicate patient_id `{}`", p.patient_id())));
            }
        }
        let priors = outcome_priors(&labels)?;
        Ok(Cohort {
            patients,
            labels,
            priors,
        })
    }

    pub fn patients(&self) -> &[PatientSeries] {
        &self.patients
    }

    pub fn labels(&self) -> &[Outcome] {
        &self.labels
    }

    pub fn priors(&self) -> &ClassPrior {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn outcome_labels(&self) -> Vec<OutcomeLabel> {
        self.labels.iter().map(|&o| o.into()).collect()
    }

    /// Sub-cohort of the given patient indices (priors recomputed).
    pub fn subset(&self, indices: &[usize]) -> Result<Cohort> {
        Cohort::new(
            indices.iter().map(|&i| self.patients[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn approx_eq(&self, other: &Cohort, tol: f64) -> bool {
        self.labels == other.labels
            && self.patients.len() == other.patients.len()
            && self
                .patients
                .iter()
                .zip(&other.patients)
                .all(|(a, b)| a.approx_eq(b, tol))
            && self
                .priors
                .alpha()
                .iter()
                .zip(other.priors.alpha())
                .all(|(a, b)| (a - b).abs() <= PRIOR_SUM_TOL)
    }
}

/// Priors of a list of outcomes over the four outcome classes.
pub fn outcome_priors(labels: &[Outcome]) -> Result<ClassPrior> {
    let labels: Vec<OutcomeLabel> = labels.iter().map(|&o| o.into()).collect();
    compute_priors(&labels)
}
