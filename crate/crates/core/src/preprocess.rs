//! Raw irregular observations to fixed-grid, outlier-clamped, imputed and
//! standardized matrices.
//!
//! Pipeline: clamp → regrid → coverage filter → impute → normalize. Medians and
//! normalization statistics are fit on a training cohort only and then applied
//! unchanged to any other cohort.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cohort::{outcome_priors, ClassPrior, Cohort, Outcome, PatientSeries, VitalChannel, N_CHANNELS};
use crate::{Error, Matrix, Result};

/// Regular time-to-outcome grid. Bin `i` (0 = earliest) covers hours-to-outcome
/// `[start − (i+1)·bin, start − i·bin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bin_hours: f64,
    pub window_start_hours: f64,
    pub window_end_hours: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bin_hours: 4.0,
            window_start_hours: 168.0,
            window_end_hours: 72.0,
        }
    }
}

impl GridSpec {
    pub fn new(bin_hours: f64, window_start_hours: f64, window_end_hours: f64) -> Result<Self> {
        let g = GridSpec {
            bin_hours,
            window_start_hours,
            window_end_hours,
        };
        g.validate()?;
        Ok(g)
    }

    /// The seven-day window up to the outcome used for cluster trajectories.
    pub fn visualization() -> Self {
        GridSpec {
            bin_hours: 4.0,
            window_start_hours: 168.0,
            window_end_hours: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let GridSpec {
            bin_hours: bin,
            window_start_hours: start,
            window_end_hours: end,
        } = *self;
        if !(bin.is_finite() && bin > 0.0) {
            return Err(Error::validation("grid bin_hours must be positive"));
        }
        if !(start.is_finite() && end.is_finite() && start > end && end >= 0.0) {
            return Err(Error::validation(
                "grid needs window_start_hours > window_end_hours >= 0",
            ));
        }
        let ratio = (start - end) / bin;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::validation(format!(
                "grid window {start}..{end} is not a positive multiple of {bin} hours"
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.window_start_hours - self.window_end_hours) / self.bin_hours).round() as usize
    }

    /// `(low, high)` hours-to-outcome of bin `i`.
    pub fn bin_bounds(&self, i: usize) -> (f64, f64) {
        let hi = self.window_start_hours - i as f64 * self.bin_hours;
        (hi - self.bin_hours, hi)
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        let (lo, hi) = self.bin_bounds(i);
        0.5 * (lo + hi)
    }

    /// Bin holding an observation at `hours` before outcome, if inside the window.
    pub fn bin_index(&self, hours: f64) -> Option<usize> {
        if !(hours >= self.window_end_hours && hours < self.window_start_hours) {
            return None;
        }
        let offset = (self.window_start_hours - hours) / self.bin_hours;
        let idx = offset.ceil() as usize;
        Some(idx.saturating_sub(1).min(self.n_bins() - 1))
    }

    /// Number of trailing bins spanning `hours`.
    pub fn bins_spanning(&self, hours: f64) -> usize {
        (hours / self.bin_hours).ceil() as usize
    }
}

/// Physiological plausibility bounds per channel (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampRanges {
    pub bounds: [(f64, f64); N_CHANNELS],
}

impl Default for ClampRanges {
    fn default() -> Self {
        ClampRanges {
            bounds: [
                (20.0, 250.0),
                (4.0, 60.0),
                (20.0, 150.0),
                (40.0, 250.0),
                (50.0, 100.0),
                (30.0, 43.0),
                (1.0, 4.0),
                (0.21, 1.0),
            ],
        }
    }
}

impl ClampRanges {
    /// AVPU must additionally be a whole number.
    pub fn contains(&self, channel: VitalChannel, value: f64) -> bool {
        let (lo, hi) = self.bounds[channel.index()];
        let in_range = value >= lo && value <= hi;
        match channel {
            VitalChannel::Avpu => in_range && value == value.round(),
            _ => in_range,
        }
    }
}

/// Masks out readings outside `ranges`; in-range readings are untouched.
pub fn clamp_outliers(series: &PatientSeries, ranges: &ClampRanges) -> PatientSeries {
    let mask = series
        .values()
        .iter()
        .zip(series.mask())
        .map(|(row, m)| {
            let mut out = *m;
            for ch in VitalChannel::ALL {
                let c = ch.index();
                out[c] = m[c] && ranges.contains(ch, row[c]);
            }
            out
        })
        .collect();
    series.with_mask(mask)
}

/// Bin means before imputation. Missing bins hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Regridded {
    pub values: Matrix,
    pub counts: Vec<[u32; N_CHANNELS]>,
}

impl Regridded {
    pub fn is_observed(&self, bin: usize, channel: usize) -> bool {
        self.counts[bin][channel] > 0
    }

    /// Per channel, fraction of bins with at least one observation.
    pub fn observed_fraction(&self) -> [f64; N_CHANNELS] {
        let n = self.counts.len() as f64;
        let mut out = [0.0; N_CHANNELS];
        for row in &self.counts {
            for (o, &c) in out.iter_mut().zip(row) {
                if c > 0 {
                    *o += 1.0;
                }
            }
        }
        out.map(|c| c / n)
    }

    /// Observed fraction averaged over channels.
    pub fn coverage(&self) -> f64 {
        self.observed_fraction().iter().sum::<f64>() / N_CHANNELS as f64
    }
}

/// Averages observations per bin; observations outside the window are ignored.
pub fn regrid(series: &PatientSeries, grid: &GridSpec) -> Result<Regridded> {
    grid.validate()?;
    let n = grid.n_bins();
    let mut sums = Matrix::zeros(n, N_CHANNELS);
    let mut counts = vec![[0u32; N_CHANNELS]; n];
    for ((&t, row), m) in series.times().iter().zip(series.values()).zip(series.mask()) {
        let Some(b) = grid.bin_index(t) else { continue };
        for c in 0..N_CHANNELS {
            if m[c] {
                sums.set(b, c, sums.get(b, c) + row[c]);
                counts[b][c] += 1;
            }
        }
    }
    for b in 0..n {
        for c in 0..N_CHANNELS {
            let v = match counts[b][c] {
                0 => f64::NAN,
                k => sums.get(b, c) / f64::from(k),
            };
            sums.set(b, c, v);
        }
    }
    Ok(Regridded { values: sums, counts })
}

/// Forward-fills each channel chronologically; bins before the first
/// observation, and channels never observed, take the channel fill value.
pub fn impute(regridded: &Regridded, fill: &[f64; N_CHANNELS]) -> Matrix {
    let n = regridded.counts.len();
    let mut out = Matrix::zeros(n, N_CHANNELS);
    for c in 0..N_CHANNELS {
        let mut last = None;
        for b in 0..n {
            if regridded.is_observed(b, c) {
                last = Some(regridded.values.get(b, c));
            }
            out.set(b, c, last.unwrap_or(fill[c]));
        }
    }
    out
}

/// Per-channel median of all observed bin values.
pub fn channel_medians(regridded: &[Regridded]) -> Result<[f64; N_CHANNELS]> {
    let mut out = [0.0; N_CHANNELS];
    for (c, o) in out.iter_mut().enumerate() {
        let mut vals: Vec<f64> = regridded
            .iter()
            .flat_map(|r| {
                (0..r.counts.len())
                    .filter(move |&b| r.is_observed(b, c))
                    .map(move |b| r.values.get(b, c))
            })
            .collect();
        if vals.is_empty() {
            return Err(Error::validation(format!(
                "channel {} has no observations in the training cohort",
                VitalChannel::ALL[c]
            )));
        }
        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        *o = if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        };
    }
    Ok(out)
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; N_CHANNELS],
    pub std: [f64; N_CHANNELS],
}

impl NormStats {
    /// Pooled mean and population standard deviation over all bins of all
    /// matrices. Needs at least two patients and no constant channel.
    pub fn fit(matrices: &[Matrix]) -> Result<Self> {
        if matrices.len() < 2 {
            return Err(Error::validation("normalization statistics need at least two patients"));
        }
        let mut mean = [0.0; N_CHANNELS];
        let mut std = [0.0; N_CHANNELS];
        let mut n = 0usize;
        for m in matrices {
            if m.cols() != N_CHANNELS {
                return Err(Error::validation("matrices must have 8 channels"));
            }
            for row in m.iter_rows() {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
                n += 1;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        for m in matrices {
            for row in m.iter_rows() {
                for c in 0..N_CHANNELS {
                    let d = row[c] - mean[c];
                    std[c] += d * d;
                }
            }
        }
        for c in 0..N_CHANNELS {
            std[c] = (std[c] / n as f64).sqrt();
            if !(std[c] > 1e-10 * mean[c].abs().max(1.0)) {
                return Err(Error::validation(format!(
                    "channel {} has zero variance in the training cohort",
                    VitalChannel::ALL[c]
                )));
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (c, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn denormalize(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (c, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// A patient on the model grid in normalized units, fully imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularGridSeries {
    pub patient_id: String,
    pub grid: GridSpec,
    pub values: Matrix,
    pub observed_fraction: [f64; N_CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub grid: GridSpec,
    pub clamp: ClampRanges,
    /// Patients whose channel-averaged observed fraction is below this are dropped.
    pub min_coverage: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            grid: GridSpec::default(),
            clamp: ClampRanges::default(),
            min_coverage: 0.1,
        }
    }
}

/// Output of the pipeline: retained patients, their labels and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub series: Vec<RegularGridSeries>,
    pub labels: Vec<Outcome>,
    pub priors: ClassPrior,
    /// Index in the input cohort of each retained patient.
    pub retained: Vec<usize>,
}

impl Preprocessed {
    pub fn matrices(&self) -> Vec<Matrix> {
        self.series.iter().map(|s| s.values.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

/// Fitted preprocessing state: configuration, imputation medians, statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub medians: [f64; N_CHANNELS],
    pub stats: NormStats,
}

impl Preprocessor {
    /// Fits medians and statistics on `cohort` and returns it preprocessed.
    pub fn fit(cohort: &Cohort, config: PreprocessConfig) -> Result<(Self, Preprocessed)> {
        config.grid.validate()?;
        let (retained, regridded) = regrid_and_filter(cohort, &config)?;
        let medians = channel_medians(&regridded)?;
        let imputed: Vec<Matrix> = regridded.iter().map(|r| impute(r, &medians)).collect();
        let stats = NormStats::fit(&imputed)?;
        let pre = Preprocessor { config, medians, stats };
        let out = pre.assemble(cohort, retained, &regridded, imputed)?;
        Ok((pre, out))
    }

    /// Applies the fitted state to another cohort.
    pub fn apply(&self, cohort: &Cohort) -> Result<Preprocessed> {
        self.config.grid.validate()?;
        let (retained, regridded) = regrid_and_filter(cohort, &self.config)?;
        let imputed = regridded.iter().map(|r| impute(r, &self.medians)).collect();
        self.assemble(cohort, retained, &regridded, imputed)
    }

    fn assemble(
        &self,
        cohort: &Cohort,
        retained: Vec<usize>,
        regridded: &[Regridded],
        imputed: Vec<Matrix>,
    ) -> Result<Preprocessed> {
        let series = retained
            .iter()
            .zip(regridded)
            .zip(imputed)
            .map(|((&i, r), m)| RegularGridSeries {
                patient_id: cohort.patients()[i].patient_id().into(),
                grid: self.config.grid,
                values: self.stats.normalize(&m),
                observed_fraction: r.observed_fraction(),
            })
            .collect();
        let labels: Vec<Outcome> = retained.iter().map(|&i| cohort.labels()[i]).collect();
        let priors = outcome_priors(&labels)?;
        Ok(Preprocessed {
            series,
            labels,
            priors,
            retained,
        })
    }

    /// Clamped, regridded and imputed trajectories in channel units on `grid`,
    /// one per cohort patient (no coverage filter, no normalization).
    pub fn trajectories(&self, cohort: &Cohort, grid: &GridSpec) -> Result<Vec<Matrix>> {
        cohort
            .patients()
            .iter()
            .map(|p| {
                let r = regrid(&clamp_outliers(p, &self.config.clamp), grid)?;
                Ok(impute(&r, &self.medians))
            })
            .collect()
    }
}

fn regrid_and_filter(cohort: &Cohort, config: &PreprocessConfig) -> Result<(Vec<usize>, Vec<Regridded>)> {
    let mut retained = Vec::new();
    let mut regridded = Vec::new();
    for (i, p) in cohort.patients().iter().enumerate() {
        let r = regrid(&clamp_outliers(p, &config.clamp), &config.grid)?;
        if r.coverage() >= config.min_coverage {
            retained.push(i);
            regridded.push(r);
        }
    }
    if retained.is_empty() {
        return Err(Error::validation(
            "every patient fell below the minimum coverage; nothing to model",
        ));
    }
    Ok((retained, regridded))
}
