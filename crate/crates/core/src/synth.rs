//! Synthetic labelled cohorts with planted phenotypes.
//!
//! Each phenotype has its own per-channel dynamics and outcome distribution.
//! Phenotype prevalences are solved so that the overall outcome mix matches
//! the configured imbalance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// Unused when std is linked into the build: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Outcome, PatientSeries, VitalChannel, N_CHANNELS, N_OUTCOMES};
use crate::preprocess::{ClampRanges, GridSpec};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Default overall outcome proportions (discharge, ICU, arrest, death).
pub const DEFAULT_IMBALANCE: [f64; N_OUTCOMES] = [0.939, 0.030, 0.011, 0.020];
const MIX_TOL: f64 = 1e-9;
const PREVALENCE_TOL: f64 = 1e-6;

/// `baseline + trend·(window_start − t) + amplitude·sin(2πt/period) + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDynamics {
    pub baseline: f64,
    /// Change per hour elapsed since the window start.
    pub trend: f64,
    pub amplitude: f64,
    pub period: f64,
    pub noise_std: f64,
}

impl ChannelDynamics {
    pub const fn flat(baseline: f64, noise_std: f64) -> Self {
        ChannelDynamics {
            baseline,
            trend: 0.0,
            amplitude: 0.0,
            period: 24.0,
            noise_std,
        }
    }

    /// Noise-free value `hours` before the outcome.
    pub fn mean_at(&self, hours: f64, window_start: f64) -> f64 {
        self.baseline + self.trend * (window_start - hours) + self.amplitude * (2.0 * PI * hours / self.period).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    pub outcome_mix: [f64; N_OUTCOMES],
    pub dynamics: [ChannelDynamics; N_CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub phenotypes: Vec<Phenotype>,
    pub imbalance: [f64; N_OUTCOMES],
    pub seed: u64,
    pub cadence_hours: f64,
    pub dropout: f64,
    /// Observations span `window_start_hours` down to zero hours before outcome.
    pub window_start_hours: f64,
}

impl SynthConfig {
    pub fn phenotype_count(&self) -> usize {
        self.phenotypes.len()
    }

    pub fn with_imbalance(mut self, imbalance: [f64; N_OUTCOMES]) -> Self {
        self.imbalance = imbalance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::validation("n_patients must be positive"));
        }
        if self.phenotypes.is_empty() {
            return Err(Error::validation("at least one phenotype is required"));
        }
        check_distribution("imbalance", &self.imbalance)?;
        for (k, p) in self.phenotypes.iter().enumerate() {
            check_distribution(&format!("outcome_mix of phenotype {k}"), &p.outcome_mix)?;
            for d in &p.dynamics {
                let ok = [d.baseline, d.trend, d.amplitude].iter().all(|v| v.is_finite())
                    && d.period > 0.0
                    && d.noise_std >= 0.0;
                if !ok {
                    return Err(Error::validation(format!("phenotype {k} has invalid dynamics")));
                }
            }
        }
        if !(self.cadence_hours > 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.window_start_hours > 0.0) {
            return Err(Error::validation("cadence, dropout or window is out of range"));
        }
        Ok(())
    }
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > MIX_TOL {
        return Err(Error::validation(format!("{name} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Phenotype weights `w` with `Σ_k w_k · mix_k = imbalance`, found by
/// multiplicative (EM) updates from uniform weights.
pub fn phenotype_prevalences(config: &SynthConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let k = config.phenotype_count();
    let mut w = vec![1.0 / k as f64; k];
    let implied = |w: &[f64]| -> [f64; N_OUTCOMES] {
        let mut m = [0.0; N_OUTCOMES];
        for (wk, p) in w.iter().zip(&config.phenotypes) {
            for c in 0..N_OUTCOMES {
                m[c] += wk * p.outcome_mix[c];
            }
        }
        m
    };
    for _ in 0..20_000 {
        let m = implied(&w);
        let next: Vec<f64> = w
            .iter()
            .zip(&config.phenotypes)
            .map(|(wk, p)| {
                let ratio: f64 = (0..N_OUTCOMES)
                    .filter(|&c| m[c] > 0.0)
                    .map(|c| p.outcome_mix[c] * config.imbalance[c] / m[c])
                    .sum();
                wk * ratio
            })
            .collect();
        let delta = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let m = implied(&w);
    let residual = m
        .iter()
        .zip(&config.imbalance)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > PREVALENCE_TOL {
        return Err(Error::validation(format!(
            "imbalance is not reachable from the phenotype outcome mixes (residual {residual:.2e})"
        )));
    }
    Ok(w)
}

/// A generated cohort with its planted phenotype ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub cohort: Cohort,
    pub phenotypes: Vec<usize>,
    pub prevalences: Vec<f64>,
}

fn categorical(rng: &mut Rng, p: &[f64]) -> usize {
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

fn plausible(channel: VitalChannel, value: f64, clamp: &ClampRanges) -> f64 {
    let (lo, hi) = clamp.bounds[channel.index()];
    let v = if channel == VitalChannel::Avpu {
        value.round()
    } else {
        value
    };
    v.max(lo).min(hi)
}

/// Patient `index`, drawn from its own random stream.
fn generate_patient(
    config: &SynthConfig,
    prevalences: &[f64],
    index: usize,
) -> Result<(PatientSeries, Outcome, usize)> {
    let mut rng = rng::stream(config.seed, index as u64);
    let phenotype = categorical(&mut rng, prevalences);
    let spec = &config.phenotypes[phenotype];
    let outcome = Outcome::ALL[categorical(&mut rng, &spec.outcome_mix)];
    let clamp = ClampRanges::default();
    let slots = (config.window_start_hours / config.cadence_hours).floor() as usize;
    let jitter = config.cadence_hours / 4.0;
    let mut rows = Vec::with_capacity(slots + 1);
    for j in 0..=slots {
        let nominal = config.window_start_hours - j as f64 * config.cadence_hours;
        let t = (nominal + rng.random_range(-jitter..=jitter)).max(0.0);
        let keep = rng.random::<f64>() >= config.dropout;
        let mut row = [None; N_CHANNELS];
        for ch in VitalChannel::ALL {
            let d = &spec.dynamics[ch.index()];
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = d.mean_at(t, config.window_start_hours) + d.noise_std * noise;
            row[ch.index()] = Some(plausible(ch, v, &clamp));
        }
        if keep {
            rows.push((t, row));
        }
    }
    if rows.is_empty() {
        let t = config.window_start_hours;
        let row = VitalChannel::ALL.map(|ch| Some(plausible(ch, spec.dynamics[ch.index()].baseline, &clamp)));
        rows.push((t, row));
    }
    let series = PatientSeries::from_observations(format!("P{index:05}"), rows)?;
    Ok((series, outcome, phenotype))
}

/// Draws a cohort; identical configurations give identical cohorts.
pub fn generate(config: &SynthConfig) -> Result<Synthesized> {
    let prevalences = phenotype_prevalences(config)?;
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut labels = Vec::with_capacity(config.n_patients);
    let mut phenotypes = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let (p, o, k) = generate_patient(config, &prevalences, i)?;
        patients.push(p);
        labels.push(o);
        phenotypes.push(k);
    }
    Ok(Synthesized {
        cohort: Cohort::new(patients, labels)?,
        phenotypes,
        prevalences,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separability {
    Easy,
    Hard,
}

impl Separability {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Separability::Easy),
            "hard" => Ok(Separability::Hard),
            other => Err(Error::validation(format!(
                "unknown preset {other:?} (expected easy or hard)"
            ))),
        }
    }
}

/// Four phenotypes, each tied to one outcome, with balanced outcome targets.
/// Only RR, HR and SPO2 differ between phenotypes.
pub fn make_separable_preset(level: Separability, n_patients: usize, seed: u64) -> SynthConfig {
    use ChannelDynamics as D;
    let circ = |baseline: f64, trend: f64, amplitude: f64, noise_std: f64| D {
        baseline,
        trend,
        amplitude,
        period: 24.0,
        noise_std,
    };
    // Sign patterns place the phenotypes at the corners of a regular
    // tetrahedron in (RR, HR, SPO2) noise units, so no pair is closer than
    // any other. Phenotype 3 deteriorates: RR rises and SPO2 falls.
    const SIGNS: [[f64; 3]; 4] = [[-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, 1.0]];
    const CENTER: [f64; 3] = [18.0, 80.0, 95.0];
    const NOISE: [f64; 3] = [2.0, 5.0, 1.0];
    let (offset, trends): (f64, [[f64; 3]; 4]) = match level {
        Separability::Easy => (
            1.75,
            [
                [0.0, 0.0, 0.0],
                [0.01, 0.0, 0.0],
                [-0.01, 0.0, 0.0],
                [0.04, 0.02, -0.03],
            ],
        ),
        Separability::Hard => (0.45, [[0.0; 3]; 4]),
    };
    let table: Vec<(f64, f64, f64, f64, f64, f64)> = SIGNS
        .iter()
        .zip(&trends)
        .map(|(s, t)| {
            let b = |i: usize| CENTER[i] + s[i] * offset * NOISE[i];
            (b(0), t[0], b(1), t[1], b(2), t[2])
        })
        .collect();
    let phenotypes = table
        .iter()
        .enumerate()
        .map(|(k, &(rr, rr_t, hr, hr_t, sp, sp_t))| {
            let mut outcome_mix = [0.0; N_OUTCOMES];
            outcome_mix[k] = 1.0;
            Phenotype {
                outcome_mix,
                dynamics: [
                    circ(hr, hr_t, 1.0, 5.0),
                    circ(rr, rr_t, 0.5, 2.0),
                    circ(70.0, 0.0, 0.0, 6.0),
                    circ(120.0, 0.0, 0.0, 10.0),
                    circ(sp, sp_t, 0.0, 1.0),
                    circ(36.8, 0.0, 0.0, 0.3),
                    D::flat(1.2, 0.4),
                    D::flat(0.25, 0.03),
                ],
            }
        })
        .collect();
    SynthConfig {
        n_patients,
        phenotypes,
        imbalance: [0.25; N_OUTCOMES],
        seed,
        cadence_hours: 4.0,
        dropout: 0.2,
        window_start_hours: 168.0,
    }
}

/// For every phenotype pair, the largest over channels of the RMS difference
/// of noise-free mean trajectories across `grid`'s window, divided by the
/// pooled noise std of that channel.
pub fn pairwise_separation(config: &SynthConfig, grid: &GridSpec) -> Vec<((usize, usize), f64)> {
    let hours: Vec<f64> = (0..grid.n_bins()).map(|i| grid.bin_center(i)).collect();
    let k = config.phenotype_count();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let ratio = (0..N_CHANNELS)
                .map(|c| {
                    let da = &config.phenotypes[a].dynamics[c];
                    let db = &config.phenotypes[b].dynamics[c];
                    let ms: f64 = hours
                        .iter()
                        .map(|&t| {
                            let d = da.mean_at(t, config.window_start_hours) - db.mean_at(t, config.window_start_hours);
                            d * d
                        })
                        .sum::<f64>()
                        / hours.len() as f64;
                    let noise = ((da.noise_std.powi(2) + db.noise_std.powi(2)) / 2.0).sqrt();
                    if noise > 0.0 {
                        ms.sqrt() / noise
                    } else if ms > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max);
            out.push(((a, b), ratio));
        }
    }
    out
}
