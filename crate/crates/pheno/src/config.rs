//! Run configuration: defaults, then a `key=value` file, then flags.
//!
//! Keys use section prefixes mirroring the nested structure, e.g.
//! `actpc.lr=0.001`, `somvae.loss_weights.commit=0.5`, `grid.bin_hours=4`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pheno_core::actpc::ActpcConfig;
use pheno_core::dtw::Metric;
use pheno_core::preprocess::{ClampRanges, GridSpec, PreprocessConfig};
use pheno_core::somvae::SomVaeConfig;
use pheno_core::tskm;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "PHENO_SEED";

/// The five model tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TskmEuclid,
    TskmDtw,
    Somvae,
    Actpc,
    ActpcUnweighted,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::TskmEuclid,
        ModelKind::TskmDtw,
        ModelKind::Somvae,
        ModelKind::ActpcUnweighted,
        ModelKind::Actpc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::TskmEuclid => "tskm-euclid",
            ModelKind::TskmDtw => "tskm-dtw",
            ModelKind::Somvae => "somvae",
            ModelKind::Actpc => "actpc",
            ModelKind::ActpcUnweighted => "actpc-unweighted",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| {
            format!("unknown model `{s}` (expected one of tskm-euclid, tskm-dtw, somvae, actpc, actpc-unweighted)")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Cluster count: fixed, or chosen by the elbow rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KChoice {
    Fixed(usize),
    Auto(Auto),
}

impl FromStr for KChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(KChoice::Auto(Auto::Auto));
        }
        s.parse()
            .map(KChoice::Fixed)
            .map_err(|_| format!("K must be a positive integer or `auto`, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TskmParams {
    pub max_iter: usize,
    pub restarts: usize,
    /// Sakoe-Chiba radius for the DTW metric; `null` is unconstrained.
    pub dtw_band: Option<usize>,
    /// Warp each channel separately.
    pub dtw_independent: bool,
    /// Candidate range scanned by `--k auto`.
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for TskmParams {
    fn default() -> Self {
        TskmParams {
            max_iter: tskm::MAX_ITER,
            restarts: tskm::RESTARTS,
            dtw_band: None,
            dtw_independent: false,
            k_min: 2,
            k_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Falls back to `PHENO_SEED` when unset.
    pub seed: Option<u64>,
    /// Fraction of patients in the training split.
    pub split: f64,
    pub k: KChoice,
    pub grid: GridSpec,
    pub clamp: ClampRanges,
    pub min_coverage: f64,
    pub tskm: TskmParams,
    pub somvae: SomVaeConfig,
    pub actpc: ActpcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        RunConfig {
            seed: None,
            split: 0.8,
            k: KChoice::Fixed(4),
            grid: pre.grid,
            clamp: pre.clamp,
            min_coverage: pre.min_coverage,
            tskm: TskmParams::default(),
            somvae: SomVaeConfig::default(),
            actpc: ActpcConfig::default(),
        }
    }
}

fn scalar(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

impl RunConfig {
    /// Sets one dotted key; the value is read as JSON, falling back to a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| CliError::usage(format!("unknown config key `{key}`")))?;
        }
        *node = scalar(value.trim());
        *self = serde_json::from_value(root)
            .map_err(|e| CliError::usage(format!("bad value `{value}` for `{key}`: {e}")))?;
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
                path: path.into(),
                line: i as u64 + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// The configured seed, else `PHENO_SEED`; stochastic commands need one.
    pub fn resolve_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
            Err(_) => Err(CliError::usage(format!(
                "a seed is required: pass --seed, set `seed` in the config or {SEED_ENV}"
            ))),
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            grid: self.grid,
            clamp: self.clamp.clone(),
            min_coverage: self.min_coverage,
        }
    }

    pub fn metric(&self, kind: ModelKind) -> Metric {
        match kind {
            ModelKind::TskmDtw => Metric::Dtw {
                band: self.tskm.dtw_band,
                independent: self.tskm.dtw_independent,
            },
            _ => Metric::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(CliError::usage(format!(
                "split fraction {} must lie in (0, 1)",
                self.split
            )));
        }
        if let KChoice::Fixed(k) = self.k {
            if k == 0 {
                return Err(CliError::usage("K must be at least 1"));
            }
        }
        if self.tskm.k_min < 1 || self.tskm.k_max < self.tskm.k_min + 2 {
            return Err(CliError::usage(
                "tskm.k_min..=tskm.k_max must span at least three values starting at 1 or more",
            ));
        }
        Ok(())
    }
}

/// SOM grid for `k` nodes: the most square factorization, rows ≤ cols.
pub fn som_shape(k: usize) -> (usize, usize) {
    let rows = (1..=k)
        .filter(|r| k.is_multiple_of(*r) && r * r <= k)
        .max()
        .unwrap_or(1);
    (rows, k / rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_override_defaults() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nactpc.lr=0.01\nsomvae.loss_weights.commit = 0.5\nk=auto\ntskm.dtw_band=2\nseed=9 # trailing\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(c.actpc.lr, 0.01);
        assert_eq!(c.somvae.loss_weights.commit, 0.5);
        assert_eq!(c.k, KChoice::Auto(Auto::Auto));
        assert_eq!(c.tskm.dtw_band, Some(2));
        assert_eq!(c.resolve_seed().unwrap(), 9);
        assert_eq!(c.set("actpc.nope", "1").unwrap_err().exit_code(), 2);
        assert_eq!(c.set("actpc.epochs", "many").unwrap_err().exit_code(), 2);
        assert!(matches!(
            c.apply_text("oops", Path::new("c")),
            Err(CliError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn som_shapes() {
        assert_eq!(som_shape(4), (2, 2));
        assert_eq!(som_shape(6), (2, 3));
        assert_eq!(som_shape(7), (1, 7));
    }
}
