//! Fitted models behind one tagged file format.

use std::path::Path;

use pheno_core::actpc::ActpcModel;
use pheno_core::preprocess::GridSpec;
use pheno_core::somvae::SomVaeModel;
use pheno_core::trace::AssignmentTrace;
use pheno_core::tskm::CentroidSet;
use pheno_core::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ModelKind;
use crate::error::{CliError, Result};
use crate::formats;

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Tskm(CentroidSet),
    Somvae(SomVaeModel),
    Actpc(ActpcModel),
}

impl Fitted {
    pub fn k(&self) -> usize {
        match self {
            Fitted::Tskm(m) => m.k(),
            Fitted::Somvae(m) => m.k(),
            Fitted::Actpc(m) => m.k(),
        }
    }

    /// Per-bin trace for trace-based models, `None` for centroid models.
    pub fn trace(&self, series: &Matrix) -> Result<Option<AssignmentTrace>> {
        Ok(match self {
            Fitted::Tskm(_) => None,
            Fitted::Somvae(m) => Some(m.assign(series)?),
            Fitted::Actpc(m) => Some(m.assign_trace(series)?),
        })
    }

    /// Nearest centroid, or the modal cluster of the final 48 hours.
    pub fn final_cluster(&self, series: &Matrix, grid: &GridSpec) -> Result<usize> {
        match self {
            Fitted::Tskm(m) => Ok(m.assign(series)?),
            _ => Ok(self.trace(series)?.expect("trace model").final_cluster(grid)?),
        }
    }
}

/// On-disk form: `{kind, grid, model}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub grid: GridSpec,
    pub model: Fitted,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    kind: ModelKind,
    grid: GridSpec,
    model: Value,
}

fn json_err(path: &Path, source: serde_json::Error) -> CliError {
    CliError::Json {
        path: path.into(),
        source,
    }
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let model = match &self.model {
            Fitted::Tskm(m) => serde_json::to_value(m),
            Fitted::Somvae(m) => serde_json::to_value(m),
            Fitted::Actpc(m) => serde_json::to_value(m),
        }
        .map_err(|e| json_err(path, e))?;
        formats::save_json(
            path,
            &Envelope {
                kind: self.kind,
                grid: self.grid,
                model,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let env: Envelope = formats::load_json(path)?;
        let model = match env.kind {
            ModelKind::TskmEuclid | ModelKind::TskmDtw => {
                Fitted::Tskm(serde_json::from_value(env.model).map_err(|e| json_err(path, e))?)
            }
            ModelKind::Somvae => Fitted::Somvae(serde_json::from_value(env.model).map_err(|e| json_err(path, e))?),
            ModelKind::Actpc | ModelKind::ActpcUnweighted => {
                Fitted::Actpc(serde_json::from_value(env.model).map_err(|e| json_err(path, e))?)
            }
        };
        Ok(ModelFile {
            kind: env.kind,
            grid: env.grid,
            model,
        })
    }
}
