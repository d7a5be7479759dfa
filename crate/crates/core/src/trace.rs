//! Per-timestep cluster traces and their reduction to one cluster per patient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::preprocess::GridSpec;
use crate::{Error, Result};

/// Hours before the outcome over which the modal cluster is taken.
pub const FINAL_WINDOW_HOURS: f64 = 48.0;

/// Cluster id per grid bin, earliest bin first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentTrace {
    pub ids: Vec<usize>,
}

impl AssignmentTrace {
    pub fn new(ids: Vec<usize>) -> Self {
        AssignmentTrace { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Modal cluster over the final 48 hours of `grid`.
    pub fn final_cluster(&self, grid: &GridSpec) -> Result<usize> {
        final_cluster(&self.ids, grid.bins_spanning(FINAL_WINDOW_HOURS))
    }
}

/// Most common id among the last `window` entries; ties go to the lowest id.
pub fn final_cluster(ids: &[usize], window: usize) -> Result<usize> {
    if window == 0 || ids.len() < window {
        return Err(Error::validation(format!(
            "trace of {} bins does not cover the final {window} bins",
            ids.len()
        )));
    }
    let tail = &ids[ids.len() - window..];
    let max_id = *tail.iter().max().expect("non-empty window");
    let mut counts = vec![0usize; max_id + 1];
    tail.iter().for_each(|&k| counts[k] += 1);
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(counts.iter().position(|&c| c == best).expect("maximum exists"))
}
