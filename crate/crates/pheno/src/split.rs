//! Patient-level train/test split keyed by a hash of the patient id.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Test,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Train => "train",
            Part::Test => "test",
        })
    }
}

impl FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Part::Train),
            "test" => Ok(Part::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// Uniform value in [0, 1) from SHA-256 of the seed and id.
pub fn hash_unit(seed: u64, patient_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(patient_id.as_bytes());
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn part_of(seed: u64, patient_id: &str, train_fraction: f64) -> Part {
    if hash_unit(seed, patient_id) < train_fraction {
        Part::Train
    } else {
        Part::Test
    }
}

/// Assigns every id to a part; both parts must be non-empty.
pub fn split_ids<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64, train_fraction: f64) -> Result<Vec<Part>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CliError::usage(format!(
            "split fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let parts: Vec<Part> = ids.into_iter().map(|id| part_of(seed, id, train_fraction)).collect();
    if !parts.contains(&Part::Train) || !parts.contains(&Part::Test) {
        return Err(CliError::validation(format!(
            "split of {} patients at {train_fraction} leaves one side empty",
            parts.len()
        )));
    }
    Ok(parts)
}
