//! Context slicing and the three incremental reading modes.

mod model;
mod transfer;

pub use model::{decode_span, QaModel, SliceRun};
pub use transfer::{StepTransfer, TransferNet, TransferState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceMode {
    /// Every slice is encoded and scored on its own.
    SlicedPrediction,
    /// Slices are encoded on their own; one head scores the concatenation.
    GlobalPrediction,
    /// Slices are read in order, each seeded by a summary of the previous one.
    StepTransfer,
}

impl SliceMode {
    pub const ALL: [SliceMode; 3] = [
        SliceMode::SlicedPrediction,
        SliceMode::GlobalPrediction,
        SliceMode::StepTransfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SliceMode::SlicedPrediction => "sliced-prediction",
            SliceMode::GlobalPrediction => "global-prediction",
            SliceMode::StepTransfer => "step-transfer",
        }
    }
}

impl std::fmt::Display for SliceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SliceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SliceMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown slice mode {s:?}")))
    }
}

/// Half-open `[start, end)` ranges tiling `[0, context_len)`.
pub fn partition(context_len: usize, slice_size: usize) -> Result<Vec<(usize, usize)>> {
    if slice_size == 0 {
        return Err(Error::invalid("partition", "slice_size must be positive"));
    }
    if context_len == 0 {
        return Err(Error::invalid("partition", "context is empty"));
    }
    Ok((0..context_len)
        .step_by(slice_size)
        .map(|s| (s, (s + slice_size).min(context_len)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceSpec {
    pub slice_size: usize,
    pub mode: SliceMode,
    pub boundaries: Vec<(usize, usize)>,
}

impl SliceSpec {
    pub fn new(context_len: usize, slice_size: usize, mode: SliceMode) -> Result<Self> {
        Ok(SliceSpec {
            slice_size,
            mode,
            boundaries: partition(context_len, slice_size)?,
        })
    }

    pub fn num_slices(&self) -> usize {
        self.boundaries.len()
    }

    pub fn context_len(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.1)
    }

    /// Tokens seen after each slice.
    pub fn lengths_read(&self) -> Vec<usize> {
        self.boundaries.iter().map(|b| b.1).collect()
    }
}
