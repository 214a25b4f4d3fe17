//! Entropy models over integer coefficient maps and the per-branch training loop.
//!
//! A model assigns a probability to every integer value of every element; the
//! average negative log₂-likelihood over a dataset is the entropy estimate in
//! bits per element. Both models also evaluate a relaxed likelihood on real
//! values (the probability mass of the unit interval centred on the value),
//! which is what training differentiates.

mod adam;
mod autoregressive;
mod factorized;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use autoregressive::{causal_neighbors, ArContextModel, MIN_SCALE};
pub use factorized::FactorizedModel;
pub use train::{
    branch_maps, estimate_entropy, train_branch, train_on_maps, BranchModel, DensityConfig, DensityKind,
    EpochRecord, EstimatorConfig, InitMode, TrainConfig, TransformConfig,
};

use crate::adapt::AdaptError;
use crate::grid::Grid;
use crate::transform::TransformError;

/// Probabilities below this are floored when converted to bits.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged { epoch: usize, curve: Vec<EpochRecord> },
    #[error("shape mismatch: branch expects {expected:?}, dataset has {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

/// Which InfoMeter branch a model belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchId {
    X,
    Y,
    Joint,
}

impl BranchId {
    pub fn index(self) -> u64 {
        match self {
            BranchId::X => 0,
            BranchId::Y => 1,
            BranchId::Joint => 2,
        }
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchId::X => "x",
            BranchId::Y => "y",
            BranchId::Joint => "joint",
        })
    }
}

/// Assignment of map positions to parameter classes. Elements of different
/// classes get separate model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum ClassLayout {
    Uniform,
    /// Class `col % period`; matches a quilted joint map.
    ColumnInterleave { period: usize },
    /// `blocks` equal vertical strips; matches a tiled joint map.
    ColumnBlocks { blocks: usize },
}

impl ClassLayout {
    pub fn classes(&self) -> usize {
        match *self {
            ClassLayout::Uniform => 1,
            ClassLayout::ColumnInterleave { period } => period.max(1),
            ClassLayout::ColumnBlocks { blocks } => blocks.max(1),
        }
    }

    #[inline]
    pub fn class_of(&self, col: usize, cols: usize) -> usize {
        match *self {
            ClassLayout::Uniform => 0,
            ClassLayout::ColumnInterleave { period } => col % period.max(1),
            ClassLayout::ColumnBlocks { blocks } => (col * blocks.max(1) / cols.max(1)).min(blocks.max(1) - 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityModel {
    Factorized(FactorizedModel),
    Autoregressive(ArContextModel),
}

impl DensityModel {
    pub fn params(&self) -> &[f64] {
        match self {
            DensityModel::Factorized(m) => m.params(),
            DensityModel::Autoregressive(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            DensityModel::Factorized(m) => m.params_mut(),
            DensityModel::Autoregressive(m) => m.params_mut(),
        }
    }

    /// Named parameter blocks and their shapes, in storage order.
    pub fn param_blocks(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            DensityModel::Factorized(m) => m.param_blocks(),
            DensityModel::Autoregressive(m) => m.param_blocks(),
        }
    }

    /// Total bits of an integer map: `Σ −log₂ q(v_i | context_i)`.
    pub fn nll_bits(&self, map: &Grid<i32>) -> f64 {
        match self {
            DensityModel::Factorized(m) => m.nll_bits(map),
            DensityModel::Autoregressive(m) => m.nll_bits(map),
        }
    }

    /// Relaxed total bits of a real map. Gradients are accumulated into
    /// `grad_params` and `grad_input`.
    pub fn loss_grad(&self, values: &Grid<f64>, grad_params: &mut [f64], grad_input: &mut [f64]) -> f64 {
        match self {
            DensityModel::Factorized(m) => m.loss_grad(values, grad_params, grad_input),
            DensityModel::Autoregressive(m) => m.loss_grad(values, grad_params, grad_input),
        }
    }

    pub fn layout(&self) -> ClassLayout {
        match self {
            DensityModel::Factorized(m) => m.layout(),
            DensityModel::Autoregressive(m) => m.layout(),
        }
    }
}

/// Ĥ of one branch on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub branch: BranchId,
    pub dataset_id: String,
    pub total_bits: f64,
    pub element_count: u64,
    pub bits_per_element: f64,
    /// Source values clamped into `[0, 255]` while adapting this dataset.
    #[serde(default)]
    pub clamp_count: u64,
}

impl EntropyEstimate {
    pub fn new(branch: BranchId, dataset_id: impl Into<String>, total_bits: f64, element_count: u64) -> Self {
        EntropyEstimate {
            branch,
            dataset_id: dataset_id.into(),
            total_bits,
            element_count,
            bits_per_element: total_bits / element_count as f64,
            clamp_count: 0,
        }
    }

    /// Builds an estimate from a per-element rate, as reported in tables.
    pub fn from_rate(branch: BranchId, dataset_id: impl Into<String>, bits_per_element: f64, element_count: u64) -> Self {
        EntropyEstimate {
            branch,
            dataset_id: dataset_id.into(),
            total_bits: bits_per_element * element_count as f64,
            element_count,
            bits_per_element,
            clamp_count: 0,
        }
    }
}

#[inline]
pub(crate) fn bits_of(p: f64) -> f64 {
    -p.max(PROB_FLOOR).log2()
}
