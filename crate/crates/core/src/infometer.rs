//! The three-branch estimator: Î(X;Y) = Ĥ(X) + Ĥ(Y) − Ĥ(X,Y).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::ConcatMode;
use crate::entropy::{estimate_entropy, train_branch, BranchId, BranchModel, EntropyError, EntropyEstimate, EstimatorConfig};
use crate::sources::Dataset;

#[derive(Debug, Error)]
pub enum InfoMeterError {
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("incompatible branches: {0}")]
    Incompatible(String),
    #[error("need at least two estimates to compare, got {0}")]
    TooFewEstimates(usize),
    #[error("comparing under several conventions requires allow_mixed")]
    MixedConventions,
    #[error("unknown convention `{0}`")]
    UnknownConvention(String),
}

/// The trained X, Y and joint branches.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoMeter {
    pub x: BranchModel,
    pub y: BranchModel,
    pub joint: BranchModel,
}

impl InfoMeter {
    pub fn branches(&self) -> [&BranchModel; 3] {
        [&self.x, &self.y, &self.joint]
    }

    /// Checks that the joint branch shares the marginal branches' adaptation
    /// and that all three expect the same source shape.
    pub fn check_compatible(&self) -> Result<(), InfoMeterError> {
        let bad = |m: String| Err(InfoMeterError::Incompatible(m));
        for (b, want) in self.branches().iter().zip([BranchId::X, BranchId::Y, BranchId::Joint]) {
            if b.branch != want {
                return bad(format!("expected a {want} branch, found {}", b.branch));
            }
        }
        if self.x.source_shape != self.y.source_shape || self.x.source_shape != self.joint.source_shape {
            return bad("branches were trained on different source shapes".into());
        }
        let same = |a: &crate::adapt::AffineRecord, b: &crate::adapt::AffineRecord| {
            a.offset == b.offset && a.scale == b.scale && a.degenerate == b.degenerate
        };
        if self.joint.affine.len() != 2
            || !same(&self.x.affine[0], &self.joint.affine[0])
            || !same(&self.y.affine[0], &self.joint.affine[1])
        {
            return bad("joint branch uses different adaptation statistics".into());
        }
        Ok(())
    }
}

/// Trains the X, Y and joint branches. They share no state, so they run
/// concurrently.
pub fn fit_infometer(dataset: &Dataset, config: &EstimatorConfig) -> Result<InfoMeter, InfoMeterError> {
    let (x, (y, joint)) = rayon::join(
        || train_branch(dataset, BranchId::X, config),
        || {
            rayon::join(
                || train_branch(dataset, BranchId::Y, config),
                || train_branch(dataset, BranchId::Joint, config),
            )
        },
    );
    Ok(InfoMeter {
        x: x?,
        y: y?,
        joint: joint?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub dataset_id: String,
    pub concat_mode: ConcatMode,
    pub h_x: EntropyEstimate,
    pub h_y: EntropyEstimate,
    pub h_xy: EntropyEstimate,
    /// `h_x.total + h_y.total − h_xy.total`
    pub i_total_bits: f64,
    /// `i_total_bits / h_x.element_count`
    pub i_bits_per_x_element: f64,
    /// `h_x.bpe + h_y.bpe − h_xy.bpe`, the arithmetic of the published tables.
    pub i_paper_convention: f64,
    /// Set when any convention came out negative, a sign of estimator bias.
    pub negative_warning: bool,
}

impl MIEstimate {
    pub fn assemble(
        h_x: EntropyEstimate,
        h_y: EntropyEstimate,
        h_xy: EntropyEstimate,
        concat_mode: ConcatMode,
        dataset_id: impl Into<String>,
    ) -> Self {
        let i_total_bits = h_x.total_bits + h_y.total_bits - h_xy.total_bits;
        let i_bits_per_x_element = i_total_bits / h_x.element_count as f64;
        let i_paper_convention = h_x.bits_per_element + h_y.bits_per_element - h_xy.bits_per_element;
        let negative_warning = i_total_bits < 0.0 || i_paper_convention < 0.0;
        if negative_warning {
            log::warn!("negative MI estimate ({i_bits_per_x_element:.4} bits per X element): estimator bias");
        }
        MIEstimate {
            dataset_id: dataset_id.into(),
            concat_mode,
            h_x,
            h_y,
            h_xy,
            i_total_bits,
            i_bits_per_x_element,
            i_paper_convention,
            negative_warning,
        }
    }

    pub fn value(&self, convention: Convention) -> f64 {
        match convention {
            Convention::TotalBits => self.i_total_bits,
            Convention::BitsPerXElement => self.i_bits_per_x_element,
            Convention::Paper => self.i_paper_convention,
        }
    }
}

/// Ĥ of all three branches on `dataset` and the assembled estimate.
pub fn estimate_mi(meter: &InfoMeter, dataset: &Dataset) -> Result<MIEstimate, InfoMeterError> {
    meter.check_compatible()?;
    let h_x = estimate_entropy(&meter.x, dataset)?;
    let h_y = estimate_entropy(&meter.y, dataset)?;
    let h_xy = estimate_entropy(&meter.joint, dataset)?;
    Ok(MIEstimate::assemble(h_x, h_y, h_xy, meter.joint.concat_mode, dataset.id()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    TotalBits,
    BitsPerXElement,
    Paper,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::TotalBits => "total-bits",
            Convention::BitsPerXElement => "bits-per-x-element",
            Convention::Paper => "paper",
        })
    }
}

impl FromStr for Convention {
    type Err = InfoMeterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total-bits" | "total" => Ok(Convention::TotalBits),
            "bits-per-x-element" | "per-x" => Ok(Convention::BitsPerXElement),
            "paper" => Ok(Convention::Paper),
            other => Err(InfoMeterError::UnknownConvention(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub dataset_id: String,
    /// One value per requested convention, in request order.
    pub values: Vec<f64>,
    /// Difference to the previous row under the first convention; 0 for the first row.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub conventions: Vec<Convention>,
    /// Rows sorted ascending by the first convention.
    pub rows: Vec<ComparisonRow>,
}

/// Orders labelled estimates by MI under `conventions[0]`. More than one
/// convention needs `allow_mixed`, since their values are not comparable.
pub fn compare_runs(
    runs: &[(String, MIEstimate)],
    conventions: &[Convention],
    allow_mixed: bool,
) -> Result<Comparison, InfoMeterError> {
    if runs.len() < 2 {
        return Err(InfoMeterError::TooFewEstimates(runs.len()));
    }
    if conventions.is_empty() || (conventions.len() > 1 && !allow_mixed) {
        return Err(InfoMeterError::MixedConventions);
    }
    let primary = conventions[0];
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].1.value(primary).total_cmp(&runs[b].1.value(primary)));
    let mut rows = Vec::with_capacity(runs.len());
    let mut prev: Option<f64> = None;
    for i in order {
        let (label, est) = &runs[i];
        let v = est.value(primary);
        rows.push(ComparisonRow {
            label: label.clone(),
            dataset_id: est.dataset_id.clone(),
            values: conventions.iter().map(|&c| est.value(c)).collect(),
            delta: prev.map_or(0.0, |p| v - p),
        });
        prev = Some(v);
    }
    Ok(Comparison {
        conventions: conventions.to_vec(),
        rows,
    })
}
