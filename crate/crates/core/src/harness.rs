//! Controlled dataset manipulations and benchmark sweeps against oracles.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::Side;
use crate::entropy::EstimatorConfig;
use crate::grid::Grid;
use crate::infometer::{estimate_mi, fit_infometer, MIEstimate};
use crate::oracles;
use crate::rng::{derive_seed, stream_rng};
use crate::sources::{Dataset, GeneratorSpec};

pub const BENCHMARK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("target source has zero signal power")]
    ZeroSignalPower,
    #[error("snr_db must be finite, got {0}")]
    InvalidSnr(f64),
    #[error("mask fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("unknown statistic `{0}`")]
    UnknownStatistic(String),
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("cannot split {samples} samples into {bins} bins (need bins >= 2 and samples >= bins)")]
    InvalidSplit { samples: usize, bins: usize },
    #[error("bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error("benchmark has no conditions")]
    NoConditions,
    #[error(transparent)]
    Source(#[from] crate::sources::SourceError),
}

/// Which sources a perturbation touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    X,
    Y,
    Both,
}

impl Target {
    pub fn sides(self) -> &'static [Side] {
        match self {
            Target::X => &[Side::X],
            Target::Y => &[Side::Y],
            Target::Both => &[Side::X, Side::Y],
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::X => "x",
            Target::Y => "y",
            Target::Both => "both",
        })
    }
}

impl FromStr for Target {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" => Ok(Target::X),
            "y" => Ok(Target::Y),
            "both" => Ok(Target::Both),
            other => Err(HarnessError::UnknownTarget(other.to_string())),
        }
    }
}

/// Per-sample statistic used to sort a dataset before splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Variance of all x and y elements of the sample.
    Variance,
    /// Number of 4-connected regions above the dataset-wide mean + 1 std,
    /// counted in x and y.
    BlobCount,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Variance => "variance",
            Statistic::BlobCount => "blob_count",
        })
    }
}

impl FromStr for Statistic {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variance" => Ok(Statistic::Variance),
            "blob_count" | "blobs" => Ok(Statistic::BlobCount),
            other => Err(HarnessError::UnknownStatistic(other.to_string())),
        }
    }
}

/// Where `region_replace` puts its mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    /// Random axis-aligned rectangles.
    #[default]
    Rectangles,
    /// Whole bright regions: 4-connected blobs above the side's mean + 1 std,
    /// taken in random order.
    Blobs,
}

impl fmt::Display for MaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskShape::Rectangles => "rectangles",
            MaskShape::Blobs => "blobs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    NoiseSnr { snr_db: f64, target: Target, seed: u64 },
    RegionReplace {
        mask_frac: f64,
        target: Target,
        #[serde(default)]
        shape: MaskShape,
        seed: u64,
    },
    /// Keeps bin `bin` of `n_bins` after sorting by `stat`.
    SplitByStat { stat: Statistic, n_bins: usize, bin: usize },
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        match *self {
            PerturbationSpec::NoiseSnr { snr_db, .. } if !snr_db.is_finite() => Err(HarnessError::InvalidSnr(snr_db)),
            PerturbationSpec::RegionReplace { mask_frac, .. } if !(0.0..=1.0).contains(&mask_frac) => {
                Err(HarnessError::InvalidFraction(mask_frac))
            }
            PerturbationSpec::SplitByStat { n_bins, bin, .. } if bin >= n_bins => {
                Err(HarnessError::BinOutOfRange { bin, bins: n_bins })
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset, HarnessError> {
        self.validate()?;
        match *self {
            PerturbationSpec::NoiseSnr { snr_db, target, seed } => add_noise_snr(dataset, snr_db, target, seed),
            PerturbationSpec::RegionReplace {
                mask_frac,
                target,
                shape,
                seed,
            } => {
                region_replace(dataset, mask_frac, target, shape, seed)
            }
            PerturbationSpec::SplitByStat { stat, n_bins, bin } => {
                Ok(split_by_statistic(dataset, stat, n_bins)?.swap_remove(bin))
            }
        }
    }
}

/// A perturbation as applied, with what was measured on the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedPerturbation {
    pub spec: PerturbationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_snr_db_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_snr_db_y: Option<f64>,
    /// Fraction of target elements that were replaced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced_fraction: Option<f64>,
}

impl AppliedPerturbation {
    fn new(spec: PerturbationSpec) -> Self {
        AppliedPerturbation {
            spec,
            achieved_snr_db_x: None,
            achieved_snr_db_y: None,
            replaced_fraction: None,
        }
    }

    pub fn label(&self) -> String {
        match &self.spec {
            PerturbationSpec::NoiseSnr { snr_db, target, .. } => format!("snr{snr_db}dB-{target}"),
            PerturbationSpec::RegionReplace {
                mask_frac,
                target,
                shape: MaskShape::Rectangles,
                ..
            } => format!("mask{mask_frac}-{target}"),
            PerturbationSpec::RegionReplace {
                mask_frac,
                target,
                shape: MaskShape::Blobs,
                ..
            } => format!("blobmask{mask_frac}-{target}"),
            PerturbationSpec::SplitByStat { stat, n_bins, bin } => format!("{stat}-bin{}of{n_bins}", bin + 1),
        }
    }

    pub fn achieved_snr_db(&self, side: Side) -> Option<f64> {
        match side {
            Side::X => self.achieved_snr_db_x,
            Side::Y => self.achieved_snr_db_y,
        }
    }
}

fn side_grid(s: &crate::sources::SourceSample, side: Side) -> &Grid<f32> {
    match side {
        Side::X => &s.x,
        Side::Y => &s.y,
    }
}

fn side_grid_mut(s: &mut crate::sources::SourceSample, side: Side) -> &mut Grid<f32> {
    match side {
        Side::X => &mut s.x,
        Side::Y => &mut s.y,
    }
}

fn side_stream(sample: usize, side: Side) -> u64 {
    2 * sample as u64 + matches!(side, Side::Y) as u64
}

/// Mean-removed power of one side over the whole dataset.
fn signal_power(dataset: &Dataset, side: Side) -> f64 {
    let n = (dataset.len() * dataset.shape().0 * dataset.shape().1) as f64;
    let vals = || dataset.samples.iter().flat_map(|s| side_grid(s, side).as_slice().iter().map(|&v| v as f64));
    let mean = vals().sum::<f64>() / n;
    vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Adds zero-mean Gaussian noise of variance `P / 10^(snr_db/10)` to the
/// target sources, where `P` is the dataset-wide signal variance.
pub fn add_noise_snr(dataset: &Dataset, snr_db: f64, target: Target, seed: u64) -> Result<Dataset, HarnessError> {
    if !snr_db.is_finite() {
        return Err(HarnessError::InvalidSnr(snr_db));
    }
    let mut out = dataset.clone();
    let mut applied = AppliedPerturbation::new(PerturbationSpec::NoiseSnr { snr_db, target, seed });
    for &side in target.sides() {
        let power = signal_power(dataset, side);
        if !(power > 0.0) {
            return Err(HarnessError::ZeroSignalPower);
        }
        let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let noise_energy: f64 = out
            .samples
            .par_iter_mut()
            .map(|s| {
                let mut rng = stream_rng(seed, side_stream(s.sample_id, side));
                let g = side_grid_mut(s, side);
                let mut energy = 0.0;
                for v in g.as_mut_slice() {
                    let before = *v;
                    let e: f64 = rng.sample(StandardNormal);
                    *v = (before as f64 + std * e) as f32;
                    energy += (*v as f64 - before as f64).powi(2);
                }
                energy
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let n = (dataset.len() * dataset.shape().0 * dataset.shape().1) as f64;
        let achieved = 10.0 * (power / (noise_energy / n)).log10();
        match side {
            Side::X => applied.achieved_snr_db_x = Some(achieved),
            Side::Y => applied.achieved_snr_db_y = Some(achieved),
        }
    }
    out.manifest.perturbations.push(applied);
    Ok(out)
}

/// Boolean mask with exactly `target` cells set, built from random rectangles.
/// The rectangle that would overshoot is filled only in raster order up to
/// the target count.
fn rectangle_mask(rows: usize, cols: usize, target: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask = vec![false; rows * cols];
    let mut covered = 0;
    let max_h = (rows / 2).max(1);
    let max_w = (cols / 2).max(1);
    let mut attempts = 0;
    while covered < target && attempts < 64 * rows * cols {
        attempts += 1;
        let h = rng.random_range(1..=max_h);
        let w = rng.random_range(1..=max_w);
        let r0 = rng.random_range(0..=rows - h);
        let c0 = rng.random_range(0..=cols - w);
        'rect: for r in r0..r0 + h {
            for c in c0..c0 + w {
                if covered == target {
                    break 'rect;
                }
                let m = &mut mask[r * cols + c];
                if !*m {
                    *m = true;
                    covered += 1;
                }
            }
        }
    }
    for m in mask.iter_mut() {
        if covered == target {
            break;
        }
        if !*m {
            *m = true;
            covered += 1;
        }
    }
    mask
}

/// Up to `target` cells of the blobs of `g` above `threshold`, whole blobs
/// first in random order, the last one cut in raster order.
fn blob_mask(g: &Grid<f32>, threshold: f64, target: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut blobs = blobs_above(g, threshold);
    blobs.shuffle(rng);
    let mut mask = vec![false; g.len()];
    let mut covered = 0;
    for blob in blobs {
        for i in blob {
            if covered == target {
                return mask;
            }
            mask[i] = true;
            covered += 1;
        }
    }
    mask
}

/// Replaces `round(mask_frac · H·W)` elements of each target map with values
/// drawn from the target's empirical marginal over the whole dataset. With
/// blob masks a map may have fewer bright cells than that; the manifest
/// records the fraction actually replaced.
pub fn region_replace(
    dataset: &Dataset,
    mask_frac: f64,
    target: Target,
    shape: MaskShape,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    if !(0.0..=1.0).contains(&mask_frac) {
        return Err(HarnessError::InvalidFraction(mask_frac));
    }
    let (rows, cols) = dataset.shape();
    let per_map = (mask_frac * (rows * cols) as f64).round() as usize;
    let mut out = dataset.clone();
    let mut replaced = 0usize;
    for &side in target.sides() {
        let pool: Vec<f32> = dataset
            .samples
            .iter()
            .flat_map(|s| side_grid(s, side).as_slice().iter().copied())
            .collect();
        let threshold = match shape {
            MaskShape::Rectangles => 0.0,
            MaskShape::Blobs => {
                let n = pool.len() as f64;
                let mean = pool.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = pool.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                mean + var.sqrt()
            }
        };
        let side_seed = derive_seed(seed, side_stream(0, side));
        replaced += out
            .samples
            .par_iter_mut()
            .map(|s| {
                let mut rng = stream_rng(side_seed, s.sample_id as u64);
                let g = side_grid_mut(s, side);
                let mask = match shape {
                    MaskShape::Rectangles => rectangle_mask(rows, cols, per_map, &mut rng),
                    MaskShape::Blobs => blob_mask(g, threshold, per_map, &mut rng),
                };
                let mut n = 0;
                for (v, m) in g.as_mut_slice().iter_mut().zip(mask) {
                    if m {
                        *v = pool[rng.random_range(0..pool.len())];
                        n += 1;
                    }
                }
                n
            })
            .sum::<usize>();
    }
    let maps = (dataset.len() * target.sides().len()).max(1);
    let mut applied = AppliedPerturbation::new(PerturbationSpec::RegionReplace {
        mask_frac,
        target,
        shape,
        seed,
    });
    applied.replaced_fraction = Some(replaced as f64 / (maps * rows * cols) as f64);
    out.manifest.perturbations.push(applied);
    Ok(out)
}

/// Cell indices of each 4-connected region of `g` above `threshold`.
fn blobs_above(g: &Grid<f32>, threshold: f64) -> Vec<Vec<usize>> {
    let (rows, cols) = g.shape();
    let above = |i: usize| (g.as_slice()[i] as f64) > threshold;
    let mut seen = vec![false; rows * cols];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || !above(start) {
            continue;
        }
        let mut blob = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            blob.push(i);
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if !seen[j] && above(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        blob.sort_unstable();
        blobs.push(blob);
    }
    blobs
}

fn count_blobs(g: &Grid<f32>, threshold: f64) -> usize {
    blobs_above(g, threshold).len()
}

/// Per-sample values of `stat`.
pub fn sample_statistic(dataset: &Dataset, stat: Statistic) -> Vec<f64> {
    let all = || {
        dataset
            .samples
            .iter()
            .flat_map(|s| s.x.as_slice().iter().chain(s.y.as_slice()).map(|&v| v as f64))
    };
    match stat {
        Statistic::Variance => dataset
            .samples
            .iter()
            .map(|s| {
                let vals: Vec<f64> = s.x.as_slice().iter().chain(s.y.as_slice()).map(|&v| v as f64).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
            })
            .collect(),
        Statistic::BlobCount => {
            let n = all().count() as f64;
            let mean = all().sum::<f64>() / n;
            let std = (all().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let threshold = mean + std;
            dataset
                .samples
                .iter()
                .map(|s| (count_blobs(&s.x, threshold) + count_blobs(&s.y, threshold)) as f64)
                .collect()
        }
    }
}

/// Sorts samples ascending by `stat` (ties keep dataset order) and cuts them
/// into `n_bins` contiguous subsets of `len / n_bins` samples; the remainder
/// goes to the last bin.
pub fn split_by_statistic(dataset: &Dataset, stat: Statistic, n_bins: usize) -> Result<Vec<Dataset>, HarnessError> {
    if n_bins < 2 || dataset.len() < n_bins {
        return Err(HarnessError::InvalidSplit {
            samples: dataset.len(),
            bins: n_bins,
        });
    }
    let values = sample_statistic(dataset, stat);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let size = dataset.len() / n_bins;
    Ok((0..n_bins)
        .map(|bin| {
            let end = if bin + 1 == n_bins { order.len() } else { (bin + 1) * size };
            let mut d = dataset.subset(&order[bin * size..end]);
            d.manifest
                .perturbations
                .push(AppliedPerturbation::new(PerturbationSpec::SplitByStat { stat, n_bins, bin }));
            d
        })
        .collect())
}

/// Plug-in MI of the element pairs `(x_i, y_i)` after coarse binning.
pub fn oracle_binned_mi(dataset: &Dataset, bins: usize) -> Result<f64, oracles::OracleError> {
    let xs: Vec<f64> = dataset.samples.iter().flat_map(|s| s.x.as_slice()).map(|&v| v as f64).collect();
    let ys: Vec<f64> = dataset.samples.iter().flat_map(|s| s.y.as_slice()).map(|&v| v as f64).collect();
    oracles::binned_mi(&xs, &ys, bins)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub source: GeneratorSpec,
    /// `[rows, cols]`
    pub shape: [usize; 2],
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
    /// Value plotted on the horizontal axis (e.g. SNR); defaults to the index.
    #[serde(default)]
    pub parameter: Option<f64>,
}

fn default_bins() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default = "default_bins")]
    pub oracle_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub parameter: f64,
    pub dataset_id: Option<String>,
    pub analytic_mi_bits_per_element: Option<f64>,
    pub perturbations: Vec<AppliedPerturbation>,
    pub estimate: Option<MIEstimate>,
    pub oracle_mi_bits: Option<f64>,
    pub error: Option<String>,
}

impl ConditionResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    /// `Î(b) − Î(a)` in bits per X element.
    pub delta_infometer: f64,
    pub delta_oracle: f64,
    pub sign_agreement: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub config: BenchmarkConfig,
    pub conditions: Vec<ConditionResult>,
    pub pairs: Vec<PairComparison>,
    /// Whether every pair agrees in sign; absent when there are no pairs.
    pub all_signs_agree: Option<bool>,
    pub failures: usize,
}

fn run_condition(cond: &Condition, config: &BenchmarkConfig) -> Result<(Dataset, MIEstimate, f64), String> {
    let mut dataset = cond
        .source
        .generate(cond.shape[0], cond.shape[1], cond.n_samples, cond.seed)
        .map_err(|e| e.to_string())?;
    for p in &cond.perturbations {
        dataset = p.apply(&dataset).map_err(|e| e.to_string())?;
    }
    let meter = fit_infometer(&dataset, &config.estimator).map_err(|e| e.to_string())?;
    let estimate = estimate_mi(&meter, &dataset).map_err(|e| e.to_string())?;
    let oracle = oracle_binned_mi(&dataset, config.oracle_bins).map_err(|e| e.to_string())?;
    Ok((dataset, estimate, oracle))
}

/// Generates, perturbs and measures every condition, then compares the
/// InfoMeter and oracle MI differences of every pair of successful
/// conditions. Failed conditions are recorded and skipped.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport, HarnessError> {
    if config.conditions.is_empty() {
        return Err(HarnessError::NoConditions);
    }
    let mut conditions = Vec::with_capacity(config.conditions.len());
    for (i, cond) in config.conditions.iter().enumerate() {
        log::info!("condition {}/{}: {}", i + 1, config.conditions.len(), cond.label);
        let mut result = ConditionResult {
            label: cond.label.clone(),
            parameter: cond.parameter.unwrap_or(i as f64),
            dataset_id: None,
            analytic_mi_bits_per_element: None,
            perturbations: Vec::new(),
            estimate: None,
            oracle_mi_bits: None,
            error: None,
        };
        match run_condition(cond, config) {
            Ok((dataset, estimate, oracle)) => {
                result.dataset_id = Some(dataset.id());
                result.analytic_mi_bits_per_element = dataset.manifest.analytic_mi_bits_per_element;
                result.perturbations = dataset.manifest.perturbations;
                result.estimate = Some(estimate);
                result.oracle_mi_bits = Some(oracle);
            }
            Err(e) => {
                log::error!("condition {} failed: {e}", cond.label);
                result.error = Some(e);
            }
        }
        conditions.push(result);
    }
    let mut pairs = Vec::new();
    for i in 0..conditions.len() {
        for j in i + 1..conditions.len() {
            let (a, b) = (&conditions[i], &conditions[j]);
            if let (Some(ea), Some(eb), Some(oa), Some(ob)) = (&a.estimate, &b.estimate, a.oracle_mi_bits, b.oracle_mi_bits) {
                let delta_infometer = eb.i_bits_per_x_element - ea.i_bits_per_x_element;
                let delta_oracle = ob - oa;
                pairs.push(PairComparison {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    delta_infometer,
                    delta_oracle,
                    sign_agreement: delta_infometer.signum() == delta_oracle.signum(),
                });
            }
        }
    }
    let all_signs_agree = if pairs.is_empty() {
        None
    } else {
        Some(pairs.iter().all(|p| p.sign_agreement))
    };
    let failures = conditions.iter().filter(|c| !c.succeeded()).count();
    Ok(BenchmarkReport {
        format_version: BENCHMARK_FORMAT_VERSION,
        config: config.clone(),
        conditions,
        pairs,
        all_signs_agree,
        failures,
    })
}
