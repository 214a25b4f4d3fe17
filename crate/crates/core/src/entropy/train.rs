use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArContextModel, BranchId, ClassLayout, DensityModel, EntropyError, EntropyEstimate, FactorizedModel};
use crate::adapt::{self, AffineRecord, ConcatMode, Side};
use crate::entropy::Adam;
use crate::grid::Grid;
use crate::rng::{derive_seed, stream_rng};
use crate::sources::Dataset;
use crate::transform::{LiftingPlan, LiftingTransform};

const NOISE_TAG: u64 = 0x6e6f_6973_65;
const SHUFFLE_TAG: u64 = 0x7368_7566;
// per-bin pseudo-count of the histogram initialisation
const PSEUDO_COUNT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub levels: usize,
    pub taps: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig { levels: 2, taps: 3 }
    }
}

impl TransformConfig {
    pub fn identity() -> Self {
        TransformConfig { levels: 0, taps: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Factorized,
    #[default]
    Autoregressive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub kind: DensityKind,
    /// Side of the causal context window (autoregressive only).
    pub context: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            kind: DensityKind::Autoregressive,
            context: 3,
        }
    }
}

/// How density parameters start before gradient refinement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Histogram (factorized) or least-squares (autoregressive) fit to the
    /// initial coefficients.
    #[default]
    Data,
    /// Uniform PMF (factorized) or a broad prior (autoregressive).
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_late: f64,
    /// Last epoch (1-based) that uses `lr_initial`.
    pub switch_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr_initial: 1e-4,
            lr_late: 1e-5,
            switch_epoch: 25,
            batch_size: 16,
            seed: 0,
            init: InitMode::Data,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch <= self.switch_epoch {
            self.lr_initial
        } else {
            self.lr_late
        }
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        let bad = |m: String| Err(EntropyError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_initial.is_finite() && self.lr_initial >= 0.0 && self.lr_late.is_finite() && self.lr_late >= 0.0)
        {
            return bad(format!("learning rates {} / {} must be finite and >= 0", self.lr_initial, self.lr_late));
        }
        Ok(())
    }
}

/// Settings shared by the three branches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub concat_mode: ConcatMode,
    pub transform: TransformConfig,
    pub density: DensityConfig,
    pub training: TrainConfig,
}

impl EstimatorConfig {
    /// Tiled joint map, as in the original feature-map setup.
    pub fn paper_fidelity() -> Self {
        EstimatorConfig {
            concat_mode: ConcatMode::Tiling,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        let bad = |m: String| Err(EntropyError::InvalidConfig(m));
        if self.transform.levels > 0 && self.transform.taps == 0 {
            return bad("transform.taps must be >= 1".into());
        }
        if self.transform.levels > 8 {
            return bad(format!("transform.levels {} exceeds 8", self.transform.levels));
        }
        if self.density.kind == DensityKind::Autoregressive && self.density.context % 2 == 0 {
            return bad(format!("density.context {} must be odd", self.density.context));
        }
        self.training.validate()
    }

    pub fn layout_for(&self, branch: BranchId) -> ClassLayout {
        match (branch, self.concat_mode) {
            (BranchId::Joint, ConcatMode::Quilting) => ClassLayout::ColumnInterleave { period: 2 },
            (BranchId::Joint, ConcatMode::Tiling) => ClassLayout::ColumnBlocks { blocks: 2 },
            _ => ClassLayout::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_bits_per_element: f64,
}

/// One trained (transform, density) pair plus everything needed to apply it
/// to new data.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchModel {
    pub branch: BranchId,
    pub concat_mode: ConcatMode,
    /// `(rows, cols)` of each source grid.
    pub source_shape: (usize, usize),
    /// Affine records of the sides this branch reads, X before Y.
    pub affine: Vec<AffineRecord>,
    pub transform: LiftingTransform,
    pub density: DensityModel,
    pub training_curve: Vec<EpochRecord>,
    pub config: EstimatorConfig,
}

impl BranchModel {
    /// Shape of the map entering the transform.
    pub fn input_shape(&self) -> (usize, usize) {
        let (rows, cols) = self.source_shape;
        match self.branch {
            BranchId::Joint => (rows, 2 * cols),
            _ => (rows, cols),
        }
    }

    pub fn param_count(&self) -> usize {
        self.transform.params().len() + self.density.params().len()
    }
}

fn sides(branch: BranchId) -> &'static [Side] {
    match branch {
        BranchId::X => &[Side::X],
        BranchId::Y => &[Side::Y],
        BranchId::Joint => &[Side::X, Side::Y],
    }
}

/// Adapted integer maps a branch consumes, plus the affine records with the
/// dataset-wide clamp counts.
pub fn branch_maps(
    dataset: &Dataset,
    branch: BranchId,
    affine: &[AffineRecord],
    mode: ConcatMode,
) -> Result<(Vec<Grid<i32>>, Vec<AffineRecord>), EntropyError> {
    let per_sample: Vec<(Grid<i32>, Vec<u64>)> = dataset
        .samples
        .par_iter()
        .map(|s| {
            let quantize = |side: Side, rec: AffineRecord| {
                let g = match side {
                    Side::X => &s.x,
                    Side::Y => &s.y,
                };
                adapt::quantize_with(g, rec)
            };
            match branch {
                BranchId::X => {
                    let a = quantize(Side::X, affine[0]);
                    Ok((a.values, vec![a.affine.clamp_count]))
                }
                BranchId::Y => {
                    let a = quantize(Side::Y, affine[0]);
                    Ok((a.values, vec![a.affine.clamp_count]))
                }
                BranchId::Joint => {
                    let x = quantize(Side::X, affine[0]);
                    let y = quantize(Side::Y, affine[1]);
                    let joint = adapt::concat(&x.values, &y.values, mode)?;
                    Ok((joint.values, vec![x.affine.clamp_count, y.affine.clamp_count]))
                }
            }
        })
        .collect::<Result<_, EntropyError>>()?;
    let mut records = affine.to_vec();
    for r in records.iter_mut() {
        r.clamp_count = 0;
    }
    let mut maps = Vec::with_capacity(per_sample.len());
    for (map, clamps) in per_sample {
        for (r, c) in records.iter_mut().zip(clamps) {
            r.clamp_count += c;
        }
        maps.push(map);
    }
    Ok((maps, records))
}

fn round_to_f32(params: &mut [f64]) {
    for p in params {
        *p = *p as f32 as f64;
    }
}

fn init_density(
    coeffs: &[Grid<i32>],
    layout: ClassLayout,
    config: &EstimatorConfig,
) -> Result<DensityModel, EntropyError> {
    let mut lo = i32::MAX;
    let mut hi = i32::MIN;
    for m in coeffs {
        for &v in m.as_slice() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if config.transform.levels > 0 {
        // trained filters can push coefficients outside the initial range
        let pad = hi - lo + 1;
        lo -= pad;
        hi += pad;
    }
    let model = match (config.density.kind, config.training.init) {
        (super::DensityKind::Factorized, InitMode::Uniform) => {
            DensityModel::Factorized(FactorizedModel::uniform(lo, hi, layout)?)
        }
        (super::DensityKind::Factorized, InitMode::Data) => {
            DensityModel::Factorized(FactorizedModel::from_counts(lo, hi, layout, coeffs, PSEUDO_COUNT)?)
        }
        (super::DensityKind::Autoregressive, InitMode::Uniform) => {
            DensityModel::Autoregressive(ArContextModel::broad(config.density.context, layout, lo, hi)?)
        }
        (super::DensityKind::Autoregressive, InitMode::Data) => DensityModel::Autoregressive(
            ArContextModel::fit_least_squares(config.density.context, layout, lo, hi, coeffs)?,
        ),
    };
    Ok(model)
}

struct SampleGrad {
    bits: f64,
    grad: Vec<f64>,
}

fn sample_loss_grad(
    transform: &LiftingTransform,
    plan: &LiftingPlan,
    density: &DensityModel,
    map: &Grid<i32>,
    noise_seed: u64,
    stream: u64,
) -> SampleGrad {
    let mut rng = stream_rng(noise_seed, stream);
    let noisy = map.map(|v| v as f64 + rng.random_range(-0.5..0.5));
    let nt = transform.params().len();
    let mut grad = vec![0.0; nt + density.params().len()];
    let mut grad_coeffs = vec![0.0; map.len()];
    let bits = if transform.levels() == 0 {
        density.loss_grad(&noisy, &mut grad[nt..], &mut grad_coeffs)
    } else {
        let (coeffs, tape) = transform.forward_relaxed_taped(plan, &noisy);
        let bits = density.loss_grad(&coeffs, &mut grad[nt..], &mut grad_coeffs);
        transform.backward(plan, &tape, &grad_coeffs, &mut grad[..nt]);
        bits
    };
    SampleGrad { bits, grad }
}

/// Trains a transform and density jointly on integer maps of one shape.
/// `stream_tag` separates the random streams of different branches.
pub fn train_on_maps(
    maps: &[Grid<i32>],
    layout: ClassLayout,
    config: &EstimatorConfig,
    stream_tag: u64,
) -> Result<(LiftingTransform, DensityModel, Vec<EpochRecord>), EntropyError> {
    let first = maps.first().ok_or(EntropyError::EmptyDataset)?;
    let shape = first.shape();
    if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
        return Err(EntropyError::ShapeMismatch {
            expected: shape,
            found: bad.shape(),
        });
    }
    let tc = &config.training;
    config.validate()?;
    let mut transform = if config.transform.levels == 0 {
        LiftingTransform::identity()
    } else {
        LiftingTransform::new(config.transform.levels, config.transform.taps)?
    };
    let plan = transform.plan(shape.0, shape.1)?;
    let coeffs: Vec<Grid<i32>> = maps
        .par_iter()
        .map(|m| transform.forward_with(&plan, m).values)
        .collect();
    let mut density = init_density(&coeffs, layout, config)?;
    drop(coeffs);
    round_to_f32(density.params_mut());

    let nt = transform.params().len();
    let nd = density.params().len();
    let mut adam = Adam::new(nt + nd);
    let mut params = vec![0.0; nt + nd];
    let noise_seed = derive_seed(tc.seed, NOISE_TAG ^ stream_tag);
    let shuffle_seed = derive_seed(tc.seed, SHUFFLE_TAG ^ stream_tag);
    let elements = first.len() as f64;
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..maps.len()).collect();

    for epoch in 1..=tc.epochs {
        let lr = tc.learning_rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(shuffle_seed, epoch as u64));
        let mut epoch_bits = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results: Vec<SampleGrad> = batch
                .par_iter()
                .map(|&i| {
                    // same noise for a sample in every epoch, so epoch losses are comparable
                    sample_loss_grad(&transform, &plan, &density, &maps[i], noise_seed, i as u64)
                })
                .collect();
            let mut grad = vec![0.0; nt + nd];
            let mut batch_bits = 0.0;
            for r in &results {
                batch_bits += r.bits;
                for (g, v) in grad.iter_mut().zip(&r.grad) {
                    *g += v;
                }
            }
            let norm = 1.0 / (elements * batch.len() as f64);
            for g in grad.iter_mut() {
                *g *= norm;
            }
            if !batch_bits.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite loss at epoch {epoch}");
                return Err(EntropyError::Diverged { epoch, curve });
            }
            epoch_bits += batch_bits;
            params[..nt].copy_from_slice(transform.params());
            params[nt..].copy_from_slice(density.params());
            adam.step(&mut params, &grad, lr);
            round_to_f32(&mut params);
            if params.iter().any(|p| !p.is_finite()) {
                log::error!("parameters overflowed at epoch {epoch}");
                return Err(EntropyError::Diverged { epoch, curve });
            }
            transform.params_mut().copy_from_slice(&params[..nt]);
            density.params_mut().copy_from_slice(&params[nt..]);
        }
        let mean = epoch_bits / (elements * maps.len() as f64);
        log::info!("epoch {epoch:>3}  lr {lr:.0e}  {mean:.5} bits/element");
        curve.push(EpochRecord {
            epoch,
            learning_rate: lr,
            mean_bits_per_element: mean,
        });
    }
    Ok((transform, density, curve))
}

/// Adapts `dataset` for `branch` with dataset-global statistics and trains
/// the branch's transform and density by minimizing relaxed bits per element.
pub fn train_branch(dataset: &Dataset, branch: BranchId, config: &EstimatorConfig) -> Result<BranchModel, EntropyError> {
    if dataset.is_empty() {
        return Err(EntropyError::EmptyDataset);
    }
    let affine: Vec<AffineRecord> = sides(branch)
        .iter()
        .map(|&s| adapt::dataset_stats(dataset, s).map(|st| st.affine()))
        .collect::<Result<_, _>>()?;
    let (maps, affine) = branch_maps(dataset, branch, &affine, config.concat_mode)?;
    let layout = config.layout_for(branch);
    log::info!(
        "training {branch} branch on {} maps of {:?}",
        maps.len(),
        maps[0].shape()
    );
    let (transform, density, training_curve) = train_on_maps(&maps, layout, config, branch.index())?;
    Ok(BranchModel {
        branch,
        concat_mode: config.concat_mode,
        source_shape: dataset.shape(),
        affine,
        transform,
        density,
        training_curve,
        config: config.clone(),
    })
}

/// Total and per-element bits of `dataset` under a trained branch, using
/// exact integer transforms and the branch's recorded affine statistics.
pub fn estimate_entropy(branch: &BranchModel, dataset: &Dataset) -> Result<EntropyEstimate, EntropyError> {
    if dataset.is_empty() {
        return Err(EntropyError::EmptyDataset);
    }
    if dataset.shape() != branch.source_shape {
        return Err(EntropyError::ShapeMismatch {
            expected: branch.source_shape,
            found: dataset.shape(),
        });
    }
    let (maps, affine) = branch_maps(dataset, branch.branch, &branch.affine, branch.concat_mode)?;
    let (rows, cols) = branch.input_shape();
    let plan = branch.transform.plan(rows, cols)?;
    let per_sample: Vec<f64> = maps
        .par_iter()
        .map(|m| {
            let coeffs = branch.transform.forward_with(&plan, m);
            branch.density.nll_bits(&coeffs.values)
        })
        .collect();
    let total_bits: f64 = per_sample.iter().sum();
    let mut est = EntropyEstimate::new(branch.branch, dataset.id(), total_bits, (maps.len() * rows * cols) as u64);
    est.clamp_count = affine.iter().map(|a| a.clamp_count).sum();
    Ok(est)
}
