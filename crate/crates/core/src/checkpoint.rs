//! On-disk form of trained branches.
//!
//! A branch checkpoint is a directory with `manifest.json` (parameter names,
//! shapes, configuration, adaptation statistics, training curve) and
//! `params.bin`, the parameters as framed little-endian f32 in manifest
//! order. Parameters are kept at f32 precision during training, so a round
//! trip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::{AffineRecord, ConcatMode};
use crate::entropy::{
    ArContextModel, BranchId, BranchModel, ClassLayout, DensityModel, EntropyError, EpochRecord, EstimatorConfig,
    FactorizedModel,
};
use crate::infometer::InfoMeter;
use crate::payload::{self, PayloadError};
use crate::transform::{LiftingTransform, TransformError, FILTER_NAMES};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const PAYLOAD_FILE: &str = "params.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is inconsistent: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityHeader {
    Factorized {
        layout: ClassLayout,
        support: (i32, i32),
    },
    Autoregressive {
        context: usize,
        layout: ClassLayout,
        support: (i32, i32),
        center: f64,
        spread: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadInfo {
    pub floats: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub branch: BranchId,
    pub concat_mode: ConcatMode,
    pub source_shape: [usize; 2],
    pub input_shape: [usize; 2],
    pub affine: Vec<AffineRecord>,
    pub config: EstimatorConfig,
    pub transform_levels: usize,
    pub transform_taps: usize,
    pub density: DensityHeader,
    pub parameters: Vec<ParamBlock>,
    pub training_curve: Vec<EpochRecord>,
    pub payload: PayloadInfo,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn transform_blocks(t: &LiftingTransform) -> Vec<ParamBlock> {
    (0..t.levels())
        .flat_map(|level| {
            FILTER_NAMES.iter().map(move |name| ParamBlock {
                name: format!("transform.level{level}.{name}"),
                shape: vec![t.taps()],
            })
        })
        .collect()
}

fn density_header(d: &DensityModel) -> DensityHeader {
    match d {
        DensityModel::Factorized(m) => DensityHeader::Factorized {
            layout: m.layout(),
            support: m.support(),
        },
        DensityModel::Autoregressive(m) => DensityHeader::Autoregressive {
            context: m.context(),
            layout: m.layout(),
            support: m.support(),
            center: m.center(),
            spread: m.spread(),
        },
    }
}

pub fn manifest_of(branch: &BranchModel, payload: PayloadInfo) -> CheckpointManifest {
    let mut parameters = transform_blocks(&branch.transform);
    parameters.extend(
        branch
            .density
            .param_blocks()
            .into_iter()
            .map(|(name, shape)| ParamBlock { name, shape }),
    );
    let (r, c) = branch.source_shape;
    let (ir, ic) = branch.input_shape();
    CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        branch: branch.branch,
        concat_mode: branch.concat_mode,
        source_shape: [r, c],
        input_shape: [ir, ic],
        affine: branch.affine.clone(),
        config: branch.config.clone(),
        transform_levels: branch.transform.levels(),
        transform_taps: branch.transform.taps(),
        density: density_header(&branch.density),
        parameters,
        training_curve: branch.training_curve.clone(),
        payload,
    }
}

pub fn save_branch(branch: &BranchModel, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let values: Vec<f32> = branch
        .transform
        .params()
        .iter()
        .chain(branch.density.params())
        .map(|&p| p as f32)
        .collect();
    let crc32 = payload::write(&dir.join(PAYLOAD_FILE), &values)?;
    let manifest = manifest_of(
        branch,
        PayloadInfo {
            floats: values.len() as u64,
            crc32,
        },
    );
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })?;
    // check the version before the rest of the schema
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_branch(dir: &Path) -> Result<BranchModel, CheckpointError> {
    let m = load_manifest(dir)?;
    let (values, crc) = payload::read(&dir.join(PAYLOAD_FILE))?;
    if crc != m.payload.crc32 || values.len() as u64 != m.payload.floats {
        return Err(CheckpointError::Corrupt("payload does not match manifest".into()));
    }
    let declared: usize = m.parameters.iter().map(ParamBlock::len).sum();
    if declared != values.len() {
        return Err(CheckpointError::Corrupt(format!(
            "manifest declares {declared} parameters, payload has {}",
            values.len()
        )));
    }
    let params: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let nt = m.transform_levels * crate::transform::FILTERS_PER_LEVEL * m.transform_taps;
    if nt > params.len() {
        return Err(CheckpointError::Corrupt("payload shorter than transform".into()));
    }
    let transform = if m.transform_levels == 0 {
        LiftingTransform::identity()
    } else {
        LiftingTransform::from_params(m.transform_levels, m.transform_taps, params[..nt].to_vec())?
    };
    let dparams = params[nt..].to_vec();
    let density = match m.density {
        DensityHeader::Factorized { layout, support } => {
            let mut f = FactorizedModel::uniform(support.0, support.1, layout)?;
            if f.params().len() != dparams.len() {
                return Err(CheckpointError::Corrupt("density parameter count".into()));
            }
            f.params_mut().copy_from_slice(&dparams);
            DensityModel::Factorized(f)
        }
        DensityHeader::Autoregressive {
            context,
            layout,
            support,
            center,
            spread,
        } => DensityModel::Autoregressive(ArContextModel::from_parts(context, layout, support, center, spread, dparams)?),
    };
    Ok(BranchModel {
        branch: m.branch,
        concat_mode: m.concat_mode,
        source_shape: (m.source_shape[0], m.source_shape[1]),
        affine: m.affine,
        transform,
        density,
        training_curve: m.training_curve,
        config: m.config,
    })
}

fn branch_dir(dir: &Path, branch: BranchId) -> std::path::PathBuf {
    dir.join(branch.to_string())
}

/// Writes the three branches under `dir/x`, `dir/y` and `dir/joint`.
pub fn save_infometer(meter: &InfoMeter, dir: &Path) -> Result<(), CheckpointError> {
    for b in meter.branches() {
        save_branch(b, &branch_dir(dir, b.branch))?;
    }
    Ok(())
}

pub fn load_infometer(dir: &Path) -> Result<InfoMeter, CheckpointError> {
    let load = |id: BranchId| {
        let b = load_branch(&branch_dir(dir, id))?;
        if b.branch != id {
            return Err(CheckpointError::Corrupt(format!("{id} directory holds a {} branch", b.branch)));
        }
        Ok(b)
    };
    Ok(InfoMeter {
        x: load(BranchId::X)?,
        y: load(BranchId::Y)?,
        joint: load(BranchId::Joint)?,
    })
}
