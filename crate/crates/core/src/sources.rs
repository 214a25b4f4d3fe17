//! Synthetic paired sources with known dependence, and their on-disk format.
//!
//! A dataset directory holds `manifest.json` and `payload.bin`. The payload is
//! the framed float array described in [`crate::payload`], laid out sample-major:
//! for each sample the `x` grid then the `y` grid, each row-major.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::harness::AppliedPerturbation;
use crate::oracles;
use crate::payload::{self, PayloadError};
use crate::rng::stream_rng;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const PAYLOAD_FILE: &str = "payload.bin";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("unknown marginal spec `{0}`")]
    UnknownMarginal(String),
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("correlation must satisfy |rho| < 1, got {0}")]
    InvalidRho(f64),
    #[error("rows, cols and sample count must all be >= 1")]
    InvalidShape,
    #[error("dataset shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: u64, found: u64 },
    #[error("dataset checksum mismatch: manifest records {manifest:08x}, payload has {payload:08x}")]
    ChecksumMismatch { manifest: u32, payload: u32 },
    #[error("unsupported dataset format version {0}")]
    Version(u32),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("payload: {0}")]
    Payload(PayloadError),
}

impl From<PayloadError> for SourceError {
    fn from(e: PayloadError) -> Self {
        match e {
            PayloadError::Length { expected, found } => SourceError::ShapeMismatch { expected, found },
            other => SourceError::Payload(other),
        }
    }
}

/// Per-element marginal distribution of a synthetic source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marginal {
    /// Integers `lo..=hi`, equiprobable.
    UniformInt { lo: i32, hi: i32 },
    Gaussian { mean: f64, std: f64 },
    /// `hi` with probability `p`, otherwise `lo`.
    Bernoulli { p: f64, lo: f64, hi: f64 },
    /// Symbol `i` with probability `pmf[i]`.
    Categorical { pmf: Vec<f64> },
}

impl Marginal {
    pub fn validate(&self) -> Result<(), SourceError> {
        match self {
            Marginal::UniformInt { lo, hi } if lo > hi => {
                Err(SourceError::InvalidMarginal(format!("uniform-int with lo {lo} > hi {hi}")))
            }
            Marginal::Gaussian { mean, std } if !(std.is_finite() && *std > 0.0 && mean.is_finite()) => {
                Err(SourceError::InvalidMarginal(format!("gaussian({mean}, {std})")))
            }
            Marginal::Bernoulli { p, lo, hi }
                if !((0.0..=1.0).contains(p) && lo.is_finite() && hi.is_finite()) =>
            {
                Err(SourceError::InvalidMarginal(format!("bernoulli({p}) over {{{lo}, {hi}}}")))
            }
            Marginal::Categorical { pmf } => validate_pmf(pmf),
            _ => Ok(()),
        }
    }

    /// Shannon entropy in bits of a discrete marginal; `None` for continuous ones.
    pub fn entropy_bits(&self) -> Option<f64> {
        match self {
            Marginal::UniformInt { lo, hi } => Some(((hi - lo + 1) as f64).log2()),
            Marginal::Gaussian { .. } => None,
            Marginal::Bernoulli { p, lo, hi } => {
                if lo == hi {
                    Some(0.0)
                } else {
                    oracles::brute_force_entropy(&[*p, 1.0 - p]).ok()
                }
            }
            Marginal::Categorical { pmf } => oracles::brute_force_entropy(pmf).ok(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::UniformInt { lo, hi } => rng.random_range(*lo..=*hi) as f64,
            Marginal::Gaussian { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            Marginal::Bernoulli { p, lo, hi } => {
                if rng.random::<f64>() < *p {
                    *hi
                } else {
                    *lo
                }
            }
            Marginal::Categorical { pmf } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as f64;
                    }
                }
                // u landed in the rounding slack above the cumulative sum
                pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0) as f64
            }
        }
    }
}

/// Parses `uniform-int:LO:HI`, `gaussian:MEAN:STD`, `bernoulli:P:LO:HI` and
/// `categorical:P0,P1,...`.
impl FromStr for Marginal {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let id = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || SourceError::InvalidMarginal(format!("cannot parse `{s}`"));
        let num = |i: usize| -> Result<f64, SourceError> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad)
        };
        let m = match id {
            "uniform-int" => Marginal::UniformInt {
                lo: args.first().and_then(|a| a.parse().ok()).ok_or_else(bad)?,
                hi: args.get(1).and_then(|a| a.parse().ok()).ok_or_else(bad)?,
            },
            "gaussian" => Marginal::Gaussian {
                mean: num(0)?,
                std: num(1)?,
            },
            "bernoulli" => Marginal::Bernoulli {
                p: num(0)?,
                lo: num(1)?,
                hi: num(2)?,
            },
            "categorical" => Marginal::Categorical {
                pmf: args
                    .first()
                    .ok_or_else(bad)?
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?,
            },
            other => return Err(SourceError::UnknownMarginal(other.to_string())),
        };
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marginal::UniformInt { lo, hi } => write!(f, "uniform-int:{lo}:{hi}"),
            Marginal::Gaussian { mean, std } => write!(f, "gaussian:{mean}:{std}"),
            Marginal::Bernoulli { p, lo, hi } => write!(f, "bernoulli:{p}:{lo}:{hi}"),
            Marginal::Categorical { pmf } => {
                let ps: Vec<String> = pmf.iter().map(|p| p.to_string()).collect();
                write!(f, "categorical:{}", ps.join(","))
            }
        }
    }
}

pub(crate) fn validate_pmf(pmf: &[f64]) -> Result<(), SourceError> {
    if pmf.is_empty() || pmf.len() > 256 {
        return Err(SourceError::InvalidPmf(format!(
            "support size {} outside 1..=256",
            pmf.len()
        )));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SourceError::InvalidPmf("negative or non-finite probability".into()));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SourceError::InvalidPmf(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Generator parameters as recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Independent { marginal: Marginal },
    Identical { marginal: Marginal },
    GaussianPair { rho: f64 },
    DiscreteIid { pmf: Vec<f64> },
}

impl GeneratorSpec {
    pub fn id(&self) -> &'static str {
        match self {
            GeneratorSpec::Independent { .. } => "independent",
            GeneratorSpec::Identical { .. } => "identical",
            GeneratorSpec::GaussianPair { .. } => "gaussian-pair",
            GeneratorSpec::DiscreteIid { .. } => "discrete-iid",
        }
    }

    pub fn generate(&self, rows: usize, cols: usize, n: usize, seed: u64) -> Result<Dataset, SourceError> {
        match self {
            GeneratorSpec::Independent { marginal } => gen_independent(marginal, rows, cols, n, seed),
            GeneratorSpec::Identical { marginal } => gen_identical(marginal, rows, cols, n, seed),
            GeneratorSpec::GaussianPair { rho } => gen_gaussian_pair(*rho, rows, cols, n, seed),
            GeneratorSpec::DiscreteIid { pmf } => gen_discrete_iid(pmf, rows, cols, n, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub generator_id: String,
    pub params: GeneratorSpec,
    pub n_samples: usize,
    /// `[rows, cols]` of every `x` and `y` grid.
    pub shape: [usize; 2],
    pub seed: u64,
    pub analytic_mi_bits_per_element: Option<f64>,
    #[serde(default)]
    pub analytic_entropy_bits_per_element: Option<f64>,
    #[serde(default)]
    pub perturbations: Vec<AppliedPerturbation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceSample {
    pub sample_id: usize,
    pub x: Grid<f32>,
    pub y: Grid<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SourceSample>,
}

impl Dataset {
    pub fn shape(&self) -> (usize, usize) {
        (self.manifest.shape[0], self.manifest.shape[1])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Short human-readable identifier used in estimates and reports.
    pub fn id(&self) -> String {
        let mut id = format!(
            "{}-{}x{}x{}-seed{}",
            self.manifest.generator_id,
            self.manifest.shape[0],
            self.manifest.shape[1],
            self.manifest.n_samples,
            self.manifest.seed
        );
        for p in &self.manifest.perturbations {
            id.push('+');
            id.push_str(&p.label());
        }
        id
    }

    /// Keeps the samples at `indices` (in that order) under a copy of the manifest.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.n_samples = indices.len();
        Dataset {
            manifest,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Checks the shape invariant: every sample matches the manifest shape.
    pub fn validate(&self) -> Result<(), SourceError> {
        let (rows, cols) = self.shape();
        if self.samples.len() != self.manifest.n_samples {
            return Err(SourceError::ShapeMismatch {
                expected: self.manifest.n_samples as u64,
                found: self.samples.len() as u64,
            });
        }
        for s in &self.samples {
            if s.x.shape() != (rows, cols) || s.y.shape() != (rows, cols) {
                return Err(SourceError::ShapeMismatch {
                    expected: (rows * cols) as u64,
                    found: s.x.len().max(s.y.len()) as u64,
                });
            }
        }
        Ok(())
    }
}

fn check_shape(rows: usize, cols: usize, n: usize) -> Result<(), SourceError> {
    if rows == 0 || cols == 0 || n == 0 {
        return Err(SourceError::InvalidShape);
    }
    Ok(())
}

fn draw_grid(marginal: &Marginal, rows: usize, cols: usize, seed: u64, stream: u64) -> Grid<f32> {
    let mut rng = stream_rng(seed, stream);
    let data = (0..rows * cols).map(|_| marginal.sample(&mut rng) as f32).collect();
    Grid::from_vec(rows, cols, data).expect("length matches shape")
}

fn manifest(spec: GeneratorSpec, rows: usize, cols: usize, n: usize, seed: u64) -> DatasetManifest {
    DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        generator_id: spec.id().to_string(),
        params: spec,
        n_samples: n,
        shape: [rows, cols],
        seed,
        analytic_mi_bits_per_element: None,
        analytic_entropy_bits_per_element: None,
        perturbations: Vec::new(),
    }
}

// x of sample i uses stream 2i, y uses 2i + 1.
fn gen_pairwise(
    marginal: &Marginal,
    rows: usize,
    cols: usize,
    n: usize,
    seed: u64,
    copy_x: bool,
) -> Vec<SourceSample> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = draw_grid(marginal, rows, cols, seed, 2 * i as u64);
            let y = if copy_x {
                x.clone()
            } else {
                draw_grid(marginal, rows, cols, seed, 2 * i as u64 + 1)
            };
            SourceSample { sample_id: i, x, y }
        })
        .collect()
}

/// x and y drawn independently per element from `marginal`; analytic MI is 0.
pub fn gen_independent(
    marginal: &Marginal,
    rows: usize,
    cols: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset, SourceError> {
    check_shape(rows, cols, n)?;
    marginal.validate()?;
    let mut manifest = manifest(
        GeneratorSpec::Independent {
            marginal: marginal.clone(),
        },
        rows,
        cols,
        n,
        seed,
    );
    manifest.analytic_mi_bits_per_element = Some(0.0);
    manifest.analytic_entropy_bits_per_element = marginal.entropy_bits();
    Ok(Dataset {
        manifest,
        samples: gen_pairwise(marginal, rows, cols, n, seed, false),
    })
}

/// y is an exact copy of x; analytic MI equals the marginal entropy when it
/// is discrete, and is absent otherwise.
pub fn gen_identical(
    marginal: &Marginal,
    rows: usize,
    cols: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset, SourceError> {
    check_shape(rows, cols, n)?;
    marginal.validate()?;
    let mut manifest = manifest(
        GeneratorSpec::Identical {
            marginal: marginal.clone(),
        },
        rows,
        cols,
        n,
        seed,
    );
    manifest.analytic_mi_bits_per_element = marginal.entropy_bits();
    manifest.analytic_entropy_bits_per_element = marginal.entropy_bits();
    Ok(Dataset {
        manifest,
        samples: gen_pairwise(marginal, rows, cols, n, seed, true),
    })
}

/// Element pairs i.i.d. from a standard bivariate Gaussian with correlation `rho`.
pub fn gen_gaussian_pair(rho: f64, rows: usize, cols: usize, n: usize, seed: u64) -> Result<Dataset, SourceError> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(SourceError::InvalidRho(rho));
    }
    check_shape(rows, cols, n)?;
    let residual = (1.0 - rho * rho).sqrt();
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut x = Vec::with_capacity(rows * cols);
            let mut y = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x.push(a as f32);
                y.push((rho * a + residual * b) as f32);
            }
            SourceSample {
                sample_id: i,
                x: Grid::from_vec(rows, cols, x).expect("shape"),
                y: Grid::from_vec(rows, cols, y).expect("shape"),
            }
        })
        .collect();
    let mut manifest = manifest(GeneratorSpec::GaussianPair { rho }, rows, cols, n, seed);
    manifest.analytic_mi_bits_per_element = Some(oracles::gaussian_analytic_mi(rho).expect("|rho| < 1 checked"));
    Ok(Dataset { manifest, samples })
}

/// x i.i.d. from `pmf` over symbols `0..pmf.len()`, y an independent draw from
/// the same pmf. The manifest records the analytic entropy.
pub fn gen_discrete_iid(pmf: &[f64], rows: usize, cols: usize, n: usize, seed: u64) -> Result<Dataset, SourceError> {
    validate_pmf(pmf)?;
    check_shape(rows, cols, n)?;
    let marginal = Marginal::Categorical { pmf: pmf.to_vec() };
    let mut manifest = manifest(GeneratorSpec::DiscreteIid { pmf: pmf.to_vec() }, rows, cols, n, seed);
    manifest.analytic_mi_bits_per_element = Some(0.0);
    manifest.analytic_entropy_bits_per_element = marginal.entropy_bits();
    Ok(Dataset {
        manifest,
        samples: gen_pairwise(&marginal, rows, cols, n, seed, false),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PayloadInfo {
    floats: u64,
    crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    manifest: DatasetManifest,
    payload: PayloadInfo,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SourceError + '_ {
    move |source| SourceError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SourceError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (rows, cols) = dataset.shape();
    let mut values = Vec::with_capacity(dataset.len() * 2 * rows * cols);
    for s in &dataset.samples {
        values.extend_from_slice(s.x.as_slice());
        values.extend_from_slice(s.y.as_slice());
    }
    let crc = payload::write(&dir.join(PAYLOAD_FILE), &values)?;
    let file = ManifestFile {
        manifest: dataset.manifest.clone(),
        payload: PayloadInfo {
            floats: values.len() as u64,
            crc32: crc,
        },
    };
    let json = serde_json::to_string_pretty(&file)?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SourceError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    let manifest = file.manifest;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(SourceError::Version(manifest.format_version));
    }
    let [rows, cols] = manifest.shape;
    let expected = (manifest.n_samples * 2 * rows * cols) as u64;
    if file.payload.floats != expected {
        return Err(SourceError::ShapeMismatch {
            expected,
            found: file.payload.floats,
        });
    }
    let (values, crc) = payload::read(&dir.join(PAYLOAD_FILE))?;
    if values.len() as u64 != expected {
        return Err(SourceError::ShapeMismatch {
            expected,
            found: values.len() as u64,
        });
    }
    if crc != file.payload.crc32 {
        return Err(SourceError::ChecksumMismatch {
            manifest: file.payload.crc32,
            payload: crc,
        });
    }
    let per = rows * cols;
    let samples = values
        .chunks_exact(2 * per)
        .enumerate()
        .map(|(i, chunk)| SourceSample {
            sample_id: i,
            x: Grid::from_vec(rows, cols, chunk[..per].to_vec()).expect("shape"),
            y: Grid::from_vec(rows, cols, chunk[per..].to_vec()).expect("shape"),
        })
        .collect();
    let dataset = Dataset { manifest, samples };
    dataset.validate()?;
    Ok(dataset)
}
