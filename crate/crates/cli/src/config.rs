use std::fs;
use std::path::Path;

use infometer::entropy::EstimatorConfig;
use infometer::harness::Condition;
use infometer::sources::GeneratorSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const SEED_ENV: &str = "INFOMETER_SEED";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub source: GeneratorSpec,
    /// `[rows, cols]`
    pub shape: [usize; 2],
    pub n_samples: usize,
}

fn default_bins() -> usize {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub conditions: Vec<Condition>,
    #[serde(default = "default_bins")]
    pub oracle_bins: usize,
}

/// Contents of a `--config` file. Every section is optional; command-line
/// flags override what is set here.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: Option<u64>,
    pub generate: Option<GenerateConfig>,
    pub estimator: EstimatorConfig,
    pub benchmark: Option<BenchmarkSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: CONFIG_FORMAT_VERSION,
            seed: None,
            generate: None,
            estimator: EstimatorConfig::default(),
            benchmark: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            return Err(CliError::Usage(format!(
                "{}: config format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                path.display(),
                cfg.format_version
            )));
        }
        Ok(cfg)
    }
}

/// The seed in effect and where it came from; echoed into every report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEcho {
    pub seed: u64,
    pub source: SeedSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    Env,
    Config,
    Default,
}

/// `--seed` beats the environment variable, which beats the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<SeedEcho, CliError> {
    if let Some(seed) = flag {
        return Ok(SeedEcho {
            seed,
            source: SeedSource::Flag,
        });
    }
    if let Some(raw) = env.filter(|s| !s.is_empty()) {
        let seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
        return Ok(SeedEcho {
            seed,
            source: SeedSource::Env,
        });
    }
    Ok(match config {
        Some(seed) => SeedEcho {
            seed,
            source: SeedSource::Config,
        },
        None => SeedEcho {
            seed: 0,
            source: SeedSource::Default,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(3), Some("4"), Some(5)).unwrap().source, SeedSource::Flag);
        assert_eq!(resolve_seed(None, Some("4"), Some(5)).unwrap().seed, 4);
        assert_eq!(resolve_seed(None, None, Some(5)).unwrap().source, SeedSource::Config);
        assert_eq!(resolve_seed(None, Some(""), None).unwrap().source, SeedSource::Default);
        assert!(resolve_seed(None, Some("abc"), None).is_err());
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"format_version": 1, "estimator": {"training": {"epochs": 3}}}"#).unwrap();
        assert_eq!(cfg.estimator.training.epochs, 3);
        assert_eq!(cfg.estimator.training.lr_initial, 1e-4);
        assert!(serde_json::from_str::<RunConfig>(r#"{"format_version": 1, "epochs": 3}"#).is_err());
        let g: RunConfig = serde_json::from_str(
            r#"{"generate": {"source": {"generator": "gaussian-pair", "rho": 0.6}, "shape": [32, 32], "n_samples": 10}}"#,
        )
        .unwrap();
        assert_eq!(g.generate.unwrap().source, GeneratorSpec::GaussianPair { rho: 0.6 });
    }
}
