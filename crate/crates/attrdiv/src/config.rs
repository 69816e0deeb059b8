//! `RunConfig`, loaded from TOML and overridden by command-line flags.
//!
//! ```toml
//! mode = "hcs"              # "hcs" or "cs"
//! n_attributes = 20
//! template = "A photo of {attribute}"
//! center_policy = "train-images"   # "train-images", "pooled" or "external"
//! centers_file = "train_scores.adem"  # required for "external"
//! l2_normalize = false
//! format = "json"           # "json", "csv" or "markdown"
//!
//! [kde]
//! resolution_1d = 512
//! resolution_2d = 128
//! resolution_3d = 64
//! kl_floor = 1e-12
//! max_samples = 10000
//! subsample_seed = 0
//! max_tuple = 3
//! nway_sample_floor = 10000
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use attrdiv_core::attributes::{DEFAULT_N_ATTRIBUTES, DEFAULT_TEMPLATE};
use attrdiv_core::density::{MAX_DIM, MIN_RESOLUTION};
use attrdiv_core::divergence::{DEFAULT_NWAY_SAMPLE_FLOOR, KL_FLOOR};
use attrdiv_core::DivergenceConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::Format;

/// Upper bound on grid points per axis, by dimensionality.
pub const MAX_RESOLUTION: [usize; 3] = [1 << 16, 2048, 256];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{key} = {value} is out of range ({expected})")]
    OutOfRange { key: &'static str, value: String, expected: &'static str },
    #[error("center_policy = \"external\" needs centers_file")]
    MissingCentersFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    #[default]
    Hcs,
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CenterPolicyArg {
    #[default]
    TrainImages,
    Pooled,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub resolution_1d: Option<usize>,
    pub resolution_2d: Option<usize>,
    pub resolution_3d: Option<usize>,
    pub kl_floor: f64,
    pub max_samples: Option<usize>,
    pub subsample_seed: u64,
    pub max_tuple: usize,
    pub nway_sample_floor: usize,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            resolution_1d: None,
            resolution_2d: None,
            resolution_3d: None,
            kl_floor: KL_FLOOR,
            max_samples: None,
            subsample_seed: 0,
            max_tuple: 3,
            nway_sample_floor: DEFAULT_NWAY_SAMPLE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: ModeArg,
    pub n_attributes: usize,
    pub template: String,
    pub center_policy: CenterPolicyArg,
    pub centers_file: Option<PathBuf>,
    pub l2_normalize: bool,
    pub format: Format,
    pub kde: KdeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: ModeArg::Hcs,
            n_attributes: DEFAULT_N_ATTRIBUTES,
            template: DEFAULT_TEMPLATE.to_string(),
            center_policy: CenterPolicyArg::TrainImages,
            centers_file: None,
            l2_normalize: false,
            format: Format::Json,
            kde: KdeConfig::default(),
        }
    }
}

fn out_of_range(key: &'static str, value: impl ToString, expected: &'static str) -> ConfigError {
    ConfigError::OutOfRange { key, value: value.to_string(), expected }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string().trim_end().replace('\n', " ") })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    /// Checks every numeric option against its documented range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_attributes == 0 {
            return Err(out_of_range("n_attributes", 0, ">= 1"));
        }
        let k = &self.kde;
        let resolutions = [
            ("kde.resolution_1d", k.resolution_1d, MAX_RESOLUTION[0]),
            ("kde.resolution_2d", k.resolution_2d, MAX_RESOLUTION[1]),
            ("kde.resolution_3d", k.resolution_3d, MAX_RESOLUTION[2]),
        ];
        for (key, r, max) in resolutions {
            if let Some(r) = r {
                if r < MIN_RESOLUTION || r > max {
                    return Err(out_of_range(key, r, "8 to 65536 (1-D), 2048 (2-D), 256 (3-D)"));
                }
            }
        }
        if !(k.kl_floor > 0.0 && k.kl_floor <= 1e-3) {
            return Err(out_of_range("kde.kl_floor", k.kl_floor, "0 < kl_floor <= 1e-3"));
        }
        if let Some(m) = k.max_samples {
            if m < 2 {
                return Err(out_of_range("kde.max_samples", m, ">= 2"));
            }
        }
        if k.max_tuple < 2 || k.max_tuple > MAX_DIM {
            return Err(out_of_range("kde.max_tuple", k.max_tuple, "2 to 8"));
        }
        if self.center_policy == CenterPolicyArg::External && self.centers_file.is_none() {
            return Err(ConfigError::MissingCentersFile);
        }
        Ok(())
    }

    pub fn divergence_config(&self) -> DivergenceConfig {
        let k = &self.kde;
        DivergenceConfig {
            resolution_1d: k.resolution_1d,
            resolution_2d: k.resolution_2d,
            resolution_3d: k.resolution_3d,
            resolution_nd: None,
            kl_floor: k.kl_floor,
            max_samples: k.max_samples,
            subsample_seed: k.subsample_seed,
            max_tuple: k.max_tuple,
            nway_sample_floor: k.nway_sample_floor,
        }
    }
}
