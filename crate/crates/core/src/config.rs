//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_idx_images, synth_gaussian_mixture, Dataset};
use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::train::{ArchSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Gaussian {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        classes: Option<Vec<u8>>,
    },
    Csv {
        path: PathBuf,
        n_targets: usize,
        #[serde(default)]
        one_hot: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub standardize: bool,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DataConfig {
    /// Loads, splits and optionally standardizes. Relative paths resolve
    /// against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        let ds = match &self.source {
            DataSource::Gaussian {
                n_per_class,
                classes,
                dim,
                separation,
                seed,
            } => synth_gaussian_mixture(*n_per_class, *classes, *dim, *separation, *seed)?,
            DataSource::Idx {
                images,
                labels,
                limit,
                classes,
            } => load_idx_images(
                &base_dir.join(images),
                &base_dir.join(labels),
                *limit,
                classes.as_deref(),
            )?,
            DataSource::Csv {
                path,
                n_targets,
                one_hot,
            } => load_csv(&base_dir.join(path), *n_targets, *one_hot)?,
        };
        let ds = ds.with_split(self.test_fraction, self.split_seed)?;
        if self.standardize {
            ds.standardize()
        } else {
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    /// Number of seeds per (lr, batch) cell.
    pub seeds: usize,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.batch_sizes.len() * self.seeds
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub grid: Option<SweepGrid>,
    /// Worker threads for sweeps and per-sample metric work.
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::config("data.test_fraction", "must lie in [0, 1)"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("parallelism", "must be at least 1"));
        }
        let e = &self.eval;
        if !(e.rho > 0.0) || !e.rho.is_finite() {
            return Err(Error::config("eval.rho", "must be positive and finite"));
        }
        if e.mc_draws == 0 {
            return Err(Error::config("eval.mc_draws", "must be at least 1"));
        }
        if e.k_values.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::config("eval.k_values", "must be positive"));
        }
        if let Some(g) = &self.grid {
            if g.is_empty() {
                return Err(Error::config("grid", "must contain at least one run"));
            }
            if let Some(lr) = g.learning_rates.iter().find(|lr| !(**lr > 0.0) || !lr.is_finite()) {
                return Err(Error::config(
                    "grid.learning_rates",
                    format!("must be positive, got {lr}"),
                ));
            }
            if g.batch_sizes.contains(&0) {
                return Err(Error::config("grid.batch_sizes", "must be at least 1"));
            }
        }
        Ok(())
    }
}
