//! Run configuration, read from JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, NoiseSpec};
use crate::diagnostics::DEFAULT_BINS;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "NOISECAR_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        spread: f64,
        seed: u64,
    },
    Rings {
        classes: usize,
        per_class: usize,
        noise_std: f64,
        seed: u64,
    },
    /// Dataset CSV files as written by `gen-data` / `inject-noise`.
    File {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    /// IDX image/label pairs, pixels scaled to `[0, 1]`.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

/// Stratified hold-out split applied before noise injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Final-epoch confidence histograms for clean and mislabelled samples.
    pub confidence_density: bool,
    pub density_bins: usize,
    /// Final-epoch mean confidence per (clean, observed) label pair.
    pub heatmap: bool,
    /// Confusion matrix of corrected targets against clean labels.
    pub confusion: bool,
    /// Write the trained network.
    pub checkpoint: bool,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            confidence_density: true,
            density_bins: DEFAULT_BINS,
            heatmap: true,
            confusion: true,
            checkpoint: false,
        }
    }
}

impl DiagnosticsSpec {
    pub fn any_report(&self) -> bool {
        self.confidence_density || self.heatmap || self.confusion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

/// Training data plus an optional clean-labelled evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the [`SEED_ENV`] override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(s) = &self.split {
            if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "split.test_fraction must lie in (0, 1), got {}",
                    s.test_fraction
                )));
            }
            let explicit_test = matches!(
                &self.dataset,
                DatasetSpec::File { test_path: Some(_), .. }
                    | DatasetSpec::Idx {
                        test_images: Some(_),
                        ..
                    }
            );
            if explicit_test {
                return Err(Error::Config(
                    "split cannot be combined with an explicit test set".into(),
                ));
            }
        }
        if let DatasetSpec::Idx {
            test_images,
            test_labels,
            ..
        } = &self.dataset
        {
            if test_images.is_some() != test_labels.is_some() {
                return Err(Error::Config(
                    "test_images and test_labels must be given together".into(),
                ));
            }
        }
        if self.diagnostics.density_bins == 0 {
            return Err(Error::Config("diagnostics.density_bins must be positive".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Loads or generates the data, splits it and injects noise into the training part.
    pub fn prepare_data(&self) -> Result<PreparedData> {
        let (full, mut test) = match &self.dataset {
            DatasetSpec::Blobs {
                classes,
                per_class,
                dim,
                separation,
                spread,
                seed,
            } => (
                data::gen_blobs(*classes, *per_class, *dim, *separation, *spread, *seed)?,
                None,
            ),
            DatasetSpec::Rings {
                classes,
                per_class,
                noise_std,
                seed,
            } => (data::gen_rings(*classes, *per_class, *noise_std, *seed)?, None),
            DatasetSpec::File { path, test_path } => (
                data::csv::load_dataset_file(path)?,
                test_path.as_deref().map(data::csv::load_dataset_file).transpose()?,
            ),
            DatasetSpec::Idx {
                images,
                labels,
                limit,
                test_images,
                test_labels,
            } => {
                let limit = limit.unwrap_or(usize::MAX);
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(data::idx::load_idx(i, l, usize::MAX)?),
                    _ => None,
                };
                (data::idx::load_idx(images, labels, limit)?, test)
            }
        };
        let mut train = full;
        if let Some(s) = &self.split {
            let (a, b) = data::split(&train, s.test_fraction, s.seed)?;
            train = a;
            test = Some(b);
        }
        if let Some(spec) = &self.noise {
            train = data::inject_noise(&train, spec)?;
        }
        if let Some(t) = &test {
            if t.dim() != train.dim() {
                return Err(Error::shape("test set features", train.dim(), t.dim()));
            }
            if t.num_classes > train.num_classes {
                train.num_classes = t.num_classes;
                train.validate()?;
            }
        }
        Ok(PreparedData { train, test })
    }
}
