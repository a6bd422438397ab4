//! Run configuration: every hyperparameter in one serializable record, with
//! named presets.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{case_seed, gen_phantom_pair_with_spacing, split_indices, CasePair};
use crate::error::{Error, Result};
use crate::io::{read_text, write_text};
use crate::losses::LossWeights;
use crate::meta::{ClassicalConfig, ConventionalConfig, EpisodeConfig, MetaConfig, TtoConfig};
use crate::models::{RegNet, RegNetConfig};
use crate::optim::LinearDecay;
use crate::transforms::AffineRanges;
use crate::volume::DEFAULT_SPACING_MM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Published hyperparameters and dataset proportions.
    Paper,
    /// Scaled down to run on one CPU core.
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train_cases: usize,
    pub test_cases: usize,
    pub extent: [usize; 3],
    pub spacing_mm: f64,
    /// Peak control-point displacement of the ground-truth field, voxels.
    pub deform_magnitude: f64,
}

impl DataConfig {
    pub fn total_cases(&self) -> usize {
        self.train_cases + self.test_cases
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_cases as f64 / self.total_cases() as f64
    }

    /// Generates the dataset and splits it by case into `(train, test)`,
    /// each entry tagged with its case id.
    pub fn generate(&self, seed: u64) -> Result<(Vec<(usize, CasePair)>, Vec<(usize, CasePair)>)> {
        self.validate()?;
        let (train_ids, test_ids) = split_indices(self.total_cases(), self.train_fraction(), seed)?;
        let make = |ids: Vec<usize>| -> Result<Vec<(usize, CasePair)>> {
            ids.into_iter()
                .map(|id| {
                    let pair = gen_phantom_pair_with_spacing(case_seed(seed, id), self.extent, self.deform_magnitude, self.spacing_mm)?;
                    Ok((id, pair))
                })
                .collect()
        };
        Ok((make(train_ids)?, make(test_ids)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_cases == 0 || self.test_cases == 0 {
            return Err(Error::Config("both train_cases and test_cases must be positive".into()));
        }
        if !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return Err(Error::Config(format!("spacing_mm must be positive, got {}", self.spacing_mm)));
        }
        if !(self.deform_magnitude >= 0.0 && self.deform_magnitude.is_finite()) {
            return Err(Error::Config("deform_magnitude must be finite and non-negative".into()));
        }
        RegNet::check_extent(self.extent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataConfig,
    pub network: RegNetConfig,
    pub meta: MetaConfig,
    pub tto: TtoConfig,
    pub conventional: ConventionalConfig,
    pub classical: ClassicalConfig,
}

pub const DEFAULT_SEED: u64 = 7;

/// Inner learning rate of the desk preset.
pub const DESK_INNER_LR: f32 = 1e-3;

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let weights = LossWeights::default();
        let augment = AffineRanges::default();
        let (data, inner_iterations, inner_lr, conventional_iterations) = match preset {
            Preset::Paper => (
                DataConfig {
                    train_cases: 88,
                    test_cases: 20,
                    extent: [48; 3],
                    spacing_mm: DEFAULT_SPACING_MM,
                    deform_magnitude: 2.0,
                },
                200_000,
                1e-5,
                200_000,
            ),
            Preset::Desk => (
                DataConfig {
                    train_cases: 20,
                    test_cases: 8,
                    extent: [32; 3],
                    spacing_mm: DEFAULT_SPACING_MM,
                    deform_magnitude: 2.0,
                },
                3_000,
                DESK_INNER_LR,
                3_000,
            ),
        };
        let episode = EpisodeConfig {
            inner_lr,
            augment,
            loss_weights: weights,
            ..EpisodeConfig::default()
        };
        Self {
            preset,
            seed: DEFAULT_SEED,
            data,
            network: RegNetConfig::default(),
            meta: MetaConfig {
                total_inner_iterations: inner_iterations,
                beta_schedule: LinearDecay {
                    start_value: 0.5,
                    end_value: 1e-5,
                    total_steps: inner_iterations,
                },
                episode,
                seed: DEFAULT_SEED,
            },
            tto: TtoConfig {
                lr: inner_lr,
                ..TtoConfig::default()
            },
            conventional: ConventionalConfig {
                iterations: conventional_iterations,
                batch: 4,
                lr: inner_lr,
                augment,
                loss_weights: weights,
                seed: DEFAULT_SEED,
            },
            classical: ClassicalConfig::default(),
        }
    }

    /// Sets the global seed and every seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.meta.seed = seed;
        self.conventional.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.network.validate()?;
        self.meta.validate()?;
        if self.meta.beta_schedule.total_steps == 0 {
            return Err(Error::Config("beta schedule needs at least one step".into()));
        }
        if self.tto.batch == 0 {
            return Err(Error::Config("tto batch must be at least 1".into()));
        }
        if self.conventional.batch == 0 {
            return Err(Error::Config("conventional batch must be at least 1".into()));
        }
        if self.meta.seed != self.seed || self.conventional.seed != self.seed {
            return Err(Error::Config("meta.seed and conventional.seed must equal seed".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_toml()?)
    }
}
