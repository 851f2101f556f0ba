use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cnn::{architecture, TrainConfig};
use crate::data::DEFAULT_FRACTIONS;
use crate::error::{Error, Result};
use crate::headsearch::SearchBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated suite, written under the run directory.
    Synthetic,
    /// Existing layout: one sub-directory per problem with class folders.
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub contrast: f64,
    pub noise: f64,
    pub image_size: usize,
    pub n_defect: usize,
    pub n_clean: usize,
    /// Problem names to use; empty means all.
    pub problems: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            contrast: 0.6,
            noise: 0.1,
            image_size: crate::data::DEFAULT_IMAGE_SIZE,
            n_defect: 150,
            n_clean: 1000,
            problems: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub architectures: Vec<String>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            architectures: vec!["desk-vgg-a".into(), "desk-vgg-c".into()],
            batch_size: 10,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 30,
        }
    }
}

/// A zero value switches that limit off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub max_candidates: usize,
    pub max_wall_clock_seconds: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let desk = SearchBudget::desk(0);
        Self {
            max_candidates: desk.max_candidates.unwrap_or(0),
            max_wall_clock_seconds: desk.max_wall_clock_seconds.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 10,
            repeats: 100,
        }
    }
}

/// Everything a run needs. Read from TOML; command-line flags override the
/// top-level keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainSection,
    pub search: SearchSection,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out: None,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            train: TrainSection::default(),
            search: SearchSection::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            epochs: self.train.epochs,
            seed,
        }
    }

    pub fn budget(&self, seed: u64) -> SearchBudget {
        SearchBudget {
            max_wall_clock_seconds: (self.search.max_wall_clock_seconds > 0.0).then_some(self.search.max_wall_clock_seconds),
            max_candidates: (self.search.max_candidates > 0).then_some(self.search.max_candidates),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.architectures.is_empty() {
            return Err(Error::Config("no architectures listed".into()));
        }
        for name in &self.train.architectures {
            architecture(name)?;
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.data.source == DataSource::Directory && self.data.path.is_none() {
            return Err(Error::Config("data.source = \"directory\" needs data.path".into()));
        }
        if self.bench.repeats < 2 {
            return Err(Error::Config("bench.repeats must be at least 2".into()));
        }
        let f = self.split.fractions;
        if f.iter().any(|x| !(*x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {f:?} must be positive and sum to 1")));
        }
        self.train_config(0).validate()?;
        self.budget(0).validate()
    }
}
