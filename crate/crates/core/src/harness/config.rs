use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::architecture::ModelConfig;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::tasks::{encode_suite, read_conll, read_csv_classification, CsvSchema, Suite, SyntheticSpec};
use crate::trainer::TrainConfig;

/// Where the tasks come from: a synthetic generator, or CSV/CoNLL files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Classification corpora, one task each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub csv: Vec<PathBuf>,
    /// Tagging corpora, one task each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conll: Vec<PathBuf>,
    #[serde(default)]
    pub csv_schema: CsvSchema,
    /// Seed of the train/dev/test split of file corpora.
    #[serde(default)]
    pub split_seed: u64,
}

impl SuiteConfig {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        SuiteConfig {
            synthetic: Some(spec),
            csv: Vec::new(),
            conll: Vec::new(),
            csv_schema: CsvSchema::default(),
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let files = !self.csv.is_empty() || !self.conll.is_empty();
        match (&self.synthetic, files) {
            (Some(spec), false) => spec.validate(),
            (None, true) => Ok(()),
            (Some(_), true) => Err(Error::Config("suite: choose either `synthetic` or data files, not both".into())),
            (None, false) => Err(Error::Config("suite: no synthetic spec and no data files".into())),
        }
    }

    /// Generates or loads the suite. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Suite> {
        self.validate()?;
        if let Some(spec) = &self.synthetic {
            return spec.generate();
        }
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut raw = Vec::new();
        for p in &self.csv {
            raw.push(read_csv_classification(&resolve(p), &self.csv_schema)?);
        }
        for p in &self.conll {
            raw.push(read_conll(&resolve(p))?);
        }
        Ok(encode_suite(&raw, self.split_seed)?.0)
    }
}

/// A complete experiment. `seed` drives parameter initialization, batch
/// order and controller sampling; `train.seed` always mirrors it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub suite: SuiteConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.train.seed != 0 && cfg.train.seed != cfg.seed {
            return Err(Error::Config(
                "train.seed is taken from the top-level seed; remove it or make them equal".into(),
            ));
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.train.seed != self.seed {
            return Err(Error::Config("train.seed differs from seed".into()));
        }
        if self.controller.task_embed_dim == 0 || self.controller.hidden == 0 {
            return Err(Error::Config("controller widths must be positive".into()));
        }
        Ok(())
    }
}
