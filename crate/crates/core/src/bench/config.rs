//! Run configuration as a TOML file. Experiment parameters live in a
//! `[parameters]` table under their conventional short names; everything
//! else is a top-level key.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cgpnet::Template;
use crate::moea::{EvolveConfig, Scenario, ScenarioPolicy};
use crate::multsim::MultiplierLibrary;
use crate::qengine::TrainConfig;

use super::BenchError;

/// Relative output directories are placed under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "CGPNAS_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Parameters {
    pub n_r: usize,
    pub n_c: usize,
    #[serde(rename = "L")]
    pub levels_back: usize,
    pub pop_size: usize,
    #[serde(rename = "G")]
    pub generations: usize,
    #[serde(rename = "D_train")]
    pub d_train: usize,
    #[serde(rename = "D_retrain")]
    pub d_retrain: usize,
    #[serde(rename = "D_test")]
    pub d_test: usize,
    #[serde(rename = "E_train")]
    pub e_train: usize,
    #[serde(rename = "E_retrain")]
    pub e_retrain: usize,
    pub batch_size: usize,
    pub rate: f64,
    pub p_arch: f64,
    pub p_mult: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            n_r: 6,
            n_c: 23,
            levels_back: 5,
            pop_size: 8,
            generations: 10,
            d_train: 50_000,
            d_retrain: 50_000,
            d_test: 10_000,
            e_train: 20,
            e_retrain: 200,
            batch_size: 32,
            rate: 0.001,
            p_arch: 1.0,
            p_mult: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    /// Full-size layer parameters for 32×32 colour images.
    Standard,
    /// Narrow layers for small images.
    Desk,
}

/// Where images come from: `desk`, `idx:DIR` or `cifar10:DIR`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSpec {
    Desk,
    Idx(PathBuf),
    Cifar10(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s.split_once(':') {
            None if s == "desk" => Ok(DatasetSpec::Desk),
            Some(("idx", p)) if !p.is_empty() => Ok(DatasetSpec::Idx(p.into())),
            Some(("cifar10", p)) if !p.is_empty() => Ok(DatasetSpec::Cifar10(p.into())),
            _ => Err(BenchError::Config(format!("dataset {s:?} is not `desk`, `idx:DIR` or `cifar10:DIR`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    /// Multiplier id for scenario s3.
    pub multiplier: Option<String>,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub dataset: String,
    /// Class count for IDX data; inferred from the labels when absent.
    pub num_classes: Option<usize>,
    pub template: TemplateKind,
    /// Multiplier library file; the built-in library when absent.
    pub library: Option<PathBuf>,
    pub augment_flip: bool,
    pub augment_shift: usize,
    pub l2: f64,
    /// Re-train only this many of the most accurate final networks.
    pub retrain_top_k: Option<usize>,
    pub parameters: Parameters,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::S1,
            multiplier: None,
            seed: 1,
            workers: 1,
            output_dir: PathBuf::from("cgpnas-run"),
            dataset: "desk".into(),
            num_classes: None,
            template: TemplateKind::Standard,
            library: None,
            augment_flip: true,
            augment_shift: 4,
            l2: 1e-4,
            retrain_top_k: None,
            parameters: Parameters::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset and library paths are
    /// taken relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        if let Some(lib) = &self.library {
            self.library = Some(join(lib));
        }
        match self.dataset_spec() {
            Ok(DatasetSpec::Idx(p)) => self.dataset = format!("idx:{}", join(&p).display()),
            Ok(DatasetSpec::Cifar10(p)) => self.dataset = format!("cifar10:{}", join(&p).display()),
            _ => {}
        }
    }

    pub fn to_toml(&self) -> Result<String, BenchError> {
        toml::to_string(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, BenchError> {
        self.dataset.parse()
    }

    /// The output directory, placed under `$CGPNAS_OUTPUT_DIR` when it is
    /// relative and the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn library(&self) -> Result<MultiplierLibrary, BenchError> {
        Ok(match &self.library {
            Some(p) => MultiplierLibrary::from_toml_file(p)?,
            None => MultiplierLibrary::builtin(),
        })
    }

    pub fn policy(&self, library: &MultiplierLibrary) -> Result<ScenarioPolicy, BenchError> {
        Ok(ScenarioPolicy::new(self.scenario, library, self.multiplier.as_deref())?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let p = &self.parameters;
        TrainConfig {
            epochs: p.e_train,
            batch_size: p.batch_size,
            learning_rate: p.rate,
            l2: self.l2,
            flip: self.augment_flip,
            shift: self.augment_shift,
        }
    }

    pub fn evolve_config(&self, num_classes: usize) -> EvolveConfig {
        let p = &self.parameters;
        let template = match self.template {
            TemplateKind::Standard => Template::standard(p.n_r, p.n_c, p.levels_back, num_classes),
            TemplateKind::Desk => Template::desk(p.n_r, p.n_c, p.levels_back, num_classes),
        };
        EvolveConfig {
            template,
            pop_size: p.pop_size,
            generations: p.generations,
            d_train: p.d_train,
            d_retrain: p.d_retrain,
            d_test: p.d_test,
            train: self.train_config(),
            retrain_epochs: p.e_retrain,
            p_arch: p.p_arch,
            p_mult: p.p_mult,
            workers: self.workers,
            retrain_top_k: self.retrain_top_k,
        }
    }

    /// Checks everything that can be checked without reading the dataset.
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.workers == 0 {
            return Err(BenchError::Config("workers must be at least 1".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(BenchError::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        if self.retrain_top_k == Some(0) {
            return Err(BenchError::Config("retrain_top_k must be at least 1".into()));
        }
        match self.dataset_spec()? {
            DatasetSpec::Desk => {}
            DatasetSpec::Idx(p) | DatasetSpec::Cifar10(p) if !p.is_dir() => {
                return Err(BenchError::Config(format!("dataset directory {} does not exist", p.display())));
            }
            _ => {}
        }
        let library = self.library()?;
        self.policy(&library)?;
        let nc = match self.dataset_spec()? {
            DatasetSpec::Desk | DatasetSpec::Cifar10(_) => 10,
            DatasetSpec::Idx(_) => self.num_classes.unwrap_or(10),
        };
        self.evolve_config(nc).validate()?;
        Ok(())
    }
}
