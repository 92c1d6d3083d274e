//! One experiment from config to artifacts.
//!
//! A run directory holds `manifest.toml` (the config plus run metadata, the
//! only file carrying a timestamp), `generations.csv` (one row per
//! evaluated candidate), `plot.csv` (every generation's survivors) and
//! `archive.json` (everything, including the final front's genotypes and
//! network descriptions).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::moea::{evolve, EvalRecord, EvolveData, GenerationSummary, ParetoArchive, PopulationPoint};

use super::config::{DatasetSpec, RunConfig};
use super::dataset::{load_cifar10_binary, load_idx_dir, Dataset};
use super::synth::desk;
use super::BenchError;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GENERATIONS_FILE: &str = "generations.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const ARCHIVE_FILE: &str = "archive.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub created_unix_seconds: u64,
    pub version: String,
    pub evaluations: usize,
    pub final_front: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub image_shape: String,
    pub num_classes: usize,
    pub multipliers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunInfo,
    pub config: RunConfig,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub archive: ParetoArchive,
    pub manifest: Manifest,
}

pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), BenchError> {
    match cfg.dataset_spec()? {
        DatasetSpec::Desk => desk(),
        DatasetSpec::Idx(dir) => load_idx_dir(&dir, cfg.num_classes),
        DatasetSpec::Cifar10(dir) => load_cifar10_binary(&dir),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, BenchError> {
    let file = fs::File::create(path).map_err(BenchError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::Io { path: path.into(), source: std::io::Error::other(e) }
}

/// One row per evaluation: id, generation, parent, f1, f2, f3, mult_id,
/// rank, crowding, n_mult, mult_energy_pj, error.
pub fn write_generations_csv(records: &[EvalRecord], path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["id", "generation", "parent", "f1", "f2", "f3", "mult_id", "rank", "crowding", "n_mult", "mult_energy_pj", "error"])
        .map_err(&err)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.generation.to_string(),
            r.parent.map(|p| p.to_string()).unwrap_or_default(),
            r.f1.to_string(),
            r.f2.to_string(),
            r.f3.to_string(),
            r.mult_id.clone(),
            r.rank.to_string(),
            r.crowding.to_string(),
            r.n_mult.to_string(),
            r.mult_energy_pj.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(BenchError::io(path))
}

/// Accuracy against energy for every generation's surviving population.
pub fn write_plot_csv(points: &[PopulationPoint], path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["generation", "id", "f1", "f2", "f3", "rank", "mult_id"]).map_err(&err)?;
    for p in points {
        w.write_record([
            p.generation.to_string(),
            p.id.to_string(),
            p.f1.to_string(),
            p.f2.to_string(),
            p.f3.to_string(),
            p.rank.to_string(),
            p.mult_id.clone(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(BenchError::io(path))
}

fn write_file(path: &Path, text: &str) -> Result<(), BenchError> {
    let mut f = fs::File::create(path).map_err(BenchError::io(path))?;
    f.write_all(text.as_bytes()).map_err(BenchError::io(path))
}

/// Runs the search described by `cfg` and writes its artifacts. Training
/// failures of individual candidates are recorded, not fatal.
pub fn run(cfg: &RunConfig, progress: &mut dyn FnMut(&GenerationSummary)) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let library = cfg.library()?;
    let policy = cfg.policy(&library)?;
    let (train, test) = load_datasets(cfg)?;
    let num_classes = train.num_classes.max(test.num_classes);
    let evolve_cfg = cfg.evolve_config(num_classes);
    let data = EvolveData { train: train.samples(), test: test.samples() };
    let archive = evolve(&evolve_cfg, &policy, &data, &library, cfg.seed, progress)?;

    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(BenchError::io(&dir))?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        run: RunInfo {
            created_unix_seconds: created,
            version: env!("CARGO_PKG_VERSION").into(),
            evaluations: archive.evaluations(),
            final_front: archive.final_front.len(),
            train_images: train.len(),
            test_images: test.len(),
            image_shape: train.shape.to_string(),
            num_classes,
            multipliers: library.iter().map(|m| m.id().to_string()).collect(),
        },
        config: cfg.clone(),
    };
    let manifest_text = toml::to_string(&manifest).map_err(|e| BenchError::Config(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), &manifest_text)?;
    write_generations_csv(&archive.records, &dir.join(GENERATIONS_FILE))?;
    write_plot_csv(&archive.population, &dir.join(PLOT_FILE))?;
    write_file(&dir.join(ARCHIVE_FILE), &archive.to_json())?;
    Ok(RunOutcome { dir, archive, manifest })
}
