//! Experiment harness: datasets, run configuration, orchestration of a
//! search with its on-disk artifacts, and text reports.

mod config;
mod dataset;
mod report;
mod run;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::moea::MoeaError;
use crate::multsim::MultError;

pub use config::{DatasetSpec, Parameters, RunConfig, TemplateKind, OUTPUT_ROOT_ENV};
pub use dataset::{
    encode_cifar_batch, encode_idx_images, encode_idx_labels, load_cifar10_binary, load_idx, load_idx_dir,
    parse_cifar_batch, parse_idx_images, parse_idx_labels, write_idx, Dataset, Split, CIFAR_RECORD, CIFAR_SIDE,
    CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
pub use report::{mult_info, render_report, report_file};
pub use run::{
    load_datasets, run, write_generations_csv, write_plot_csv, Manifest, RunInfo, RunOutcome, ARCHIVE_FILE,
    GENERATIONS_FILE, MANIFEST_FILE, PLOT_FILE,
};
pub use synth::{desk, generate as generate_desk, generate_bundled, CLASS_NAMES, DESK_CLASSES, DESK_SIDE, DESK_TEST, DESK_TRAIN};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{}: format error at byte offset {offset}: {reason}", path.display())]
    Format { path: PathBuf, offset: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("corrupt archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Mult(#[from] MultError),
    #[error(transparent)]
    Search(#[from] MoeaError),
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}
