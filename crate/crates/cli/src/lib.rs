//! Command layer of the `regicp` tool: dataset generation, training,
//! closed-loop detection experiments, attack evaluation and report data.
//!
//! Every command takes a [`RunConfig`] and reads/writes a fixed file layout
//! under `config.out` (see [`Layout`]), so the binary and the tests drive the
//! same code.

pub mod attack_eval;
pub mod config;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod report;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use regicp::icp::CalibrationSet;
use regicp::model::VaeRegressor;
use regicp::pipeline::OfflineArtifacts;
use serde::Serialize;

pub use attack_eval::{attack_eval, AttackEvalSummary};
pub use config::{RunConfig, Triple};
pub use error::{CliError, Result};
pub use experiment::{experiment, ExperimentSummary, ResultRow, TimingRow};
pub use generate::{generate, GenerateSummary};
pub use report::{report, RecordSummary};
pub use train::{train, TrainSummary};

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.file("dataset.bin")
    }
    pub fn dataset_index(&self) -> PathBuf {
        self.file("dataset.csv")
    }
    pub fn weights(&self) -> PathBuf {
        self.file("weights.bin")
    }
    pub fn calibration(&self) -> PathBuf {
        self.file("calibration.txt")
    }
    pub fn loss_history(&self) -> PathBuf {
        self.file("loss_history.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.file("train_summary.json")
    }
    pub fn results(&self) -> PathBuf {
        self.file("results.csv")
    }
    pub fn tuning(&self) -> PathBuf {
        self.file("tuning.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.file("timing.csv")
    }
    pub fn experiment_summary(&self) -> PathBuf {
        self.file("summary.json")
    }
    pub fn episode_index(&self) -> PathBuf {
        self.file("episodes.csv")
    }
    pub fn records(&self) -> PathBuf {
        self.file("episodes")
    }
    pub fn attack_eval(&self) -> PathBuf {
        self.file("attack_eval.csv")
    }
    pub fn attack_eval_summary(&self) -> PathBuf {
        self.file("attack_eval.json")
    }
    pub fn report(&self) -> PathBuf {
        self.file("report")
    }
}

/// Loads the trained model and calibration scores written by [`train`].
pub fn load_artifacts(cfg: &RunConfig) -> Result<OfflineArtifacts> {
    let layout = Layout::new(&cfg.out);
    let model = VaeRegressor::load(cfg.model_config(), &layout.weights())?;
    let calibration = CalibrationSet::load(&layout.calibration())?;
    Ok(OfflineArtifacts {
        model,
        calibration,
        history: Vec::new(),
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summaries serialise to JSON");
    text.push('\n');
    write_text(path, &text)
}

/// Writes `header` followed by one serialised row per item.
pub(crate) fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let as_io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(as_io)?;
    w.write_record(header).map_err(as_io)?;
    for r in rows {
        w.serialize(r).map_err(as_io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
