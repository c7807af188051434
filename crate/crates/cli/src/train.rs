use regicp::model::{mean_absolute_error, Example};
use regicp::pipeline::offline;
use regicp::sim::{generate_dataset, Dataset};
use serde::Serialize;

use crate::{write_csv, write_json, CliError, Layout, Result, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub proper_size: usize,
    pub calibration_size: usize,
    /// MAE in metres on the proper training split.
    pub train_mae: f64,
    /// MAE on the calibration split, which training never sees.
    pub calibration_mae: f64,
    /// MAE on a freshly rendered held-out set of `dataset.test_count` frames.
    pub test_mae: f64,
    pub final_objective: f64,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    learning_rate: f64,
    objective: f64,
    label_kl: f64,
    reconstruction: f64,
    latent_kl: f64,
}

/// Splits the generated dataset, trains, calibrates and persists the weights,
/// calibration scores and per-epoch loss history.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let ds = Dataset::load(&layout.dataset(), Some(&layout.dataset_index()))?;
    let model_cfg = cfg.model_config();
    if ds.len() != cfg.dataset.count || ds.examples[0].x.len() != model_cfg.input_dim {
        return Err(CliError::Invalid(format!(
            "{} holds {} examples of {} pixels; the configuration expects {} of {} (rerun generate)",
            layout.dataset().display(),
            ds.len(),
            ds.examples[0].x.len(),
            cfg.dataset.count,
            model_cfg.input_dim
        )));
    }

    let split = cfg.split_spec();
    let art = offline(&ds.examples, &split, &model_cfg, &cfg.schedule(), cfg.stream("offline"))?;
    art.model.save(&layout.weights())?;
    art.calibration.save(&layout.calibration())?;

    let rows: Vec<LossRow> = art
        .history
        .iter()
        .map(|h| LossRow {
            epoch: h.epoch,
            learning_rate: h.learning_rate,
            objective: h.objective,
            label_kl: h.label_kl,
            reconstruction: h.reconstruction,
            latent_kl: h.latent_kl,
        })
        .collect();
    write_csv(
        &layout.loss_history(),
        &["epoch", "learning_rate", "objective", "label_kl", "reconstruction", "latent_kl"],
        &rows,
    )?;

    let (proper_idx, calib_idx) = split.indices()?;
    let pick = |idx: &[usize]| -> Vec<Example> { idx.iter().map(|&i| ds.examples[i].clone()).collect() };
    let test = generate_dataset(&cfg.dataset_config(cfg.dataset.test_count, cfg.stream("test-data")))?;
    let summary = TrainSummary {
        epochs: art.history.len(),
        proper_size: proper_idx.len(),
        calibration_size: art.calibration.len(),
        train_mae: mean_absolute_error(&art.model, &pick(&proper_idx))?,
        calibration_mae: mean_absolute_error(&art.model, &pick(&calib_idx))?,
        test_mae: mean_absolute_error(&art.model, &test.examples)?,
        final_objective: art.history.last().map_or(f64::NAN, |h| h.objective),
    };
    write_json(&layout.train_summary(), &summary)?;
    Ok(summary)
}
