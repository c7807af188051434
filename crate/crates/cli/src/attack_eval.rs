use rayon::prelude::*;
use regicp::attack::fgsm;
use regicp::sim::{generate_dataset, DatasetConfig};
use regicp::stats;
use serde::Serialize;

use crate::config::Sampling;
use crate::{create_dir, load_artifacts, write_csv, write_json, Layout, Result, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackEvalSummary {
    pub examples: usize,
    pub sampling: Sampling,
    pub epsilon: f64,
    pub target: f64,
    pub iterations: usize,
    pub clean_mae: f64,
    pub attacked_mae: f64,
    pub attacked_median_error: f64,
    /// `attacked_median_error / clean_mae`.
    pub error_ratio: f64,
}

#[derive(Serialize)]
struct Row {
    index: usize,
    distance: f64,
    clean_prediction: f64,
    attacked_prediction: f64,
    clean_error: f64,
    attacked_error: f64,
}

/// Scores clean and FGSM-perturbed predictions on freshly rendered frames and
/// writes the per-example table and a summary.
pub fn attack_eval(cfg: &RunConfig) -> Result<AttackEvalSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let art = load_artifacts(cfg)?;
    let data_cfg = DatasetConfig {
        sampling: cfg.attack.eval_sampling.into(),
        ..cfg.dataset_config(cfg.attack.eval_count, cfg.stream("attack-eval"))
    };
    let ds = generate_dataset(&data_cfg)?;
    let attack = cfg.attack_config(0);

    let rows = ds
        .examples
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let clean = art.model.predict_distance(&ex.x)?;
            let adv = fgsm(&art.model, &ex.x, &attack)?;
            let attacked = art.model.predict_distance(&adv.x)?;
            Ok(Row {
                index,
                distance: ex.y,
                clean_prediction: clean,
                attacked_prediction: attacked,
                clean_error: (clean - ex.y).abs(),
                attacked_error: (attacked - ex.y).abs(),
            })
        })
        .collect::<std::result::Result<Vec<_>, regicp::Error>>()?;

    create_dir(&layout.root)?;
    write_csv(
        &layout.attack_eval(),
        &["index", "distance", "clean_prediction", "attacked_prediction", "clean_error", "attacked_error"],
        &rows,
    )?;
    let clean: Vec<f64> = rows.iter().map(|r| r.clean_error).collect();
    let attacked: Vec<f64> = rows.iter().map(|r| r.attacked_error).collect();
    let clean_mae = stats::mean(&clean);
    let median = stats::median(&attacked);
    let summary = AttackEvalSummary {
        examples: rows.len(),
        sampling: cfg.attack.eval_sampling,
        epsilon: attack.fgsm_epsilon,
        target: attack.y_target,
        iterations: attack.iterations,
        clean_mae,
        attacked_mae: stats::mean(&attacked),
        attacked_median_error: median,
        error_ratio: median / clean_mae,
    };
    write_json(&layout.attack_eval_summary(), &summary)?;
    Ok(summary)
}
