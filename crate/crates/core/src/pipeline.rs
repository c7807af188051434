//! Offline split/train/calibrate and the online per-frame detection step.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::icp::{self, CalibrationSet, DetectorState, MartingaleLog, PValueBatch};
use crate::model::{self, EpochLoss, Example, ModelConfig, TrainingSchedule, VaeRegressor};
use crate::seed;

/// Split of `total` examples into `proper` training and `total − proper` calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub total: usize,
    pub proper: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn calibration(&self) -> usize {
        self.total - self.proper
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.proper && self.proper < self.total) {
            return Err(Error::Config(format!(
                "split needs 0 < proper ({}) < total ({})",
                self.proper, self.total
            )));
        }
        Ok(())
    }

    /// Shuffles indices `0..total` and returns `(proper, calibration)` index lists.
    pub fn indices(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let mut idx: Vec<usize> = (0..self.total).collect();
        idx.shuffle(&mut seed::rng(self.seed));
        let calib = idx.split_off(self.proper);
        Ok((idx, calib))
    }
}

/// Trained model plus calibration scores.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineArtifacts {
    pub model: VaeRegressor,
    pub calibration: CalibrationSet,
    pub history: Vec<EpochLoss>,
}

/// One reconstruction per calibration example, scored by squared error.
pub fn calibrate<R: Rng + ?Sized>(
    model: &VaeRegressor,
    calibration: &[&Example],
    rng: &mut R,
) -> Result<CalibrationSet> {
    let mut scores = Vec::with_capacity(calibration.len());
    for ex in calibration {
        let x_hat = model.sample_reconstructions(&ex.x, 1, rng)?.pop().expect("one sample");
        scores.push(icp::nonconformity(&ex.x, &x_hat)?);
    }
    CalibrationSet::new(scores)
}

/// Shuffles and splits `data`, trains on the proper part and calibrates on the rest.
///
/// Model initialisation and calibration sampling draw from streams derived
/// from `seed`; the split and training use their own seeds.
pub fn offline(
    data: &[Example],
    split: &SplitSpec,
    model_config: &ModelConfig,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<OfflineArtifacts> {
    if data.len() != split.total {
        return Err(Error::Config(format!(
            "split expects {} examples, dataset has {}",
            split.total,
            data.len()
        )));
    }
    let (proper_idx, calib_idx) = split.indices()?;
    let proper: Vec<Example> = proper_idx.iter().map(|&i| data[i].clone()).collect();
    let calib: Vec<&Example> = calib_idx.iter().map(|&i| &data[i]).collect();

    let mut model = VaeRegressor::new(model_config.clone(), &mut seed::rng(seed::derive(seed, "init")))?;
    let history = model::train(&mut model, &proper, schedule)?;
    let calibration = calibrate(&model, &calib, &mut seed::rng(seed::derive(seed, "calibration")))?;
    Ok(OfflineArtifacts {
        model,
        calibration,
        history,
    })
}

/// Everything produced by one pass of the online loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// `S_t > τ`. The stored statistic is reset to 0 when this fires.
    pub anomaly: bool,
    /// Regression output in metres.
    pub prediction: f64,
    pub p_values: Vec<f64>,
    pub log_m: MartingaleLog,
    /// CUSUM statistic after the update, before any reset.
    pub s: f64,
}

/// One iteration of the online detector: N reconstructions, N scores and
/// p-values, the mixture martingale, the CUSUM update and alarm check, and the
/// regression output. Never reads a label.
pub fn online_step<R: Rng + ?Sized>(
    x: &[f64],
    artifacts: &OfflineArtifacts,
    state: &mut DetectorState,
    rng: &mut R,
) -> Result<StepOutput> {
    let cfg = state.config;
    let model = &artifacts.model;
    let calib = &artifacts.calibration;
    let floor = cfg.floor_for(calib);

    let post = model.posterior(x)?;
    let recons = model.sample_from_posterior(&post, cfg.n_samples, rng)?;
    let mut p_values = Vec::with_capacity(cfg.n_samples);
    for x_hat in &recons {
        p_values.push(calib.p_value(icp::nonconformity(x, x_hat)?, floor));
    }
    let log_m = icp::log_martingale(&PValueBatch::new(p_values.clone())?, cfg.quadrature_nodes)?;
    state.update(log_m);
    let s = state.s();
    let anomaly = state.alarm();
    if anomaly {
        state.reset();
    }
    let prediction = model.config().label_min + post.c.mean.data()[0] * model.config().label_range();
    Ok(StepOutput {
        anomaly,
        prediction,
        p_values,
        log_m,
        s,
    })
}
