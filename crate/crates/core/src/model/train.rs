use rand::seq::SliceRandom;

use super::{Example, LossNoise, LossParams, ModelGrads, VaeRegressor};
use crate::error::{Error, Result};
use crate::nn::{adam_step, OptimizerState};
use crate::seed;

/// Two-phase learning-rate schedule with minibatch Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    /// (learning rate, epochs) of the search phase.
    pub phase1: (f64, usize),
    /// (learning rate, epochs) of the fine-tuning phase.
    pub phase2: (f64, usize),
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossParams,
}

impl TrainingSchedule {
    /// Schedule sized for the synthetic desk dataset.
    pub fn desk(seed: u64) -> Self {
        Self {
            phase1: (1e-3, 80),
            phase2: (1e-4, 20),
            batch_size: 32,
            seed,
            loss: LossParams::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lr, _)) in [("phase1", self.phase1), ("phase2", self.phase2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} learning rate must be positive")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1.1 + self.phase2.1
    }
}

/// Per-epoch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of `-total`, the minimised quantity.
    pub objective: f64,
    pub label_kl: f64,
    pub reconstruction: f64,
    pub latent_kl: f64,
}

/// Trains `model` in place on `data`. Deterministic given `schedule.seed`.
///
/// A non-finite loss or gradient aborts with [`Error::Numeric`] naming the
/// epoch (1-based).
pub fn train(
    model: &mut VaeRegressor,
    data: &[Example],
    schedule: &TrainingSchedule,
) -> Result<Vec<EpochLoss>> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = seed::rng(schedule.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = ModelGrads::zeros_for(model);
    let mut opt = OptimizerState::new(schedule.phase1.0);
    let mut history = Vec::with_capacity(schedule.total_epochs());
    let latent_dim = model.latent_dim();

    let phases = [schedule.phase1, schedule.phase2];
    let mut epoch = 0;
    for (lr, epochs) in phases {
        opt.learning_rate = lr;
        for _ in 0..epochs {
            epoch += 1;
            let diverged = |what: &str| Error::Numeric(format!("training diverged at epoch {epoch}: {what}"));
            order.shuffle(&mut rng);
            let mut sums = [0.0f64; 4];
            for batch in order.chunks(schedule.batch_size) {
                grads.fill_zero();
                for &i in batch {
                    let noise = LossNoise::sample(latent_dim, &mut rng);
                    let l = model
                        .loss(&data[i], &noise, &schedule.loss, Some(&mut grads))
                        .map_err(|e| diverged(&e.to_string()))?;
                    sums[0] -= l.total;
                    sums[1] += l.label_kl;
                    sums[2] += l.reconstruction;
                    sums[3] += l.latent_kl;
                }
                grads.scale(1.0 / batch.len() as f64);
                let g = grads.tensors();
                let mut p = model.tensors_mut();
                adam_step(&mut p, &g, &mut opt).map_err(|e| diverged(&e.to_string()))?;
            }
            let n = data.len() as f64;
            let entry = EpochLoss {
                epoch,
                learning_rate: lr,
                objective: sums[0] / n,
                label_kl: sums[1] / n,
                reconstruction: sums[2] / n,
                latent_kl: sums[3] / n,
            };
            if !entry.objective.is_finite() {
                return Err(diverged("objective is not finite"));
            }
            history.push(entry);
        }
    }
    Ok(history)
}
