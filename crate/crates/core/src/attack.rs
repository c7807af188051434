//! Targeted FGSM against a scalar regression output.

use crate::error::{Error, Result};
use crate::model::VaeRegressor;

/// A differentiable scalar regressor.
pub trait Regressor {
    /// Prediction and its gradient with respect to the input.
    fn predict_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl Regressor for VaeRegressor {
    fn predict_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.prediction_input_gradient(x)
    }
}

/// `f(x) = w · x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Regressor for LinearRegressor {
    fn predict_with_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "linear regressor expects {} inputs, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        let y = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        Ok((y, self.weights.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Per-step L∞ perturbation, in normalised pixel units.
    pub fgsm_epsilon: f64,
    /// Distance the attacker wants the regressor to report.
    pub y_target: f64,
    /// First episode step that receives perturbed frames.
    pub start_step: usize,
    pub iterations: usize,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fgsm_epsilon > 0.0 && self.fgsm_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "fgsm_epsilon must be positive, got {}",
                self.fgsm_epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("attack needs at least one iteration".into()));
        }
        if !self.y_target.is_finite() {
            return Err(Error::Config("attack target must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x: Vec<f64>,
    /// Set when some iteration saw an all-zero gradient and could not move.
    pub zero_gradient: bool,
}

/// Moves `x` toward inputs whose prediction is `y_target`:
/// `x ← clamp(x − ε · sign(∇ₓ (f(x) − y_target)²), 0, 1)`, repeated
/// `iterations` times with the gradient recomputed each time.
pub fn fgsm<R: Regressor + ?Sized>(model: &R, x: &[f64], cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let mut adv = x.to_vec();
    let mut zero_gradient = false;
    for _ in 0..cfg.iterations {
        let (y, grad) = model.predict_with_gradient(&adv)?;
        let residual = 2.0 * (y - cfg.y_target);
        let mut moved = false;
        for (v, g) in adv.iter_mut().zip(&grad) {
            let dj = residual * g;
            if dj != 0.0 {
                moved = true;
                *v = (*v - cfg.fgsm_epsilon * dj.signum()).clamp(0.0, 1.0);
            }
        }
        if !moved {
            zero_gradient = true;
            break;
        }
    }
    Ok(AttackResult {
        x: adv,
        zero_gradient,
    })
}
