use super::Tensor;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment accumulators for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One Adam update (β1 = 0.9, β2 = 0.999, ε = 1e-8) applied in place.
///
/// Moments are created lazily on the first call. Non-finite gradients are
/// rejected before any parameter is touched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.ensure_same_shape(g, "adam parameter / gradient")?;
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| Tensor::zeros_like(p)).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.shape() != p.shape())
    {
        return Err(Error::Shape(
            "optimizer state does not match parameter layout".into(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let lr = state.learning_rate;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let g = scalar(0.0);
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert_eq!(p.data(), &[1.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr / (1 + 1e-8).
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert!((p.data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_are_identical() {
        let run = || {
            let mut p = Tensor::vector(vec![0.2, -0.4]).unwrap();
            let g = Tensor::vector(vec![0.3, 0.7]).unwrap();
            let mut state = OptimizerState::new(0.01);
            for _ in 0..5 {
                adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
            }
            (p, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut p = scalar(1.0);
        let mut g = scalar(0.0);
        g.data_mut()[0] = f64::INFINITY;
        let mut state = OptimizerState::new(0.1);
        assert!(matches!(
            adam_step(&mut [&mut p], &[&g], &mut state),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(state.step, 0);
    }
}
