use super::Tensor;
use crate::error::{Error, Result};

/// Diagonal Gaussian parameterised by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Tensor, log_variance: Tensor) -> Result<Self> {
        mean.ensure_same_shape(&log_variance, "gaussian mean / log-variance")?;
        Ok(Self { mean, log_variance })
    }

    /// Splits a network output `[means..., log_variances...]` into a Gaussian.
    pub fn from_concat(out: &[f64]) -> Result<Self> {
        if out.is_empty() || out.len() % 2 != 0 {
            return Err(Error::Shape(format!(
                "gaussian head output must have even positive length, got {}",
                out.len()
            )));
        }
        let d = out.len() / 2;
        Self::new(
            Tensor::vector(out[..d].to_vec())?,
            Tensor::vector(out[d..].to_vec())?,
        )
    }

    /// Scalar Gaussian `N(mean, variance)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        if variance <= 0.0 {
            return Err(Error::Config(format!("variance must be positive, got {variance}")));
        }
        Self::new(Tensor::vector(vec![mean])?, Tensor::vector(vec![variance.ln()])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `KL(N(mq, e^lq) || N(mp, e^lp))` summed over dimensions.
pub fn kl_diag(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    mq.iter()
        .zip(lq)
        .zip(mp.iter().zip(lp))
        .map(|((&mq, &lq), (&mp, &lp))| {
            let diff = mq - mp;
            0.5 * ((lq - lp).exp() + diff * diff * (-lp).exp() - 1.0 + lp - lq)
        })
        .sum()
}

/// Partial derivatives of [`kl_diag`] with respect to all four arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGrads {
    pub mean_q: Vec<f64>,
    pub log_var_q: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub log_var_p: Vec<f64>,
}

pub fn kl_diag_grads(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> KlGrads {
    let n = mq.len();
    let mut g = KlGrads {
        mean_q: Vec::with_capacity(n),
        log_var_q: Vec::with_capacity(n),
        mean_p: Vec::with_capacity(n),
        log_var_p: Vec::with_capacity(n),
    };
    for i in 0..n {
        let diff = mq[i] - mp[i];
        let inv_vp = (-lp[i]).exp();
        let ratio = (lq[i] - lp[i]).exp();
        g.mean_q.push(diff * inv_vp);
        g.mean_p.push(-diff * inv_vp);
        g.log_var_q.push(0.5 * (ratio - 1.0));
        g.log_var_p.push(0.5 * (1.0 - ratio - diff * diff * inv_vp));
    }
    g
}

/// KL divergence between two diagonal Gaussians of equal shape.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    q.mean.ensure_same_shape(&p.mean, "gaussian_kl")?;
    let kl = kl_diag(
        q.mean.data(),
        q.log_variance.data(),
        p.mean.data(),
        p.log_variance.data(),
    );
    if !kl.is_finite() {
        return Err(Error::Numeric("KL divergence is not finite".into()));
    }
    Ok(kl)
}

/// `mean + exp(log_variance / 2) * noise`.
pub fn reparameterize(g: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    g.mean.ensure_same_shape(noise, "reparameterize noise")?;
    let data = g
        .mean
        .data()
        .iter()
        .zip(g.log_variance.data())
        .zip(noise.data())
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect();
    Tensor::new(g.mean.shape().to_vec(), data)
}
