//! Inductive conformal detection of adversarial inputs to a regression
//! perception model.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: dense layers with hand-written reverse-mode gradients, Adam,
//!   diagonal Gaussian helpers and a binary weight format.
//! * [`model`]: the VAE-based regressor (encoder, regressor, latent
//!   generator, decoder) and its three-term training objective.
//! * [`icp`]: nonconformity scores, calibration, p-values, the simple
//!   mixture martingale and the CUSUM detector.
//! * [`attack`]: targeted FGSM against the regression output.
//! * [`sim`]: a synthetic emergency-braking loop used for closed-loop
//!   evaluation.
//! * [`pipeline`]: offline split/train/calibrate and the online
//!   per-frame detection step.

pub mod attack;
pub mod error;
pub mod icp;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
