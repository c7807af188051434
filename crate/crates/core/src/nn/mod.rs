//! Minimal dense neural-network engine.
//!
//! Everything runs on `f64`. Networks are plain sequences of dense layers;
//! gradients are computed by replaying a recorded [`Trace`] backwards, which
//! is all the VAE objective and the FGSM attack need.

mod adam;
mod gaussian;
pub mod io;
mod layer;
mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use gaussian::{gaussian_kl, kl_diag, kl_diag_grads, reparameterize, GaussianParams, KlGrads};
pub use layer::{elu, elu_derivative, Activation, DenseLayer, LayerGrads, Mlp, MlpGrads, Trace};
pub use tensor::Tensor;
