//! VAE-based regression model.
//!
//! Five dense blocks:
//!
//! ```text
//!            ┌─ encoder ──► q(z|x) ──► z ──► decoder ──► x̂
//! x ─ trunk ─┤
//!            └─ regressor ► q(c|x) ──► c̃ ──► latent generator ──► p(z|c̃)
//! ```
//!
//! The regressor shares the trunk with the encoder. Labels are handled in
//! normalised units `(y - label_min) / (label_max - label_min)` internally;
//! the public prediction API speaks metres.

mod train;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{io, kl_diag, kl_diag_grads, Activation, GaussianParams, Mlp, MlpGrads, Tensor};

pub use train::{train, EpochLoss, TrainingSchedule};

/// Layer widths and label range of a [`VaeRegressor`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Hidden widths of the shared trunk (at least one).
    pub trunk: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub label_min: f64,
    pub label_max: f64,
}

impl ModelConfig {
    /// Small dense architecture for `side × side` images, labels in metres
    /// over the desk simulator's range.
    pub fn desk(image_side: usize) -> Self {
        Self {
            input_dim: image_side * image_side,
            latent_dim: 4,
            trunk: vec![128, 64],
            encoder_hidden: vec![],
            regressor_hidden: vec![32],
            generator_hidden: vec![32],
            decoder_hidden: vec![128, 256],
            label_min: 1.0,
            label_max: 110.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("input_dim and latent_dim must be positive".into()));
        }
        if self.trunk.is_empty() {
            return Err(Error::Config("the shared trunk needs at least one layer".into()));
        }
        let all = [
            &self.trunk,
            &self.encoder_hidden,
            &self.regressor_hidden,
            &self.generator_hidden,
            &self.decoder_hidden,
        ];
        if all.iter().any(|w| w.contains(&0)) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.label_min.is_finite() && self.label_max.is_finite())
            || self.label_max <= self.label_min
        {
            return Err(Error::Config(format!(
                "label range [{}, {}] is empty",
                self.label_min, self.label_max
            )));
        }
        Ok(())
    }

    pub fn label_range(&self) -> f64 {
        self.label_max - self.label_min
    }

    fn normalize(&self, y: f64) -> f64 {
        (y - self.label_min) / self.label_range()
    }

    fn denormalize(&self, c: f64) -> f64 {
        self.label_min + c * self.label_range()
    }
}

/// One labelled input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

/// The three terms of the objective. `total = -label_kl + reconstruction - latent_kl`;
/// training minimises `-total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub label_kl: f64,
    pub reconstruction: f64,
    pub latent_kl: f64,
}

/// Fixed scales of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Standard deviation of the label prior p(c) = N(y, σ_c²), as a fraction
    /// of the label range.
    pub label_prior_std: f64,
    /// Standard deviation σ_x of the isotropic Gaussian likelihood p(x|z);
    /// the reconstruction term is `-||x - x̂||² / (2σ_x²)`.
    pub reconstruction_std: f64,
}

impl Default for LossParams {
    /// Unit-variance likelihood and a label prior 5% of the range wide.
    fn default() -> Self {
        Self {
            label_prior_std: 0.05,
            reconstruction_std: 1.0,
        }
    }
}

impl LossParams {
    /// Sharper scales used by the desk profile. A unit-variance likelihood
    /// tolerates blurry reconstructions, which leaves the nonconformity score
    /// dominated by model error rather than by the input.
    pub fn desk() -> Self {
        Self {
            label_prior_std: 0.003,
            reconstruction_std: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("label prior std", self.label_prior_std),
            ("reconstruction std", self.reconstruction_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Standard-normal draws consumed by one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNoise {
    pub z: Vec<f64>,
    pub c: f64,
}

impl LossNoise {
    pub fn sample<R: Rng + ?Sized>(latent_dim: usize, rng: &mut R) -> Self {
        Self {
            z: (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
            c: rng.sample(StandardNormal),
        }
    }

    pub fn zero(latent_dim: usize) -> Self {
        Self {
            z: vec![0.0; latent_dim],
            c: 0.0,
        }
    }
}

/// Gradients of `-total` for every block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub trunk: MlpGrads,
    pub encoder: MlpGrads,
    pub regressor: MlpGrads,
    pub generator: MlpGrads,
    pub decoder: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_for(m: &VaeRegressor) -> Self {
        Self {
            trunk: MlpGrads::zeros_for(&m.trunk),
            encoder: MlpGrads::zeros_for(&m.encoder),
            regressor: MlpGrads::zeros_for(&m.regressor),
            generator: MlpGrads::zeros_for(&m.generator),
            decoder: MlpGrads::zeros_for(&m.decoder),
        }
    }

    /// Same order as [`VaeRegressor::tensors`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        [&self.trunk, &self.encoder, &self.regressor, &self.generator, &self.decoder]
            .into_iter()
            .flat_map(|g| g.tensors())
            .collect()
    }

    pub fn scale(&mut self, f: f64) {
        for g in [
            &mut self.trunk,
            &mut self.encoder,
            &mut self.regressor,
            &mut self.generator,
            &mut self.decoder,
        ] {
            g.scale(f);
        }
    }

    pub fn fill_zero(&mut self) {
        self.scale(0.0);
    }
}

/// Posterior quantities for one input, computed with a single trunk pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub z: GaussianParams,
    /// q(c|x) in normalised label units.
    pub c: GaussianParams,
}

/// Which block a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Trunk,
    Encoder,
    Regressor,
    Generator,
    Decoder,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::Trunk,
        Block::Encoder,
        Block::Regressor,
        Block::Generator,
        Block::Decoder,
    ];

    fn name(self) -> &'static str {
        match self {
            Block::Trunk => "trunk",
            Block::Encoder => "encoder",
            Block::Regressor => "regressor",
            Block::Generator => "generator",
            Block::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeRegressor {
    config: ModelConfig,
    pub trunk: Mlp,
    pub encoder: Mlp,
    pub regressor: Mlp,
    pub generator: Mlp,
    pub decoder: Mlp,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl VaeRegressor {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (elu, id) = (Activation::Elu, Activation::Identity);
        let mut trunk_widths = vec![config.input_dim];
        trunk_widths.extend_from_slice(&config.trunk);
        let trunk_out = *config.trunk.last().expect("validated non-empty");
        let l = config.latent_dim;
        let trunk = Mlp::glorot(&trunk_widths, elu, elu, rng)?;
        let encoder = Mlp::glorot(&widths(trunk_out, &config.encoder_hidden, 2 * l), elu, id, rng)?;
        let regressor = Mlp::glorot(&widths(trunk_out, &config.regressor_hidden, 2), elu, id, rng)?;
        let generator = Mlp::glorot(&widths(1, &config.generator_hidden, 2 * l), elu, id, rng)?;
        let decoder = Mlp::glorot(
            &widths(l, &config.decoder_hidden, config.input_dim),
            elu,
            id,
            rng,
        )?;
        Ok(Self {
            config,
            trunk,
            encoder,
            regressor,
            generator,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn block(&self, b: Block) -> &Mlp {
        match b {
            Block::Trunk => &self.trunk,
            Block::Encoder => &self.encoder,
            Block::Regressor => &self.regressor,
            Block::Generator => &self.generator,
            Block::Decoder => &self.decoder,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Mlp {
        match b {
            Block::Trunk => &mut self.trunk,
            Block::Encoder => &mut self.encoder,
            Block::Regressor => &mut self.regressor,
            Block::Generator => &mut self.generator,
            Block::Decoder => &mut self.decoder,
        }
    }

    /// All parameter tensors in a fixed order: trunk, encoder, regressor,
    /// generator, decoder; weights before bias within each layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        Block::ALL
            .into_iter()
            .flat_map(|b| self.block(b).tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            trunk,
            encoder,
            regressor,
            generator,
            decoder,
            ..
        } = self;
        [trunk, encoder, regressor, generator, decoder]
            .into_iter()
            .flat_map(|m| m.tensors_mut())
            .collect()
    }

    /// Tensor names and shapes, as written to the weight file.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for b in Block::ALL {
            for (i, layer) in self.block(b).layers().iter().enumerate() {
                out.push((format!("{}.{i}.weight", b.name()), layer.weights.shape().to_vec()));
                out.push((format!("{}.{i}.bias", b.name()), layer.bias.shape().to_vec()));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let names = self.layout();
        let tensors = self.tensors();
        let pairs: Vec<(&str, &Tensor)> = names
            .iter()
            .map(|(n, _)| n.as_str())
            .zip(tensors)
            .collect();
        io::save(path, &pairs)
    }

    /// Loads weights saved by [`VaeRegressor::save`] into a model built from
    /// `config`; the file's tensor table must match exactly.
    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config, &mut crate::seed::rng(0))?;
        let loaded = io::load(path)?;
        io::validate_layout(&loaded, &model.layout(), path)?;
        for (dst, (_, src)) in model.tensors_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        Ok(model)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.config.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// q(z|x) and q(c|x) from one trunk pass.
    pub fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        self.check_input(x)?;
        let h = self.trunk.forward(x)?;
        let z = GaussianParams::from_concat(&self.encoder.forward(&h)?)?;
        let c = GaussianParams::from_concat(&self.regressor.forward(&h)?)?;
        Ok(Posterior { z, c })
    }

    /// Mean of q(c|x), in metres.
    pub fn predict_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let h = self.trunk.forward(x)?;
        let c = self.regressor.forward(&h)?;
        Ok(self.config.denormalize(c[0]))
    }

    /// Predicted distance and its gradient with respect to the input.
    pub fn prediction_input_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (h, trunk_trace) = self.trunk.forward_trace(x)?;
        let (c, reg_trace) = self.regressor.forward_trace(&h)?;
        let scale = self.config.label_range();
        let dh = self.regressor.backward(&reg_trace, &[scale, 0.0])?.input;
        let dx = self.trunk.backward(&trunk_trace, &dh)?.input;
        Ok((self.config.denormalize(c[0]), dx))
    }

    /// Raw decoder output for a latent code.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(z)
    }

    /// Mean of p(z|c) for a label in metres.
    pub fn latent_prior_mean(&self, y: f64) -> Result<Vec<f64>> {
        let out = self.generator.forward(&[self.config.normalize(y)])?;
        Ok(out[..self.config.latent_dim].to_vec())
    }

    /// Decodes one reparameterised draw from q(z|x) per noise vector, clamped to [0, 1].
    pub fn reconstruct_with_noise(&self, posterior: &Posterior, noise: &[f64]) -> Result<Vec<f64>> {
        let l = self.config.latent_dim;
        if noise.len() != l || posterior.z.dim() != l {
            return Err(Error::Shape(format!(
                "latent noise has {} entries, latent dim is {l}",
                noise.len()
            )));
        }
        let z: Vec<f64> = posterior
            .z
            .mean
            .data()
            .iter()
            .zip(posterior.z.log_variance.data())
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let mut x_hat = self.decode(&z)?;
        x_hat.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(x_hat)
    }

    /// `n` independent reconstructions of `x` from its posterior.
    pub fn sample_reconstructions<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let post = self.posterior(x)?;
        self.sample_from_posterior(&post, n, rng)
    }

    pub fn sample_from_posterior<R: Rng + ?Sized>(
        &self,
        post: &Posterior,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::Config("reconstruction count must be at least 1".into()));
        }
        let l = self.config.latent_dim;
        let mut noise = vec![0.0; l];
        (0..n)
            .map(|_| {
                noise.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
                self.reconstruct_with_noise(post, &noise)
            })
            .collect()
    }

    /// Evaluates the objective for one example and optionally accumulates the
    /// gradient of `-total` into `grads`.
    pub fn loss(
        &self,
        example: &Example,
        noise: &LossNoise,
        params: &LossParams,
        grads: Option<&mut ModelGrads>,
    ) -> Result<LossBreakdown> {
        let x = &example.x;
        self.check_input(x)?;
        let l = self.config.latent_dim;
        if noise.z.len() != l {
            return Err(Error::Shape(format!(
                "loss noise has {} latent entries, latent dim is {l}",
                noise.z.len()
            )));
        }
        params.validate()?;
        let prior_std = params.label_prior_std;
        let inv_var_x = params.reconstruction_std.powi(-2);
        let numeric = |term: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!("{term} is not finite")))
            }
        };

        let (h, trunk_trace) = self.trunk.forward_trace(x)?;
        let (enc, enc_trace) = self.encoder.forward_trace(&h)?;
        let (reg, reg_trace) = self.regressor.forward_trace(&h)?;
        let (mz, lz) = enc.split_at(l);
        let (mc, lc) = (reg[0], reg[1]);

        // Term 1: KL(q(c|x) || N(y, σ_c²)).
        let y = self.config.normalize(example.y);
        let prior_lv = 2.0 * prior_std.ln();
        let label_kl = numeric("label KL", kl_diag(&[mc], &[lc], &[y], &[prior_lv]))?;

        // Term 2: isotropic Gaussian log-likelihood up to a constant.
        let z: Vec<f64> = mz
            .iter()
            .zip(lz)
            .zip(&noise.z)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let (x_hat, dec_trace) = self.decoder.forward_trace(&z)?;
        let sq: f64 = x.iter().zip(&x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let reconstruction = numeric("reconstruction", -0.5 * sq * inv_var_x)?;

        // Term 3: KL(q(z|x) || p(z|c̃)) with one draw c̃ ~ q(c|x).
        let c_tilde = mc + (0.5 * lc).exp() * noise.c;
        let (gen, gen_trace) = self.generator.forward_trace(&[c_tilde])?;
        let (mp, lp) = gen.split_at(l);
        let latent_kl = numeric("latent KL", kl_diag(mz, lz, mp, lp))?;

        let total = -label_kl + reconstruction - latent_kl;
        let out = LossBreakdown {
            total,
            label_kl,
            reconstruction,
            latent_kl,
        };
        let Some(grads) = grads else {
            return Ok(out);
        };

        let g_label = kl_diag_grads(&[mc], &[lc], &[y], &[prior_lv]);
        let mut d_reg = [g_label.mean_q[0], g_label.log_var_q[0]];

        let d_xhat: Vec<f64> = x_hat.iter().zip(x).map(|(a, b)| (a - b) * inv_var_x).collect();
        let dz = self.decoder.backward_into(&dec_trace, &d_xhat, &mut grads.decoder)?;

        let g_latent = kl_diag_grads(mz, lz, mp, lp);
        let mut d_enc = vec![0.0; 2 * l];
        for i in 0..l {
            d_enc[i] = dz[i] + g_latent.mean_q[i];
            d_enc[l + i] = dz[i] * 0.5 * (0.5 * lz[i]).exp() * noise.z[i] + g_latent.log_var_q[i];
        }
        let mut d_gen = g_latent.mean_p;
        d_gen.extend(g_latent.log_var_p);
        let dc = self.generator.backward_into(&gen_trace, &d_gen, &mut grads.generator)?[0];
        d_reg[0] += dc;
        d_reg[1] += dc * 0.5 * (0.5 * lc).exp() * noise.c;

        let dh_enc = self.encoder.backward_into(&enc_trace, &d_enc, &mut grads.encoder)?;
        let dh_reg = self.regressor.backward_into(&reg_trace, &d_reg, &mut grads.regressor)?;
        let dh: Vec<f64> = dh_enc.iter().zip(&dh_reg).map(|(a, b)| a + b).collect();
        self.trunk.backward_into(&trunk_trace, &dh, &mut grads.trunk)?;
        Ok(out)
    }
}

/// One row of the latent export.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub z_mean: Vec<f64>,
    pub y_true: f64,
    pub y_pred: f64,
}

/// Posterior latent means with true and predicted labels, one row per example.
pub fn export_latent(model: &VaeRegressor, data: &[Example]) -> Result<Vec<LatentRow>> {
    if data.is_empty() {
        return Err(Error::Config("latent export needs at least one example".into()));
    }
    data.iter()
        .map(|ex| {
            let post = model.posterior(&ex.x)?;
            Ok(LatentRow {
                z_mean: post.z.mean.data().to_vec(),
                y_true: ex.y,
                y_pred: model.config.denormalize(post.c.mean.data()[0]),
            })
        })
        .collect()
}

/// Renders latent rows as CSV with header `z0,...,z{d-1},y_true,y_pred`.
pub fn latent_csv(rows: &[LatentRow]) -> String {
    let d = rows.first().map_or(0, |r| r.z_mean.len());
    let mut s: String = (0..d).map(|i| format!("z{i},")).collect();
    s.push_str("y_true,y_pred\n");
    for r in rows {
        for z in &r.z_mean {
            s.push_str(&format!("{z},"));
        }
        s.push_str(&format!("{},{}\n", r.y_true, r.y_pred));
    }
    s
}

/// Mean absolute error of [`VaeRegressor::predict_distance`] over a set.
pub fn mean_absolute_error(model: &VaeRegressor, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("MAE over an empty set".into()));
    }
    let mut sum = 0.0;
    for ex in data {
        sum += (model.predict_distance(&ex.x)? - ex.y).abs();
    }
    Ok(sum / data.len() as f64)
}

/// Mean squared reconstruction error using posterior means (no sampling).
pub fn mean_reconstruction_error(model: &VaeRegressor, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("reconstruction error over an empty set".into()));
    }
    let mut sum = 0.0;
    for ex in data {
        let post = model.posterior(&ex.x)?;
        let x_hat = model.decode(post.z.mean.data())?;
        sum += ex.x.iter().zip(&x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / data.len() as f64)
}
