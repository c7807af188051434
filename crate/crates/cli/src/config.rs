//! Run configuration: one TOML file covering every stage, with the desk
//! profile as defaults.

use std::fs;
use std::path::{Path, PathBuf};

use regicp::attack::AttackConfig;
use regicp::icp::{DetectorConfig, DEFAULT_QUADRATURE_NODES};
use regicp::model::{LossParams, ModelConfig, TrainingSchedule};
use regicp::pipeline::SplitSpec;
use regicp::seed;
use regicp::sim::{AlarmPolicy, ControllerConfig, DatasetConfig, DistanceSampling, EpisodeSampler};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every subsystem draws from a stream derived from it.
    pub seed: u64,
    /// Directory all artifacts are written to and read from.
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub detector: DetectorSection,
    pub attack: AttackSection,
    pub episodes: EpisodeSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Uniform,
    LogUniform,
}

impl From<Sampling> for DistanceSampling {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Uniform => DistanceSampling::Uniform,
            Sampling::LogUniform => DistanceSampling::LogUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub count: usize,
    /// Size of the freshly drawn held-out set scored after training.
    pub test_count: usize,
    pub label_min: f64,
    pub label_max: f64,
    pub sampling: Sampling,
    pub image_side: usize,
    pub brightness: (f64, f64),
    pub noise_level: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Examples held back for calibration; the rest train the model.
    pub calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub trunk: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub phase1_lr: f64,
    pub phase1_epochs: usize,
    pub phase2_lr: f64,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub label_prior_std: f64,
    pub reconstruction_std: f64,
}

/// One `(N, δ, τ)` detector setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub n: usize,
    pub delta: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    /// Settings evaluated by `experiment`, one results row each.
    pub candidates: Vec<Triple>,
    /// Pick the best candidate on validation episodes before testing.
    pub tune: bool,
    pub p_floor: Option<f64>,
    pub quadrature_nodes: usize,
    /// Frames per N in the timing measurement; 0 disables it.
    pub timing_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub epsilon: f64,
    /// Distance the attacker pushes toward; defaults to the label maximum.
    pub target: Option<f64>,
    pub iterations: usize,
    /// Inclusive range of attack onset steps.
    pub start: (usize, usize),
    /// Examples scored by `attack-eval`.
    pub eval_count: usize,
    /// Distance distribution of the `attack-eval` frames. Attack error grows
    /// with distance, so this choice drives the headline ratio.
    pub eval_sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    /// Nominal and attacked test episodes, each.
    pub count: usize,
    /// Nominal and attacked tuning episodes, each.
    pub validation: usize,
    pub d0: f64,
    pub v0: (f64, f64),
    pub dt: f64,
    pub max_steps: usize,
    pub l_min: f64,
    pub l_max: f64,
    pub a_max: f64,
    pub brightness: (f64, f64),
    pub noise_level: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            out: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            detector: DetectorSection::default(),
            attack: AttackSection::default(),
            episodes: EpisodeSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::desk(6000, 0);
        Self {
            count: d.count,
            test_count: 1000,
            label_min: d.label_min,
            label_max: d.label_max,
            sampling: Sampling::LogUniform,
            image_side: d.image_side,
            brightness: d.brightness,
            noise_level: d.noise_level,
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { calibration: 1000 }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::desk(16);
        Self {
            latent_dim: m.latent_dim,
            trunk: m.trunk,
            encoder_hidden: m.encoder_hidden,
            regressor_hidden: m.regressor_hidden,
            generator_hidden: m.generator_hidden,
            decoder_hidden: m.decoder_hidden,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let s = TrainingSchedule::desk(0);
        Self {
            phase1_lr: s.phase1.0,
            phase1_epochs: s.phase1.1,
            phase2_lr: s.phase2.0,
            phase2_epochs: s.phase2.1,
            batch_size: s.batch_size,
            label_prior_std: s.loss.label_prior_std,
            reconstruction_std: s.loss.reconstruction_std,
        }
    }
}

/// The six settings of the reference results table.
pub const REFERENCE_TRIPLES: [(usize, f64, f64); 6] = [
    (5, 6.0, 6.0),
    (5, 7.0, 23.0),
    (10, 10.0, 62.0),
    (10, 12.0, 80.0),
    (20, 18.0, 120.0),
    (20, 20.0, 280.0),
];

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            candidates: REFERENCE_TRIPLES
                .iter()
                .map(|&(n, delta, tau)| Triple { n, delta, tau })
                .collect(),
            tune: true,
            p_floor: None,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            timing_steps: 200,
        }
    }
}

impl Default for AttackSection {
    fn default() -> Self {
        let s = EpisodeSampler::default();
        Self {
            epsilon: s.fgsm_epsilon,
            target: None,
            iterations: s.attack_iterations,
            start: s.attack_start,
            eval_count: 500,
            eval_sampling: Sampling::Uniform,
        }
    }
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let s = EpisodeSampler::default();
        Self {
            count: 100,
            validation: 20,
            d0: s.d0,
            v0: s.v0,
            dt: s.dt,
            max_steps: s.max_steps,
            l_min: s.controller.l_min,
            l_max: s.controller.l_max,
            a_max: s.controller.a_max,
            brightness: s.brightness,
            noise_level: s.noise_level,
        }
    }
}

fn range_ok((lo, hi): (f64, f64)) -> bool {
    lo.is_finite() && hi.is_finite() && lo <= hi
}

impl RunConfig {
    /// Reads and validates a TOML file. Unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::ConfigSyntax {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serialises")
    }

    /// Checks every derived module configuration before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset_config(self.dataset.count, 0).validate()?;
        self.model_config().validate()?;
        self.schedule().validate()?;
        self.split_spec().validate()?;
        if self.dataset.test_count == 0 {
            return Err(CliError::Invalid("dataset.test_count must be positive".into()));
        }
        if self.detector.candidates.is_empty() {
            return Err(CliError::Invalid("detector.candidates is empty".into()));
        }
        for t in &self.detector.candidates {
            self.detector_config(*t).validate()?;
        }
        self.attack_config(self.attack.start.0).validate()?;
        if self.attack.eval_count == 0 {
            return Err(CliError::Invalid("attack.eval_count must be positive".into()));
        }
        if self.attack.start.0 > self.attack.start.1 {
            return Err(CliError::Invalid("attack.start must be an ordered range".into()));
        }
        let e = &self.episodes;
        if !(range_ok(e.v0) && range_ok(e.brightness) && range_ok(e.noise_level)) {
            return Err(CliError::Invalid(
                "episode v0, brightness and noise_level must be ordered finite ranges".into(),
            ));
        }
        if e.max_steps == 0 {
            return Err(CliError::Invalid("episodes.max_steps must be positive".into()));
        }
        let probe = self.sampler().sample(0, 0, true);
        probe.validate()?;
        let v0_hi = regicp::sim::EpisodeConfig { v0: e.v0.1, ..probe.clone() };
        v0_hi.validate()?;
        let mut scene = probe.scene;
        for (b, n) in [(e.brightness.0, e.noise_level.0), (e.brightness.1, e.noise_level.1)] {
            scene.brightness = b;
            scene.noise_level = n;
            scene.validate()?;
        }
        Ok(())
    }

    pub fn dataset_config(&self, count: usize, seed: u64) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            count,
            label_min: d.label_min,
            label_max: d.label_max,
            sampling: d.sampling.into(),
            image_side: d.image_side,
            brightness: d.brightness,
            noise_level: d.noise_level,
            seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_dim: self.dataset.image_side * self.dataset.image_side,
            latent_dim: m.latent_dim,
            trunk: m.trunk.clone(),
            encoder_hidden: m.encoder_hidden.clone(),
            regressor_hidden: m.regressor_hidden.clone(),
            generator_hidden: m.generator_hidden.clone(),
            decoder_hidden: m.decoder_hidden.clone(),
            label_min: self.dataset.label_min,
            label_max: self.dataset.label_max,
        }
    }

    pub fn schedule(&self) -> TrainingSchedule {
        let t = &self.training;
        TrainingSchedule {
            phase1: (t.phase1_lr, t.phase1_epochs),
            phase2: (t.phase2_lr, t.phase2_epochs),
            batch_size: t.batch_size,
            seed: self.stream("training"),
            loss: LossParams {
                label_prior_std: t.label_prior_std,
                reconstruction_std: t.reconstruction_std,
            },
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            total: self.dataset.count,
            proper: self.dataset.count.saturating_sub(self.split.calibration),
            seed: self.stream("split"),
        }
    }

    pub fn detector_config(&self, t: Triple) -> DetectorConfig {
        DetectorConfig {
            p_floor: self.detector.p_floor,
            quadrature_nodes: self.detector.quadrature_nodes,
            ..DetectorConfig::new(t.n, t.delta, t.tau)
        }
    }

    pub fn attack_target(&self) -> f64 {
        self.attack.target.unwrap_or(self.dataset.label_max)
    }

    pub fn attack_config(&self, start_step: usize) -> AttackConfig {
        AttackConfig {
            fgsm_epsilon: self.attack.epsilon,
            y_target: self.attack_target(),
            start_step,
            iterations: self.attack.iterations,
        }
    }

    /// Episode sampler; alarms never halt the vehicle so one run per episode
    /// serves every `(δ, τ)` at a given N.
    pub fn sampler(&self) -> EpisodeSampler {
        let e = &self.episodes;
        EpisodeSampler {
            d0: e.d0,
            v0: e.v0,
            dt: e.dt,
            controller: ControllerConfig {
                l_min: e.l_min,
                l_max: e.l_max,
                a_max: e.a_max,
            },
            max_steps: e.max_steps,
            image_side: self.dataset.image_side,
            brightness: e.brightness,
            noise_level: e.noise_level,
            fgsm_epsilon: self.attack.epsilon,
            y_target: self.attack_target(),
            attack_iterations: self.attack.iterations,
            attack_start: self.attack.start,
            alarm_policy: AlarmPolicy::Ignore,
        }
    }

    /// Seed of the named subsystem stream.
    pub fn stream(&self, label: &str) -> u64 {
        seed::derive(self.seed, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 7\n[episodes]\ncount = 3\n[[detector.candidates]]\nn = 10\ndelta = 12.0\ntau = 80.0\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.episodes.count, 3);
        assert_eq!(cfg.episodes.validation, 20);
        assert_eq!(cfg.detector.candidates.len(), 1);
        assert_eq!(cfg.dataset, DatasetSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[dataset]\ncounts = 5\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.dataset.count = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.split.calibration = cfg.dataset.count;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.detector.candidates[0].tau = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.episodes.d0 = 500.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.attack.start = (30, 10);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn streams_differ_per_subsystem() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.stream("data"), cfg.stream("split"));
        assert_eq!(cfg.stream("data"), RunConfig::default().stream("data"));
    }
}
