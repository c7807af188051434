use std::fmt::Write as _;

use rand::Rng;

use super::render::{render_scene, SceneParams, MAX_RENDER_DISTANCE};
use super::vehicle::{controller, step_vehicle, ControllerConfig, VehicleState};
use crate::attack::{fgsm, AttackConfig};
use crate::error::{Error, Result};
use crate::icp::{cusum_trace, DetectorConfig, DetectorState};
use crate::pipeline::{online_step, OfflineArtifacts};
use crate::seed;

/// What the episode does when the detector raises an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmPolicy {
    /// Log the alarm, reset the CUSUM and keep driving on the perception output.
    Ignore,
    /// End the episode at the first alarm.
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub d0: f64,
    pub v0: f64,
    pub dt: f64,
    pub controller: ControllerConfig,
    pub max_steps: usize,
    pub attack: Option<AttackConfig>,
    /// Nuisance parameters; `scene.seed` seeds the per-frame pixel noise.
    pub scene: SceneParams,
    pub alarm_policy: AlarmPolicy,
    /// Seeds the detector's reconstruction sampling.
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.scene.validate()?;
        if !(self.d0 > self.controller.l_max && self.d0 <= MAX_RENDER_DISTANCE) {
            return Err(Error::Config(format!(
                "d0 = {} must exceed l_max = {} and stay within render range",
                self.d0, self.controller.l_max
            )));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return Err(Error::Config(format!("v0 = {} must be non-negative", self.v0)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Came to rest inside `[l_min, l_max]`.
    StoppedInZone,
    /// Came to rest farther than `l_max`.
    StoppedShort,
    /// Came to rest closer than `l_min` without touching.
    StoppedTooClose,
    /// Reached `d = 0` while still moving.
    Collision,
    /// Ended at the first alarm under [`AlarmPolicy::Stop`].
    Halted,
    /// Ran out of steps while still moving.
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::StoppedInZone => "STOPPED_IN_ZONE",
            Outcome::StoppedShort => "STOPPED_SHORT",
            Outcome::StoppedTooClose => "STOPPED_TOO_CLOSE",
            Outcome::Collision => "COLLISION",
            Outcome::Halted => "HALTED",
            Outcome::Timeout => "TIMEOUT",
        }
    }
}

/// One processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub d_true: f64,
    pub d_pred: f64,
    pub v: f64,
    pub brake: f64,
    pub p_values: Vec<f64>,
    pub log_m: f64,
    pub s: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub rows: Vec<StepRecord>,
    pub outcome: Outcome,
    pub first_alarm_step: Option<usize>,
    pub attack_start_step: Option<usize>,
    pub final_distance: f64,
    pub final_velocity: f64,
}

impl EpisodeRecord {
    /// Frames between attack onset and the first alarm at or after it.
    pub fn detection_delay(&self) -> Option<usize> {
        let start = self.attack_start_step?;
        self.rows
            .iter()
            .find(|r| r.alarm && r.t >= start)
            .map(|r| r.t - start)
    }

    /// Whether any alarm fired before the attack (or at all, for nominal runs).
    pub fn false_alarm(&self) -> bool {
        match self.attack_start_step {
            None => self.first_alarm_step.is_some(),
            Some(start) => self.first_alarm_step.is_some_and(|t| t < start),
        }
    }

    /// The same run seen by a detector with a different drift and threshold:
    /// `s`, `alarm` and `first_alarm_step` are recomputed from the recorded
    /// `log_m` values. Only valid for runs where alarms did not change the
    /// trajectory, so halted records are rejected.
    pub fn redetect(&self, delta: f64, tau: f64) -> Result<EpisodeRecord> {
        if self.outcome == Outcome::Halted {
            return Err(Error::Usage("cannot replay a run halted at an alarm".into()));
        }
        let log_m: Vec<f64> = self.rows.iter().map(|r| r.log_m).collect();
        let mut out = self.clone();
        for (row, (s, alarm)) in out.rows.iter_mut().zip(cusum_trace(&log_m, delta, tau)) {
            row.s = s;
            row.alarm = alarm;
        }
        out.first_alarm_step = out.rows.iter().find(|r| r.alarm).map(|r| r.t);
        Ok(out)
    }

    /// CSV with header `t,d_true,d_pred,v,brake,p_1..p_N,log_m,s,alarm`.
    pub fn to_csv(&self, n_samples: usize) -> String {
        let mut out = String::from("t,d_true,d_pred,v,brake,");
        for k in 1..=n_samples {
            write!(out, "p_{k},").expect("string write");
        }
        out.push_str("log_m,s,alarm\n");
        for r in &self.rows {
            write!(out, "{},{},{},{},{},", r.t, r.d_true, r.d_pred, r.v, r.brake).expect("string write");
            for p in &r.p_values {
                write!(out, "{p},").expect("string write");
            }
            writeln!(out, "{},{},{}", r.log_m, r.s, u8::from(r.alarm)).expect("string write");
        }
        out
    }
}

fn classify_stop(d: f64, c: &ControllerConfig) -> Outcome {
    if d < c.l_min {
        Outcome::StoppedTooClose
    } else if d > c.l_max {
        Outcome::StoppedShort
    } else {
        Outcome::StoppedInZone
    }
}

/// Closed-loop run: render, optionally attack, detect, brake, integrate.
pub fn run_episode(
    cfg: &EpisodeConfig,
    artifacts: &OfflineArtifacts,
    detector: DetectorConfig,
) -> Result<EpisodeRecord> {
    cfg.validate()?;
    if artifacts.model.input_dim() != cfg.scene.image_side * cfg.scene.image_side {
        return Err(Error::Config(format!(
            "model expects {} inputs but the scene renders {}×{}",
            artifacts.model.input_dim(),
            cfg.scene.image_side,
            cfg.scene.image_side
        )));
    }
    let mut det = DetectorState::new(detector)?;
    let mut rng = seed::rng(cfg.seed);
    let mut state = VehicleState {
        distance: cfg.d0,
        velocity: cfg.v0,
        time_step: 0,
    };
    let mut rows = Vec::new();
    let mut first_alarm = None;
    let mut outcome = None;

    for t in 0..cfg.max_steps {
        let scene = SceneParams {
            seed: seed::derive_indexed(cfg.scene.seed, "frame", t as u64),
            ..cfg.scene
        };
        let mut x = render_scene(state.distance, &scene)?;
        if let Some(attack) = cfg.attack.as_ref().filter(|a| t >= a.start_step) {
            x = fgsm(&artifacts.model, &x, attack)?.x;
        }
        let out = online_step(&x, artifacts, &mut det, &mut rng)?;
        let brake = controller(out.prediction, state.velocity, &cfg.controller);
        rows.push(StepRecord {
            t,
            d_true: state.distance,
            d_pred: out.prediction,
            v: state.velocity,
            brake,
            p_values: out.p_values,
            log_m: out.log_m.0,
            s: out.s,
            alarm: out.anomaly,
        });
        if out.anomaly {
            first_alarm.get_or_insert(t);
            if cfg.alarm_policy == AlarmPolicy::Stop {
                outcome = Some(Outcome::Halted);
                break;
            }
        }
        let prev = state;
        state = step_vehicle(state, brake, cfg.dt);
        if state.distance == 0.0 && prev.velocity > 0.0 {
            outcome = Some(Outcome::Collision);
            break;
        }
        if state.velocity == 0.0 {
            outcome = Some(classify_stop(state.distance, &cfg.controller));
            break;
        }
    }

    Ok(EpisodeRecord {
        rows,
        outcome: outcome.unwrap_or(Outcome::Timeout),
        first_alarm_step: first_alarm,
        attack_start_step: cfg.attack.map(|a| a.start_step),
        final_distance: state.distance,
        final_velocity: state.velocity,
    })
}

/// Draws episode configurations: `v0` uniform, attack onset uniform over an
/// inclusive step range, nuisances uniform over their ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSampler {
    pub d0: f64,
    pub v0: (f64, f64),
    pub dt: f64,
    pub controller: ControllerConfig,
    pub max_steps: usize,
    pub image_side: usize,
    pub brightness: (f64, f64),
    pub noise_level: (f64, f64),
    pub fgsm_epsilon: f64,
    pub y_target: f64,
    pub attack_iterations: usize,
    pub attack_start: (usize, usize),
    pub alarm_policy: AlarmPolicy,
}

impl Default for EpisodeSampler {
    fn default() -> Self {
        Self {
            d0: 100.0,
            v0: (25.0, 27.8),
            dt: 0.05,
            controller: ControllerConfig::default(),
            max_steps: 400,
            image_side: 16,
            brightness: (0.5, 1.0),
            noise_level: (0.0, 0.1),
            fgsm_epsilon: 0.02,
            y_target: 110.0,
            attack_iterations: 1,
            attack_start: (20, 60),
            alarm_policy: AlarmPolicy::Ignore,
        }
    }
}

impl EpisodeSampler {
    /// Configuration of episode `index` in the family seeded by `master`.
    pub fn sample(&self, master: u64, index: u64, attacked: bool) -> EpisodeConfig {
        let family = if attacked { "attacked-episode" } else { "nominal-episode" };
        let mut rng = seed::rng(seed::derive_indexed(master, family, index));
        let draw = |rng: &mut seed::Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let v0 = draw(&mut rng, self.v0);
        let brightness = draw(&mut rng, self.brightness);
        let noise_level = draw(&mut rng, self.noise_level);
        let start = rng.random_range(self.attack_start.0..=self.attack_start.1);
        let scene_seed = rng.random();
        let detector_seed = rng.random();
        EpisodeConfig {
            d0: self.d0,
            v0,
            dt: self.dt,
            controller: self.controller,
            max_steps: self.max_steps,
            attack: attacked.then_some(AttackConfig {
                fgsm_epsilon: self.fgsm_epsilon,
                y_target: self.y_target,
                start_step: start,
                iterations: self.attack_iterations,
            }),
            scene: SceneParams {
                image_side: self.image_side,
                noise_level,
                brightness,
                seed: scene_seed,
            },
            alarm_policy: self.alarm_policy,
            seed: detector_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_respects_ranges_and_is_deterministic() {
        let s = EpisodeSampler::default();
        for i in 0..200 {
            let c = s.sample(7, i, true);
            assert!((25.0..=27.8).contains(&c.v0));
            let start = c.attack.unwrap().start_step;
            assert!((20..=60).contains(&start));
            assert_eq!(c, s.sample(7, i, true));
            assert!(s.sample(7, i, false).attack.is_none());
        }
    }

    #[test]
    fn stop_classification() {
        let c = ControllerConfig::default();
        assert_eq!(classify_stop(2.0, &c), Outcome::StoppedInZone);
        assert_eq!(classify_stop(1.0, &c), Outcome::StoppedInZone);
        assert_eq!(classify_stop(3.5, &c), Outcome::StoppedShort);
        assert_eq!(classify_stop(0.5, &c), Outcome::StoppedTooClose);
    }

    #[test]
    fn csv_header_expands_p_columns() {
        let rec = EpisodeRecord {
            rows: vec![StepRecord {
                t: 0,
                d_true: 100.0,
                d_pred: 99.5,
                v: 26.0,
                brake: 3.5,
                p_values: vec![0.5, 0.25],
                log_m: -1.0,
                s: 0.0,
                alarm: false,
            }],
            outcome: Outcome::Timeout,
            first_alarm_step: None,
            attack_start_step: None,
            final_distance: 100.0,
            final_velocity: 26.0,
        };
        let csv = rec.to_csv(2);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,d_true,d_pred,v,brake,p_1,p_2,log_m,s,alarm");
        assert_eq!(lines.next().unwrap(), "0,100,99.5,26,3.5,0.5,0.25,-1,0,0");
    }
}
