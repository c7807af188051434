use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Metres to the obstacle.
    pub distance: f64,
    /// Host speed in m/s.
    pub velocity: f64,
    pub time_step: usize,
}

/// Point-mass update: `v' = max(0, v − a·dt)`, `d' = max(0, d − v·dt)`.
///
/// `brake_decel` is clamped to `[0, a_max]` by the caller's controller; a
/// negative value here is treated as zero.
pub fn step_vehicle(s: VehicleState, brake_decel: f64, dt: f64) -> VehicleState {
    let a = brake_decel.max(0.0);
    VehicleState {
        distance: (s.distance - s.velocity * dt).max(0.0),
        velocity: (s.velocity - a * dt).max(0.0),
        time_step: s.time_step + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub l_min: f64,
    pub l_max: f64,
    pub a_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            l_min: 1.0,
            l_max: 3.0,
            a_max: 8.0,
        }
    }
}

impl ControllerConfig {
    pub fn target_gap(&self) -> f64 {
        0.5 * (self.l_min + self.l_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_min >= 0.0 && self.l_max > self.l_min) {
            return Err(Error::Config(format!(
                "stopping zone [{}, {}] is invalid",
                self.l_min, self.l_max
            )));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Config("a_max must be positive".into()));
        }
        Ok(())
    }
}

/// Estimated gaps at or below this count as "target reached".
pub const MIN_GAP: f64 = 0.1;

/// Constant-deceleration braking law aimed at the middle of the stopping zone:
/// `clamp(v² / (2·(d_est − l_target)), 0, a_max)`, with full braking once the
/// estimated gap is at most [`MIN_GAP`].
///
/// The hold at `a_max` matters in discrete time: with the gap merely floored,
/// `v² / 0.2` shrinks faster than `v` and the vehicle creeps forward
/// indefinitely instead of coming to rest.
pub fn controller(d_est: f64, v: f64, cfg: &ControllerConfig) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let gap = d_est - cfg.target_gap();
    if gap <= MIN_GAP {
        return cfg.a_max;
    }
    (v * v / (2.0 * gap)).clamp(0.0, cfg.a_max)
}
