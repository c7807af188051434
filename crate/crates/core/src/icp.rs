//! Inductive conformal anomaly detection.
//!
//! Test inputs are scored with the squared reconstruction error, scores are
//! turned into p-values against a fixed calibration set, batches of p-values
//! are combined with the simple mixture martingale
//! `M = ∫₀¹ ∏ ε p_i^(ε-1) dε`, and `log M` drives a one-sided CUSUM.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Squared Euclidean distance between an input and its reconstruction.
pub fn nonconformity(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "nonconformity of {}-d input against {}-d reconstruction",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Calibration nonconformity scores, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    scores: Vec<f64>,
}

impl CalibrationSet {
    /// Sorts `scores`; rejects an empty set and negative or non-finite scores.
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Config("calibration set is empty".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Config(format!("invalid calibration score {bad}")));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The calibration resolution `1 / (l - m)`, used as the default p-value floor.
    pub fn resolution(&self) -> f64 {
        1.0 / self.scores.len() as f64
    }

    /// Fraction of calibration scores `>= alpha`, floored at `p_floor`.
    pub fn p_value(&self, alpha: f64, p_floor: f64) -> f64 {
        let below = self.scores.partition_point(|&s| s < alpha);
        let raw = (self.scores.len() - below) as f64 / self.scores.len() as f64;
        raw.max(p_floor)
    }

    /// Writes one score per line with 17 significant digits, ascending.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.scores.len() * 24);
        for s in &self.scores {
            writeln!(text, "{s:.16e}").expect("writing to a String");
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scores = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: not a number: {line:?}", i + 1)))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::format(path, format!("line {}: invalid score {v}", i + 1)));
            }
            if scores.last().is_some_and(|&prev| v < prev) {
                return Err(Error::format(path, format!("line {}: scores not ascending", i + 1)));
            }
            scores.push(v);
        }
        if scores.is_empty() {
            return Err(Error::format(path, "no calibration scores"));
        }
        Ok(Self { scores })
    }
}

/// A batch of p-values, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueBatch {
    values: Vec<f64>,
}

impl PValueBatch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("p-value batch is empty".into()));
        }
        if let Some(bad) = values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::Config(format!(
                "p-value {bad} outside (0, 1]; apply a positive floor first"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Natural logarithm of the simple mixture martingale value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MartingaleLog(pub f64);

/// Default number of Simpson nodes on [0, 1].
pub const DEFAULT_QUADRATURE_NODES: usize = 1001;

/// `log ∫₀¹ ∏ᵢ ε pᵢ^(ε−1) dε` by composite Simpson on `nodes` equally spaced
/// points (odd, ≥ 3).
///
/// The integrand is `exp(f(ε))` with `f(ε) = N ln ε + (ε − 1) S`,
/// `S = Σ ln pᵢ`. It is evaluated relative to its maximum
/// `f(ε*)`, `ε* = min(1, N / −S)`, so the quadrature sum stays in `(0, 1]`
/// scale and the result is `f(ε*) + ln(Σ wᵢ exp(f(εᵢ) − f(ε*)))`.
pub fn log_martingale(p: &PValueBatch, nodes: usize) -> Result<MartingaleLog> {
    if nodes < 3 || nodes % 2 == 0 {
        return Err(Error::Config(format!(
            "Simpson quadrature needs an odd node count >= 3, got {nodes}"
        )));
    }
    let n = p.len() as f64;
    let s: f64 = p.values().iter().map(|v| v.ln()).sum();
    let peak = if -s > n { n / -s } else { 1.0 };
    let f_peak = n * peak.ln() + (peak - 1.0) * s;
    let h = 1.0 / (nodes - 1) as f64;
    let k = p.len() as i32;

    // exp((ε − ε*) S) by repeated multiplication; its start value is at most e^N.
    let use_recurrence = n <= 600.0;
    let step = (h * s).exp();
    let mut tilt = (-peak * s).exp();

    let mut acc = 0.0;
    for i in 0..nodes {
        let eps = i as f64 * h;
        let g = if i == 0 {
            0.0
        } else if use_recurrence {
            (eps / peak).powi(k) * tilt
        } else {
            (n * (eps / peak).ln() + (eps - peak) * s).exp()
        };
        let w = if i == 0 || i == nodes - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * g;
        tilt *= step;
    }
    let log_m = f_peak + (acc * h / 3.0).ln();
    if !log_m.is_finite() {
        return Err(Error::Numeric(format!(
            "log martingale is not finite (N = {}, Σ ln p = {s})",
            p.len()
        )));
    }
    Ok(MartingaleLog(log_m))
}

/// `max(0, s + log_m − δ)`.
pub fn cusum_update(s: f64, log_m: MartingaleLog, delta: f64) -> f64 {
    (s + log_m.0 - delta).max(0.0)
}

/// Runs the CUSUM with reset over a recorded `log M` sequence. Returns, per
/// step, the statistic after the update (before any reset) and the alarm flag.
pub fn cusum_trace(log_m: &[f64], delta: f64, tau: f64) -> Vec<(f64, bool)> {
    let mut s = 0.0;
    log_m
        .iter()
        .map(|&l| {
            let next = cusum_update(s, MartingaleLog(l), delta);
            let alarm = next > tau;
            s = if alarm { 0.0 } else { next };
            (next, alarm)
        })
        .collect()
}

/// Single-p-value test: flags `p < threshold`.
pub fn threshold_detect(p: f64, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "p-value threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(p < threshold)
}

/// Detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Reconstructions sampled per input.
    pub n_samples: usize,
    /// CUSUM drift δ.
    pub delta: f64,
    /// CUSUM threshold τ.
    pub tau: f64,
    /// Floor applied to raw p-values; `None` means `1 / (l − m)`.
    pub p_floor: Option<f64>,
    pub quadrature_nodes: usize,
}

impl DetectorConfig {
    pub fn new(n_samples: usize, delta: f64, tau: f64) -> Self {
        Self {
            n_samples,
            delta,
            tau,
            p_floor: None,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("detector needs N >= 1 samples".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(f) = self.p_floor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("p_floor must lie in (0, 1], got {f}")));
            }
        }
        if self.quadrature_nodes < 3 || self.quadrature_nodes % 2 == 0 {
            return Err(Error::Config(format!(
                "quadrature_nodes must be odd and >= 3, got {}",
                self.quadrature_nodes
            )));
        }
        Ok(())
    }

    pub fn floor_for(&self, calib: &CalibrationSet) -> f64 {
        self.p_floor.unwrap_or_else(|| calib.resolution())
    }
}

/// Per-stream CUSUM state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState {
    s: f64,
    pub config: DetectorConfig,
}

impl DetectorState {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { s: 0.0, config })
    }

    /// Current CUSUM statistic.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Folds one martingale value into the statistic.
    pub fn update(&mut self, log_m: MartingaleLog) {
        self.s = cusum_update(self.s, log_m, self.config.delta);
    }

    /// `s > τ`.
    pub fn alarm(&self) -> bool {
        self.s > self.config.tau
    }

    pub fn reset(&mut self) {
        self.s = 0.0;
    }

    #[cfg(test)]
    pub(crate) fn with_s(mut self, s: f64) -> Self {
        self.s = s;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cusum_trace_matches_detector_state() {
        let lm = [3.0, 4.0, -1.0, 9.0, 0.5, 7.0, 7.0, 7.0];
        let mut st = DetectorState::new(DetectorConfig::new(1, 2.0, 6.0)).unwrap();
        let trace = cusum_trace(&lm, 2.0, 6.0);
        for (&l, &(s, alarm)) in lm.iter().zip(&trace) {
            st.update(MartingaleLog(l));
            assert_eq!(st.s(), s);
            assert_eq!(st.alarm(), alarm);
            if alarm {
                st.reset();
            }
        }
        let alarms: Vec<usize> = trace.iter().enumerate().filter(|(_, t)| t.1).map(|(i, _)| i).collect();
        assert_eq!(alarms, vec![3, 6]);
    }

    /// ∫₀¹ ε p^(ε−1) dε in closed form.
    fn single_factor(p: f64) -> f64 {
        if p == 1.0 {
            return 0.5;
        }
        let l = p.ln();
        (p * (l - 1.0) + 1.0) / (p * l * l)
    }

    fn batch(v: Vec<f64>) -> PValueBatch {
        PValueBatch::new(v).unwrap()
    }

    #[test]
    fn nonconformity_cases() {
        assert_eq!(nonconformity(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(nonconformity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(matches!(nonconformity(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn nonconformity_matches_loop() {
        let mut rng = crate::seed::rng(17);
        use rand::Rng;
        let a: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let mut oracle = 0.0;
        for i in 0..100 {
            let d = a[i] - b[i];
            oracle += d * d;
        }
        assert!((nonconformity(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn p_value_cases() {
        let c = CalibrationSet::new(vec![3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(c.p_value(0.5, 0.25), 1.0);
        assert_eq!(c.p_value(1.0, 0.25), 1.0);
        assert_eq!(c.p_value(2.5, 0.25), 0.5);
        // Ties count toward the numerator.
        assert_eq!(c.p_value(2.0, 0.25), 0.75);
        assert_eq!(c.p_value(9.0, c.resolution()), 0.25);
        assert_eq!(c.p_value(9.0, 0.01), 0.01);
    }

    #[test]
    fn calibration_rejects_bad_input() {
        assert!(CalibrationSet::new(vec![]).is_err());
        assert!(CalibrationSet::new(vec![1.0, -0.5]).is_err());
        assert!(CalibrationSet::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn martingale_of_unit_p_values() {
        for n in [1usize, 5, 10, 20] {
            let lm = log_martingale(&batch(vec![1.0; n]), DEFAULT_QUADRATURE_NODES).unwrap();
            assert!((lm.0 - (1.0 / (n as f64 + 1.0)).ln()).abs() < 1e-9, "N = {n}");
        }
    }

    #[test]
    fn martingale_single_factor_closed_form() {
        assert!((single_factor(0.5) - 0.6387).abs() < 1e-4);
        let lm = log_martingale(&batch(vec![0.5]), DEFAULT_QUADRATURE_NODES).unwrap();
        assert!((lm.0 - 0.6387f64.ln()).abs() < 1e-4);
        for p in [0.01, 0.1, 0.5, 0.9, 1.0] {
            let lm = log_martingale(&batch(vec![p]), DEFAULT_QUADRATURE_NODES).unwrap();
            let rel = (lm.0.exp() - single_factor(p)).abs() / single_factor(p);
            assert!(rel < 1e-6, "p = {p}: rel err {rel}");
        }
    }

    #[test]
    fn martingale_grows_with_small_p_values() {
        let small = log_martingale(&batch(vec![0.01; 10]), 1001).unwrap();
        let unit = log_martingale(&batch(vec![1.0; 10]), 1001).unwrap();
        assert!(small > unit);
    }

    #[test]
    fn martingale_rejects_even_nodes() {
        assert!(log_martingale(&batch(vec![0.5]), 1000).is_err());
        assert!(PValueBatch::new(vec![]).is_err());
        assert!(PValueBatch::new(vec![0.0]).is_err());
    }

    #[test]
    fn cusum_cases() {
        assert_eq!(cusum_update(0.0, MartingaleLog(12.0), 12.0), 0.0);
        assert_eq!(cusum_update(5.0, MartingaleLog(10.0), 12.0), 3.0);
        let mut s = 0.0;
        for _ in 0..100 {
            s = cusum_update(s, MartingaleLog(11.9), 12.0);
        }
        assert_eq!(s, 0.0);
    }

    #[test]
    fn alarm_is_strict() {
        let st = DetectorState::new(DetectorConfig::new(10, 12.0, 80.0)).unwrap();
        assert!(!st.alarm());
        assert!(!st.with_s(80.0).alarm());
        assert!(st.with_s(80.01).alarm());
        let mut fired = st.with_s(100.0);
        fired.reset();
        assert_eq!(fired.s(), 0.0);
    }

    #[test]
    fn detector_config_validation() {
        assert!(DetectorConfig::new(0, 1.0, 1.0).validate().is_err());
        assert!(DetectorConfig::new(5, 0.0, 1.0).validate().is_err());
        assert!(DetectorConfig::new(5, 1.0, -1.0).validate().is_err());
        let mut c = DetectorConfig::new(5, 6.0, 6.0);
        c.p_floor = Some(0.0);
        assert!(c.validate().is_err());
        c.p_floor = Some(0.01);
        c.quadrature_nodes = 100;
        assert!(c.validate().is_err());
    }

    #[test]
    fn threshold_detect_cases() {
        assert!(!threshold_detect(0.5, 0.05).unwrap());
        assert!(threshold_detect(0.01, 0.05).unwrap());
        assert!(!threshold_detect(0.05, 0.05).unwrap());
        assert!(threshold_detect(0.01, 1.0).is_err());
    }

    #[test]
    fn calibration_file_round_trip_and_order_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.txt");
        let c = CalibrationSet::new(vec![0.3, 0.1 + 0.2, 1.0 / 3.0, 7.25]).unwrap();
        c.save(&path).unwrap();
        assert_eq!(CalibrationSet::load(&path).unwrap(), c);

        std::fs::write(&path, "0.5\n0.25\n").unwrap();
        let err = CalibrationSet::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        std::fs::write(&path, "0.5\nabc\n").unwrap();
        assert!(CalibrationSet::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn p_value_is_monotone(
            scores in proptest::collection::vec(0.0f64..10.0, 1..50),
            a in 0.0f64..12.0, b in 0.0f64..12.0,
        ) {
            let c = CalibrationSet::new(scores).unwrap();
            let f = c.resolution();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.p_value(lo, f) >= c.p_value(hi, f));
            let p = c.p_value(a, f);
            prop_assert!(p >= f && p <= 1.0);
        }

        #[test]
        fn cusum_is_non_negative_and_bounded(
            s in 0.0f64..100.0, lm in -50.0f64..50.0, delta in 0.1f64..20.0,
        ) {
            let next = cusum_update(s, MartingaleLog(lm), delta);
            prop_assert!(next >= 0.0);
            prop_assert!(next - s <= (lm - delta).max(-s) + 1e-12);
        }
    }
}
