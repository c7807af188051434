//! Closed-loop detection experiment: optional tuning on validation episodes,
//! K nominal + K attacked test episodes per detector setting, and a per-step
//! timing measurement.
//!
//! Alarms never change the vehicle's trajectory (they are logged and the
//! CUSUM resets), so episodes are run once per distinct N and every `(δ, τ)`
//! sharing that N is scored by replaying the CUSUM over the recorded `log M`.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use rayon::prelude::*;
use regicp::icp::DetectorState;
use regicp::pipeline::{online_step, OfflineArtifacts};
use regicp::seed;
use regicp::sim::{render_scene, run_episode, EpisodeRecord, SceneParams};
use regicp::stats;
use serde::Serialize;

use crate::config::Triple;
use crate::{create_dir, load_artifacts, write_csv, write_json, write_text, CliError, Layout, Result, RunConfig};

/// Column order of `results.csv` and `tuning.csv`.
pub const RESULT_HEADER: [&str; 7] = ["N", "delta", "tau", "fp", "fn", "avg_delay_frames", "episodes"];

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub tau: f64,
    /// Nominal episodes with at least one alarm.
    pub fp: usize,
    /// Attacked episodes with no alarm at or after attack onset.
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Mean frames from onset to first alarm over detected episodes; empty
    /// when nothing was detected.
    pub avg_delay_frames: Option<f64>,
    /// Episodes per class.
    pub episodes: usize,
}

impl ResultRow {
    pub fn triple(&self) -> Triple {
        Triple {
            n: self.n,
            delta: self.delta,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_step_ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub kind: &'static str,
    pub index: usize,
    pub outcome: &'static str,
    pub steps: usize,
    pub attack_start_step: Option<usize>,
    pub first_alarm_step: Option<usize>,
    pub detection_delay: Option<usize>,
    pub final_distance: f64,
    pub final_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub episodes: usize,
    pub validation_episodes: usize,
    pub tuned: bool,
    /// Setting whose per-episode records are written.
    pub selected: Triple,
    pub results: Vec<ResultRow>,
    pub tuning: Vec<ResultRow>,
    pub timing: Vec<TimingRow>,
    /// Alarms raised before onset in attacked runs, for the selected setting.
    pub early_alarms: usize,
    pub nominal_outcomes: BTreeMap<&'static str, usize>,
    pub attacked_outcomes: BTreeMap<&'static str, usize>,
    pub config: RunConfig,
}

struct Batch {
    nominal: Vec<EpisodeRecord>,
    attacked: Vec<EpisodeRecord>,
}

fn distinct_n(candidates: &[Triple]) -> Vec<usize> {
    let mut ns: Vec<usize> = candidates.iter().map(|t| t.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

/// Runs `count` nominal and `count` attacked episodes in parallel; output
/// order follows the episode index.
fn run_batch(cfg: &RunConfig, art: &OfflineArtifacts, master: u64, count: usize, t: Triple) -> Result<Batch> {
    let sampler = cfg.sampler();
    let det = cfg.detector_config(t);
    let mut all = (0..2 * count)
        .into_par_iter()
        .map(|i| {
            let ep = sampler.sample(master, (i % count) as u64, i >= count);
            run_episode(&ep, art, det)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let attacked = all.split_off(count);
    Ok(Batch { nominal: all, attacked })
}

/// Episodes per N, keyed in ascending N.
fn run_batches(cfg: &RunConfig, art: &OfflineArtifacts, master: u64, count: usize) -> Result<BTreeMap<usize, Batch>> {
    let mut out = BTreeMap::new();
    for n in distinct_n(&cfg.detector.candidates) {
        let t = *cfg.detector.candidates.iter().find(|t| t.n == n).expect("n comes from the candidates");
        out.insert(n, run_batch(cfg, art, master, count, t)?);
    }
    Ok(out)
}

/// Scores one setting against a batch; returns the row and the number of
/// attacked runs that alarmed before onset.
pub fn score(t: Triple, nominal: &[EpisodeRecord], attacked: &[EpisodeRecord]) -> Result<(ResultRow, usize)> {
    let mut fp = 0;
    for r in nominal {
        if r.redetect(t.delta, t.tau)?.first_alarm_step.is_some() {
            fp += 1;
        }
    }
    let mut fn_ = 0;
    let mut early = 0;
    let mut delays = Vec::new();
    for r in attacked {
        let r = r.redetect(t.delta, t.tau)?;
        if r.false_alarm() {
            early += 1;
        }
        match r.detection_delay() {
            Some(d) => delays.push(d as f64),
            None => fn_ += 1,
        }
    }
    let row = ResultRow {
        n: t.n,
        delta: t.delta,
        tau: t.tau,
        fp,
        fn_,
        avg_delay_frames: (!delays.is_empty()).then(|| stats::mean(&delays)),
        episodes: nominal.len(),
    };
    Ok((row, early))
}

fn score_all(candidates: &[Triple], batches: &BTreeMap<usize, Batch>) -> Result<Vec<ResultRow>> {
    candidates
        .iter()
        .map(|&t| {
            let b = &batches[&t.n];
            Ok(score(t, &b.nominal, &b.attacked)?.0)
        })
        .collect()
}

/// Fewest `fp + fn`, then shortest mean delay, then earliest in the list.
pub fn select(rows: &[ResultRow]) -> Option<Triple> {
    let key = |r: &ResultRow| (r.fp + r.fn_, r.avg_delay_frames.unwrap_or(f64::INFINITY));
    rows.iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            let (ea, da) = key(a);
            let (eb, db) = key(b);
            ea.cmp(&eb).then(da.total_cmp(&db)).then(i.cmp(j))
        })
        .map(|(_, r)| r.triple())
}

/// Mean wall time of [`online_step`] per N over the same frames. Passes over
/// the N values are interleaved and repeated so slow drifts in machine load
/// hit every N alike.
pub fn measure_timing(cfg: &RunConfig, art: &OfflineArtifacts, ns: &[usize], steps: usize) -> Result<Vec<TimingRow>> {
    const REPEATS: usize = 3;
    if steps == 0 || ns.is_empty() {
        return Ok(Vec::new());
    }
    let ep = cfg.sampler().sample(cfg.stream("timing"), 0, false);
    let (far, near) = (ep.d0, ep.controller.l_max);
    let frames = (0..steps)
        .map(|i| {
            let d = far + (near - far) * i as f64 / steps.max(2).saturating_sub(1) as f64;
            let scene = SceneParams {
                seed: seed::derive_indexed(ep.scene.seed, "frame", i as u64),
                ..ep.scene
            };
            render_scene(d, &scene)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let pass = |n: usize| -> Result<f64> {
        let t = cfg.detector.candidates.iter().find(|t| t.n == n).copied().unwrap_or(Triple {
            n,
            delta: 1.0,
            tau: 1.0,
        });
        let mut state = DetectorState::new(cfg.detector_config(t))?;
        let mut rng = seed::rng(ep.seed);
        let start = Instant::now();
        for x in &frames {
            online_step(x, art, &mut state, &mut rng)?;
        }
        Ok(start.elapsed().as_secs_f64())
    };
    pass(ns[0])?;
    let mut total = vec![0.0; ns.len()];
    for _ in 0..REPEATS {
        for (acc, &n) in total.iter_mut().zip(ns) {
            *acc += pass(n)?;
        }
    }
    Ok(ns
        .iter()
        .zip(total)
        .map(|(&n, secs)| TimingRow {
            n,
            mean_step_ms: 1e3 * secs / (REPEATS * steps) as f64,
            steps: REPEATS * steps,
        })
        .collect())
}

fn summarise(kind: &'static str, index: usize, r: &EpisodeRecord) -> EpisodeSummary {
    EpisodeSummary {
        kind,
        index,
        outcome: r.outcome.as_str(),
        steps: r.rows.len(),
        attack_start_step: r.attack_start_step,
        first_alarm_step: r.first_alarm_step,
        detection_delay: r.detection_delay(),
        final_distance: r.final_distance,
        final_velocity: r.final_velocity,
    }
}

fn outcome_counts(records: &[EpisodeRecord]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.outcome.as_str()).or_insert(0) += 1;
    }
    m
}

/// Runs the experiment and writes `results.csv`, `tuning.csv`, `timing.csv`,
/// `summary.json`, `episodes.csv` and one record per episode under
/// `episodes/` for the selected setting.
pub fn experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out);
    let art = load_artifacts(cfg)?;
    let candidates = &cfg.detector.candidates;
    let k = cfg.episodes.count;
    let kv = cfg.episodes.validation;

    let tuning = if cfg.detector.tune && k > 0 && kv > 0 {
        let batches = run_batches(cfg, &art, cfg.stream("validation-episodes"), kv)?;
        score_all(candidates, &batches)?
    } else {
        Vec::new()
    };
    let tuned = !tuning.is_empty();
    let selected = select(&tuning).unwrap_or(candidates[0]);

    let (results, early, records) = if k > 0 {
        let mut batches = run_batches(cfg, &art, cfg.stream("test-episodes"), k)?;
        let results = score_all(candidates, &batches)?;
        let b = batches.remove(&selected.n).expect("selected N was run");
        let (_, early) = score(selected, &b.nominal, &b.attacked)?;
        let replay = |rs: Vec<EpisodeRecord>| -> Result<Vec<EpisodeRecord>> {
            rs.iter().map(|r| Ok(r.redetect(selected.delta, selected.tau)?)).collect()
        };
        (results, early, Some((replay(b.nominal)?, replay(b.attacked)?)))
    } else {
        (Vec::new(), 0, None)
    };

    create_dir(&layout.root)?;
    write_csv(&layout.results(), &RESULT_HEADER, &results)?;
    if tuned {
        write_csv(&layout.tuning(), &RESULT_HEADER, &tuning)?;
    }

    let (nominal, attacked) = records.unwrap_or_default();
    let dir = layout.records();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let mut index = Vec::new();
    if k > 0 {
        create_dir(&dir)?;
        for (kind, set) in [("nominal", &nominal), ("attacked", &attacked)] {
            for (i, r) in set.iter().enumerate() {
                write_text(&dir.join(format!("{kind}_{i:03}.csv")), &r.to_csv(selected.n))?;
                index.push(summarise(kind, i, r));
            }
        }
    }
    write_csv(
        &layout.episode_index(),
        &[
            "kind",
            "index",
            "outcome",
            "steps",
            "attack_start_step",
            "first_alarm_step",
            "detection_delay",
            "final_distance",
            "final_velocity",
        ],
        &index,
    )?;

    let timing = measure_timing(cfg, &art, &distinct_n(candidates), cfg.detector.timing_steps)?;
    write_csv(&layout.timing(), &["N", "mean_step_ms", "steps"], &timing)?;

    let summary = ExperimentSummary {
        episodes: k,
        validation_episodes: if tuned { kv } else { 0 },
        tuned,
        selected,
        results,
        tuning,
        timing,
        early_alarms: early,
        nominal_outcomes: outcome_counts(&nominal),
        attacked_outcomes: outcome_counts(&attacked),
        config: cfg.clone(),
    };
    write_json(&layout.experiment_summary(), &summary)?;
    Ok(summary)
}
