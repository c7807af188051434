//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 6 and 7 share one full desk-profile run (generate, train,
//! experiment, attack-eval) in a temporary directory; 3, 4 and 5 are
//! self-contained; 8 reruns a reduced configuration twice.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use regicp::attack::Regressor;
use regicp::icp::{log_martingale, CalibrationSet, PValueBatch};
use regicp::model::{Block, Example, LossNoise, LossParams, ModelConfig, ModelGrads, VaeRegressor};
use regicp::seed;
use regicp::stats::ks_uniform;
use regicp_cli::{Layout, RunConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---- criterion 3 ----------------------------------------------------------

fn martingale_oracle() -> Verdict {
    let closed = |p: f64| -> f64 {
        if p == 1.0 {
            return 0.5;
        }
        let l = p.ln();
        (p * (l - 1.0) + 1.0) / (p * l * l)
    };
    let mut worst_closed: f64 = 0.0;
    for p in [0.01, 0.1, 0.5, 0.9, 1.0] {
        let m = log_martingale(&PValueBatch::new(vec![p]).unwrap(), 1001).unwrap().0.exp();
        worst_closed = worst_closed.max((m - closed(p)).abs() / closed(p));
    }
    let mut rng = seed::rng(31);
    let mut worst_nodes: f64 = 0.0;
    for n in [5, 10, 20] {
        for _ in 0..200 {
            let b = PValueBatch::new((0..n).map(|_| rng.random_range(0.001..=1.0)).collect()).unwrap();
            let coarse = log_martingale(&b, 1001).unwrap().0;
            let fine = log_martingale(&b, 10_001).unwrap().0;
            worst_nodes = worst_nodes.max((coarse - fine).exp_m1().abs());
        }
    }
    verdict(
        worst_closed <= 1e-6 && worst_nodes <= 1e-6,
        format!("max rel err vs closed form {worst_closed:.1e}, 1001 vs 10001 nodes {worst_nodes:.1e} (tol 1e-6)"),
    )
}

// ---- criterion 4 ----------------------------------------------------------

fn conformal_validity() -> Verdict {
    let mut rng = seed::rng(41);
    let trials = 100_000;
    let p: Vec<f64> = (0..trials)
        .map(|_| {
            let calib = CalibrationSet::new((0..400).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            calib.p_value(rng.random_range(0.0..1.0), calib.resolution())
        })
        .collect();
    let d = ks_uniform(&p);
    verdict(d < 0.02, format!("KS distance {d:.4} over {trials} trials, calibration 400 (tol 0.02)"))
}

// ---- criterion 5 ----------------------------------------------------------

const H: f64 = 1e-5;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_check() -> Verdict {
    let mut rng = seed::rng(51);
    let cfg = ModelConfig {
        input_dim: 16,
        latent_dim: 2,
        trunk: vec![8],
        encoder_hidden: vec![6],
        regressor_hidden: vec![6],
        generator_hidden: vec![5],
        decoder_hidden: vec![8],
        label_min: 0.0,
        label_max: 10.0,
    };
    let model = VaeRegressor::new(cfg, &mut rng).unwrap();
    let ex = Example {
        x: (0..16).map(|_| rng.random_range(0.0..1.0)).collect(),
        y: 6.1,
    };
    let noise = LossNoise::sample(2, &mut rng);
    let params = LossParams {
        label_prior_std: 0.1,
        reconstruction_std: 0.5,
    };
    let mut grads = ModelGrads::zeros_for(&model);
    model.loss(&ex, &noise, &params, Some(&mut grads)).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();

    let mut worst_params: f64 = 0.0;
    let mut offset = 0;
    for block in Block::ALL {
        let sizes: Vec<usize> = model.block(block).tensors().iter().map(|t| t.len()).collect();
        let coords: Vec<(usize, usize)> = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &len)| (0..len).map(move |e| (offset + i, e)))
            .collect();
        offset += sizes.len();
        for k in sample(&mut rng, coords.len(), 20) {
            let (ti, ei) = coords[k];
            let mut m = model.clone();
            let x0 = m.tensors()[ti].data()[ei];
            let mut f = |v: f64| {
                m.tensors_mut()[ti].data_mut()[ei] = v;
                -m.loss(&ex, &noise, &params, None).unwrap().total
            };
            let numeric = (f(x0 + H) - f(x0 - H)) / (2.0 * H);
            worst_params = worst_params.max(rel(analytic[ti][ei], numeric));
        }
    }

    let big = VaeRegressor::new(ModelConfig::desk(16), &mut rng).unwrap();
    let x: Vec<f64> = (0..256).map(|_| rng.random_range(0.1..0.9)).collect();
    let target = 110.0;
    let (y, g) = big.predict_with_gradient(&x).unwrap();
    let objective = |x: &[f64]| (big.predict_distance(x).unwrap() - target).powi(2);
    let mut worst_input: f64 = 0.0;
    for i in sample(&mut rng, 256, 100) {
        let mut xp = x.clone();
        xp[i] = x[i] + H;
        let up = objective(&xp);
        xp[i] = x[i] - H;
        let down = objective(&xp);
        worst_input = worst_input.max(rel(2.0 * (y - target) * g[i], (up - down) / (2.0 * H)));
    }
    verdict(
        worst_params <= 1e-4 && worst_input <= 1e-4,
        format!(
            "max rel err: loss parameters {worst_params:.1e} (100 coords over trunk/encoder/regressor/generator/decoder), FGSM input {worst_input:.1e} (100 pixels) (tol 1e-4)"
        ),
    )
}

// ---- desk run: criteria 1, 2, 6, 7 ---------------------------------------

struct DeskRun {
    experiment: regicp_cli::ExperimentSummary,
    train: regicp_cli::TrainSummary,
    attack: regicp_cli::AttackEvalSummary,
    seconds: f64,
}

fn desk_run(out: &Path) -> Result<DeskRun, regicp_cli::CliError> {
    let cfg = RunConfig {
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    regicp_cli::generate(&cfg)?;
    let train = regicp_cli::train(&cfg)?;
    eprintln!("  trained in {:.0} s", start.elapsed().as_secs_f64());
    let experiment = regicp_cli::experiment(&cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    eprintln!("  experiment done at {seconds:.0} s");
    let attack = regicp_cli::attack_eval(&cfg)?;
    Ok(DeskRun {
        experiment,
        train,
        attack,
        seconds,
    })
}

fn table_shape(run: &DeskRun) -> Verdict {
    let e = &run.experiment;
    let sel = e.selected;
    let Some(row) = e.results.iter().find(|r| r.triple() == sel) else {
        return verdict(false, "selected setting missing from results");
    };
    let delay = row.avg_delay_frames.unwrap_or(f64::INFINITY);
    let pass = e.tuned && row.fp <= 2 && row.fn_ <= 2 && delay <= 10.0;
    verdict(
        pass,
        format!(
            "tuned on {v}+{v} validation episodes -> N={} delta={} tau={}; fp {}/{k}, fn {}/{k}, mean delay {delay:.2} frames (need <= 2, <= 2, <= 10); pipeline {:.0} s",
            sel.n,
            sel.delta,
            sel.tau,
            row.fp,
            row.fn_,
            run.seconds,
            v = e.validation_episodes,
            k = row.episodes,
        ),
    )
}

fn timing_ratios(run: &DeskRun) -> Verdict {
    let t = |n: usize| run.experiment.timing.iter().find(|r| r.n == n).map(|r| r.mean_step_ms);
    match (t(5), t(10), t(20)) {
        (Some(t5), Some(t10), Some(t20)) => {
            let (r20, r10) = (t20 / t5, t10 / t5);
            verdict(
                (3.0..=5.0).contains(&r20) && (1.6..=2.4).contains(&r10),
                format!(
                    "T(5) {t5:.3} ms, T(10) {t10:.3} ms, T(20) {t20:.3} ms; T20/T5 {r20:.2} (need [3, 5]), T10/T5 {r10:.2} (need [1.6, 2.4])"
                ),
            )
        }
        _ => verdict(false, "timing rows for N = 5, 10, 20 missing"),
    }
}

fn attack_efficacy(run: &DeskRun) -> Verdict {
    let a = &run.attack;
    let e = &run.experiment;
    let collisions = e.attacked_outcomes.get("COLLISION").copied().unwrap_or(0);
    let in_zone = e.nominal_outcomes.get("STOPPED_IN_ZONE").copied().unwrap_or(0);
    let pass = a.error_ratio >= 5.0 && collisions > 0 && in_zone > 0;
    verdict(
        pass,
        format!(
            "attacked median error {:.2} m = {:.1}x clean MAE {:.3} m (need >= 5x); attacked runs ending in COLLISION {collisions}/{k}; nominal runs STOPPED_IN_ZONE [1, 3] m {in_zone}/{k}",
            a.attacked_median_error,
            a.error_ratio,
            a.clean_mae,
            k = e.episodes,
        ),
    )
}

fn perception_accuracy(run: &DeskRun, cfg: &RunConfig) -> Verdict {
    let t = &run.train;
    let bound = 0.05 * (cfg.dataset.label_max - cfg.dataset.label_min);
    verdict(
        t.test_mae <= bound && t.test_mae >= t.train_mae,
        format!(
            "held-out MAE {:.3} m (need <= {bound:.2} m), train MAE {:.3} m (need test >= train)",
            t.test_mae, t.train_mae
        ),
    )
}

// ---- criterion 8 ----------------------------------------------------------

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.dataset.count = 1200;
    cfg.dataset.test_count = 200;
    cfg.split.calibration = 300;
    cfg.training.phase1_epochs = 4;
    cfg.training.phase2_epochs = 1;
    cfg.episodes.count = 4;
    cfg.episodes.validation = 2;
    cfg.detector.timing_steps = 0;
    cfg
}

fn determinism(root: &Path) -> Result<Verdict, regicp_cli::CliError> {
    let dirs = [root.join("a"), root.join("b")];
    let mut weights = Vec::new();
    let mut tables = Vec::new();
    for dir in &dirs {
        let cfg = small_config(dir);
        regicp_cli::generate(&cfg)?;
        regicp_cli::train(&cfg)?;
        regicp_cli::experiment(&cfg)?;
        let layout = Layout::new(dir);
        weights.push(fs::read(layout.weights()).expect("weights written"));
        tables.push(fs::read(layout.results()).expect("results written"));
    }
    // A second experiment in the same directory must not change the table.
    regicp_cli::experiment(&small_config(&dirs[0]))?;
    let again = fs::read(Layout::new(&dirs[0]).results()).expect("results written");
    let same_w = weights[0] == weights[1];
    let same_t = tables[0] == tables[1] && tables[0] == again;
    Ok(verdict(
        same_w && same_t,
        format!(
            "weights identical: {same_w} ({} bytes); results tables identical across 3 runs: {same_t}",
            weights[0].len()
        ),
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();

    eprintln!("desk pipeline (generate, train, experiment, attack-eval)...");
    let desk_dir = tmp.path().join("desk");
    let desk = desk_run(&desk_dir);
    let desk_cfg = RunConfig {
        out: desk_dir.clone(),
        ..RunConfig::default()
    };
    let failed = |e: &regicp_cli::CliError| verdict(false, format!("desk pipeline failed: {e}"));
    match &desk {
        Ok(run) => {
            verdicts.push((1, "detection results at desk scale", table_shape(run)));
            verdicts.push((2, "runtime linear in N", timing_ratios(run)));
        }
        Err(e) => {
            verdicts.push((1, "detection results at desk scale", failed(e)));
            verdicts.push((2, "runtime linear in N", failed(e)));
        }
    }
    verdicts.push((3, "martingale quadrature oracle", martingale_oracle()));
    verdicts.push((4, "conformal validity", conformal_validity()));
    verdicts.push((5, "gradient correctness", gradient_check()));
    match &desk {
        Ok(run) => {
            verdicts.push((6, "attack efficacy and collision", attack_efficacy(run)));
            verdicts.push((7, "perception accuracy", perception_accuracy(run, &desk_cfg)));
        }
        Err(e) => {
            verdicts.push((6, "attack efficacy and collision", failed(e)));
            verdicts.push((7, "perception accuracy", failed(e)));
        }
    }
    eprintln!("determinism reruns...");
    let det = determinism(&tmp.path().join("det")).unwrap_or_else(|e| verdict(false, format!("run failed: {e}")));
    verdicts.push((8, "determinism", det));

    let mut all = true;
    for (n, title, v) in &verdicts {
        all &= v.pass;
        println!("{} criterion {n} ({title}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
