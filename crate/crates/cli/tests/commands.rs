//! End-to-end behaviour of the commands on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::Command;

use regicp::sim::Dataset;
use regicp_cli::{config::Triple, CliError, Layout, RunConfig};

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 17,
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.dataset.count = 300;
    cfg.dataset.test_count = 50;
    cfg.split.calibration = 100;
    cfg.model.trunk = vec![16];
    cfg.model.regressor_hidden = vec![8];
    cfg.model.generator_hidden = vec![8];
    cfg.model.decoder_hidden = vec![32];
    cfg.training.phase1_epochs = 2;
    cfg.training.phase2_epochs = 1;
    cfg.episodes.count = 2;
    cfg.episodes.validation = 1;
    cfg.detector.timing_steps = 5;
    cfg.attack.eval_count = 20;
    cfg
}

fn trained(out: &Path) -> RunConfig {
    let cfg = tiny(out);
    regicp_cli::generate(&cfg).unwrap();
    regicp_cli::train(&cfg).unwrap();
    cfg
}

#[test]
fn generate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let layout = Layout::new(dir.path());
    regicp_cli::generate(&cfg).unwrap();
    let first = fs::read(layout.dataset()).unwrap();
    regicp_cli::generate(&cfg).unwrap();
    assert_eq!(first, fs::read(layout.dataset()).unwrap());

    let ds = Dataset::load(&layout.dataset(), Some(&layout.dataset_index())).unwrap();
    assert_eq!(ds.len(), 300);
    let index = fs::read_to_string(layout.dataset_index()).unwrap();
    for (line, e) in index.lines().skip(1).zip(&ds.examples) {
        let label: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(label, e.y);
    }
}

#[test]
fn zero_count_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.dataset.count = 0;
    let err = regicp_cli::generate(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn train_without_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = regicp_cli::train(&tiny(dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn training_writes_reproducible_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = trained(a.path());
    trained(b.path());
    let (la, lb) = (Layout::new(a.path()), Layout::new(b.path()));
    assert_eq!(fs::read(la.weights()).unwrap(), fs::read(lb.weights()).unwrap());
    assert_eq!(fs::read(la.calibration()).unwrap(), fs::read(lb.calibration()).unwrap());

    let history = fs::read_to_string(la.loss_history()).unwrap();
    let epochs = cfg.training.phase1_epochs + cfg.training.phase2_epochs;
    assert_eq!(history.lines().count(), 1 + epochs);
    assert!(history.starts_with("epoch,learning_rate,objective,label_kl,reconstruction,latent_kl\n"));
}

#[test]
fn diverging_training_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.training.phase1_lr = 1e12;
    regicp_cli::generate(&cfg).unwrap();
    let err = regicp_cli::train(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn zero_episodes_give_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trained(dir.path());
    cfg.episodes.count = 0;
    let s = regicp_cli::experiment(&cfg).unwrap();
    assert!(s.results.is_empty());
    let table = fs::read_to_string(Layout::new(dir.path()).results()).unwrap();
    assert_eq!(table, "N,delta,tau,fp,fn,avg_delay_frames,episodes\n");
}

#[test]
fn experiment_is_deterministic_and_reports_consistently() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let layout = Layout::new(dir.path());
    let s = regicp_cli::experiment(&cfg).unwrap();
    let table = fs::read(layout.results()).unwrap();
    assert_eq!(s.results.len(), cfg.detector.candidates.len());
    assert!(s.tuned);
    regicp_cli::experiment(&cfg).unwrap();
    assert_eq!(table, fs::read(layout.results()).unwrap());

    let text = String::from_utf8(table).unwrap();
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "5");
    assert_eq!(first[6], "2");

    let timing = fs::read_to_string(layout.timing()).unwrap();
    assert_eq!(timing.lines().count(), 4);

    // Report: S crosses τ exactly at the recorded first alarm.
    let out = layout.report();
    let summaries = regicp_cli::report(&layout.records(), &out).unwrap();
    assert_eq!(summaries.len(), 4);
    let tau = s.selected.tau;
    let index = fs::read_to_string(layout.episode_index()).unwrap();
    for line in index.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let name = format!("{}_{:03}", f[0], f[1].parse::<usize>().unwrap());
        let rec = summaries.iter().find(|r| r.name == name).unwrap();
        let first_alarm = (!f[5].is_empty()).then(|| f[5].parse::<usize>().unwrap());
        assert_eq!(rec.first_alarm_step, first_alarm);
        let det = fs::read_to_string(out.join(format!("{name}_detector.csv"))).unwrap();
        let crossing = det.lines().skip(1).find_map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[2].parse::<f64>().unwrap() > tau).then(|| c[0].parse::<usize>().unwrap())
        });
        assert_eq!(crossing, first_alarm);
    }
    assert!(out.join("summary.txt").exists());
}

#[test]
fn report_rejects_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records");
    fs::create_dir(&records).unwrap();
    assert!(regicp_cli::report(&records, &dir.path().join("r")).is_err());

    fs::write(
        records.join("bad.csv"),
        "t,d_true,d_pred,v,brake,p_1,log_m,s,alarm\n0,1,1,1,1,0.5,0,0,0\n1,1,1,1,1,0.5,0,0,maybe\n",
    )
    .unwrap();
    match regicp_cli::report(&records, &dir.path().join("r")) {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn attack_eval_writes_a_row_per_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained(dir.path());
    let s = regicp_cli::attack_eval(&cfg).unwrap();
    assert_eq!(s.examples, 20);
    assert_eq!(s.target, cfg.dataset.label_max);
    let table = fs::read_to_string(Layout::new(dir.path()).attack_eval()).unwrap();
    assert_eq!(table.lines().count(), 21);
}

#[test]
fn selected_candidate_is_one_of_the_configured() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trained(dir.path());
    cfg.detector.candidates = vec![Triple { n: 3, delta: 2.0, tau: 5.0 }];
    cfg.detector.tune = false;
    let s = regicp_cli::experiment(&cfg).unwrap();
    assert_eq!(s.selected, cfg.detector.candidates[0]);
    assert!(!s.tuned);
    assert!(s.tuning.is_empty());
}

fn regicp(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_regicp")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[dataset]\ncounts = 5\n").unwrap();
    let (code, err) = regicp(&["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("counts"), "{err}");

    let (code, _) = regicp(&["--out", out, "train"]);
    assert_eq!(code, 2);

    let (code, _) = regicp(&["--config", dir.path().join("missing.toml").to_str().unwrap(), "generate"]);
    assert_eq!(code, 2);

    let (code, _) = regicp(&["no-such-command"]);
    assert_eq!(code, 1);

    let (code, _) = regicp(&["--out", out, "--seed", "3", "show-config"]);
    assert_eq!(code, 0);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "seed = 1\nout = \"elsewhere\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regicp"))
        .args(["--config", file.to_str().unwrap(), "--seed", "99", "--out", "here", "show-config"])
        .output()
        .unwrap();
    let shown: RunConfig = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(shown.seed, 99);
    assert_eq!(shown.out, Path::new("here"));
}
