use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regicp_cli::{CliError, Layout, Result, RunConfig};

/// Conformal adversarial-example detection for a distance-regression
/// perception model, on a synthetic emergency-braking loop.
#[derive(Debug, Parser)]
#[command(name = "regicp", version)]
struct Cli {
    /// TOML run configuration; missing keys take the desk defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the labelled training dataset.
    Generate,
    /// Train the model and compute calibration scores.
    Train,
    /// Run nominal and attacked episodes and tabulate detection results.
    Experiment,
    /// Turn episode records into plot-data CSVs.
    Report {
        /// Directory of episode records [default: <out>/episodes].
        records: Option<PathBuf>,
    },
    /// Compare clean and attacked prediction errors.
    AttackEval,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(v: Option<impl ToString>) -> String {
    v.map_or("-".into(), |v| v.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let layout = Layout::new(&cfg.out);
    match &cli.command {
        Command::Generate => {
            let s = regicp_cli::generate(&cfg)?;
            println!(
                "wrote {} examples ({} pixels, labels {:.2}..{:.2} m) to {}",
                s.count,
                s.input_dim,
                s.label_min,
                s.label_max,
                layout.dataset().display()
            );
        }
        Command::Train => {
            let s = regicp_cli::train(&cfg)?;
            println!(
                "trained {} epochs on {} examples, calibrated on {}",
                s.epochs, s.proper_size, s.calibration_size
            );
            println!(
                "MAE train {:.3} m, calibration {:.3} m, test {:.3} m",
                s.train_mae, s.calibration_mae, s.test_mae
            );
        }
        Command::Experiment => {
            let s = regicp_cli::experiment(&cfg)?;
            println!("N,delta,tau,fp,fn,avg_delay_frames,episodes");
            for r in &s.results {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.n,
                    r.delta,
                    r.tau,
                    r.fp,
                    r.fn_,
                    opt(r.avg_delay_frames.map(|d| format!("{d:.2}"))),
                    r.episodes
                );
            }
            let sel = s.selected;
            let how = if s.tuned { "tuned" } else { "first candidate" };
            println!("selected ({how}): N={} delta={} tau={}", sel.n, sel.delta, sel.tau);
            for t in &s.timing {
                println!("N={}: {:.3} ms/step", t.n, t.mean_step_ms);
            }
        }
        Command::Report { records } => {
            let dir = records.clone().unwrap_or_else(|| layout.records());
            let out = layout.report();
            let summaries = regicp_cli::report(&dir, &out)?;
            for s in &summaries {
                println!(
                    "{}: {} steps, first alarm {}, max S {:.2}",
                    s.name,
                    s.steps,
                    opt(s.first_alarm_step),
                    s.max_s
                );
            }
            println!("plot data written to {}", out.display());
        }
        Command::AttackEval => {
            let s = regicp_cli::attack_eval(&cfg)?;
            println!(
                "{} examples: clean MAE {:.3} m, attacked median error {:.3} m ({:.1}x)",
                s.examples, s.clean_mae, s.attacked_median_error, s.error_ratio
            );
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e))
        }
    }
}
