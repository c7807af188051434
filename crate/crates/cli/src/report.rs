//! Turns per-episode records into tidy plot-data CSVs, one per figure panel,
//! plus a plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{create_dir, write_csv, write_text, CliError, Result};

/// One parsed row of an episode record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordSummary {
    pub name: String,
    pub steps: usize,
    pub n_samples: usize,
    pub first_alarm_step: Option<usize>,
    pub alarms: usize,
    pub max_s: f64,
    pub final_d_true: f64,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses a record with header `t,d_true,d_pred,v,brake,p_1..p_N,log_m,s,alarm`.
pub fn parse_record(path: &Path) -> Result<Vec<RecordRow>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.len().saturating_sub(8);
    let expected: Vec<String> = ["t", "d_true", "d_pred", "v", "brake"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|k| format!("p_{k}")))
        .chain(["log_m", "s", "alarm"].iter().map(|s| s.to_string()))
        .collect();
    if n == 0 || cols != expected {
        return Err(parse_err(path, 1, format!("unexpected header {header:?}")));
    }

    let mut rows = Vec::new();
    for (line, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != cols.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("column {}: not a number: {:?}", cols[i], f[i])))
        };
        let t = f[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, line, format!("column t: not a step index: {:?}", f[0])))?;
        let alarm = match f[cols.len() - 1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, line, format!("column alarm: expected 0 or 1, found {other:?}"))),
        };
        rows.push(RecordRow {
            t,
            d_true: num(1)?,
            d_pred: num(2)?,
            v: num(3)?,
            brake: num(4)?,
            p_values: (5..5 + n).map(num).collect::<Result<_>>()?,
            log_m: num(5 + n)?,
            s: num(6 + n)?,
            alarm,
        });
    }
    Ok(rows)
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no episode records (*.csv) in {}", dir.display())));
    }
    Ok(files)
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: usize,
    d_true: f64,
    d_pred: f64,
    v: f64,
    brake: f64,
}

#[derive(Serialize)]
struct PValueRow {
    t: usize,
    k: usize,
    p: f64,
}

#[derive(Serialize)]
struct DetectorRow {
    t: usize,
    log_m: f64,
    s: f64,
    alarm: u8,
}

/// Reads every `*.csv` record in `records` and writes, per record `<name>`,
/// `<name>_trajectory.csv` (distance and velocity panels),
/// `<name>_pvalues.csv` (long format) and `<name>_detector.csv` (log M and
/// S), plus `summary.txt`, into `out`.
pub fn report(records: &Path, out: &Path) -> Result<Vec<RecordSummary>> {
    let files = record_files(records)?;
    create_dir(out)?;
    let mut summaries = Vec::with_capacity(files.len());
    for path in files {
        let rows = parse_record(&path)?;
        let name = path.file_stem().expect("csv files have a stem").to_string_lossy().into_owned();
        let traj: Vec<TrajectoryRow> = rows
            .iter()
            .map(|r| TrajectoryRow {
                t: r.t,
                d_true: r.d_true,
                d_pred: r.d_pred,
                v: r.v,
                brake: r.brake,
            })
            .collect();
        write_csv(&out.join(format!("{name}_trajectory.csv")), &["t", "d_true", "d_pred", "v", "brake"], &traj)?;
        let ps: Vec<PValueRow> = rows
            .iter()
            .flat_map(|r| {
                r.p_values
                    .iter()
                    .enumerate()
                    .map(move |(k, &p)| PValueRow { t: r.t, k: k + 1, p })
            })
            .collect();
        write_csv(&out.join(format!("{name}_pvalues.csv")), &["t", "k", "p"], &ps)?;
        let det: Vec<DetectorRow> = rows
            .iter()
            .map(|r| DetectorRow {
                t: r.t,
                log_m: r.log_m,
                s: r.s,
                alarm: u8::from(r.alarm),
            })
            .collect();
        write_csv(&out.join(format!("{name}_detector.csv")), &["t", "log_m", "s", "alarm"], &det)?;

        summaries.push(RecordSummary {
            name,
            steps: rows.len(),
            n_samples: rows.first().map_or(0, |r| r.p_values.len()),
            first_alarm_step: rows.iter().find(|r| r.alarm).map(|r| r.t),
            alarms: rows.iter().filter(|r| r.alarm).count(),
            max_s: rows.iter().map(|r| r.s).fold(0.0, f64::max),
            final_d_true: rows.last().map_or(f64::NAN, |r| r.d_true),
        });
    }

    let mut text = String::from("record steps N first_alarm alarms max_s final_d_true\n");
    for s in &summaries {
        let first = s.first_alarm_step.map_or("-".to_string(), |t| t.to_string());
        writeln!(
            text,
            "{} {} {} {first} {} {:.3} {:.3}",
            s.name, s.steps, s.n_samples, s.alarms, s.max_s, s.final_d_true
        )
        .expect("writing to a String");
    }
    write_text(&out.join("summary.txt"), &text)?;
    Ok(summaries)
}
