//! Report emission: versioned JSON summaries and CSV tables, with every
//! number written to 12 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scenario::{Sample, ScenarioReport, SweepRow};
use crate::scatter::ScatteringResult;

pub const SCHEMA_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn format_number(x: f64) -> String {
    if x.is_finite() {
        format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
    } else {
        x.to_string()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    schema_version: u32,
    report: &'a str,
    config: &'a C,
    result: &'a R,
}

/// JSON text of `{schema_version, report, config, result}` with rounded numbers.
pub fn to_json<C: Serialize, R: Serialize>(report: &str, config: &C, result: &R) -> Result<String> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        report,
        config,
        result,
    };
    let mut v = serde_json::to_value(&env).map_err(|e| Error::Config {
        path: report.into(),
        reason: e.to_string(),
    })?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("a JSON value always serializes");
    s.push('\n');
    Ok(s)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<C: Serialize, R: Serialize>(path: &Path, report: &str, config: &C, result: &R) -> Result<()> {
    let text = to_json(report, config, result)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// CSV with a header row; every row must have as many fields as the header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => Error::Config {
            path: path.display().to_string(),
            reason: format!("{other:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn numeric_rows<I: IntoIterator<Item = Vec<f64>>>(rows: I) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(format_number).collect())
        .collect()
}

pub const SAMPLE_HEADER: [&str; 12] = [
    "t",
    "left",
    "well",
    "right",
    "absorbed_left",
    "absorbed_right",
    "well_occupation",
    "mean_x",
    "energy",
    "r",
    "field",
    "action",
];

pub fn sample_rows(samples: &[Sample]) -> Vec<Vec<String>> {
    numeric_rows(samples.iter().map(|s| {
        vec![
            s.t,
            s.left,
            s.well,
            s.right,
            s.absorbed_left,
            s.absorbed_right,
            s.well_occupation,
            s.mean_x,
            s.energy,
            s.r,
            s.field,
            s.action,
        ]
    }))
}

pub const SPECTRUM_HEADER: [&str; 3] = ["energy", "transmission", "reflection"];

pub fn spectrum_rows(s: &ScatteringResult) -> Vec<Vec<String>> {
    numeric_rows(
        s.energies
            .iter()
            .zip(&s.transmission)
            .zip(&s.reflection)
            .map(|((e, t), r)| vec![*e, *t, *r]),
    )
}

pub const SWEEP_HEADER: [&str; 6] = [
    "value",
    "status",
    "transmitted_fraction",
    "detuning_over_gamma",
    "max_opacity_bound",
    "error",
];

pub fn sweep_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
    rows.iter()
        .map(|r| {
            vec![
                format_number(r.value),
                r.status
                    .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                    .unwrap_or_else(|| "failed".into()),
                opt(r.transmitted_fraction),
                opt(r.detuning_over_gamma),
                opt(r.max_opacity_bound),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

/// Files written for one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
}

pub fn write_scenario<C: Serialize>(dir: &Path, stem: &str, config: &C, report: &ScenarioReport) -> Result<ScenarioFiles> {
    ensure_dir(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}_series.csv"));
    write_json(&json, "scenario", config, report)?;
    write_csv(&csv, &SAMPLE_HEADER, &sample_rows(&report.samples))?;
    Ok(ScenarioFiles { json, csv })
}
