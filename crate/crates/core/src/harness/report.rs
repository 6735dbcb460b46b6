//! Flat CSV summary and JSON-lines detail log for an experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::harness::experiment::ExperimentReport;
use crate::harness::HarnessError;

pub const CSV_HEADER: &str = "model,fold,metric,weight,value";

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// One row per (model, fold, metric, weight) followed by a `mean` row per
/// (model, metric, weight). Undefined values are written as `nan`.
pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in &report.models {
        let mut row = |fold: &str, metric: &str, weight: Option<f64>, value: Option<f64>| {
            let w = weight.map(|w| w.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{fold},{metric},{w},{}", m.name, fmt_value(value));
        };
        for f in 0..report.config.folds {
            for s in &m.metrics {
                row(&f.to_string(), &s.metric, s.weight, s.per_fold[f]);
            }
        }
        for s in &m.metrics {
            row("mean", &s.metric, s.weight, s.mean);
        }
    }
    out
}

/// Newline-delimited JSON: one `config` record, then per model its fold
/// records, failures and a summary.
pub fn to_jsonl(report: &ExperimentReport) -> Result<String, HarnessError> {
    let enc = |v: serde_json::Value| serde_json::to_string(&v).map_err(|e| HarnessError::Numeric(e.to_string()));
    let mut out = String::new();
    let mut push = |v| -> Result<(), HarnessError> {
        out.push_str(&enc(v)?);
        out.push('\n');
        Ok(())
    };
    push(json!({
        "record": "config",
        "n": report.n,
        "dim": report.dim,
        "config": report.config,
        "partition": report.partition,
    }))?;
    for m in &report.models {
        for f in &m.folds {
            push(json!({ "record": "fold", "model": m.name, "result": f }))?;
        }
        for f in &m.failures {
            push(json!({ "record": "failure", "model": m.name, "fold": f.fold, "error": f.error }))?;
        }
        push(json!({ "record": "summary", "model": m.name, "metrics": m.metrics }))?;
    }
    Ok(out)
}

/// Writes `summary.csv` and `details.jsonl` into `dir`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), to_csv(report))?;
    fs::write(dir.join("details.jsonl"), to_jsonl(report)?)?;
    Ok(())
}
