use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use entrofact::io::write_csv_columns;
use serde_json::{json, Value};

use crate::suite::Outcome;
use crate::CliError;

/// Refuses to mix results of different configs in one directory.
pub fn prepare(out: &Path, hash: &str) -> Result<(), CliError> {
    let report = out.join("report.jsonl");
    if let Ok(text) = fs::read_to_string(&report) {
        let existing = text
            .lines()
            .next()
            .and_then(|l| serde_json::from_str::<Value>(l).ok())
            .and_then(|v| v.get("config_hash").and_then(|h| h.as_str()).map(String::from));
        if existing.as_deref() != Some(hash) {
            return Err(CliError::Usage(format!(
                "{} holds results of config {}; use another --out directory",
                out.display(),
                existing.unwrap_or_else(|| "unknown".into())
            )));
        }
    }
    Ok(())
}

pub fn summary(outcome: &Outcome) -> String {
    let mut s = String::new();
    for r in &outcome.reports {
        let hard = r.extra.get("hard").and_then(Value::as_bool).unwrap_or(false);
        let status = match (r.pass, hard) {
            (true, _) if r.extra.get("applicable").and_then(Value::as_bool) == Some(false) => "n/a ",
            (true, _) => "ok  ",
            (false, true) => "FAIL",
            (false, false) => "warn",
        };
        let sites = r.extra.get("sites").map(Value::to_string).unwrap_or_default();
        let boundary = r.extra.get("boundary").and_then(Value::as_str).unwrap_or("");
        let _ = writeln!(s, "{status} {:<26} lhs={:<12.6e} rhs={:<12.6e} sites={sites} {boundary}", r.name, r.lhs, r.rhs);
    }
    let _ = writeln!(s, "{} reports, {} hard failures", outcome.reports.len(), outcome.hard_failures());
    s
}

/// Writes `report.jsonl` (header line, then one report per line),
/// `summary.txt` and `series/*.csv`. Reruns overwrite in place.
pub fn write(out: &Path, hash: &str, config: &Value, outcome: &Outcome) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let mut lines = vec![serde_json::to_string(&json!({ "config_hash": hash, "config": config })).map_err(entrofact::Error::from)?];
    for r in &outcome.reports {
        let mut v = serde_json::to_value(r).map_err(entrofact::Error::from)?;
        v["config_hash"] = json!(hash);
        lines.push(serde_json::to_string(&v).map_err(entrofact::Error::from)?);
    }
    fs::write(out.join("report.jsonl"), lines.join("\n") + "\n")?;
    fs::write(out.join("summary.txt"), summary(outcome))?;
    if !outcome.series.is_empty() {
        let dir = out.join("series");
        fs::create_dir_all(&dir)?;
        for s in &outcome.series {
            let names: Vec<&str> = s.columns.iter().map(|(n, _)| n.as_str()).collect();
            let cols: Vec<&[f64]> = s.columns.iter().map(|(_, c)| c.as_slice()).collect();
            write_csv_columns(&dir.join(format!("{}.csv", s.name)), Some(&format!("config_hash={hash}")), &names, &cols)?;
        }
    }
    Ok(())
}
