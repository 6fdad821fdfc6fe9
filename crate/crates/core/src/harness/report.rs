//! Test reports and their CSV / JSON-lines serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::OutputFormat;
use crate::error::{Error, Result};

/// One pass/fail decision together with the tolerance it was checked against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: Option<f64>,
    pub se: Option<f64>,
    /// Largest admissible deviation (or the bound, for one-sided checks).
    pub tolerance: Option<f64>,
    /// How the tolerance was formed, e.g. `4 SE` or `KS level 0.01`.
    pub rule: String,
    pub pass: bool,
}

impl Check {
    /// `|value - expected| <= k * se`. A zero standard error demands agreement to
    /// `1e-12` relative.
    pub fn within_se(name: &str, value: f64, expected: f64, se: f64, k: f64) -> Self {
        let tol = if se > 0.0 {
            k * se
        } else {
            1e-12 * expected.abs().max(1.0)
        };
        Check {
            name: name.into(),
            value,
            expected: Some(expected),
            se: Some(se),
            tolerance: Some(tol),
            rule: format!("{k} SE"),
            pass: (value - expected).abs() <= tol,
        }
    }

    pub fn at_most(name: &str, value: f64, bound: f64, rule: &str) -> Self {
        Check {
            name: name.into(),
            value,
            expected: None,
            se: None,
            tolerance: Some(bound),
            rule: rule.into(),
            pass: value <= bound,
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64, rule: &str) -> Self {
        Check {
            name: name.into(),
            value,
            expected: None,
            se: None,
            tolerance: Some(bound),
            rule: rule.into(),
            pass: value >= bound,
        }
    }

    /// A reported value without a test attached.
    pub fn info(name: &str, value: f64) -> Self {
        Check {
            name: name.into(),
            value,
            expected: None,
            se: None,
            tolerance: None,
            rule: "report only".into(),
            pass: true,
        }
    }
}

/// Long-format row: one replica, one time, one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub replica: u64,
    pub t: f64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub test: String,
    pub regime: String,
    pub config_hash: String,
    pub seed: u64,
    pub replicas: usize,
    pub survivors: usize,
    pub survival_fraction: f64,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub records: Vec<Record>,
    /// Wall-clock seconds; kept out of the summary files so reruns compare equal.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl TestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const SUMMARY_HEADER: [&str; 13] = [
    "test",
    "check",
    "value",
    "expected",
    "se",
    "tolerance",
    "rule",
    "pass",
    "replicas",
    "survivors",
    "survival_fraction",
    "seed",
    "config_hash",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    test: &'a str,
    regime: &'a str,
    #[serde(flatten)]
    check: &'a Check,
    replicas: usize,
    survivors: usize,
    survival_fraction: f64,
    seed: u64,
    config_hash: &'a str,
}

fn io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// One row (CSV) or line (JSON) per check of every report.
pub fn write_summary<W: Write>(out: W, reports: &[TestReport], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(SUMMARY_HEADER).map_err(io)?;
            for r in reports {
                for c in &r.checks {
                    w.write_record([
                        r.test.clone(),
                        c.name.clone(),
                        c.value.to_string(),
                        opt(c.expected),
                        opt(c.se),
                        opt(c.tolerance),
                        c.rule.clone(),
                        c.pass.to_string(),
                        r.replicas.to_string(),
                        r.survivors.to_string(),
                        r.survival_fraction.to_string(),
                        r.seed.to_string(),
                        r.config_hash.clone(),
                    ])
                    .map_err(io)?;
                }
            }
            w.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut out = out;
            for r in reports {
                for c in &r.checks {
                    let line = SummaryLine {
                        test: &r.test,
                        regime: &r.regime,
                        check: c,
                        replicas: r.replicas,
                        survivors: r.survivors,
                        survival_fraction: r.survival_fraction,
                        seed: r.seed,
                        config_hash: &r.config_hash,
                    };
                    serde_json::to_writer(&mut out, &line).map_err(io)?;
                    out.write_all(b"\n")?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RecordLine<'a> {
    test: &'a str,
    #[serde(flatten)]
    record: &'a Record,
}

pub fn write_records<W: Write>(out: W, reports: &[TestReport], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["test", "replica", "t", "statistic", "value"]).map_err(io)?;
            for r in reports {
                for rec in &r.records {
                    w.write_record([
                        r.test.clone(),
                        rec.replica.to_string(),
                        rec.t.to_string(),
                        rec.statistic.clone(),
                        rec.value.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
            w.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut out = out;
            for r in reports {
                for rec in &r.records {
                    serde_json::to_writer(&mut out, &RecordLine { test: &r.test, record: rec }).map_err(io)?;
                    out.write_all(b"\n")?;
                }
            }
        }
    }
    Ok(())
}

/// Writes `summary.*`, `records.*` and `runtime.json` into `dir`; returns the paths.
pub fn emit(reports: &[TestReport], dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    };
    let summary = dir.join(format!("summary.{ext}"));
    let records = dir.join(format!("records.{ext}"));
    let runtime = dir.join("runtime.json");
    write_summary(fs::File::create(&summary)?, reports, format)?;
    write_records(fs::File::create(&records)?, reports, format)?;
    let times: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::json!({ "test": r.test, "runtime_secs": r.runtime_secs }))
        .collect();
    fs::write(&runtime, serde_json::to_string_pretty(&times).map_err(io)?)?;
    Ok(vec![summary, records, runtime])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> TestReport {
        TestReport {
            test: "lln".into(),
            regime: "slow".into(),
            config_hash: "abc".into(),
            seed: 1,
            replicas: 10,
            survivors: 7,
            survival_fraction: 0.7,
            checks: vec![Check::within_se("mean", 1.0, 1.1, 0.05, 4.0)],
            records: vec![Record {
                replica: 0,
                t: 1.0,
                statistic: "count".into(),
                value: 3.0,
            }],
            runtime_secs: 0.5,
        }
    }

    #[test]
    fn empty_report_gives_header_only_csv() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &[], OutputFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SUMMARY_HEADER.join(",") + "\n");
    }

    #[test]
    fn one_check_gives_one_json_line() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &[report()], OutputFormat::Jsonl).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["pass"], serde_json::Value::Bool(true));
        assert_eq!(v["config_hash"], "abc");
        assert_eq!(v["rule"], "4 SE");
    }

    #[test]
    fn runtime_stays_out_of_summary() {
        let mut a = report();
        let mut b = report();
        a.runtime_secs = 1.0;
        b.runtime_secs = 2.0;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_summary(&mut x, &[a], OutputFormat::Csv).unwrap();
        write_summary(&mut y, &[b], OutputFormat::Csv).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn checks() {
        assert!(!Check::within_se("m", 1.0, 1.3, 0.05, 4.0).pass);
        assert!(Check::within_se("m", 1.0, 1.0, 0.0, 4.0).pass);
        assert!(Check::at_most("d", 0.1, 0.2, "KS level 0.01").pass);
        assert!(!Check::at_least("r", 0.9, 0.95, "bound").pass);
    }
}
