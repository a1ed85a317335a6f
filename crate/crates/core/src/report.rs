//! Report emission.
//!
//! Column order is fixed and floats are written with nine significant digits
//! in scientific notation, so a rerun with the same configuration and seed
//! reproduces every file byte for byte. Wall-clock timings are the one
//! nondeterministic output and go to their own file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentRecord, PolicySummary, TheoryReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::UnsupportedMode(format!("report format `{other}`"))),
        }
    }
}

pub const RECORD_COLUMNS: [&str; 11] = [
    "instance_id",
    "true_s",
    "irreducible",
    "policy",
    "samples_used",
    "tokens_used",
    "covered",
    "correct",
    "p_star_final",
    "rounds",
    "stop_reason",
];

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "policy",
    "instances",
    "mean_samples",
    "mean_tokens",
    "coverage",
    "coverage_se",
    "accuracy",
    "accuracy_se",
    "pareto_optimal",
];

pub const THEORY_COLUMNS: [&str; 6] = ["family", "k", "delta_mc", "delta_mc_se", "delta_exact", "delta_tail"];

pub const FIT_COLUMNS: [&str; 8] = [
    "family",
    "fit",
    "estimator",
    "fitted",
    "theoretical",
    "ci_low",
    "ci_high",
    "r_squared",
];

/// Nine significant digits.
pub fn float(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn nonempty<T>(rows: &[T], what: &'static str) -> Result<()> {
    if rows.is_empty() {
        Err(Error::EmptyInput(what))
    } else {
        Ok(())
    }
}

pub fn records_csv(records: &[ExperimentRecord]) -> Result<String> {
    nonempty(records, "no experiment records to report")?;
    csv_string(
        &RECORD_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.instance_id.to_string(),
                opt_float(r.true_s),
                flag(r.irreducible),
                r.policy.clone(),
                r.samples_used.to_string(),
                r.tokens_used.to_string(),
                flag(r.covered),
                flag(r.correct),
                float(r.p_star_final),
                r.rounds.to_string(),
                r.stop_reason.as_str().to_string(),
            ]
        }),
    )
}

pub fn summary_csv(summaries: &[PolicySummary]) -> Result<String> {
    nonempty(summaries, "no policy summaries to report")?;
    csv_string(
        &SUMMARY_COLUMNS,
        summaries.iter().map(|s| {
            vec![
                s.policy.clone(),
                s.instances.to_string(),
                float(s.mean_samples),
                float(s.mean_tokens),
                float(s.coverage),
                float(s.coverage_se),
                float(s.accuracy),
                float(s.accuracy_se),
                flag(s.pareto_optimal),
            ]
        }),
    )
}

pub fn timings_csv(records: &[ExperimentRecord]) -> Result<String> {
    nonempty(records, "no experiment records to report")?;
    csv_string(
        &["instance_id", "policy", "wall_time_us"],
        records.iter().map(|r| {
            vec![
                r.instance_id.to_string(),
                r.policy.clone(),
                r.wall_time.as_micros().to_string(),
            ]
        }),
    )
}

pub fn theory_csv(report: &TheoryReport) -> Result<String> {
    nonempty(&report.points, "no theory points to report")?;
    csv_string(
        &THEORY_COLUMNS,
        report.points.iter().map(|p| {
            vec![
                p.family.clone(),
                p.k.to_string(),
                opt_float(p.delta_mc),
                opt_float(p.delta_mc_se),
                float(p.delta_exact),
                opt_float(p.delta_tail),
            ]
        }),
    )
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn fits_csv(report: &TheoryReport) -> Result<String> {
    nonempty(&report.fits, "no theory fits to report")?;
    csv_string(
        &FIT_COLUMNS,
        report.fits.iter().map(|f| {
            vec![
                f.family.clone(),
                snake(&f.fit),
                snake(&f.estimator),
                float(f.fitted),
                float(f.theoretical),
                float(f.ci_low),
                float(f.ci_high),
                float(f.r_squared),
            ]
        }),
    )
}

/// One JSON object per round, tagged with instance and policy.
pub fn decision_log_jsonl(records: &[ExperimentRecord]) -> Result<String> {
    #[derive(Serialize)]
    struct Line<'a> {
        instance_id: u64,
        policy: &'a str,
        #[serde(flatten)]
        round: &'a crate::controller::RoundLog,
    }
    let mut out = String::new();
    for r in records {
        for round in &r.log {
            out.push_str(&serde_json::to_string(&Line {
                instance_id: r.instance_id,
                policy: &r.policy,
                round,
            })?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn summary_markdown(summaries: &[PolicySummary]) -> String {
    let mut out = String::from(
        "| policy | mean samples | mean tokens | coverage | accuracy | pareto |\n\
         |---|---:|---:|---:|---:|:---:|\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "| {} | {:.3} | {:.1} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} |\n",
            s.policy,
            s.mean_samples,
            s.mean_tokens,
            s.coverage,
            s.coverage_se,
            s.accuracy,
            s.accuracy_se,
            if s.pareto_optimal { "yes" } else { "" }
        ));
    }
    out
}

pub fn theory_markdown(report: &TheoryReport) -> String {
    let mut out = String::from(
        "| family | fit | fitted | theoretical | 95% CI | R² |\n|---|---|---:|---:|---|---:|\n",
    );
    for f in &report.fits {
        out.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | [{:.4}, {:.4}] | {:.5} |\n",
            f.family,
            snake(&f.fit),
            f.fitted,
            f.theoretical,
            f.ci_low,
            f.ci_high,
            f.r_squared
        ));
    }
    out
}

/// Creates `dir` if needed and confirms it accepts writes.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes records and summaries in `format` and returns the files written.
pub fn emit_report(
    records: &[ExperimentRecord],
    summaries: &[PolicySummary],
    format: Format,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    nonempty(records, "no experiment records to report")?;
    prepare_output_dir(dir)?;
    let mut written = match format {
        Format::Csv => vec![
            write(dir, "records.csv", &records_csv(records)?)?,
            write(dir, "summary.csv", &summary_csv(summaries)?)?,
        ],
        Format::Json => vec![
            write(dir, "records.json", &serde_json::to_string_pretty(records)?)?,
            write(dir, "summary.json", &serde_json::to_string_pretty(summaries)?)?,
        ],
    };
    written.push(write(dir, "timings.csv", &timings_csv(records)?)?);
    Ok(written)
}

pub fn emit_theory_report(report: &TheoryReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare_output_dir(dir)?;
    Ok(match format {
        Format::Csv => vec![
            write(dir, "theory.csv", &theory_csv(report)?)?,
            write(dir, "theory_fits.csv", &fits_csv(report)?)?,
        ],
        Format::Json => {
            nonempty(&report.points, "no theory points to report")?;
            vec![write(dir, "theory.json", &serde_json::to_string_pretty(report)?)?]
        }
    })
}

pub fn emit_decision_log(records: &[ExperimentRecord], dir: &Path) -> Result<PathBuf> {
    prepare_output_dir(dir)?;
    write(dir, "decision_log.jsonl", &decision_log_jsonl(records)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::StopReason;
    use std::time::Duration;

    fn record(id: u64) -> ExperimentRecord {
        ExperimentRecord {
            instance_id: id,
            true_s: Some(0.123456789123),
            irreducible: false,
            policy: "threshold(target=1,patience=3)".into(),
            samples_used: 4,
            tokens_used: 40,
            covered: true,
            correct: false,
            p_star_final: 0.5,
            rounds: 2,
            stop_reason: StopReason::NoImprovement,
            batches: vec![2, 2],
            wall_time: Duration::from_micros(17),
            log: Vec::new(),
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(records_csv(&[]), Err(Error::EmptyInput(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(&[], &[], Format::Csv, dir.path()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn one_record_gives_header_and_row() {
        let text = records_csv(&[record(3)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], RECORD_COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "3,1.23456789e-1,0,\"threshold(target=1,patience=3)\",4,40,1,0,5.00000000e-1,2,no_improvement"
        );
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let target = blocker.join("sub");
        match emit_report(&[record(1)], &[], Format::Csv, &target) {
            Err(Error::Io { path, .. }) => assert!(path.starts_with(&blocker)),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn formats_parse() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }
}
