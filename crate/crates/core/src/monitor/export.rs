use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CommEstimate, ExperimentReport, MonitorError, PhaseMetrics, Totals, SERVER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: BTreeMap<String, String>,
    pub accuracy: Vec<f64>,
    pub final_accuracy: Option<f64>,
    pub totals: Totals,
    pub theoretical: CommEstimate,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Phase(PhaseMetrics),
    Summary(Summary),
}

pub const CSV_COLUMNS: [&str; 8] =
    ["phase", "participant", "wall_ms", "bytes_up", "bytes_down", "peak_rss_bytes", "round", "accuracy"];

/// JSONL: one object per phase entry, then a summary object. CSV: one row
/// per entry in [`CSV_COLUMNS`] order plus a final `summary` row; server
/// eval rows carry the accuracy measured in that phase.
pub fn export(report: &ExperimentReport, format: ExportFormat, path: &Path) -> Result<(), MonitorError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Jsonl => {
            for p in &report.phases {
                writeln!(out, "{}", to_json(&Line::Phase(p.clone()))?)?;
            }
            let summary = Summary {
                config: report.config.clone(),
                accuracy: report.accuracy.clone(),
                final_accuracy: report.final_accuracy,
                totals: report.totals,
                theoretical: report.theoretical,
            };
            writeln!(out, "{}", to_json(&Line::Summary(summary))?)?;
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
            let err = |e: csv::Error| MonitorError::Format(e.to_string());
            w.write_record(CSV_COLUMNS).map_err(err)?;
            let opt = |v: Option<String>| v.unwrap_or_default();
            for p in &report.phases {
                let round = p.phase.round();
                let accuracy = match p.phase {
                    super::Phase::Eval(r) if p.participant == SERVER => report.accuracy.get(r as usize).copied(),
                    _ => None,
                };
                w.write_record([
                    p.phase.to_string(),
                    if p.participant == SERVER { "server".into() } else { p.participant.to_string() },
                    p.wall_ms.to_string(),
                    p.bytes_up.to_string(),
                    p.bytes_down.to_string(),
                    opt(p.peak_rss_bytes.map(|v| v.to_string())),
                    opt(round.map(|v| v.to_string())),
                    opt(accuracy.map(|v| v.to_string())),
                ])
                .map_err(err)?;
            }
            let t = &report.totals;
            let (up, down) = report.phases.iter().fold((0, 0), |(u, d), p| (u + p.bytes_up, d + p.bytes_down));
            w.write_record([
                "summary".to_string(),
                String::new(),
                (t.pretrain_ms + t.training_ms).to_string(),
                up.to_string(),
                down.to_string(),
                String::new(),
                report.accuracy.len().saturating_sub(1).to_string(),
                opt(report.final_accuracy.map(|v| v.to_string())),
            ])
            .map_err(err)?;
            w.flush()?;
            return Ok(());
        }
    }
    out.flush()?;
    Ok(())
}

fn to_json(line: &Line) -> Result<String, MonitorError> {
    serde_json::to_string(line).map_err(|e| MonitorError::Format(e.to_string()))
}

/// Reads back a JSONL export.
pub fn import_jsonl(path: &Path) -> Result<(Vec<PhaseMetrics>, Summary), MonitorError> {
    let mut phases = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        match serde_json::from_str(&line).map_err(|e| MonitorError::Format(format!("line {}: {e}", i + 1)))? {
            Line::Phase(p) => phases.push(p),
            Line::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| MonitorError::Format("no summary object".into()))?;
    Ok((phases, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::Phase;

    fn report(phases: Vec<PhaseMetrics>) -> ExperimentReport {
        let config = BTreeMap::from([("method".to_string(), "FedAvg".to_string())]);
        ExperimentReport::new(config, vec![0.25, 0.5], phases, CommEstimate::default())
    }

    fn sample_phases() -> Vec<PhaseMetrics> {
        let mut v = Vec::new();
        for (phase, who) in [(Phase::Pretrain, 0), (Phase::TrainRound(0), 1), (Phase::Eval(1), SERVER)] {
            v.push(PhaseMetrics {
                wall_ms: 1.5,
                bytes_up: 100 + who as u64 % 7,
                bytes_down: 40,
                msgs_up: 2,
                msgs_down: 1,
                peak_rss_bytes: Some(4096),
                ..PhaseMetrics::new(phase, who)
            });
        }
        v
    }

    #[test]
    fn empty_experiment_is_summary_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        export(&report(vec![]), ExportFormat::Jsonl, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"kind\":\"summary\""));
    }

    #[test]
    fn jsonl_reimport_preserves_totals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let r = report(sample_phases());
        export(&r, ExportFormat::Jsonl, &path).unwrap();
        let (phases, summary) = import_jsonl(&path).unwrap();
        assert_eq!(phases, r.phases);
        assert_eq!(Totals::of(&phases), summary.totals);
        assert_eq!(summary.accuracy, r.accuracy);
    }

    #[test]
    fn csv_columns_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        export(&report(sample_phases()), ExportFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
        }
        assert!(rows[2].starts_with("eval(1),server,") && rows[2].ends_with(",1,0.5"));
    }
}
