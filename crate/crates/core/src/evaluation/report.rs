use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::PartitionSummary;

/// Metrics of one trained model on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub degenerate: bool,
    pub per_exit_f1: Vec<f64>,
    /// Uncertainty pooled over all time points.
    pub time_point: PartitionSummary,
    /// Uncertainty averaged over per-segment means.
    pub per_sample: PartitionSummary,
}

/// All runs of one model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub runs: Vec<RunMetrics>,
    pub latency_ratio: Option<f64>,
    pub config_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// `0.838±.06`: mean to three decimals, std to two with the leading zero
/// dropped.
pub fn format_mean_std(m: MeanStd) -> String {
    let std = format!("{:.2}", m.std);
    let std = std.strip_prefix('0').unwrap_or(&std);
    format!("{:.3}±{std}", m.mean)
}

impl EvalReport {
    pub fn stat(&self, f: impl Fn(&RunMetrics) -> Option<f64>) -> Option<MeanStd> {
        let v: Vec<f64> = self.runs.iter().filter_map(f).collect();
        MeanStd::of(&v)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn exits(&self) -> usize {
        self.runs.iter().map(|r| r.per_exit_f1.len()).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Delimited,
}

type Field = (&'static str, fn(&PartitionSummary) -> Option<f64>);

const PARTITION_FIELDS: [Field; 6] = [
    ("entropy_true", |s| s.mean_entropy_true),
    ("entropy_false", |s| s.mean_entropy_false),
    ("brier_true", |s| s.brier_true),
    ("brier_false", |s| s.brier_false),
    ("confidence_true", |s| s.confidence_true),
    ("confidence_false", |s| s.confidence_false),
];

pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => emit_text(reports),
        ReportFormat::Delimited => emit_delimited(reports),
    }
}

fn cell(m: Option<MeanStd>) -> String {
    m.map(format_mean_std).unwrap_or_else(|| "n/a".into())
}

fn emit_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "{:<width$}  {:<10} {:<10} {:<10} {:<10}", "model", "f1", "precision", "recall", "latency");
    for r in reports {
        let latency = r.latency_ratio.map(|l| format!("{l:.2}x")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "{:<width$}  {:<10} {:<10} {:<10} {:<10}",
            r.model,
            cell(r.stat(|m| Some(m.f1))),
            cell(r.stat(|m| Some(m.precision))),
            cell(r.stat(|m| Some(m.recall))),
            latency
        );
    }
    for (title, pick) in [
        ("uncertainty per time point", (|m: &RunMetrics| &m.time_point) as fn(&RunMetrics) -> &PartitionSummary),
        ("uncertainty per sample", |m: &RunMetrics| &m.per_sample),
    ] {
        let _ = writeln!(out, "\n{title}");
        let _ = write!(out, "{:<width$} ", "model");
        for (name, _) in PARTITION_FIELDS {
            let _ = write!(out, " {name:<16}");
        }
        out.push('\n');
        for r in reports {
            let _ = write!(out, "{:<width$} ", r.model);
            for (_, f) in PARTITION_FIELDS {
                let _ = write!(out, " {:<16}", cell(r.stat(|m| f(pick(m)))));
            }
            out.push('\n');
        }
    }
    let exits = reports.iter().map(EvalReport::exits).max().unwrap_or(0);
    if exits > 0 {
        let _ = writeln!(out, "\nper-exit f1");
        let _ = write!(out, "{:<width$} ", "model");
        for i in 1..=exits {
            let _ = write!(out, " {:<10}", format!("exit{i}"));
        }
        out.push('\n');
        for r in reports.iter().filter(|r| r.exits() > 0) {
            let _ = write!(out, "{:<width$} ", r.model);
            for i in 0..exits {
                let _ = write!(out, " {:<10}", cell(r.stat(|m| m.per_exit_f1.get(i).copied())));
            }
            out.push('\n');
        }
    }
    out.push('\n');
    for r in reports {
        let seeds: Vec<String> = r.seeds().iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{}: seeds {} config {}", r.model, seeds.join(","), r.config_digest);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn header() -> String {
    let mut cols: Vec<String> = ["model", "seed", "f1", "precision", "recall", "degenerate", "per_exit_f1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["tp", "ps"] {
        cols.extend(PARTITION_FIELDS.iter().map(|(n, _)| format!("{prefix}_{n}")));
    }
    cols.push("latency_ratio".into());
    cols.push("config_digest".into());
    cols.join(",")
}

fn emit_delimited(reports: &[EvalReport]) -> String {
    let mut out = header();
    out.push('\n');
    for r in reports {
        for m in &r.runs {
            let mut row = vec![
                r.model.clone(),
                m.seed.to_string(),
                m.f1.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.degenerate.to_string(),
                m.per_exit_f1.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            ];
            for s in [&m.time_point, &m.per_sample] {
                row.extend(PARTITION_FIELDS.iter().map(|(_, f)| opt(f(s))));
            }
            row.push(opt(r.latency_ratio));
            row.push(r.config_digest.clone());
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// Inverse of the delimited format; consecutive rows with the same model,
/// latency and digest form one report.
pub fn parse_delimited(text: &str) -> Result<Vec<EvalReport>> {
    let bad = |line: usize, d: String| Error::corrupt("report", format!("line {line}: {d}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header() => {}
        _ => return Err(bad(1, "missing or unexpected header".into())),
    }
    let num = |line: usize, s: &str| s.parse::<f64>().map_err(|e| bad(line, format!("{s:?}: {e}")));
    let opt_num = |line: usize, s: &str| if s.is_empty() { Ok(None) } else { num(line, s).map(Some) };
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, l) in lines.filter(|(_, l)| !l.is_empty()) {
        let line = i + 1;
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 21 {
            return Err(bad(line, format!("expected 21 fields, got {}", f.len())));
        }
        let summary = |at: usize| -> Result<PartitionSummary> {
            let v = (0..6).map(|k| opt_num(line, f[at + k])).collect::<Result<Vec<_>>>()?;
            Ok(PartitionSummary {
                mean_entropy_true: v[0],
                mean_entropy_false: v[1],
                brier_true: v[2],
                brier_false: v[3],
                confidence_true: v[4],
                confidence_false: v[5],
            })
        };
        let run = RunMetrics {
            seed: f[1].parse().map_err(|e| bad(line, format!("seed: {e}")))?,
            f1: num(line, f[2])?,
            precision: num(line, f[3])?,
            recall: num(line, f[4])?,
            degenerate: f[5].parse().map_err(|e| bad(line, format!("degenerate: {e}")))?,
            per_exit_f1: if f[6].is_empty() {
                Vec::new()
            } else {
                f[6].split(';').map(|s| num(line, s)).collect::<Result<_>>()?
            },
            time_point: summary(7)?,
            per_sample: summary(13)?,
        };
        let latency_ratio = opt_num(line, f[19])?;
        let (model, digest) = (f[0].to_string(), f[20].to_string());
        match reports.last_mut() {
            Some(r) if r.model == model && r.latency_ratio == latency_ratio && r.config_digest == digest => {
                r.runs.push(run)
            }
            _ => reports.push(EvalReport { model, runs: vec![run], latency_ratio, config_digest: digest }),
        }
    }
    Ok(reports)
}
