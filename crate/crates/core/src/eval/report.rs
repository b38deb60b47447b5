//! Recall reports, deltas between them, and CSV/markdown rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AblationMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecall {
    pub task_id: String,
    pub name: String,
    pub advisory: bool,
    pub n_queries: usize,
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub mode: AblationMode,
    pub model_id: String,
    pub seed: u64,
    pub cutoffs: Vec<usize>,
    pub tasks: Vec<TaskRecall>,
    /// Over tasks that have queries and are not advisory.
    pub macro_average: BTreeMap<usize, f64>,
    /// Over every task that has queries.
    pub macro_average_all: BTreeMap<usize, f64>,
}

fn average_over<'a>(
    tasks: impl Iterator<Item = &'a TaskRecall> + Clone,
    cutoffs: &[usize],
) -> BTreeMap<usize, f64> {
    cutoffs
        .iter()
        .filter_map(|&k| {
            let vals: Vec<f64> = tasks
                .clone()
                .filter(|t| t.n_queries > 0)
                .filter_map(|t| t.recall.get(&k).copied())
                .collect();
            (!vals.is_empty()).then(|| (k, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

impl RecallReport {
    pub fn new(mode: AblationMode, model_id: String, seed: u64, tasks: Vec<TaskRecall>) -> Self {
        let cutoffs: Vec<usize> = tasks
            .iter()
            .flat_map(|t| t.recall.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let macro_average = average_over(tasks.iter().filter(|t| !t.advisory), &cutoffs);
        let macro_average_all = average_over(tasks.iter(), &cutoffs);
        Self {
            mode,
            model_id,
            seed,
            cutoffs,
            tasks,
            macro_average,
            macro_average_all,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tasks {
            let vals: Vec<f64> = t.recall.values().copied().collect();
            if vals.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::ReportMismatch(format!(
                    "{}: recall outside [0,1]",
                    t.task_id
                )));
            }
            if vals.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::ReportMismatch(format!(
                    "{}: recall decreases with k",
                    t.task_id
                )));
            }
        }
        Ok(())
    }

    pub fn macro_at(&self, k: usize) -> Option<f64> {
        self.macro_average.get(&k).copied()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Cell-wise `b − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub cutoffs: Vec<usize>,
    pub rows: Vec<(String, BTreeMap<usize, f64>)>,
    pub macro_delta: BTreeMap<usize, f64>,
    pub macro_delta_all: BTreeMap<usize, f64>,
}

impl DeltaTable {
    pub fn nonzero_cells(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|(_, r)| r.values())
            .filter(|d| **d != 0.0)
            .count()
    }
}

fn diff(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    a.iter()
        .filter_map(|(k, va)| b.get(k).map(|vb| (*k, vb - va)))
        .collect()
}

pub fn compare_reports(a: &RecallReport, b: &RecallReport) -> Result<DeltaTable> {
    let ids = |r: &RecallReport| {
        r.tasks
            .iter()
            .map(|t| t.task_id.clone())
            .collect::<Vec<_>>()
    };
    if ids(a) != ids(b) {
        return Err(Error::ReportMismatch(
            "reports cover different tasks".into(),
        ));
    }
    if a.cutoffs != b.cutoffs {
        return Err(Error::ReportMismatch(
            "reports use different cutoffs".into(),
        ));
    }
    Ok(DeltaTable {
        cutoffs: a.cutoffs.clone(),
        rows: a
            .tasks
            .iter()
            .zip(&b.tasks)
            .map(|(ta, tb)| (ta.task_id.clone(), diff(&ta.recall, &tb.recall)))
            .collect(),
        macro_delta: diff(&a.macro_average, &b.macro_average),
        macro_delta_all: diff(&a.macro_average_all, &b.macro_average_all),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format {other}"))),
        }
    }
}

/// Columns are `task` then `R@k` per cutoff, tasks in report order, followed
/// by the two macro rows. CSV carries full-precision fractions; markdown
/// shows percentages to two decimals.
pub fn render_report(report: &RecallReport, format: ReportFormat) -> String {
    let mut out = String::new();
    let cutoffs = &report.cutoffs;
    let header: Vec<String> = cutoffs.iter().map(|k| format!("R@{k}")).collect();
    let cell = |m: &BTreeMap<usize, f64>, k: usize, format: ReportFormat| match (m.get(&k), format)
    {
        (Some(v), ReportFormat::Csv) => format!("{v}"),
        (Some(v), ReportFormat::Markdown) => format!("{:.2}", v * 100.0),
        (None, _) => String::new(),
    };
    let mut rows: Vec<(String, &BTreeMap<usize, f64>)> = report
        .tasks
        .iter()
        .map(|t| {
            let name = if t.advisory && format == ReportFormat::Markdown {
                format!("{} (advisory)", t.name)
            } else {
                t.name.clone()
            };
            (name, &t.recall)
        })
        .collect();
    if !report.tasks.is_empty() {
        rows.push(("Average".into(), &report.macro_average));
        rows.push(("Average (all)".into(), &report.macro_average_all));
    }
    match format {
        ReportFormat::Csv => {
            let _ = writeln!(out, "task,{}", header.join(","));
            for (name, m) in rows {
                let cells: Vec<String> = cutoffs.iter().map(|&k| cell(m, k, format)).collect();
                let _ = writeln!(out, "{},{}", csv_field(&name), cells.join(","));
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| Task | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(cutoffs.len()));
            for (name, m) in rows {
                let cells: Vec<String> = cutoffs.iter().map(|&k| cell(m, k, format)).collect();
                let _ = writeln!(out, "| {} | {} |", name, cells.join(" | "));
            }
        }
    }
    out
}

/// Renders a [`DeltaTable`] in the report layout. Markdown shows signed
/// percentage points.
pub fn render_delta(delta: &DeltaTable, names: &[String], format: ReportFormat) -> String {
    let mut out = String::new();
    let header: Vec<String> = delta
        .cutoffs
        .iter()
        .map(|k| format!("\u{394}R@{k}"))
        .collect();
    let cell = |m: &BTreeMap<usize, f64>, k: usize| match (m.get(&k), format) {
        (Some(v), ReportFormat::Csv) => format!("{v}"),
        (Some(v), ReportFormat::Markdown) => format!("{:+.2}", v * 100.0),
        (None, _) => String::new(),
    };
    let mut rows: Vec<(&str, &BTreeMap<usize, f64>)> = delta
        .rows
        .iter()
        .zip(names)
        .map(|((_, m), n)| (n.as_str(), m))
        .collect();
    if !delta.rows.is_empty() {
        rows.push(("Average", &delta.macro_delta));
        rows.push(("Average (all)", &delta.macro_delta_all));
    }
    match format {
        ReportFormat::Csv => {
            let _ = writeln!(out, "task,{}", header.join(","));
            for (name, m) in rows {
                let cells: Vec<String> = delta.cutoffs.iter().map(|&k| cell(m, k)).collect();
                let _ = writeln!(out, "{},{}", csv_field(name), cells.join(","));
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| Task | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(delta.cutoffs.len()));
            for (name, m) in rows {
                let cells: Vec<String> = delta.cutoffs.iter().map(|&k| cell(m, k)).collect();
                let _ = writeln!(out, "| {} | {} |", name, cells.join(" | "));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Parses the numeric body of a CSV report back into `(row name, values)`.
pub fn parse_csv(text: &str) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut lines = text.lines();
    lines.next();
    lines
        .map(|line| {
            let (name, rest) = if let Some(stripped) = line.strip_prefix('"') {
                let mut name = String::new();
                let mut chars = stripped.char_indices().peekable();
                let rest = loop {
                    match chars.next() {
                        Some((_, '"')) if matches!(chars.peek(), Some((_, '"'))) => {
                            chars.next();
                            name.push('"');
                        }
                        Some((i, '"')) if stripped[i + 1..].starts_with(',') => {
                            break &stripped[i + 2..];
                        }
                        Some((_, c)) => name.push(c),
                        None => return Err(Error::ReportMismatch(format!("bad row: {line}"))),
                    }
                };
                (name, rest)
            } else {
                let (n, r) = line
                    .split_once(',')
                    .ok_or_else(|| Error::ReportMismatch(format!("bad row: {line}")))?;
                (n.to_owned(), r)
            };
            let vals = rest
                .split(',')
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::ReportMismatch(format!("{c}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((name, vals))
        })
        .collect()
}
