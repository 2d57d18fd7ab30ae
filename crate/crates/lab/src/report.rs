use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use invlab_core::metrics::{median, MetricRow};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{LabError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seeds behind one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub data: u64,
    pub model: u64,
    pub train: u64,
    pub attack: u64,
    pub eval: u64,
}

/// One (variant, repeat) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub repeat: usize,
    pub seeds: RunSeeds,
    pub row: Option<MetricRow>,
    /// Experiment-specific scalars (distances, success rates, ranks...).
    pub extras: BTreeMap<String, f64>,
    /// Path of the attack trace, relative to the output directory.
    pub trace_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub experiment: ExperimentKind,
    pub base_seed: u64,
    pub config: ExperimentConfig,
    /// Per-variant medians over repeats.
    pub rows: Vec<MetricRow>,
    /// Per-variant medians of each extra.
    pub aggregates: BTreeMap<String, BTreeMap<String, f64>>,
    /// Experiment-level statistics (correlations and the like).
    pub statistics: BTreeMap<String, f64>,
    pub runs: Vec<RunRecord>,
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn runs_of<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    pub fn row(&self, variant: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn aggregate(&self, variant: &str, key: &str) -> Option<f64> {
        self.aggregates.get(variant)?.get(key).copied()
    }

    /// Values of `key` across repeats of `variant`.
    pub fn extra_values(&self, variant: &str, key: &str) -> Vec<f64> {
        self.runs_of(variant)
            .filter_map(|r| r.extras.get(key).copied())
            .collect()
    }
}

/// A plot-ready table written next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Path relative to the output directory.
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Everything `run` produced: the report plus the files it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub tables: Vec<Table>,
}

pub(crate) fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn median_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        finite(median(&v))
    }
}

/// Median row per variant, in first-appearance order.
pub(crate) fn summarize(runs: &[RunRecord]) -> (Vec<MetricRow>, BTreeMap<String, BTreeMap<String, f64>>) {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    let mut rows = Vec::new();
    let mut aggregates = BTreeMap::new();
    for name in order {
        let group: Vec<&RunRecord> = runs.iter().filter(|r| r.variant == name).collect();
        let measured: Vec<&MetricRow> = group.iter().filter_map(|r| r.row.as_ref()).collect();
        if let Some(first) = measured.first() {
            let m = |f: fn(&MetricRow) -> Option<f64>| median_of(measured.iter().map(|r| f(r)));
            rows.push(MetricRow {
                variant: name.to_string(),
                test_accuracy: m(|r| Some(r.test_accuracy)).unwrap_or(f64::NAN),
                acc_at_1: m(|r| r.acc_at_1),
                acc_at_k: m(|r| r.acc_at_k),
                k: first.k,
                delta_eval: m(|r| r.delta_eval),
                mean_confidence: m(|r| r.mean_confidence),
                terminal_grad_norm: m(|r| r.terminal_grad_norm),
                kes: m(|r| r.kes),
            });
        }
        let mut keys: Vec<&String> = group.iter().flat_map(|r| r.extras.keys()).collect();
        keys.sort_unstable();
        keys.dedup();
        let agg: BTreeMap<String, f64> = keys
            .into_iter()
            .filter_map(|k| median_of(group.iter().map(|r| r.extras.get(k).copied())).map(|v| (k.clone(), v)))
            .collect();
        if !agg.is_empty() {
            aggregates.insert(name.to_string(), agg);
        }
    }
    (rows, aggregates)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn metric_csv(rows: &[MetricRow], variant_rows: Option<&[(usize, &MetricRow)]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = MetricRow::FIELDS.to_vec();
    if variant_rows.is_some() {
        header.insert(1, "repeat");
    }
    w.write_record(&header)?;
    let line = |r: &MetricRow| {
        vec![
            r.variant.clone(),
            r.test_accuracy.to_string(),
            opt(r.acc_at_1),
            opt(r.acc_at_k),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            opt(r.delta_eval),
            opt(r.mean_confidence),
            opt(r.terminal_grad_norm),
            opt(r.kes),
        ]
    };
    match variant_rows {
        None => {
            for r in rows {
                w.write_record(line(r))?;
            }
        }
        Some(list) => {
            for (rep, r) in list {
                let mut l = line(r);
                l.insert(1, rep.to_string());
                w.write_record(l)?;
            }
        }
    }
    w.into_inner().map_err(|e| LabError::io("csv buffer", e.into_error()))
}

fn extras_csv(runs: &[RunRecord]) -> Result<Vec<u8>> {
    let mut keys: Vec<&String> = runs.iter().flat_map(|r| r.extras.keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string(), "repeat".to_string()];
    header.extend(keys.iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for r in runs {
        let mut line = vec![r.variant.clone(), r.repeat.to_string()];
        line.extend(keys.iter().map(|k| opt(r.extras.get(*k).copied())));
        w.write_record(&line)?;
    }
    w.into_inner().map_err(|e| LabError::io("csv buffer", e.into_error()))
}

fn table_csv(t: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&t.header)?;
    for row in &t.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| LabError::io("csv buffer", e.into_error()))
}

/// Writes every artifact of `out` under `dir`, the report last, and returns
/// the written paths. Existing files are overwritten.
pub fn emit(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let mut put = |rel: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(rel);
        write(&p, &bytes)?;
        paths.push(p);
        Ok(())
    };
    for t in &out.tables {
        put(&t.file, table_csv(t)?)?;
    }
    let report = &out.report;
    put("metrics.csv", metric_csv(&report.rows, None)?)?;
    let per_run: Vec<(usize, &MetricRow)> = report
        .runs
        .iter()
        .filter_map(|r| r.row.as_ref().map(|row| (r.repeat, row)))
        .collect();
    put("runs.csv", metric_csv(&[], Some(&per_run))?)?;
    put("extras.csv", extras_csv(&report.runs)?)?;
    for r in &report.runs {
        if let Some(f) = &r.trace_file {
            if !dir.join(f).is_file() {
                return Err(LabError::usage(format!("trace file {f} was not produced")));
            }
        }
    }
    put("config.json", report.config.echo()?.into_bytes())?;
    put("report.json", serde_json::to_string_pretty(report)?.into_bytes())?;
    Ok(paths)
}

/// Reads a report written by [`emit`].
pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
