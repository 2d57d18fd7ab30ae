//! Numeric location of the confidence-adaptation loss minimum.

use invlab_core::defense::{ca_derivative, ca_minimizer, ca_second_derivative, ca_value};
use invlab_core::metrics::golden_section_min;
use invlab_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use super::JobOutput;
use crate::config::{ExperimentConfig, Variant};
use crate::error::{LabError, Result};
use crate::report::{ExperimentReport, RunRecord, RunSeeds, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub a: f64,
    pub b: f64,
    /// Golden-section estimate on the loss itself.
    pub bracketed: f64,
    /// The estimate after Newton polishing on the derivative.
    pub minimizer: f64,
    pub expected: f64,
    pub abs_error: f64,
    pub derivative: f64,
    pub second_derivative: f64,
}

/// Minimizes `a·t^b·ln t` over `(0, 1]` without using the closed form.
pub fn calibrate_b(a: f64, b: f64) -> Result<CalibrationPoint> {
    if !(a > 0.0 && b > 0.0) {
        return Err(LabError::usage(format!(
            "calibration needs a > 0 and b > 0, got a = {a}, b = {b}"
        )));
    }
    let bracketed = golden_section_min(|t| ca_value(t, a, b), 1e-12, 1.0, 1e-12);
    // the loss is flat to machine precision near its minimum, so finish on f'
    let mut t = bracketed;
    for _ in 0..50 {
        let d2 = ca_second_derivative(t, a, b);
        if !(d2 > 0.0) {
            break;
        }
        let next = (t - ca_derivative(t, a, b) / d2).clamp(1e-12, 1.0);
        if next == t {
            break;
        }
        t = next;
    }
    let expected = ca_minimizer(b)?;
    Ok(CalibrationPoint {
        a,
        b,
        bracketed,
        minimizer: t,
        expected,
        abs_error: (t - expected).abs(),
        derivative: ca_derivative(t, a, b),
        second_derivative: ca_second_derivative(t, a, b),
    })
}

pub(crate) fn job(cfg: &ExperimentConfig, variant: &Variant, repeat: usize) -> Result<JobOutput> {
    let b: f64 = variant
        .name
        .strip_prefix("b=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            LabError::usage(format!(
                "calibration variant `{}` is not of the form b=<value>",
                variant.name
            ))
        })?;
    let p = calibrate_b(cfg.sweep.a()?, b)?;
    let seed = derive_seed(cfg.seed, &variant.name, repeat as u64);
    let extras = [
        ("a", p.a),
        ("b", p.b),
        ("bracketed", p.bracketed),
        ("minimizer", p.minimizer),
        ("expected", p.expected),
        ("abs_error", p.abs_error),
        ("derivative", p.derivative),
        ("second_derivative", p.second_derivative),
    ]
    .into_iter()
    .filter(|(_, v)| v.is_finite())
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok(JobOutput {
        records: vec![RunRecord {
            variant: variant.name.clone(),
            repeat,
            seeds: RunSeeds {
                data: seed,
                model: seed,
                train: seed,
                attack: seed,
                eval: seed,
            },
            row: None,
            extras,
            trace_file: None,
        }],
        tables: Vec::new(),
    })
}

pub(crate) fn finish(report: &mut ExperimentReport, tables: &mut Vec<Table>) {
    let cols = [
        "b",
        "a",
        "bracketed",
        "minimizer",
        "expected",
        "abs_error",
        "derivative",
        "second_derivative",
    ];
    let mut rows = Vec::new();
    let (mut max_err, mut max_d, mut min_d2) = (0.0f64, 0.0f64, f64::INFINITY);
    for r in report.runs.iter().filter(|r| r.repeat == 0) {
        let get = |k: &str| r.extras.get(k).copied().unwrap_or(f64::NAN);
        max_err = max_err.max(get("abs_error"));
        max_d = max_d.max(get("derivative").abs());
        min_d2 = min_d2.min(get("second_derivative"));
        rows.push(cols.iter().map(|c| get(c)).collect());
    }
    for (k, v) in [
        ("max_abs_error", max_err),
        ("max_abs_derivative", max_d),
        ("min_second_derivative", min_d2),
    ] {
        if v.is_finite() {
            report.statistics.insert(k.into(), v);
        }
    }
    tables.push(Table {
        file: "calibration.csv".into(),
        header: cols.map(String::from).to_vec(),
        rows,
    });
}
