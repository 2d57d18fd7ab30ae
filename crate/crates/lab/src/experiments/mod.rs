//! The named experiments and the driver that runs them.

mod adversarial;
mod autoencoder;
mod calibration;
mod common;
mod confidence;

use std::collections::BTreeMap;
use std::time::Instant;

use invlab_core::defense::DefenseConfig;
use invlab_core::metrics::spearman;
use invlab_core::nn::HeadConfig;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, Variant};
use crate::error::{LabError, Result};
use crate::report::{finite, summarize, ExperimentReport, RunOutput, RunRecord, Table, TOOL_VERSION};
use common::{attack_and_score, confidence_grid, prepare_repeat, run_seeds, train_variant, Extras, RepeatData};

pub use calibration::{calibrate_b, CalibrationPoint};

/// Variants an experiment trains: the sweep expansion followed by any
/// explicitly listed in the config.
pub fn variants_for(cfg: &ExperimentConfig) -> Result<Vec<Variant>> {
    let plain = |name: String, head: HeadConfig| Variant::new(&name, head, DefenseConfig::None);
    let mut out = match cfg.experiment {
        ExperimentKind::RankSweep => {
            let act = cfg
                .sweep
                .activations
                .as_ref()
                .and_then(|a| a.first().copied())
                .unwrap_or(invlab_core::autodiff::Activation::Tanh);
            let mut v: Vec<Variant> = cfg
                .sweep
                .ranks()?
                .iter()
                .map(|&rank| plain(format!("r{rank}"), HeadConfig::LowRank { rank, activation: act }))
                .collect();
            v.push(plain("full".into(), HeadConfig::Standard));
            v
        }
        ExperimentKind::ActivationSweep => {
            let rank = cfg.sweep.head_rank()?;
            cfg.sweep
                .activations()?
                .iter()
                .map(|&activation| plain(activation.name().into(), HeadConfig::LowRank { rank, activation }))
                .collect()
        }
        ExperimentKind::AeRankSweep => cfg
            .sweep
            .ranks()?
            .iter()
            .map(|r| plain(format!("r{r}"), HeadConfig::Standard))
            .collect(),
        ExperimentKind::Calibration => cfg
            .sweep
            .b_values()?
            .iter()
            .map(|b| plain(format!("b={b}"), HeadConfig::Standard))
            .collect(),
        _ => Vec::new(),
    };
    out.extend(cfg.variants.iter().cloned());
    if out.is_empty() {
        return Err(LabError::usage(format!("{} has no variants to run", cfg.experiment)));
    }
    if cfg.experiment == ExperimentKind::ConfidenceSweep {
        out.truncate(1);
    }
    let mut names: Vec<&str> = out.iter().map(|v| v.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(LabError::usage("variant names must be unique"));
    }
    Ok(out)
}

/// Output of one (variant, repeat) job.
#[derive(Default)]
pub(crate) struct JobOutput {
    pub records: Vec<RunRecord>,
    pub tables: Vec<Table>,
}

fn attack_job(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData) -> Result<JobOutput> {
    let seeds = run_seeds(cfg, rd, &variant.name);
    let (model, report) = train_variant(cfg, variant, rd, &seeds)?;
    let mut extras = Extras::default();
    extras
        .put("train_accuracy", report.train_accuracy)
        .put("ca_clamps", report.ca_clamps as f64);
    let (record, trace) = attack_and_score(cfg, rd, &variant.name, seeds, &model, extras)?;
    let mut out = JobOutput {
        records: vec![record],
        tables: vec![trace],
    };
    if let Some(side) = cfg.grid {
        if rd.data.train.dim() == 2 && rd.repeat == 0 {
            out.tables.push(confidence_grid(&model, rd, &variant.name, side)?);
        }
    }
    Ok(out)
}

fn job(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData) -> Result<JobOutput> {
    match cfg.experiment {
        ExperimentKind::Toy2dDefenseGrid
        | ExperimentKind::RankSweep
        | ExperimentKind::ActivationSweep
        | ExperimentKind::DefenseCompare => attack_job(cfg, variant, rd),
        ExperimentKind::ConfidenceSweep => confidence::job(cfg, variant, rd),
        ExperimentKind::AeRankSweep => autoencoder::job(cfg, variant, rd),
        ExperimentKind::AdvProbe => adversarial::job(cfg, variant, rd),
        ExperimentKind::Calibration => calibration::job(cfg, variant, rd.repeat),
    }
}

fn needs_data(kind: ExperimentKind) -> bool {
    kind != ExperimentKind::Calibration
}

fn needs_eval(kind: ExperimentKind) -> bool {
    !matches!(kind, ExperimentKind::Calibration | ExperimentKind::AdvProbe)
}

/// Runs `cfg` on a pool of `jobs` threads. Results do not depend on `jobs`.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::usage(format!("thread pool: {e}")))?;
    pool.install(|| run_serial_join(cfg))
}

fn run_serial_join(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let variants = variants_for(cfg)?;
    let kind = cfg.experiment;

    let outputs: Vec<JobOutput> = if needs_data(kind) {
        let repeats: Vec<RepeatData> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| prepare_repeat(cfg, &variants, r, needs_eval(kind)))
            .collect::<Result<_>>()?;
        let pairs: Vec<(&RepeatData, &Variant)> = repeats
            .iter()
            .flat_map(|rd| variants.iter().map(move |v| (rd, v)))
            .collect();
        pairs
            .into_par_iter()
            .map(|(rd, v)| job(cfg, v, rd))
            .collect::<Result<_>>()?
    } else {
        let pairs: Vec<(usize, &Variant)> = (0..cfg.repeats)
            .flat_map(|r| variants.iter().map(move |v| (r, v)))
            .collect();
        pairs
            .into_par_iter()
            .map(|(r, v)| calibration::job(cfg, v, r))
            .collect::<Result<_>>()?
    };

    let mut runs = Vec::new();
    let mut tables = Vec::new();
    for o in outputs {
        runs.extend(o.records);
        tables.extend(o.tables);
    }
    let (rows, aggregates) = summarize(&runs);
    let mut report = ExperimentReport {
        tool_version: TOOL_VERSION.to_string(),
        experiment: kind,
        base_seed: cfg.seed,
        config: cfg.clone(),
        rows,
        aggregates,
        statistics: BTreeMap::new(),
        runs,
        notes: Vec::new(),
        wall_clock_secs: 0.0,
    };
    finish(&mut report, &variants, &mut tables)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(RunOutput { report, tables })
}

fn stat(report: &mut ExperimentReport, key: &str, xs: &[f64], ys: &[f64]) {
    if xs.len() >= 2 && xs.len() == ys.len() {
        if let Some(v) = spearman(xs, ys).ok().and_then(finite) {
            report.statistics.insert(key.to_string(), v);
        }
    }
}

/// Cross-variant statistics and notes.
fn finish(report: &mut ExperimentReport, variants: &[Variant], tables: &mut Vec<Table>) -> Result<()> {
    let has_attack = !matches!(
        report.experiment,
        ExperimentKind::AeRankSweep | ExperimentKind::AdvProbe | ExperimentKind::Calibration
    );
    if has_attack {
        report
            .notes
            .push("gradient norm: per-sample L2 norm of the input gradient, averaged over the attacked batch".into());
        if let Some(k) = report.rows.first().and_then(|r| r.k) {
            report.notes.push(format!("acc_at_k uses k = {k}"));
        }
    }
    match report.experiment {
        ExperimentKind::RankSweep => {
            let mut ranks = Vec::new();
            let mut acc = Vec::new();
            let mut atk = Vec::new();
            for v in variants {
                let (Some(r), Some(row)) = (report.aggregate(&v.name, "head_rank"), report.row(&v.name)) else {
                    continue;
                };
                ranks.push(r);
                acc.push(row.test_accuracy);
                atk.push(row.acc_at_1.unwrap_or(f64::NAN));
            }
            stat(report, "spearman_rank_test_accuracy", &ranks, &acc);
            stat(report, "spearman_rank_acc_at_1", &ranks, &atk);
        }
        ExperimentKind::ConfidenceSweep => confidence::finish(report),
        ExperimentKind::AeRankSweep => {
            let names: Vec<String> = variants.iter().map(|v| v.name.clone()).collect();
            let get = |key: &str| -> Vec<f64> {
                names
                    .iter()
                    .map(|n| report.aggregate(n, key).unwrap_or(f64::NAN))
                    .collect()
            };
            let (ranks, mse, reclass) = (get("rank"), get("mse"), get("reclass_accuracy"));
            stat(report, "spearman_rank_mse", &ranks, &mse);
            stat(report, "spearman_rank_reclass_accuracy", &ranks, &reclass);
        }
        ExperimentKind::Calibration => calibration::finish(report, tables),
        _ => {}
    }
    Ok(())
}
