//! Attacks taken at several points along one training run.

use invlab_core::defense::{train_with_hook, TrainConfig};
use invlab_core::metrics::median;
use invlab_core::nn::build_classifier;
use invlab_core::Classifier;

use super::common::{attack_and_score, model_config, run_seeds, Extras, RepeatData};
use super::{stat, JobOutput};
use crate::config::{ExperimentConfig, Variant};
use crate::error::{Result, VariantContext};
use crate::report::ExperimentReport;

pub(crate) fn checkpoint_name(variant: &str, epoch: usize) -> String {
    format!("{variant}@{epoch:04}")
}

pub(crate) fn job(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData) -> Result<JobOutput> {
    let checkpoints = cfg.sweep.checkpoints()?;
    let seeds = run_seeds(cfg, rd, &variant.name);
    let mc = model_config(cfg, variant, rd, seeds.model);
    let mut model = build_classifier::<f64>(&mc).in_variant(&variant.name)?;
    let tc = TrainConfig {
        seed: seeds.train,
        ..cfg.train.clone()
    };
    let mut snapshots: Vec<(usize, Classifier)> = Vec::new();
    train_with_hook(&mut model, &rd.data.train, None, &variant.defense, &tc, |epoch, m| {
        if checkpoints.contains(&epoch) {
            snapshots.push((epoch, m.clone()));
        }
        Ok(())
    })
    .in_variant(&variant.name)?;

    let mut out = JobOutput::default();
    for (epoch, snap) in &snapshots {
        let name = checkpoint_name(&variant.name, *epoch);
        let mut extras = Extras::default();
        extras.put("epoch", *epoch as f64);
        let (record, trace) = attack_and_score(cfg, rd, &name, seeds, snap, extras)?;
        out.records.push(record);
        out.tables.push(trace);
    }
    Ok(out)
}

pub(crate) fn finish(report: &mut ExperimentReport) {
    let mut conf = Vec::new();
    let mut acc = Vec::new();
    for row in &report.rows {
        if let (Some(c), Some(a)) = (row.mean_confidence, row.acc_at_1) {
            conf.push(c);
            acc.push(a);
        }
    }
    let increasing = conf.windows(2).all(|w| w[1] > w[0]);
    report
        .statistics
        .insert("confidence_increasing".into(), if increasing { 1.0 } else { 0.0 });
    report.statistics.insert("checkpoints".into(), conf.len() as f64);
    stat(report, "spearman_confidence_acc_at_1", &conf, &acc);

    // per-repeat correlations, for spread
    let mut per_repeat = Vec::new();
    for rep in 0..report.config.repeats {
        let (mut c, mut a) = (Vec::new(), Vec::new());
        for r in report.runs.iter().filter(|r| r.repeat == rep) {
            if let Some(row) = &r.row {
                if let (Some(x), Some(y)) = (row.mean_confidence, row.acc_at_1) {
                    c.push(x);
                    a.push(y);
                }
            }
        }
        if let Ok(s) = invlab_core::metrics::spearman(&c, &a) {
            if s.is_finite() {
                per_repeat.push(s);
            }
        }
    }
    if !per_repeat.is_empty() {
        report
            .statistics
            .insert("spearman_confidence_acc_at_1_repeat_median".into(), median(&per_repeat));
    }
}
