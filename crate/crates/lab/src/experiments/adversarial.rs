//! FGSM, PGD and BIM against trained variants.

use invlab_core::attack::{attack_success_rate, fgsm, linf_distance, pgd, AdvConfig};
use invlab_core::metrics::{mean_confidence, MetricRow};

use super::common::{run_seeds, train_variant, Extras, RepeatData};
use super::JobOutput;
use crate::config::{ExperimentConfig, Variant};
use crate::error::{Result, VariantContext};
use crate::report::{finite, RunRecord};

pub(crate) fn job(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData) -> Result<JobOutput> {
    let name = variant.name.as_str();
    let seeds = run_seeds(cfg, rd, name);
    let (model, report) = train_variant(cfg, variant, rd, &seeds)?;
    let adv = AdvConfig {
        seed: seeds.attack,
        ..cfg.sweep.adv()?.clone()
    };
    adv.validate().in_variant(name)?;
    let x = &rd.data.test.features;
    let y = &rd.data.test.labels;
    let t = adv.targeted;

    let x_fgsm = fgsm(&model, x, y, &adv).in_variant(name)?;
    let x_pgd = pgd(&model, x, y, &adv).in_variant(name)?;
    let x_bim = pgd(&model, x, y, &adv.clone().bim()).in_variant(name)?;
    let zero = AdvConfig {
        eps: 0.0,
        ..adv.clone()
    };
    let still = linf_distance(&fgsm(&model, x, y, &zero)?, x).max(linf_distance(&pgd(&model, x, y, &zero)?, x));

    let clean_acc = model.accuracy(x, y)?;
    let mut extras = Extras::default();
    extras
        .put("eps", adv.eps)
        .put("clean_error", 1.0 - clean_acc)
        .put("fgsm_asr", attack_success_rate(&model, &x_fgsm, y, t)?)
        .put("pgd_asr", attack_success_rate(&model, &x_pgd, y, t)?)
        .put("bim_asr", attack_success_rate(&model, &x_bim, y, t)?)
        .put("fgsm_linf", linf_distance(&x_fgsm, x))
        .put("pgd_linf", linf_distance(&x_pgd, x))
        .put("bim_linf", linf_distance(&x_bim, x))
        .put("eps0_linf", still)
        .put("train_accuracy", report.train_accuracy);
    let row = MetricRow {
        mean_confidence: finite(mean_confidence(&model, &rd.data.train)?),
        ..MetricRow::new(name, clean_acc)
    };
    Ok(JobOutput {
        records: vec![RunRecord {
            variant: name.to_string(),
            repeat: rd.repeat,
            seeds,
            row: Some(row),
            extras: extras.into_map(),
            trace_file: None,
        }],
        tables: Vec::new(),
    })
}
