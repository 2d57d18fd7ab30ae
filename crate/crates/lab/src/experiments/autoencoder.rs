//! Autoencoders with a swept bottleneck width.

use invlab_core::autodiff::Activation;
use invlab_core::metrics::ae_eval;
use invlab_core::nn::{build_autoencoder, train_autoencoder, AeTrainConfig, AutoencoderConfig};

use super::common::{run_seeds, Extras, RepeatData};
use super::JobOutput;
use crate::config::{ExperimentConfig, Variant};
use crate::error::{LabError, Result, VariantContext};
use crate::report::RunRecord;

fn rank_of(variant: &Variant) -> Result<usize> {
    variant
        .name
        .strip_prefix('r')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            LabError::usage(format!(
                "autoencoder variant `{}` is not of the form r<rank>",
                variant.name
            ))
        })
}

pub(crate) fn job(cfg: &ExperimentConfig, variant: &Variant, rd: &RepeatData) -> Result<JobOutput> {
    let name = variant.name.as_str();
    let rank = rank_of(variant)?;
    let seeds = run_seeds(cfg, rd, name);
    let eval = rd
        .eval
        .as_ref()
        .ok_or_else(|| LabError::usage("autoencoder scoring needs an eval model"))?;
    let ae_cfg = AutoencoderConfig {
        input_dim: rd.data.train.dim(),
        hidden: cfg.sweep.ae_hidden()?.to_vec(),
        rank,
        activation: Activation::Relu,
        seed: seeds.model,
    };
    let mut ae = build_autoencoder::<f64>(&ae_cfg).in_variant(name)?;
    let untrained = ae_eval(&ae, &rd.data.test, eval).in_variant(name)?;
    let tc = AeTrainConfig {
        seed: seeds.train,
        ..cfg.sweep.ae_train()?.clone()
    };
    let losses = train_autoencoder(&mut ae, &rd.data.train.features, &tc).in_variant(name)?;
    let score = ae_eval(&ae, &rd.data.test, eval).in_variant(name)?;
    let mut extras = Extras::default();
    extras
        .put("rank", rank as f64)
        .put("mse", score.mse)
        .put("reclass_accuracy", score.reclass_accuracy)
        .put("untrained_mse", untrained.mse)
        .put("final_train_loss", losses.last().copied().unwrap_or(f64::NAN))
        .put(
            "eval_clean_accuracy",
            eval.model.accuracy(&rd.data.test.features, &rd.data.test.labels)?,
        );
    Ok(JobOutput {
        records: vec![RunRecord {
            variant: name.to_string(),
            repeat: rd.repeat,
            seeds,
            row: None,
            extras: extras.into_map(),
            trace_file: None,
        }],
        tables: Vec::new(),
    })
}
