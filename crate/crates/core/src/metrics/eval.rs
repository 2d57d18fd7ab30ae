use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{LabeledDataset, Split};
use crate::defense::{train, DefenseConfig, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{build_classifier, AutoencoderModel, ClassifierModel, ModelConfig};
use crate::scalar::Scalar;

/// Independently trained classifier used only to score reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalModel<T> {
    pub model: ClassifierModel<T>,
}

impl<T: Scalar> EvalModel<T> {
    /// Wraps `model`, refusing an init seed shared with any target model.
    pub fn new(model: ClassifierModel<T>, target_seeds: &[u64]) -> Result<Self> {
        if target_seeds.contains(&model.config.seed) {
            return Err(Error::validation(
                "eval.seed",
                format!("seed {} is shared with a target model", model.config.seed),
            ));
        }
        let mut model = model;
        model.set_trainable(false);
        Ok(Self { model })
    }

    /// Builds and trains an undefended classifier on `data`.
    pub fn train(
        data: &LabeledDataset<T>,
        cfg: &ModelConfig,
        train_cfg: &TrainConfig,
        target_seeds: &[u64],
    ) -> Result<(Self, TrainReport)> {
        let mut model = build_classifier::<T>(cfg)?;
        let report = train(&mut model, data, None, &DefenseConfig::None, train_cfg)?;
        Ok((Self::new(model, target_seeds)?, report))
    }
}

/// `k` used in place of 5 for small label sets: `⌈N/2⌉` when `N < 6`.
pub fn secondary_k(classes: usize) -> usize {
    if classes < 6 {
        classes.div_ceil(2)
    } else {
        5
    }
}

/// Fraction of reconstructions whose target is in the eval model's top `k`.
pub fn topk_accuracy<T: Scalar>(eval: &EvalModel<T>, recons: &Tensor<T>, targets: &[usize], k: usize) -> Result<f64> {
    let n = eval.model.classes();
    if recons.rows() == 0 || recons.is_empty() {
        return Err(Error::contract("no reconstructions to score"));
    }
    if targets.len() != recons.rows() {
        return Err(Error::Shape {
            op: "topk_accuracy",
            left: vec![recons.rows()],
            right: vec![targets.len()],
        });
    }
    if k == 0 || k > n {
        return Err(Error::contract(format!("k = {k} outside 1..={n}")));
    }
    let logits = eval.model.logits(recons)?;
    let mut hits = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        // rank of the target: entries strictly above it, ties broken by index
        let above = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > row[t] || (v == row[t] && j < t))
            .count();
        if above < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Mean over reconstructions of the penultimate-feature distance to the
/// nearest private sample.
pub fn feature_distance<T: Scalar>(
    eval: &EvalModel<T>,
    recons: &Tensor<T>,
    private: &LabeledDataset<T>,
) -> Result<f64> {
    if recons.rows() == 0 || private.is_empty() {
        return Err(Error::contract("feature distance needs non-empty sets"));
    }
    let fr = eval.model.penultimate(recons)?;
    let fp = eval.model.penultimate(&private.features)?;
    nearest_mean(&fr, &fp)
}

/// Mean over rows of `a` of the distance to the nearest row of `b`.
pub fn nearest_mean<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "nearest_mean",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut total = 0.0;
    for i in 0..a.rows() {
        let ra = a.row(i);
        let best = (0..b.rows())
            .map(|j| {
                ra.iter()
                    .zip(b.row(j))
                    .map(|(&x, &y)| (x - y).as_f64().powi(2))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        total += best.sqrt();
    }
    Ok(total / a.rows() as f64)
}

/// Mean true-class probability.
pub fn mean_confidence<T: Scalar>(model: &ClassifierModel<T>, data: &LabeledDataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("mean confidence of an empty dataset"));
    }
    let p = model.probs(&data.features)?;
    let total: f64 = data.labels.iter().enumerate().map(|(i, &c)| p.get(i, c).as_f64()).sum();
    Ok(total / data.len() as f64)
}

/// Surrogate classifier used by [`kes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Knowledge extraction score: accuracy on `private` (restricted to the
/// attacked classes) of a fresh classifier trained only on reconstructions.
pub fn kes<T: Scalar>(
    recons: &Tensor<T>,
    targets: &[usize],
    attacked: &[usize],
    private: &LabeledDataset<T>,
    surrogate: &SurrogateConfig,
    seed: u64,
) -> Result<f64> {
    if let Some(c) = attacked.iter().find(|c| !targets.contains(c)) {
        return Err(Error::contract(format!("no reconstruction for attacked class {c}")));
    }
    let train_set = LabeledDataset::new(recons.clone(), targets.to_vec(), private.classes, Split::Train)?;
    let cfg = ModelConfig {
        seed,
        classes: private.classes,
        input_dim: private.dim(),
        ..surrogate.model.clone()
    };
    let mut model = build_classifier::<T>(&cfg)?;
    let tc = TrainConfig {
        seed,
        ..surrogate.train.clone()
    };
    train(&mut model, &train_set, None, &DefenseConfig::None, &tc)?;
    let held = private.restrict(attacked);
    if held.is_empty() {
        return Err(Error::contract("private set has none of the attacked classes"));
    }
    model.accuracy(&held.features, &held.labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeScore {
    pub mse: f64,
    pub reclass_accuracy: f64,
}

/// Reconstruction MSE on `test` and the eval model's accuracy on the
/// reconstructions against the true labels.
pub fn ae_eval<T: Scalar>(ae: &AutoencoderModel<T>, test: &LabeledDataset<T>, eval: &EvalModel<T>) -> Result<AeScore> {
    let rec = ae.forward(&test.features)?;
    let mse = rec
        .values()
        .iter()
        .zip(test.features.values())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / test.features.len().max(1) as f64;
    Ok(AeScore {
        mse,
        reclass_accuracy: eval.model.accuracy(&rec, &test.labels)?,
    })
}

/// One variant's line in a results table. Quantities an experiment does
/// not measure are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub test_accuracy: f64,
    pub acc_at_1: Option<f64>,
    pub acc_at_k: Option<f64>,
    /// The `k` behind `acc_at_k`.
    pub k: Option<usize>,
    pub delta_eval: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub terminal_grad_norm: Option<f64>,
    pub kes: Option<f64>,
}

impl MetricRow {
    pub fn new(variant: impl Into<String>, test_accuracy: f64) -> Self {
        Self {
            variant: variant.into(),
            test_accuracy,
            acc_at_1: None,
            acc_at_k: None,
            k: None,
            delta_eval: None,
            mean_confidence: None,
            terminal_grad_norm: None,
            kes: None,
        }
    }

    pub const FIELDS: [&'static str; 9] = [
        "variant",
        "test_accuracy",
        "acc_at_1",
        "acc_at_k",
        "k",
        "delta_eval",
        "mean_confidence",
        "terminal_grad_norm",
        "kes",
    ];
}
