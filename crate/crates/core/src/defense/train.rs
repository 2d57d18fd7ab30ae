use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{bido_loss, ca_loss, ce_loss, ls_loss, mid_kl, one_hot};
use crate::autodiff::{Adam, Optimizer, Sgd, Tape, Tensor};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::mean_confidence;
use crate::nn::{ClassifierModel, Head, HeadConfig};
use crate::scalar::Scalar;
use crate::seed;

/// Confidence-adaptation fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaConfig {
    pub a: f64,
    pub b: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Adds the cross-entropy term back during fine-tuning.
    #[serde(default)]
    pub keep_ce: bool,
}

impl Default for CaConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 8.0,
            epochs: 100,
            lr: 0.05,
            keep_ce: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseConfig {
    None,
    /// Low-rank tanh head with confidence-adaptation fine-tuning.
    Calor {
        ca: CaConfig,
        rank: usize,
    },
    LabelSmoothing {
        lambda: f64,
    },
    Mid {
        lambda: f64,
        latent: usize,
    },
    Bido {
        lambda_iz: f64,
        lambda_oz: f64,
        /// Number of encoder outputs used as dependency taps.
        taps: usize,
        /// Gaussian kernel width; median heuristic when absent.
        #[serde(default)]
        kernel_width: Option<f64>,
    },
    TransferLearning {
        freeze_ratio: f64,
    },
}

impl DefenseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::Calor { .. } => "calor",
            DefenseConfig::LabelSmoothing { .. } => "ls",
            DefenseConfig::Mid { .. } => "mid",
            DefenseConfig::Bido { .. } => "bido",
            DefenseConfig::TransferLearning { .. } => "tl",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseConfig::None => Ok(()),
            DefenseConfig::Calor { ref ca, rank } => {
                if !(ca.a > 0.0) {
                    return Err(Error::validation("a", "must be positive"));
                }
                if !(ca.b > 0.0) {
                    return Err(Error::validation("b", "must be positive"));
                }
                if rank == 0 {
                    return Err(Error::validation("rank", "must be positive"));
                }
                Ok(())
            }
            DefenseConfig::LabelSmoothing { lambda } => {
                if lambda > -1.0 && lambda < 1.0 {
                    Ok(())
                } else {
                    Err(Error::validation(
                        "lambda",
                        "label smoothing factor must lie in (-1, 1)",
                    ))
                }
            }
            DefenseConfig::Mid { lambda, latent } => {
                if !(lambda >= 0.0) {
                    return Err(Error::validation("lambda", "must be non-negative"));
                }
                if latent == 0 {
                    return Err(Error::validation("latent", "must be positive"));
                }
                Ok(())
            }
            DefenseConfig::Bido {
                lambda_iz,
                lambda_oz,
                taps,
                kernel_width,
            } => {
                if !(lambda_iz >= 0.0 && lambda_oz >= 0.0) {
                    return Err(Error::validation("lambda", "bido weights must be non-negative"));
                }
                if taps == 0 {
                    return Err(Error::validation("taps", "need at least one tap"));
                }
                if kernel_width.is_some_and(|w| !(w > 0.0)) {
                    return Err(Error::validation("kernel_width", "must be positive"));
                }
                Ok(())
            }
            DefenseConfig::TransferLearning { freeze_ratio } => {
                if (0.0..=1.0).contains(&freeze_ratio) {
                    Ok(())
                } else {
                    Err(Error::validation("freeze_ratio", "must lie in [0, 1]"))
                }
            }
        }
    }

    /// Head the defended model needs, given the head it would otherwise use.
    pub fn head_config(&self, base: HeadConfig) -> HeadConfig {
        match *self {
            DefenseConfig::Calor { rank, .. } => HeadConfig::low_rank_tanh(rank),
            DefenseConfig::Mid { latent, .. } => HeadConfig::Variational { latent },
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Epochs after which the learning rate is multiplied by 0.1.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
}

impl TrainConfig {
    pub fn sgd(epochs: usize, lr: f64, momentum: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            momentum,
            batch_size,
            seed,
            optimizer: OptimizerKind::Sgd,
            lr_milestones: Vec::new(),
        }
    }

    fn optimizer<T: Scalar>(&self, lr: f64) -> Optimizer<T> {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(T::lit(lr), T::lit(self.momentum))),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(T::lit(lr))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Fine-tuning losses (CALoR only).
    pub stage2_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Mean true-class probability on the training split.
    pub mean_confidence: f64,
    /// Samples whose confidence hit the log floor during fine-tuning.
    pub ca_clamps: usize,
    pub wall_clock_secs: f64,
}

/// Excludes the first `⌊ratio·L⌋` of `L` encoder layers from updates.
pub fn apply_tl_freeze<T: Scalar>(model: &mut ClassifierModel<T>, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::validation("freeze_ratio", "must lie in [0, 1]"));
    }
    let count = (ratio * model.encoder.len() as f64).floor() as usize;
    model.freeze_encoder_prefix(count);
    Ok(count)
}

#[derive(Clone, Copy)]
enum Objective<'a> {
    Stage1(&'a DefenseConfig),
    Adaptation(&'a CaConfig),
}

struct StepOutcome {
    loss: f64,
    clamped: usize,
}

fn batch_step<T: Scalar>(
    model: &mut ClassifierModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    objective: Objective<'_>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.leaf(x);
    let sampling = matches!(objective, Objective::Stage1(DefenseConfig::Mid { .. }));
    let fwd = model.record(&mut tape, &bound, xv, sampling.then_some(rng))?;
    let lp = tape.log_softmax(fwd.logits);
    let mut clamped = 0;
    let loss = match objective {
        Objective::Stage1(defense) => match *defense {
            DefenseConfig::None | DefenseConfig::Calor { .. } | DefenseConfig::TransferLearning { .. } => {
                ce_loss(&mut tape, lp, labels)?
            }
            DefenseConfig::LabelSmoothing { lambda } => ls_loss(&mut tape, lp, labels, T::lit(lambda))?,
            DefenseConfig::Mid { lambda, .. } => {
                let ce = ce_loss(&mut tape, lp, labels)?;
                let (mu, sigma) = fwd
                    .gaussian
                    .ok_or_else(|| Error::contract("mid defense needs a variational head"))?;
                let kl = mid_kl(&mut tape, mu, sigma)?;
                let kl = tape.scale(kl, T::lit(lambda));
                tape.add(ce, kl)?
            }
            DefenseConfig::Bido {
                lambda_iz,
                lambda_oz,
                taps,
                kernel_width,
            } => {
                let ce = ce_loss(&mut tape, lp, labels)?;
                let used = taps.min(fwd.taps.len());
                let y = tape.leaf(&one_hot(labels, model.classes()));
                bido_loss(
                    &mut tape,
                    ce,
                    xv,
                    &fwd.taps[..used],
                    y,
                    T::lit(lambda_iz),
                    T::lit(lambda_oz),
                    kernel_width.map(T::lit),
                )?
            }
        },
        Objective::Adaptation(ca) => {
            let probs = tape.exp(lp);
            let out = ca_loss(&mut tape, probs, labels, T::lit(ca.a), T::lit(ca.b))?;
            clamped = out.clamped;
            if ca.keep_ce {
                let ce = ce_loss(&mut tape, lp, labels)?;
                tape.add(out.loss, ce)?
            } else {
                out.loss
            }
        }
    };
    let value = tape.scalar(loss).as_f64();
    if !value.is_finite() {
        return Ok(StepOutcome { loss: value, clamped });
    }
    tape.backward(loss)?;
    model.absorb_grads(&tape, &bound)?;
    Ok(StepOutcome { loss: value, clamped })
}

fn run_epochs<T: Scalar>(
    model: &mut ClassifierModel<T>,
    data: &LabeledDataset<T>,
    objective: Objective<'_>,
    cfg: &TrainConfig,
    lr: f64,
    epochs: usize,
    epoch_offset: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
    hook: &mut dyn FnMut(usize, &ClassifierModel<T>) -> Result<()>,
) -> Result<(Vec<f64>, usize)> {
    let mut opt = cfg.optimizer::<T>(lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut losses = Vec::with_capacity(epochs);
    let mut clamps = 0;
    let mut current_lr = lr;
    for epoch in 0..epochs {
        if cfg.lr_milestones.contains(&epoch) {
            current_lr *= 0.1;
            opt.set_lr(T::lit(current_lr));
        }
        order.shuffle(rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            let x = data.features.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let out = batch_step(model, &x, &labels, objective, rng)?;
            if !out.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch_offset + epoch,
                    loss: out.loss,
                });
            }
            clamps += out.clamped;
            opt.step(&mut model.params_mut())?;
            total += out.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        losses.push(total / seen.max(1) as f64);
        hook(epoch_offset + epoch + 1, model)?;
    }
    Ok((losses, clamps))
}

/// Trains `model` in place under `defense`.
///
/// CALoR runs `cfg.epochs` of cross-entropy followed by `ca.epochs` of the
/// adaptation loss; every other defense is a single stage of its composite
/// objective. Mini-batches come from a shuffle seeded by `cfg.seed`.
pub fn train<T: Scalar>(
    model: &mut ClassifierModel<T>,
    data: &LabeledDataset<T>,
    test: Option<&LabeledDataset<T>>,
    defense: &DefenseConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_hook(model, data, test, defense, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch (1-based, counted across stages).
pub fn train_with_hook<T: Scalar>(
    model: &mut ClassifierModel<T>,
    data: &LabeledDataset<T>,
    test: Option<&LabeledDataset<T>>,
    defense: &DefenseConfig,
    cfg: &TrainConfig,
    mut hook: impl FnMut(usize, &ClassifierModel<T>) -> Result<()>,
) -> Result<TrainReport> {
    let started = Instant::now();
    defense.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Shape {
            op: "train",
            left: vec![model.input_dim()],
            right: vec![data.dim()],
        });
    }
    match (defense, &model.head) {
        (DefenseConfig::Mid { .. }, Head::Variational { .. }) => {}
        (DefenseConfig::Mid { .. }, _) => {
            return Err(Error::contract("mid defense needs a variational head"));
        }
        (DefenseConfig::Calor { .. }, Head::LowRank { .. }) => {}
        (DefenseConfig::Calor { .. }, _) => {
            return Err(Error::contract("calor defense needs a low-rank head"));
        }
        _ => {}
    }
    if let DefenseConfig::TransferLearning { freeze_ratio } = *defense {
        apply_tl_freeze(model, freeze_ratio)?;
    }

    let mut rng = seed::rng(cfg.seed);
    let (epoch_losses, _) = run_epochs(
        model,
        data,
        Objective::Stage1(defense),
        cfg,
        cfg.lr,
        cfg.epochs,
        0,
        &mut rng,
        &mut hook,
    )?;
    let mut stage2_losses = Vec::new();
    let mut ca_clamps = 0;
    if let DefenseConfig::Calor { ca, .. } = defense {
        let stage2 = TrainConfig {
            lr_milestones: Vec::new(),
            ..cfg.clone()
        };
        let (l, c) = run_epochs(
            model,
            data,
            Objective::Adaptation(ca),
            &stage2,
            ca.lr,
            ca.epochs,
            cfg.epochs,
            &mut rng,
            &mut hook,
        )?;
        stage2_losses = l;
        ca_clamps = c;
    }

    Ok(TrainReport {
        epoch_losses,
        stage2_losses,
        train_accuracy: model.accuracy(&data.features, &data.labels)?,
        test_accuracy: test.map(|t| model.accuracy(&t.features, &t.labels)).transpose()?,
        mean_confidence: mean_confidence(model, data)?,
        ca_clamps,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
