use rand::seq::IndexedRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::ClassifierModel;
use crate::scalar::Scalar;
use crate::seed;

/// Starting point of the input-space search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitPolicy {
    /// Independent `N(mean, std²)` coordinates.
    RandomGaussian {
        #[serde(default)]
        mean: f64,
        std: f64,
    },
    /// A training sample of `class`, drawn with the attack seed.
    SampleFromClass {
        class: usize,
    },
    Fixed {
        point: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    None,
    /// Squared distance to the starting point.
    L2ToInit,
}

/// Classification term of the inversion objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionLoss {
    /// `−log ŷ_target`.
    #[default]
    NegLogProb,
    /// `max_{j≠target} z_j − z_target` on the logits.
    MaxMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub target: usize,
    pub steps: usize,
    pub lr: f64,
    pub init: InitPolicy,
    #[serde(default)]
    pub loss: InversionLoss,
    #[serde(default)]
    pub prior_weight: f64,
    #[serde(default)]
    pub prior: PriorKind,
    #[serde(default)]
    pub momentum: f64,
    /// Box the iterate is clipped into after every step.
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
    pub seed: u64,
}

impl InversionConfig {
    pub fn new(target: usize, steps: usize, init: InitPolicy, seed: u64) -> Self {
        Self {
            target,
            steps,
            lr: 0.05,
            init,
            loss: InversionLoss::NegLogProb,
            prior_weight: 0.0,
            prior: PriorKind::None,
            momentum: 0.0,
            clip: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) && self.steps > 0 {
            return Err(Error::validation("lr", "must be positive"));
        }
        if !(self.prior_weight >= 0.0) {
            return Err(Error::validation("prior_weight", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", "must lie in [0, 1)"));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::validation("clip", "lower bound must be below upper bound"));
            }
        }
        if let InitPolicy::RandomGaussian { std, .. } = self.init {
            if !(std >= 0.0) {
                return Err(Error::validation("init.std", "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: usize,
    pub seed: u64,
    pub init: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// Target-class probability at the iterate entering each step.
    pub confidence_trace: Vec<f64>,
    /// L2 norm of the loss gradient with respect to the input at each step.
    pub grad_norm_trace: Vec<f64>,
    pub final_confidence: f64,
    pub final_loss: f64,
}

impl AttackResult {
    pub fn steps(&self) -> usize {
        self.confidence_trace.len()
    }

    /// `step,confidence,grad_norm` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,confidence,grad_norm\n");
        for (i, (c, g)) in self.confidence_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            out.push_str(&format!("{i},{c:e},{g:e}\n"));
        }
        out
    }
}

fn initial_point<T: Scalar>(
    model: &ClassifierModel<T>,
    cfg: &InversionConfig,
    pool: Option<&LabeledDataset<T>>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<T>> {
    let d = model.input_dim();
    match &cfg.init {
        InitPolicy::RandomGaussian { mean, std } => Ok((0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(mean + z * std)
            })
            .collect()),
        InitPolicy::SampleFromClass { class } => {
            let pool = pool.ok_or_else(|| Error::Attack("sample-from-class init needs a data pool".into()))?;
            let idx = pool.indices_of(*class);
            let &i = idx
                .choose(rng)
                .ok_or_else(|| Error::Attack(format!("no samples of class {class} in the pool")))?;
            Ok(pool.features.row(i).to_vec())
        }
        InitPolicy::Fixed { point } => {
            if point.len() != d {
                return Err(Error::Shape {
                    op: "invert.init",
                    left: vec![d],
                    right: vec![point.len()],
                });
            }
            Ok(point.iter().map(|&v| T::lit(v)).collect())
        }
    }
}

struct Probe<T> {
    loss: T,
    confidence: T,
    grad: Vec<T>,
}

fn probe<T: Scalar>(model: &ClassifierModel<T>, cfg: &InversionConfig, x: &[T], x0: &[T]) -> Result<Probe<T>> {
    let d = x.len();
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let xv = tape.variable(vec![1, d], x.to_vec())?;
    let fwd = model.record::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, xv, None)?;
    let lp = tape.log_softmax(fwd.logits);
    let picked = tape.gather(lp, &[cfg.target])?;
    let lt = tape.sum(picked);
    let confidence = tape.scalar(lt).exp();
    let mut loss = match cfg.loss {
        InversionLoss::NegLogProb => tape.scale(lt, -T::one()),
        InversionLoss::MaxMargin => {
            let z = tape.value(fwd.logits).to_vec();
            let rival = (0..z.len())
                .filter(|&j| j != cfg.target)
                .max_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap_or(std::cmp::Ordering::Equal))
                .ok_or_else(|| Error::Attack("max-margin loss needs at least two classes".into()))?;
            let zt = tape.gather(fwd.logits, &[cfg.target])?;
            let zr = tape.gather(fwd.logits, &[rival])?;
            let margin = tape.sub(zr, zt)?;
            tape.sum(margin)
        }
    };
    if cfg.prior == PriorKind::L2ToInit && cfg.prior_weight > 0.0 {
        let anchor = tape.constant(vec![1, d], x0.to_vec())?;
        let diff = tape.sub(xv, anchor)?;
        let sq = tape.mul(diff, diff)?;
        let sq = tape.sum(sq);
        let prior = tape.scale(sq, T::lit(cfg.prior_weight));
        loss = tape.add(loss, prior)?;
    }
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Ok(Probe {
            loss: value,
            confidence,
            grad: vec![T::zero(); d],
        });
    }
    tape.backward(loss)?;
    let grad = tape.grad(xv).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); d]);
    Ok(Probe {
        loss: value,
        confidence,
        grad,
    })
}

/// Gradient descent in input space on `−log ŷ_target(x) + λ·prior(x)`.
///
/// The model is read through constant nodes, so its parameters and gradients
/// are never touched.
pub fn invert<T: Scalar>(
    model: &ClassifierModel<T>,
    cfg: &InversionConfig,
    pool: Option<&LabeledDataset<T>>,
) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.target >= model.classes() {
        return Err(Error::Attack(format!(
            "target class {} out of range for {} classes",
            cfg.target,
            model.classes()
        )));
    }
    let mut rng = seed::rng(cfg.seed);
    let x0 = initial_point(model, cfg, pool, &mut rng)?;
    let mut x = x0.clone();
    let mut velocity = vec![T::zero(); x.len()];
    let lr = T::lit(cfg.lr);
    let momentum = T::lit(cfg.momentum);
    let mut confidence_trace = Vec::with_capacity(cfg.steps);
    let mut grad_norm_trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let p = probe(model, cfg, &x, &x0)?;
        if !p.loss.is_finite() {
            return Err(Error::Attack(format!("non-finite inversion loss at step {step}")));
        }
        confidence_trace.push(p.confidence.as_f64());
        grad_norm_trace.push(p.grad.iter().map(|&g| g * g).sum::<T>().sqrt().as_f64());
        for ((xi, vi), &g) in x.iter_mut().zip(velocity.iter_mut()).zip(&p.grad) {
            *vi = momentum * *vi + g;
            *xi = *xi - lr * *vi;
            if let Some((lo, hi)) = cfg.clip {
                *xi = xi.max(T::lit(lo)).min(T::lit(hi));
            }
        }
    }

    let last = probe(model, cfg, &x, &x0)?;
    Ok(AttackResult {
        target: cfg.target,
        seed: cfg.seed,
        init: x0.iter().map(|v| v.as_f64()).collect(),
        reconstruction: x.iter().map(|v| v.as_f64()).collect(),
        confidence_trace,
        grad_norm_trace,
        final_confidence: last.confidence.as_f64(),
        final_loss: last.loss.as_f64(),
    })
}

/// Seed of the `index`-th inversion against `class`.
pub fn inversion_seed(base: u64, class: usize, index: usize) -> u64 {
    seed::derive_seed(base, &format!("invert/class-{class}"), index as u64)
}

/// `per_class` independent inversions for every class in `classes`.
pub fn invert_batch<T: Scalar>(
    model: &ClassifierModel<T>,
    classes: &[usize],
    per_class: usize,
    cfg: &InversionConfig,
    pool: Option<&LabeledDataset<T>>,
) -> Result<Vec<AttackResult>> {
    if let Some(&c) = classes.iter().find(|&&c| c >= model.classes()) {
        return Err(Error::Attack(format!("class {c} out of range")));
    }
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &class in classes {
        for i in 0..per_class {
            let run = InversionConfig {
                target: class,
                seed: inversion_seed(cfg.seed, class, i),
                ..cfg.clone()
            };
            out.push(invert(model, &run, pool)?);
        }
    }
    Ok(out)
}

/// Reconstructions stacked as a `k × d` tensor.
pub fn reconstructions<T: Scalar>(results: &[AttackResult]) -> Result<Tensor<T>> {
    let rows: Vec<Vec<T>> = results
        .iter()
        .map(|r| r.reconstruction.iter().map(|&v| T::lit(v)).collect())
        .collect();
    Tensor::from_rows(&rows)
}

/// Step-wise mean of the gradient-norm traces.
pub fn mean_grad_trace(results: &[AttackResult]) -> Vec<f64> {
    let Some(len) = results.iter().map(|r| r.grad_norm_trace.len()).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|i| results.iter().map(|r| r.grad_norm_trace[i]).sum::<f64>() / results.len() as f64)
        .collect()
}
