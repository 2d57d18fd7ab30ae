use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::defense::ce_loss;
use crate::error::{Error, Result};
use crate::nn::ClassifierModel;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    /// Aim for label `(y + 1) mod N` instead of any misclassification.
    #[serde(default)]
    pub targeted: bool,
    /// Valid input range, if any.
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl AdvConfig {
    /// PGD settings for inputs scaled to [0, 1].
    pub fn image_scaled() -> Self {
        Self {
            eps: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 10,
            random_start: true,
            targeted: false,
            clip: Some((0.0, 1.0)),
            seed: 0,
        }
    }

    /// PGD settings for the 2-D toy set.
    pub fn toy() -> Self {
        Self {
            eps: 0.1,
            alpha: 0.025,
            steps: 10,
            random_start: true,
            targeted: false,
            clip: None,
            seed: 0,
        }
    }

    /// Basic iterative method: PGD without the random start.
    pub fn bim(self) -> Self {
        Self {
            random_start: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) {
            return Err(Error::validation("eps", "must be non-negative"));
        }
        if self.steps > 0 && !(self.alpha > 0.0) {
            return Err(Error::validation("alpha", "must be positive when steps > 0"));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::validation("clip", "lower bound must be below upper bound"));
            }
        }
        Ok(())
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Labels the attack optimizes against.
pub fn attack_labels(y: &[usize], classes: usize, targeted: bool) -> Vec<usize> {
    if targeted {
        y.iter().map(|&c| (c + 1) % classes).collect()
    } else {
        y.to_vec()
    }
}

/// ∂CE/∂x for a batch, labels as given.
pub fn input_gradient<T: Scalar>(model: &ClassifierModel<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let xv = tape.variable(x.shape().to_vec(), x.values().to_vec())?;
    let fwd = model.record::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, xv, None)?;
    let lp = tape.log_softmax(fwd.logits);
    let loss = ce_loss(&mut tape, lp, labels)?;
    tape.backward(loss)?;
    let g = tape
        .grad(xv)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); x.len()]);
    Tensor::new(x.shape().to_vec(), g)
}

fn signed_step<T: Scalar>(
    model: &ClassifierModel<T>,
    x: &mut Tensor<T>,
    labels: &[usize],
    size: T,
    targeted: bool,
) -> Result<()> {
    let g = input_gradient(model, x, labels)?;
    let dir = if targeted { -size } else { size };
    for (xi, &gi) in x.values_mut().iter_mut().zip(g.values()) {
        *xi = *xi + dir * sign(gi);
    }
    Ok(())
}

fn project<T: Scalar>(x: &mut Tensor<T>, origin: &Tensor<T>, eps: T, clip: Option<(f64, f64)>) {
    for (xi, &oi) in x.values_mut().iter_mut().zip(origin.values()) {
        let mut v = xi.max(oi - eps).min(oi + eps);
        if let Some((lo, hi)) = clip {
            v = v.max(T::lit(lo)).min(T::lit(hi));
        }
        *xi = v;
    }
}

/// One signed-gradient step of size `eps`.
pub fn fgsm<T: Scalar>(model: &ClassifierModel<T>, x: &Tensor<T>, y: &[usize], cfg: &AdvConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let labels = attack_labels(y, model.classes(), cfg.targeted);
    let eps = T::lit(cfg.eps);
    let mut adv = x.clone();
    if cfg.eps == 0.0 {
        return Ok(adv);
    }
    signed_step(model, &mut adv, &labels, eps, cfg.targeted)?;
    project(&mut adv, x, eps, cfg.clip);
    Ok(adv)
}

/// Projected gradient descent; each iterate stays inside the ε-ball around `x`.
pub fn pgd<T: Scalar>(model: &ClassifierModel<T>, x: &Tensor<T>, y: &[usize], cfg: &AdvConfig) -> Result<Tensor<T>> {
    pgd_iterates(model, x, y, cfg).map(|mut it| it.pop().expect("at least the start point"))
}

/// Every PGD iterate, starting point first.
pub fn pgd_iterates<T: Scalar>(
    model: &ClassifierModel<T>,
    x: &Tensor<T>,
    y: &[usize],
    cfg: &AdvConfig,
) -> Result<Vec<Tensor<T>>> {
    cfg.validate()?;
    let labels = attack_labels(y, model.classes(), cfg.targeted);
    let eps = T::lit(cfg.eps);
    let mut adv = x.clone();
    if cfg.random_start && cfg.eps > 0.0 {
        let mut rng = seed::rng(cfg.seed);
        for v in adv.values_mut() {
            *v = *v + T::lit(rng.random_range(-cfg.eps..=cfg.eps));
        }
        project(&mut adv, x, eps, cfg.clip);
    }
    let mut out = vec![adv.clone()];
    for _ in 0..cfg.steps {
        signed_step(model, &mut adv, &labels, T::lit(cfg.alpha), cfg.targeted)?;
        project(&mut adv, x, eps, cfg.clip);
        out.push(adv.clone());
    }
    Ok(out)
}

/// Fraction of inputs the attack succeeded on: misclassified (untargeted)
/// or classified as `(y + 1) mod N` (targeted).
pub fn attack_success_rate<T: Scalar>(
    model: &ClassifierModel<T>,
    adv: &Tensor<T>,
    y: &[usize],
    targeted: bool,
) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::contract("no inputs to score"));
    }
    let pred = model.predict(adv)?;
    let goal = attack_labels(y, model.classes(), targeted);
    let hits = pred
        .iter()
        .zip(y.iter().zip(&goal))
        .filter(|&(&p, (&t, &g))| if targeted { p == g } else { p != t })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Largest per-coordinate deviation between two inputs.
pub fn linf_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&p, &q)| (p - q).abs().as_f64())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_classifier, HeadConfig, ModelConfig};

    fn setup() -> (ClassifierModel<f64>, Tensor<f64>, Vec<usize>) {
        let m = build_classifier(&ModelConfig::toy(HeadConfig::Standard, 3)).unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -1.0, 0.5, 2.0, -0.3]).unwrap();
        (m, x, vec![0, 1, 2])
    }

    #[test]
    fn zero_eps_is_identity() {
        let (m, x, y) = setup();
        let cfg = AdvConfig {
            eps: 0.0,
            ..AdvConfig::toy()
        };
        assert_eq!(fgsm(&m, &x, &y, &cfg).unwrap(), x);
        assert_eq!(pgd(&m, &x, &y, &cfg).unwrap(), x);
    }

    #[test]
    fn single_step_bim_is_fgsm() {
        let (m, x, y) = setup();
        let cfg = AdvConfig {
            steps: 1,
            alpha: 0.1,
            ..AdvConfig::toy().bim()
        };
        assert_eq!(pgd(&m, &x, &y, &cfg).unwrap(), fgsm(&m, &x, &y, &cfg).unwrap());
    }

    #[test]
    fn iterates_stay_in_ball() {
        let (m, x, y) = setup();
        let cfg = AdvConfig {
            steps: 25,
            alpha: 0.07,
            ..AdvConfig::toy()
        };
        for it in pgd_iterates(&m, &x, &y, &cfg).unwrap() {
            assert!(linf_distance(&it, &x) <= 0.1 + 1e-15);
        }
        assert!(linf_distance(&fgsm(&m, &x, &y, &cfg).unwrap(), &x) <= 0.1 + 1e-15);
    }

    #[test]
    fn targeted_labels_shift() {
        assert_eq!(attack_labels(&[0, 1, 2], 3, true), vec![1, 2, 0]);
        assert_eq!(attack_labels(&[0, 1, 2], 3, false), vec![0, 1, 2]);
    }

    #[test]
    fn negative_eps_rejected() {
        let (m, x, y) = setup();
        let cfg = AdvConfig {
            eps: -0.1,
            ..AdvConfig::toy()
        };
        assert!(fgsm(&m, &x, &y, &cfg).is_err());
    }
}
