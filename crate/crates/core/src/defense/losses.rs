//! Training objectives recorded on a tape, plus closed-form helpers for the
//! confidence-adaptation loss.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to the true-class probability before taking its log.
pub const CA_PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-probability of the true class.
pub fn ce_loss<T: Scalar>(tape: &mut Tape<T>, logprobs: Var, labels: &[usize]) -> Result<Var> {
    let picked = tape.gather(logprobs, labels)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -T::one()))
}

/// Output of [`ca_loss`].
#[derive(Debug, Clone, Copy)]
pub struct CaLoss {
    pub loss: Var,
    /// Samples whose confidence was raised to [`CA_PROB_FLOOR`].
    pub clamped: usize,
}

/// Batch mean of `a · ŷ_c^b · log ŷ_c` with `ŷ_c` the true-class probability.
pub fn ca_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, labels: &[usize], a: T, b: T) -> Result<CaLoss> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::contract("confidence adaptation needs a > 0 and b > 0"));
    }
    let floor = T::lit(CA_PROB_FLOOR);
    let conf = tape.gather(probs, labels)?;
    let clamped = tape.value(conf).iter().filter(|&&p| p < floor).count();
    let conf = tape.clamp_min(conf, floor);
    let log_conf = tape.log(conf);
    let powered = tape.powf(conf, b);
    let prod = tape.mul(powered, log_conf)?;
    let m = tape.mean(prod);
    Ok(CaLoss {
        loss: tape.scale(m, a),
        clamped,
    })
}

/// `a t^b ln t`.
pub fn ca_value(t: f64, a: f64, b: f64) -> f64 {
    a * t.powf(b) * t.ln()
}

/// `a t^{b−1} (b ln t + 1)`.
pub fn ca_derivative(t: f64, a: f64, b: f64) -> f64 {
    a * t.powf(b - 1.0) * (b * t.ln() + 1.0)
}

/// `a t^{b−2} (b(b−1) ln t + 2b − 1)`.
pub fn ca_second_derivative(t: f64, a: f64, b: f64) -> f64 {
    a * t.powf(b - 2.0) * (b * (b - 1.0) * t.ln() + 2.0 * b - 1.0)
}

/// Confidence at which the adaptation loss is minimal: `exp(−1/b)`.
pub fn ca_minimizer(b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::contract(format!("exponent b must be positive, got {b}")));
    }
    Ok((-1.0 / b).exp())
}

/// `(1−λ)·CE(y, ŷ) + (λ/C)·CE(1, ŷ)`, where the second term sums the
/// negative log-probabilities over all `C` classes.
pub fn ls_loss<T: Scalar>(tape: &mut Tape<T>, logprobs: Var, labels: &[usize], lambda: T) -> Result<Var> {
    let ce = ce_loss(tape, logprobs, labels)?;
    let classes = tape.shape(logprobs)[1];
    let batch = tape.shape(logprobs)[0];
    // mean over the batch of −Σ_c log ŷ_c, divided by C
    let total = tape.sum(logprobs);
    let uniform = tape.scale(total, -T::one() / T::from_usize_lossy(batch * classes));
    let kept = tape.scale(ce, T::one() - lambda);
    let smooth = tape.scale(uniform, lambda);
    tape.add(kept, smooth)
}

/// Mean over dimensions of `−½(1 + log σ² − μ² − σ²)`.
pub fn mid_kl<T: Scalar>(tape: &mut Tape<T>, mu: Var, sigma: Var) -> Result<Var> {
    let log_sigma = tape.log(sigma);
    let log_var = tape.scale(log_sigma, T::lit(2.0));
    let mu_sq = tape.mul(mu, mu)?;
    let var = tape.mul(sigma, sigma)?;
    let t = tape.add_scalar(log_var, T::one());
    let t = tape.sub(t, mu_sq)?;
    let t = tape.sub(t, var)?;
    let m = tape.mean(t);
    Ok(tape.scale(m, T::lit(-0.5)))
}

/// Median of the nonzero pairwise distances between rows; 1 if there are none.
pub fn median_heuristic<T: Scalar>(x: &Tensor<T>) -> T {
    let n = x.rows();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                .sum();
            if s > 0.0 {
                d.push(s.sqrt());
            }
        }
    }
    if d.is_empty() {
        return T::one();
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len().is_multiple_of(2) {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    T::lit(med)
}

fn gaussian_gram<T: Scalar>(tape: &mut Tape<T>, x: Var, width: Option<T>) -> Var {
    let w = width.unwrap_or_else(|| median_heuristic(&tape.tensor(x)));
    let d = tape.sq_dist(x);
    let s = tape.scale(d, -T::one() / (T::lit(2.0) * w * w));
    tape.exp(s)
}

/// Biased HSIC estimate `trace(K H L H) / (n−1)²` with Gaussian kernels.
///
/// `width = None` picks each kernel's width by the median heuristic.
pub fn hsic<T: Scalar>(tape: &mut Tape<T>, x: Var, z: Var, width: Option<T>) -> Result<Var> {
    let n = tape.shape(x)[0];
    if n < 4 {
        return Err(Error::contract(format!("hsic needs at least 4 samples, got {n}")));
    }
    if tape.shape(z)[0] != n {
        return Err(Error::Shape {
            op: "hsic",
            left: tape.shape(x).to_vec(),
            right: tape.shape(z).to_vec(),
        });
    }
    let k = gaussian_gram(tape, x, width);
    let l = gaussian_gram(tape, z, width);
    let inv = T::one() / T::from_usize_lossy(n);
    let centering: Vec<T> = (0..n * n)
        .map(|i| if i / n == i % n { T::one() - inv } else { -inv })
        .collect();
    let h = tape.constant(vec![n, n], centering)?;
    let kh = tape.matmul(k, h)?;
    let hkh = tape.matmul(h, kh)?;
    // trace(HKH·L) = Σ (HKH ⊙ L) for symmetric L
    let prod = tape.mul(hkh, l)?;
    let s = tape.sum(prod);
    let denom = T::from_usize_lossy((n - 1) * (n - 1));
    Ok(tape.scale(s, T::one() / denom))
}

/// HSIC of two fixed matrices.
pub fn hsic_value<T: Scalar>(x: &Tensor<T>, z: &Tensor<T>, width: Option<T>) -> Result<T> {
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_requires_grad(false));
    let zv = tape.leaf(&z.clone().with_requires_grad(false));
    let h = hsic(&mut tape, xv, zv, width)?;
    Ok(tape.scalar(h))
}

/// One-hot rows for `labels`.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.values_mut()[i * classes + l] = T::one();
    }
    t
}

/// `ce + λ_iz Σ HSIC(X, Z_i) − λ_oz Σ HSIC(Z_i, Y)`; zero weights skip their term.
pub fn bido_loss<T: Scalar>(
    tape: &mut Tape<T>,
    ce: Var,
    input: Var,
    taps: &[Var],
    targets: Var,
    lambda_iz: T,
    lambda_oz: T,
    width: Option<T>,
) -> Result<Var> {
    if taps.is_empty() {
        return Err(Error::contract("bido needs at least one tap"));
    }
    let mut loss = ce;
    for &z in taps {
        if lambda_iz != T::zero() {
            let d = hsic(tape, input, z, width)?;
            let d = tape.scale(d, lambda_iz);
            loss = tape.add(loss, d)?;
        }
        if lambda_oz != T::zero() {
            let d = hsic(tape, z, targets, width)?;
            let d = tape.scale(d, lambda_oz);
            loss = tape.sub(loss, d)?;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn logprobs(tape: &mut Tape<f64>, rows: &[Vec<f64>]) -> Var {
        let t = Tensor::from_rows(rows).unwrap();
        let v = tape.leaf(&t);
        tape.log_softmax(v)
    }

    #[test]
    fn ce_of_one_hot_and_uniform() {
        let mut tape = Tape::new();
        let lp = logprobs(&mut tape, &[vec![800.0, 0.0, 0.0]]);
        let l = ce_loss(&mut tape, lp, &[0]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let lp = logprobs(&mut tape, &[vec![0.0, 0.0, 0.0]]);
        let l = ce_loss(&mut tape, lp, &[2]).unwrap();
        assert!((tape.scalar(l) - 3.0_f64.ln()).abs() < 1e-15);
        assert!((tape.scalar(l) - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn ce_rejects_bad_label() {
        let mut tape = Tape::new();
        let lp = logprobs(&mut tape, &[vec![0.0, 0.0, 0.0]]);
        assert!(ce_loss(&mut tape, lp, &[3]).is_err());
    }

    #[test]
    fn ce_gradcheck() {
        let probe = Tensor::new(vec![2, 3], vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.5]).unwrap();
        let err = gradcheck(
            |t, x| {
                let lp = t.log_softmax(x);
                ce_loss(t, lp, &[1, 0])
            },
            &probe,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn ca_hand_values() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let l = ca_loss(&mut tape, p, &[0, 1], 1.0, 1.0).unwrap();
        // (0 + 0.5 ln 0.5) / 2
        assert!((tape.scalar(l.loss) - 0.5 * 0.5 * 0.5_f64.ln()).abs() < 1e-15);
        assert_eq!(ca_value(1.0, 1.0, 1.0), 0.0);
        assert!((ca_value(0.5, 1.0, 1.0) + 0.346574).abs() < 1e-6);
    }

    #[test]
    fn ca_clamps_zero_confidence() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let l = ca_loss(&mut tape, p, &[0], 1.0, 8.0).unwrap();
        assert_eq!(l.clamped, 1);
        assert!(tape.scalar(l.loss).is_finite());
    }

    #[test]
    fn ca_rejects_nonpositive_hyperparameters() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(ca_loss(&mut tape, p, &[0], 0.0, 8.0).is_err());
        assert!(ca_loss(&mut tape, p, &[0], 1.0, -1.0).is_err());
    }

    #[test]
    fn ca_gradcheck_through_softmax() {
        let probe = Tensor::new(vec![2, 3], vec![1.0, 0.2, -0.4, 0.0, 2.2, 0.7]).unwrap();
        let err = gradcheck(
            |t, x| {
                let lp = t.log_softmax(x);
                let p = t.exp(lp);
                Ok(ca_loss(t, p, &[0, 1], 1.0, 8.0)?.loss)
            },
            &probe,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn minimizer_values() {
        assert!((ca_minimizer(1.0).unwrap() - 0.367879).abs() < 1e-6);
        assert!((ca_minimizer(8.0).unwrap() - 0.882497).abs() < 1e-6);
        assert!(ca_minimizer(0.0).is_err());
        assert!(ca_minimizer(-2.0).is_err());
        let mut prev = 0.0;
        for b in [0.5, 1.0, 2.0, 8.0, 100.0, 1e6] {
            let m = ca_minimizer(b).unwrap();
            assert!(m > prev && m < 1.0);
            prev = m;
        }
        assert!(1.0 - ca_minimizer(1e9).unwrap() < 1e-8);
    }

    #[test]
    fn ls_reduces_to_ce_and_ln_c() {
        let rows = vec![vec![0.3, -1.0, 2.0], vec![1.0, 1.5, -0.5]];
        let mut tape = Tape::new();
        let lp = logprobs(&mut tape, &rows);
        let ce = ce_loss(&mut tape, lp, &[2, 0]).unwrap();
        let ls = ls_loss(&mut tape, lp, &[2, 0], 0.0).unwrap();
        assert_eq!(tape.scalar(ce), tape.scalar(ls));

        for lambda in [-0.3, 0.0, 0.5, 0.9] {
            let mut tape = Tape::new();
            let lp = logprobs(&mut tape, &[vec![0.0; 4], vec![0.0; 4]]);
            let ls = ls_loss(&mut tape, lp, &[1, 3], lambda).unwrap();
            assert!((tape.scalar(ls) - 4.0_f64.ln()).abs() < 1e-15, "λ={lambda}");
        }
    }

    #[test]
    fn ls_negative_factor_hand_case() {
        // logits [2, 0, 0], label 0, λ = −0.3
        let mut tape = Tape::new();
        let lp = logprobs(&mut tape, &[vec![2.0, 0.0, 0.0]]);
        let ls = ls_loss(&mut tape, lp, &[0], -0.3).unwrap();
        let z = 2.0_f64.exp() + 2.0;
        let l0 = 2.0 - z.ln();
        let l1 = -z.ln();
        let want = 1.3 * (-l0) + (-0.3 / 3.0) * (-(l0 + 2.0 * l1));
        assert!((tape.scalar(ls) - want).abs() < 1e-14);
    }

    #[test]
    fn kl_reference_points() {
        let mut tape = Tape::new();
        let mu = tape.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let s = tape.constant(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let kl = mid_kl(&mut tape, mu, s).unwrap();
        assert_eq!(tape.scalar(kl), 0.0);
        let mu = tape.constant(vec![1, 1], vec![1.0]).unwrap();
        let s = tape.constant(vec![1, 1], vec![1.0]).unwrap();
        let kl = mid_kl(&mut tape, mu, s).unwrap();
        assert_eq!(tape.scalar(kl), 0.5);
    }

    #[test]
    fn hsic_of_constant_is_zero() {
        let x = Tensor::new(vec![5, 2], (0..10).map(|i| (i as f64).sin()).collect()).unwrap();
        let z = Tensor::new(vec![5, 1], vec![0.7; 5]).unwrap();
        let v = hsic_value(&x, &z, None).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn hsic_self_positive_and_symmetric() {
        let x = Tensor::new(vec![6, 2], (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let z = Tensor::new(vec![6, 3], (0..18).map(|i| (i as f64 * 1.3).sin()).collect()).unwrap();
        assert!(hsic_value(&x, &x, None).unwrap() > 0.0);
        let a = hsic_value(&x, &z, Some(1.0)).unwrap();
        let b = hsic_value(&z, &x, Some(1.0)).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(a >= 0.0);
    }

    #[test]
    fn hsic_needs_four_samples() {
        let x = Tensor::<f64>::zeros(vec![3, 2]);
        assert!(matches!(hsic_value(&x, &x, None), Err(Error::Contract(_))));
    }

    #[test]
    fn hsic_gradcheck() {
        let probe = Tensor::new(vec![5, 2], (0..10).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let other = Tensor::new(vec![5, 2], (0..10).map(|i| (i as f64 * 0.4).cos()).collect()).unwrap();
        let err = gradcheck(
            |t, x| {
                let z = t.leaf(&other);
                hsic(t, x, z, Some(0.8))
            },
            &probe,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn bido_with_zero_weights_is_ce() {
        let mut tape = Tape::new();
        let x = tape
            .constant(vec![4, 2], vec![0.1, 0.2, 0.3, 0.1, -0.2, 0.5, 1.0, 0.0])
            .unwrap();
        let lp = logprobs(
            &mut tape,
            &[vec![0.1, 0.2], vec![0.5, 0.1], vec![0.0, 1.0], vec![2.0, 0.3]],
        );
        let ce = ce_loss(&mut tape, lp, &[0, 1, 1, 0]).unwrap();
        let y = tape.leaf(&one_hot(&[0, 1, 1, 0], 2));
        let l = bido_loss(&mut tape, ce, x, &[x], y, 0.0, 0.0, None).unwrap();
        assert_eq!(tape.scalar(l), tape.scalar(ce));
        let l = bido_loss(&mut tape, ce, x, &[x], y, 0.01, 0.1, None).unwrap();
        assert_ne!(tape.scalar(l), tape.scalar(ce));
    }
}
