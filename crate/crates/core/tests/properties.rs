use invlab_core::attack::{fgsm, linf_distance, pgd, AdvConfig};
use invlab_core::defense::{ca_minimizer, ca_value, hsic_value, mid_kl};
use invlab_core::metrics::{matrix_rank, nullity, smooth_normalize_trace, spearman, topk_accuracy, EvalModel};
use invlab_core::nn::{build_classifier, HeadConfig, ModelConfig};
use invlab_core::{Tape64, Tensor64};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor64> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Tensor64::new(vec![rows, cols], v).unwrap())
}

fn brute_smooth(trace: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..trace.len() {
        let lo = (i + 1).saturating_sub(window);
        let mut s = 0.0;
        for v in &trace[lo..=i] {
            s += v;
        }
        out.push(s / (i + 1 - lo) as f64);
    }
    let first = out[0];
    out.into_iter().map(|v| v / first).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_equals_brute_force(trace in prop::collection::vec(0.01f64..10.0, 1..200), window in 1usize..40) {
        let fast = smooth_normalize_trace(&trace, window).unwrap();
        prop_assert_eq!(fast, brute_smooth(&trace, window));
    }

    #[test]
    fn rank_of_product_is_bounded(a in matrix(6, 3), b in matrix(3, 5), scale in 0.1f64..2.0) {
        let a = a.map(|v| v * scale);
        let ab = a.matmul(&b).unwrap();
        let r = matrix_rank(&ab, None);
        prop_assert!(r <= matrix_rank(&a, None).min(matrix_rank(&b, None)));
        prop_assert_eq!(r + nullity(&ab), ab.cols());
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 4), sigma in prop::collection::vec(0.05f64..4.0, 4)) {
        let mut t = Tape64::new();
        let m = t.constant(vec![1, 4], mu).unwrap();
        let s = t.constant(vec![1, 4], sigma).unwrap();
        let kl = mid_kl(&mut t, m, s).unwrap();
        prop_assert!(t.scalar(kl) >= -1e-15);
    }

    #[test]
    fn hsic_is_nonnegative_and_symmetric(x in matrix(8, 2), z in matrix(8, 3)) {
        let a = hsic_value(&x, &z, Some(1.0)).unwrap();
        let b = hsic_value(&z, &x, Some(1.0)).unwrap();
        prop_assert!(a >= -1e-12);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn ca_minimizer_beats_neighbours(b in 0.5f64..16.0, t in 0.001f64..1.0) {
        let star = ca_minimizer(b).unwrap();
        prop_assert!(ca_value(star, 1.0, b) <= ca_value(t, 1.0, b) + 1e-15);
    }

    #[test]
    fn spearman_is_invariant_to_monotone_maps(xs in prop::collection::vec(-5.0f64..5.0, 3..20)) {
        let ys: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
        let rho = spearman(&xs, &ys).unwrap();
        prop_assume!(rho.is_finite());
        prop_assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_outputs_stay_in_ball(x in matrix(5, 2), eps in 0.0f64..1.5, seed in 0u64..1000) {
        let model = build_classifier::<f64>(&ModelConfig::toy(HeadConfig::Standard, seed)).unwrap();
        let y = [0, 1, 2, 0, 1];
        let cfg = AdvConfig { eps, alpha: eps.max(1e-3) / 4.0, seed, ..AdvConfig::toy() };
        for adv in [fgsm(&model, &x, &y, &cfg).unwrap(), pgd(&model, &x, &y, &cfg).unwrap()] {
            prop_assert!(linf_distance(&adv, &x) <= eps + 1e-12);
        }
    }

    #[test]
    fn topk_is_monotone_in_k(x in matrix(6, 2), seed in 0u64..1000) {
        let model = build_classifier::<f64>(&ModelConfig::toy(HeadConfig::Standard, seed)).unwrap();
        let eval = EvalModel::new(model, &[]).unwrap();
        let targets = [0, 1, 2, 2, 1, 0];
        let acc: Vec<f64> = (1..=3).map(|k| topk_accuracy(&eval, &x, &targets, k).unwrap()).collect();
        prop_assert!(acc[0] <= acc[1] && acc[1] <= acc[2]);
        prop_assert_eq!(acc[2], 1.0);
    }
}
