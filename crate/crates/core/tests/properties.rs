use proptest::prelude::*;
use sharpcomp::data::synth_gaussian_mixture;
use sharpcomp::experiments::pearson;
use sharpcomp::linalg::{log_pseudo_det_gram, singular_values, svd, vector_p_norm, Matrix};
use sharpcomp::metrics::{evaluate, participation_ratio, EvalConfig, SampleSet};
use sharpcomp::net::{jacobians, weight_gradient_identity_check, Activation};
use sharpcomp::oracles::{fd_jacobian, fd_layer_jacobian, half_log_det_gram, pearson_two_pass, JACOBIAN_STEP};
use sharpcomp::train::{init_network, ArchSpec};

fn matrix(max_side: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

fn mlp(seed: u64, act: Activation) -> sharpcomp::net::Network {
    init_network(
        &ArchSpec::Mlp {
            widths: vec![5, 7, 4, 3],
            activation: act,
            bias: true,
        },
        seed,
    )
    .unwrap()
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Sigmoid)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs(a in matrix(7)) {
        let s = svd(&a).unwrap();
        let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-10 * (1.0 + a.frobenius_norm()));
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn spectral_below_frobenius(a in matrix(6)) {
        let top = singular_values(&a).unwrap()[0];
        prop_assert!(top <= a.frobenius_norm() * (1.0 + 1e-12));
        prop_assert!(a.frobenius_norm() <= top * (a.rows().min(a.cols()) as f64).sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn p_norms_decrease_in_p(v in prop::collection::vec(-5.0f64..5.0, 1..12), p in 1.0f64..4.0, dp in 0.0f64..3.0) {
        let a = vector_p_norm(&v, p).unwrap();
        let b = vector_p_norm(&v, p + dp).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn participation_ratio_scale_invariant_and_bounded(a in matrix(5), c in 0.01f64..100.0) {
        if let Some(d) = participation_ratio(&a).unwrap() {
            let r = a.rows().min(a.cols()) as f64;
            prop_assert!(d >= 1.0 - 1e-9 && d <= r + 1e-9);
            let scaled = participation_ratio(&a.scale(c)).unwrap().unwrap();
            prop_assert!((scaled - d).abs() <= 1e-9 * d);
        }
    }

    #[test]
    fn am_gm_volume_bound(a in matrix(5)) {
        let r = a.rows().min(a.cols()) as f64;
        let log_vol = log_pseudo_det_gram(&a).unwrap();
        let rhs = 0.5 * r * (a.frobenius_norm_sq() / r).ln();
        prop_assert!(log_vol <= rhs + 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn log_volume_matches_determinant_oracle(a in matrix(4)) {
        let g = a.gram_rows();
        if a.rows() <= a.cols() && sharpcomp::oracles::determinant(&g) > 1e-6 {
            let ours = log_pseudo_det_gram(&a).unwrap();
            prop_assert!((ours - half_log_det_gram(&a)).abs() <= 1e-8 * (1.0 + ours.abs()));
        }
    }

    #[test]
    fn jacobians_match_finite_differences(seed in 0u64..1000, act in activation(), x in prop::collection::vec(-2.0f64..2.0, 5)) {
        let net = mlp(seed, act);
        let b = jacobians(&net, &x).unwrap();
        let fd = fd_jacobian(&net, &x, JACOBIAN_STEP);
        for (a, o) in b.j_input.data().iter().zip(fd.data()) {
            prop_assert!((a - o).abs() <= 1e-8f64.max(1e-6 * o.abs()), "{a} vs {o}");
        }
        for l in 0..b.j_layer.len() {
            let fd = fd_layer_jacobian(&net, &x, l, JACOBIAN_STEP);
            for (a, o) in b.j_layer[l].data().iter().zip(fd.data()) {
                prop_assert!((a - o).abs() <= 1e-8f64.max(1e-6 * o.abs()));
            }
        }
    }

    #[test]
    fn weight_gradient_identity(seed in 0u64..1000, act in activation(), x in prop::collection::vec(-2.0f64..2.0, 5)) {
        let r = weight_gradient_identity_check(&mlp(seed, act), &x).unwrap();
        prop_assert!(r.holds, "{r}");
    }

    #[test]
    fn pearson_symmetric_bounded(xs in prop::collection::vec(-10.0f64..10.0, 3..30), shift in -1.0f64..1.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * shift + (i as f64).sin()).collect();
        if let (Ok(a), Ok(b)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - pearson_two_pass(&xs, &ys)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Every inequality report holds for untrained dense and residual networks.
    #[test]
    fn inequality_reports_hold_at_init(seed in 0u64..10_000, residual in any::<bool>()) {
        let arch = if residual {
            ArchSpec::Resmlp { widths: vec![6, 5, 5, 5, 2], activation: Activation::Tanh }
        } else {
            ArchSpec::Mlp { widths: vec![6, 9, 4, 2], activation: Activation::Relu, bias: true }
        };
        let net = init_network(&arch, seed).unwrap();
        let ds = synth_gaussian_mixture(6, 2, 6, 1.0, seed).unwrap();
        let samples = SampleSet::train_subsample(&ds, 12).unwrap();
        let cfg = EvalConfig { mc_draws: 4, seed, ..EvalConfig::default() };
        let e = evaluate(&net, &ds, &samples, 0, &cfg).unwrap();
        prop_assert!(!e.reports.is_empty());
        for r in &e.reports {
            prop_assert!(r.holds, "{r}");
        }
    }
}
