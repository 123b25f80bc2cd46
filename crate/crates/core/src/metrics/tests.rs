use std::f64::consts::E;

use super::*;
use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::net::{jacobians, Activation, Layer, Network};

fn dense(rows: &[Vec<f64>]) -> Layer {
    Layer::dense(Matrix::from_rows(rows).unwrap(), None)
}

fn dataset(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Dataset {
    Dataset::new(
        "t",
        Matrix::from_rows(xs).unwrap(),
        Matrix::from_rows(ys).unwrap(),
        false,
    )
    .unwrap()
}

fn probe(net: &Network, xs: &[Vec<f64>]) -> (Dataset, SampleSet, Probe) {
    let ys: Vec<Vec<f64>> = xs.iter().map(|_| vec![0.0; net.output_dim()]).collect();
    let ds = dataset(xs, &ys);
    let samples = SampleSet::from_indices(Selector::TrainSubsample, &ds, &(0..xs.len()).collect::<Vec<_>>()).unwrap();
    let p = Probe::new(net, &ds, &samples).unwrap();
    (ds, samples, p)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn diag_net(d: &[f64]) -> Network {
    Network::new(vec![Layer::dense(Matrix::from_diag(d), None)], d.len()).unwrap()
}

#[test]
fn sharpness_of_scalar_linear_model() {
    let net = Network::new(vec![dense(&[vec![0.7, -0.3]])], 2).unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, 0.0], vec![0.0, 2.0]]);
    assert!(close(sharpness_approx(&p.bundles).unwrap(), 2.5, 1e-15));
}

#[test]
fn sharpness_of_zero_network_is_zero() {
    let net = Network::new(
        vec![
            dense(&[vec![0.0, 0.0]]),
            Layer::activation(Activation::Tanh),
            dense(&[vec![0.0]]),
        ],
        2,
    )
    .unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, 2.0]]);
    assert_eq!(sharpness_approx(&p.bundles).unwrap(), 0.0);
}

#[test]
fn lvr_constant_and_two_point() {
    let (_, _, p) = probe(&diag_net(&[2.0, 3.0]), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let s = lvr_stats(&p.bundles).unwrap();
    assert!(close(s.log_lvr_mean, 6f64.ln(), 1e-14) && close(s.lvr_mean_log, 6f64.ln(), 1e-14));

    let b1 = jacobians(&diag_net(&[1.0, 1.0]), &[1.0, 0.0]).unwrap();
    let b2 = jacobians(&diag_net(&[E * E, 1.0]), &[1.0, 0.0]).unwrap();
    let s = lvr_stats(&[b1, b2]).unwrap();
    assert!(close(s.log_lvr_mean, 1.0, 1e-14));
    assert!(close(s.lvr_mean_log, ((1.0 + E * E) / 2.0).ln(), 1e-14));
}

#[test]
fn lvr_bound_closed_form() {
    let (_, _, p) = probe(&diag_net(&[1.0, 1.0]), &[vec![0.6, 0.8]]);
    let s = sharpness_approx(&p.bundles).unwrap();
    assert!(close(s, 2.0, 1e-14));
    // (1/n)·√(‖W‖^{2N}/‖x‖^{2N})·(nS/N)^{N/2} = 1·(2/2)¹ = 1: tight, since J = I.
    let rhs = lvr_bound_log(&p, s).unwrap();
    let lhs = lvr_stats(&p.bundles).unwrap().lvr_mean_log;
    assert!(rhs.abs() < 1e-14 && lhs.abs() < 1e-14);
    assert!(crate::report::BoundReport::upper_log("lvr", lhs, rhs).holds);
}

#[test]
fn nvr_of_diagonal_chain() {
    let net = Network::new(
        vec![
            Layer::dense(Matrix::from_diag(&[1.0, 2.0]), None),
            Layer::dense(Matrix::from_diag(&[3.0, 1.0]), None),
        ],
        2,
    )
    .unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, 1.0]]);
    assert!(close(nvr_stats(&p.bundles).unwrap().nvr_log, 9f64.ln(), 1e-14));
    assert!(close(nmls(&p.bundles).unwrap(), 6.0, 1e-14));
}

#[test]
fn single_layer_network_metrics_coincide() {
    let net = Network::new(vec![dense(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.3, 2.0]])], 3).unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 1.0]]);
    assert!(close(
        nvr_stats(&p.bundles).unwrap().nvr_log,
        lvr_stats(&p.bundles).unwrap().lvr_mean_log,
        1e-14
    ));
    assert!(close(nmls(&p.bundles).unwrap(), mls(&p.bundles).unwrap(), 1e-14));
}

#[test]
fn mls_cases() {
    let (_, _, p) = probe(&diag_net(&[2.0, 3.0]), &[vec![1.0, 0.0], vec![1.0, 1.0]]);
    assert!(close(mls(&p.bundles).unwrap(), 3.0, 1e-14));
    let (_, _, p) = probe(&diag_net(&[1.0, 1.0]), &[vec![0.0, 1.0]]);
    let s = sharpness_approx(&p.bundles).unwrap();
    assert!(close(mls(&p.bundles).unwrap(), 1.0, 1e-14));
    assert!(close(mls_bound(&p, s).unwrap(), 2f64.sqrt(), 1e-14));
}

fn j_with_gram_eigs(eigs: &[f64], cols: usize) -> crate::net::JacobianBundle {
    let rows: Vec<Vec<f64>> = eigs
        .iter()
        .enumerate()
        .map(|(i, l)| (0..cols).map(|c| if c == i { l.sqrt() } else { 0.0 }).collect())
        .collect();
    let net = Network::new(vec![dense(&rows)], cols).unwrap();
    jacobians(&net, &vec![1.0; cols]).unwrap()
}

#[test]
fn participation_ratio_cases() {
    let pr = |eigs: &[f64]| local_dimensionality(&[j_with_gram_eigs(eigs, 4)]).unwrap().mean;
    assert!(close(pr(&[1.0, 1.0]), 2.0, 1e-14));
    assert!(close(pr(&[1.0, 0.0, 0.0]), 1.0, 1e-14));
    assert!(close(pr(&[2.0, 1.0]), 1.8, 1e-14));
    assert!(close(pr(&[4.0, 2.0]), 1.8, 1e-14));
    let ld = local_dimensionality(&[j_with_gram_eigs(&[0.0, 0.0], 3), j_with_gram_eigs(&[1.0, 1.0], 3)]).unwrap();
    assert_eq!(ld.missing, 1);
    assert!(close(ld.mean, 2.0, 1e-14));
}

#[test]
fn chain_equalities() {
    // Linear model, single sample: C = D.
    let net = Network::new(vec![dense(&[vec![1.0, 2.0, 0.0], vec![0.5, -1.0, 3.0]])], 3).unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, -2.0, 0.5]]);
    let c = chain_abcd(&p).unwrap();
    assert!(close(c.c, c.d, 1e-12));
    assert!(c.reports().iter().all(|r| r.holds));
    // Linear model: ‖∇_W f_i‖_F/‖x_i‖ = ‖I‖_F for every sample; with equal
    // input norms this makes B = C.
    let (_, _, p) = probe(&net, &[vec![1.0, -2.0, 2.0], vec![3.0, 0.0, 0.0], vec![0.0, 0.0, -3.0]]);
    let c = chain_abcd(&p).unwrap();
    assert!(close(c.b, c.c, 1e-12));
    // Unequal norms keep the ratio fixed but open a gap: equality needs
    // ‖∇_W f_i‖_F·‖x_i‖ constant instead.
    let (_, _, p) = probe(&net, &[vec![1.0, 0.0, 0.0], vec![3.0, 0.0, 0.0]]);
    let c = chain_abcd(&p).unwrap();
    assert!(c.b < c.c * (1.0 - 1e-3));
}

#[test]
fn k_norm_chain_linear_k2() {
    let w = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
    let net = Network::new(vec![dense(&w)], 2).unwrap();
    let xs = [vec![1.0, 0.0], vec![1.0, 1.0]];
    let (_, _, p) = probe(&net, &xs);
    let t = k_norm_terms(&p, 2.0).unwrap();
    let wm = Matrix::from_rows(&w).unwrap();
    let sigma = crate::linalg::svd(&wm).unwrap().largest();
    assert!(close(t[0], sigma * sigma, 1e-12));
    assert!(close(t[1], wm.frobenius_norm_sq(), 1e-12));
    // ∇_W f = I ⊗ x, so ‖∇_W f‖_F² = N‖x‖²; min ‖x‖ = 1.
    let mean_sq = 2.0 * (1.0 + 2.0) / 2.0;
    assert!(close(t[2], sigma * sigma * mean_sq, 1e-12));
    assert!(close(t[3], t[2], 1e-12));
    assert!(k_norm_chain(&p, 2.0).unwrap().iter().all(|r| r.holds));

    let (_, _, single) = probe(&net, &xs[1..]);
    assert!(k_norm_chain(&single, 1.0).unwrap().iter().all(|r| r.holds));
}

#[test]
fn adaptive_and_input_invariant_example() {
    let net = Network::new(vec![dense(&[vec![1.0, 2.0]])], 2).unwrap();
    let ds = dataset(&[vec![1.0, 1.0]], &[vec![3.0]]);
    let samples = SampleSet::from_indices(Selector::TrainSubsample, &ds, &[0]).unwrap();
    let p = Probe::new(&net, &ds, &samples).unwrap();
    assert!(close(adaptive_sharpness_analytic(&p.bundles).unwrap(), 5.0, 1e-15));
    assert!(close(input_invariant_mls(&p.bundles).unwrap(), 5.0, 1e-15));
    let est = adaptive_sharpness_estimate(&net, &ds, &samples, &p.bundles, 1e-3, 20_000, 4).unwrap();
    assert!((est.estimate - 5.0).abs() < 0.25, "{est:?}");

    let zero = jacobians(&net, &[0.0, 0.0]).unwrap();
    assert_eq!(input_invariant_mls(&[zero]).unwrap(), 0.0);
}

#[test]
fn adaptive_of_zero_network() {
    let net = Network::new(vec![dense(&[vec![0.0, 0.0]])], 2).unwrap();
    let ds = dataset(&[vec![1.0, 1.0]], &[vec![0.0]]);
    let samples = SampleSet::from_indices(Selector::TrainSubsample, &ds, &[0]).unwrap();
    let p = Probe::new(&net, &ds, &samples).unwrap();
    let est = adaptive_sharpness_estimate(&net, &ds, &samples, &p.bundles, 0.1, 10, 0).unwrap();
    assert_eq!((est.estimate, est.analytic), (0.0, 0.0));
}

#[test]
fn normalized_mls_cases() {
    let net = diag_net(&[1.0, 2.0]);
    let (_, _, p) = probe(&net, &[vec![1.0, 0.0]]);
    assert!(close(
        normalized_mls(&net, &p, NormalizedMode::Exact, 0).unwrap(),
        4.0,
        1e-14
    ));
    let asc = normalized_mls(&net, &p, NormalizedMode::Ascent, 0).unwrap();
    assert!((0.99 * 4.0..=4.0 * (1.0 + 1e-12)).contains(&asc), "{asc}");

    let zero = Network::new(vec![dense(&[vec![0.0, 0.0], vec![0.0, 0.0]])], 2).unwrap();
    let (_, _, p) = probe(&zero, &[vec![1.0, 0.0]]);
    assert_eq!(normalized_mls(&zero, &p, NormalizedMode::Ascent, 0).unwrap(), 0.0);
    assert_eq!(normalized_mls(&zero, &p, NormalizedMode::Exact, 0).unwrap(), 0.0);
}

#[test]
fn matrix_normalized_single_layer() {
    let w = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
    let net = Network::new(vec![dense(&w)], 2).unwrap();
    let (_, _, p) = probe(&net, &[vec![0.6, 0.8]]);
    let mn = matrix_normalized_sharpness(&p).unwrap();
    assert!(close(mn.lhs, 2.0, 1e-14));
    assert!(close(mn.rhs, 2.0 * 2f64.sqrt(), 1e-14));
}

#[test]
fn matrix_normalized_rhs_is_reparametrization_invariant() {
    let w1 = Matrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.3, -1.0, 0.8]]).unwrap();
    let w2 = Matrix::from_rows(&[vec![0.7, 1.1], vec![-0.4, 0.9]]).unwrap();
    let xs = [vec![1.0, 2.0, -1.0], vec![0.5, 0.1, 0.3]];
    let rhs = |alpha: f64| {
        let net = Network::new(
            vec![
                Layer::dense(w1.scale(alpha), None),
                Layer::dense(w2.scale(1.0 / alpha), None),
            ],
            3,
        )
        .unwrap();
        matrix_normalized_sharpness(&probe(&net, &xs).2).unwrap().rhs
    };
    let base = rhs(1.0);
    for alpha in [0.1, 3.0, 17.0] {
        assert!((rhs(alpha) - base).abs() < 1e-9 * base);
    }
}

#[test]
fn residual_bound_cases() {
    let plain = Network::new(vec![dense(&[vec![1.0, 0.0]])], 2).unwrap();
    let (_, _, p) = probe(&plain, &[vec![1.0, 0.0]]);
    assert!(matches!(residual_bound_check(&p), Err(crate::Error::Structure(_))));

    let net = Network::new(
        vec![
            Layer::residual(vec![
                Layer::dense(Matrix::zeros(2, 2), None),
                Layer::activation(Activation::Tanh),
            ]),
            Layer::dense(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), None),
        ],
        2,
    )
    .unwrap();
    let (_, _, p) = probe(&net, &[vec![1.0, -1.0]]);
    let r = residual_bound_check(&p).unwrap();
    assert!(r.lhs.abs() < 1e-14 && r.holds, "{r:?}");
}

#[test]
fn zero_weight_residual_is_identity() {
    let net = Network::new(
        vec![Layer::residual(vec![
            Layer::dense(Matrix::zeros(3, 3), None),
            Layer::activation(Activation::Tanh),
        ])],
        3,
    )
    .unwrap();
    assert_eq!(net.predict(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
}

#[test]
fn sample_set_selectors() {
    let ds = crate::data::synth_gaussian_mixture(10, 2, 2, 4.0, 0)
        .unwrap()
        .with_split(0.5, 0)
        .unwrap();
    let s = SampleSet::train_subsample(&ds, 4).unwrap();
    assert_eq!(s.len(), 4);
    assert!(s.indices.iter().all(|i| ds.train.contains(i)));
    assert!(SampleSet::train_subsample(&ds, 0).is_err());
    // Perfect classifier on well separated blobs: argmax of identity is the label.
    let net = diag_net(&[1.0, 1.0]);
    let mis = SampleSet::test_misclassified(&ds, &net).unwrap();
    assert!(mis.is_none() || mis.unwrap().len() < ds.test.len());
}
