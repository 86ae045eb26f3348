//! Public-API values checked against independently computed references
//! (numpy / scipy, double precision).

use primelab_core::kernel::{
    activation_moments, e_func, gd_trajectory_params, ntk_gram, predict_train, Regime, TrajectoryConfig,
};
use primelab_core::linalg::sym_eigen;
use primelab_core::nnet::{Activation, TwoLayerNet};
use primelab_core::Matrix;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

fn assert_all_close(got: &[f64], want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!(close(*g, *w, rel), "{got:?} vs {want:?}");
    }
}

#[test]
fn e_func_reference_values() {
    for (x, t, want) in [
        (0.1, 10, 6.513215599),
        (0.37, 7, 2.596243766509),
        (0.999, 3, 1.001001),
        (1e-3, 1000, 632.3045752290362),
        (1.0, 4, 1.0),
    ] {
        let got = e_func(x, t).unwrap();
        assert!(close(got, want, 1e-12), "e({x}, {t}) = {got}, want {want}");
    }
}

#[test]
fn gaussian_moments_reference_values() {
    let tanh = activation_moments(Activation::Tanh, 200_000, 7).unwrap();
    assert!((tanh.zeta - 0.6057055096021589).abs() < 5e-3, "{}", tanh.zeta);
    assert!(tanh.nu_raw.abs() < 5e-3);
    let erf = activation_moments(Activation::Erf, 200_000, 7).unwrap();
    assert!((erf.zeta - 0.65147001587056).abs() < 5e-3, "{}", erf.zeta);
    assert!(erf.nu_raw.abs() < 5e-3);
}

#[test]
fn tridiagonal_eigenvalues() {
    let k = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]]).unwrap();
    let mut values = sym_eigen(&k).unwrap().values;
    values.sort_by(f64::total_cmp);
    assert_all_close(&values, &[0.585786437626905, 2.0, 3.414213562373095], 1e-13);
}

#[test]
fn train_trajectory_matches_matrix_power() {
    let k = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]]).unwrap();
    let cfg = TrajectoryConfig::new(0.3, 5, Regime::Overparam, 3);
    let got = predict_train(&k, &[1.0, -2.0, 0.5], &cfg).unwrap();
    assert_all_close(&got, &[0.15904, -0.81018, -0.17712], 1e-12);
}

#[test]
fn parameter_trajectories_match_explicit_gd() {
    let x = Matrix::from_rows(&[[1.0, 0.5, -0.3, 2.0], [0.2, -1.0, 0.7, 0.4]]).unwrap();
    let cfg = TrajectoryConfig::new(0.2, 9, Regime::Overparam, 2);
    let got = gd_trajectory_params(&x, &[0.3, -1.1], &cfg).unwrap();
    assert_all_close(
        &got,
        &[-0.025292607931738847, 0.5780339923573697, -0.4005186041710798, -0.050585215863477695],
        1e-12,
    );

    let x = Matrix::from_rows(&[[1.0, 0.2], [0.5, -1.0], [-0.3, 0.7], [2.0, 0.4], [0.1, 0.1]]).unwrap();
    let cfg = TrajectoryConfig::new(0.2, 13, Regime::Underparam, 5);
    let got = gd_trajectory_params(&x, &[0.3, -1.1, 0.4, 0.9, -0.2], &cfg).unwrap();
    assert_all_close(&got, &[0.22722919155365512, 0.6089591907586006], 1e-12);
}

#[test]
fn relu_network_forward_and_ntk() {
    let w = Matrix::from_rows(&[[0.5, -1.2], [1.1, 0.3], [-0.4, 0.9]]).unwrap();
    let net = TwoLayerNet::from_parts(w, vec![1.0, -1.0, 1.0], Activation::Relu).unwrap();
    let a = Matrix::from_rows(&[[1.0, 2.0], [-0.5, 0.3], [0.8, -1.5]]).unwrap();
    assert_all_close(
        &net.forward_batch(&a).unwrap(),
        &[-0.12247448713915905, 0.19187669651801562, 0.7225994741210372],
        1e-12,
    );
    let k = ntk_gram(&net, &a, &a).unwrap();
    let want = [
        [1.6666666666666667, 0.016666666666666666, -0.36666666666666664],
        [0.016666666666666666, 0.056666666666666664, 0.0],
        [-0.36666666666666664, 0.0, 0.9633333333333332],
    ];
    for (i, row) in want.iter().enumerate() {
        assert_all_close(k.row(i), row, 1e-12);
    }
}
