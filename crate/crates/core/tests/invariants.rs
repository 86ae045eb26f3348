use primelab_core::kernel::{e_func, gd_trajectory_params, iterate_gd, Regime, TrajectoryConfig};
use primelab_core::linalg::{sym_eigen, sym_eigenvalues};
use primelab_core::nnet::{Activation, Mlp, MlpInit, MlpShape, TwoLayerNet};
use primelab_core::rng::{permutation, stream, Stream};
use primelab_core::synth::{gen_toy_regression, ToyFn, TOY_TRAIN_INTERVAL};
use primelab_core::Matrix;
use proptest::prelude::*;

const ACTIVATIONS: [Activation; 4] = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Erf];

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn shaped(over: bool) -> impl Strategy<Value = (Matrix, Vec<f64>)> {
    (2usize..6, 1usize..5).prop_flat_map(move |(a, b)| {
        let (n, p) = if over { (a, a + b) } else { (a + b, a) };
        (matrix(n, p), prop::collection::vec(-1.0f64..1.0, n))
    })
}

fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
    matrix(n, n).prop_map(|a| a.add(&a.transpose()).unwrap())
}

proptest! {
    #[test]
    fn e_func_is_bounded_and_decreasing(x in 1e-6f64..1.0, dx in 0.0f64..1.0, t in 1u64..300) {
        let y = x + dx * (1.0 - x);
        let (ex, ey) = (e_func(x, t).unwrap(), e_func(y, t).unwrap());
        prop_assert!(ex >= 1.0 - 1e-12 && ex <= t as f64 * (1.0 + 1e-12));
        prop_assert!(ey <= ex * (1.0 + 1e-12));
    }

    #[test]
    fn closed_form_matches_iterated_gd(over in any::<bool>(), case in shaped(true), case_u in shaped(false), t in 1u64..80) {
        let (x, y) = if over { case } else { case_u };
        let gram = if over { x.gram_rows() } else { x.gram_cols() };
        let top = sym_eigenvalues(&gram).unwrap().into_iter().fold(0.0f64, f64::max);
        prop_assume!(top > 1e-6);
        let s = 0.9 / top;
        let regime = if over { Regime::Overparam } else { Regime::Underparam };
        let cfg = TrajectoryConfig { step_size: s, steps: t, regime, sample_scale: 1.0 };
        let closed = gd_trajectory_params(&x, &y, &cfg).unwrap();
        let explicit = iterate_gd(&x, &y, s, t).unwrap();
        let scale = explicit.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let diff = closed.iter().zip(&explicit).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-8 * scale, "{closed:?} vs {explicit:?}");
    }

    #[test]
    fn eigendecomposition_reconstructs(a in (1usize..8).prop_flat_map(symmetric)) {
        let eig = sym_eigen(&a).unwrap();
        prop_assert!(eig.reconstruct().max_abs_diff(&a) <= 1e-10 * a.frobenius_norm().max(1.0));
    }

    #[test]
    fn symmetric_two_layer_net_outputs_zero(
        d in 1usize..6, half in 1usize..10, seed in any::<u64>(), act in 0usize..4,
        x in prop::collection::vec(-50.0f64..50.0, 6),
    ) {
        let net = TwoLayerNet::symmetric_init(d, 2 * half, ACTIVATIONS[act], seed).unwrap();
        prop_assert_eq!(net.forward(&x[..d]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_mlp_outputs_zero(
        d in 1usize..5, w1 in 1usize..8, half in 1usize..5, seed in any::<u64>(), act in 0usize..4,
        scale in 0.01f64..2.0, x in prop::collection::vec(-10.0f64..10.0, 5),
    ) {
        let shape = MlpShape { sizes: vec![d, w1, 2 * half, 1], hidden: ACTIVATIONS[act], output: Activation::Linear, injection: None };
        let mlp = Mlp::init(&shape, MlpInit::Symmetric { scale }, seed).unwrap();
        prop_assert_eq!(mlp.forward(&x[..d]).unwrap()[0], 0.0);
    }

    #[test]
    fn permutations_cover_every_index(n in 0usize..200, seed in any::<u64>()) {
        let mut p = permutation(&mut stream(seed, Stream::Batches), n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn toy_data_is_seeded_and_in_range(n in 1usize..100, seed in any::<u64>()) {
        let a = gen_toy_regression(n, TOY_TRAIN_INTERVAL, ToyFn::F2, 0.1, seed).unwrap();
        let b = gen_toy_regression(n, TOY_TRAIN_INTERVAL, ToyFn::F2, 0.1, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.inputs().as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
