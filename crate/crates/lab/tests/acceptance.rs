//! End-to-end acceptance criteria, one report line each.
//!
//! Heavy: trains the toy table, the copycat suite and the kernel checks at
//! their default sizes (several minutes on one core).

use std::io::Write;
use std::time::{Duration, Instant};

use primelab::format::OutputFormat;
use primelab::runners::copycat::{run_copycat_suite, CopycatParams};
use primelab::runners::toy::run_toy_table;
use primelab::{ExperimentSpec, RunnerKind};
use primelab_core::kernel::{
    e_lipschitz_check, kernel_gap_ladder, theorem_c1c2_check, trajectory_equivalence_check, xtx_concentration_check,
    GapLadderConfig, TheoremConfig,
};
use primelab_core::nnet::{Activation, Mlp, MlpInit, MlpShape, TrainConfig, Trainable, TwoLayerNet};
use primelab_core::priming::{
    train_primenet_observed, train_priming_alone, Fusion, PrimeNetModel, PrimeTrainConfig, ZetaSource,
};
use primelab_core::rng::{normal_vec, stream, Stream};
use primelab_core::Matrix;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn out_dir(name: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(name).tempdir().unwrap()
}

fn toy_table() -> Outcome {
    let dir = out_dir("toy");
    let mut spec = ExperimentSpec::new(RunnerKind::ToyTable);
    spec.output_dir = dir.path().to_path_buf();
    let (table, report) = run_toy_table(&spec, OutputFormat::Csv).unwrap();
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{}: {:.3} {:.3} {:.3} {:.3}", r.zeta, r.iid_f1, r.iid_f2, r.ood_f1, r.ood_f2))
        .collect();
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut detail = format!("iid_f1 iid_f2 ood_f1 ood_f2 | {}", rows.join(" | "));
    if !failed.is_empty() {
        detail += &format!(" | failed: {}", failed.join("; "));
    }
    outcome(table.rows.len() == 3 && report.all_passed(), detail)
}

fn trajectory() -> Outcome {
    let t0 = Instant::now();
    let r = trajectory_equivalence_check(50, &[1, 7, 64, 1000], 1e-8, 0).unwrap();
    let (fast, time) = within(t0.elapsed(), Duration::from_secs(60));
    outcome(
        r.passed && fast,
        format!(
            "50 instances x 2 regimes, max rel dev {:.2e} / {:.2e}, {time}",
            r.max_rel_dev_overparam, r.max_rel_dev_underparam
        ),
    )
}

fn symmetric_zero() -> Outcome {
    let mut rng = stream(0, Stream::Probe);
    let mut nonzero = 0;
    for i in 0..1000u64 {
        let d = 1 + (i % 7) as usize;
        let m = 2 * (1 + (i % 13) as usize);
        let act = [Activation::Relu, Activation::Tanh, Activation::Erf, Activation::Linear][(i % 4) as usize];
        let net = TwoLayerNet::symmetric_init(d, m, act, i).unwrap();
        let x: Vec<f64> = normal_vec(&mut rng, d).into_iter().map(|v| v * 10.0).collect();
        if net.forward(&x).unwrap() != 0.0 {
            nonzero += 1;
        }
        let shape = MlpShape {
            sizes: vec![d, m, m + 2, 1],
            hidden: act,
            output: Activation::Linear,
            injection: None,
        };
        let mlp = Mlp::init(&shape, MlpInit::Symmetric { scale: 1.0 }, i).unwrap();
        if mlp.forward(&x).unwrap()[0] != 0.0 {
            nonzero += 1;
        }
    }
    outcome(nonzero == 0, format!("{nonzero} non-zero outputs over 1000 probes (two-layer and deep)"))
}

fn kernel_gap() -> Outcome {
    let t0 = Instant::now();
    let r = kernel_gap_ladder(&GapLadderConfig::default()).unwrap();
    let (fast, time) = within(t0.elapsed(), Duration::from_secs(600));
    let medians: Vec<String> = r.rows.iter().map(|row| format!("d={} m={} {:.4e}", row.d, row.m, row.median_train)).collect();
    outcome(r.strictly_decreasing && fast, format!("{}, {time}", medians.join(", ")))
}

fn e_bound() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [2, 5, 20, 100] {
        let r = e_lipschitz_check(t, 100_000).unwrap();
        ok &= r.max_slope <= r.bound * (1.0 + 1e-6);
        parts.push(format!("t={t}: {:.6} <= {}", r.max_slope, r.bound));
    }
    outcome(ok, parts.join(", "))
}

fn concentration() -> Outcome {
    let r = xtx_concentration_check(4000, 20, &Matrix::identity(20), 20, 0).unwrap();
    outcome(
        r.trials.len() == 20 && r.range_min >= 0.8 && r.range_max <= 1.2,
        format!("eigenvalues in [{:.4}, {:.4}] over {} trials", r.range_min, r.range_max, r.trials.len()),
    )
}

fn theorem() -> Outcome {
    let t0 = Instant::now();
    let mut passes = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let cfg = TheoremConfig {
            seed,
            ..TheoremConfig::default()
        };
        let r = theorem_c1c2_check(&cfg).unwrap();
        let ok = r.train_residual < 2.0 * cfg.noise + 0.1 && r.ood_dist_h < 0.5 * r.ood_dist_s;
        passes += ok as usize;
        parts.push(format!("{:.3}/{:.3}/{:.3}", r.train_residual, r.ood_dist_h, r.ood_dist_s));
    }
    let (fast, time) = within(t0.elapsed(), Duration::from_secs(600));
    outcome(
        passes >= 4 && fast,
        format!("{passes}/5 seeds (residual/|f-h|/|f-s|: {}), {time}", parts.join(" ")),
    )
}

fn stop_gradient() -> Outcome {
    let p = CopycatParams::default();
    let d = p.data(0).unwrap();
    let data = d.train_samples.to_dataset(0).unwrap();
    let mut cfg = PrimeTrainConfig::new(TrainConfig {
        steps: 60,
        ..p.train.clone()
    });
    cfg.train.seed = 3;
    let mut checked = 0;
    let mut mismatches = 0;
    for fusion in Fusion::ALL {
        for source in [ZetaSource::Output, ZetaSource::Hidden { layer: 0 }] {
            let model = PrimeNetModel::build(&p.primenet_spec(fusion, source, true), 1).unwrap();
            let mut joint = Vec::new();
            let (trained, _) = train_primenet_observed(&model, &data, &cfg, &mut |_, m| joint.push(m.priming_params())).unwrap();
            assert_ne!(trained.main(), model.main());
            for (k, params) in joint.iter().enumerate().step_by(6) {
                let mut c = cfg.clone();
                c.train.steps = k;
                let (alone, _) = train_priming_alone(&model, &data, &c).unwrap();
                checked += 1;
                if alone.params() != *params {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(
        checked > 0 && mismatches == 0,
        format!("{checked} step snapshots over 3 fusions x 2 sources, {mismatches} differ"),
    )
}

fn copycat() -> Outcome {
    let dir = out_dir("copycat");
    let mut spec = ExperimentSpec::new(RunnerKind::Copycat);
    spec.output_dir = dir.path().to_path_buf();
    let (result, _) = run_copycat_suite(&spec, OutputFormat::Csv).unwrap();
    let mut ok = spec.seeds.len() == 5;
    let mut parts = Vec::new();
    for &seed in &spec.seeds {
        let v = result.get(seed, "vanilla").unwrap().flip.flip_rate;
        let pn = result.get(seed, "primenet").unwrap().flip.flip_rate;
        let k = result.get(seed, "key_only").unwrap().flip.flip_rate;
        ok &= pn < v && k == 0.0;
        parts.push(format!("seed {seed}: {pn:.3} vs {v:.3}, key {k}"));
    }
    outcome(ok, format!("primenet vs vanilla flip rate: {}", parts.join("; ")))
}

fn gradients() -> Outcome {
    let mut rng = stream(1, Stream::Probe);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let d = 1 + (i % 5) as usize;
        let x = normal_vec(&mut rng, d);
        let (g, fd) = if i % 2 == 0 {
            let m = 2 + (i % 9) as usize;
            let w = Matrix::new(m, d, normal_vec(&mut rng, m * d)).unwrap();
            let net = TwoLayerNet::from_parts(w, normal_vec(&mut rng, m), Activation::Tanh).unwrap();
            let g = net.grad_params(&x).unwrap();
            let p = net.params();
            let fd: Vec<f64> = (0..p.len())
                .map(|k| {
                    let eval = |delta: f64| {
                        let mut q = p.clone();
                        q[k] += delta;
                        let mut n = net.clone();
                        n.set_params(&q).unwrap();
                        n.forward(&x).unwrap()
                    };
                    (eval(h) - eval(-h)) / (2.0 * h)
                })
                .collect();
            (g, fd)
        } else {
            let shape = MlpShape {
                sizes: vec![d, 3 + (i % 4) as usize, 4, 1],
                hidden: Activation::Tanh,
                output: Activation::Linear,
                injection: None,
            };
            let mlp = Mlp::init(&shape, MlpInit::Uniform, i).unwrap();
            let tape = mlp.forward_tape(&x, &[]).unwrap();
            let mut g = vec![0.0; mlp.num_params()];
            mlp.backward(&tape, &[1.0], &mut g).unwrap();
            let p = mlp.params();
            let fd: Vec<f64> = (0..p.len())
                .map(|k| {
                    let eval = |delta: f64| {
                        let mut q = p.clone();
                        q[k] += delta;
                        let mut n = mlp.clone();
                        n.set_params(&q).unwrap();
                        n.forward(&x).unwrap()[0]
                    };
                    (eval(h) - eval(-h)) / (2.0 * h)
                })
                .collect();
            (g, fd)
        };
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    outcome(worst <= 1e-5, format!("200 probes, worst relative error {worst:.2e}"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 toy table", toy_table),
        ("2 trajectory closed form", trajectory),
        ("3 symmetric init zero output", symmetric_zero),
        ("4 kernel gap ladder", kernel_gap),
        ("5 e(x) slope bound", e_bound),
        ("6 eigenvalue concentration", concentration),
        ("7 kernel model out of distribution", theorem),
        ("8 stop-gradient isolation", stop_gradient),
        ("9 copycat flip direction", copycat),
        ("10 finite-difference gradients", gradients),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        let line = format!(
            "{} criterion {name}: {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        writeln!(std::io::stdout().lock(), "{line}").unwrap();
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
