use primelab::format::OutputFormat;
use primelab::runners::ablate::run_ablations;
use primelab::runners::copycat::run_copycat_suite;
use primelab::runners::toy::{run_learned_curves, run_toy_table, ToyParams};
use primelab::{ExperimentSpec, RunnerKind};
use primelab_core::priming::{Fusion, Teacher};
use primelab_core::synth::{gen_toy_grid, ToyFn, TOY_TRAIN_INTERVAL};
use serde_json::{json, Value};

fn spec(kind: RunnerKind, parameters: Value, seeds: Vec<u64>, dir: &std::path::Path) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(kind).with_parameters(parameters).unwrap();
    s.seeds = seeds;
    s.output_dir = dir.to_path_buf();
    s
}

fn tiny_copycat() -> Value {
    json!({
        "data": {"episodes": 4, "length": 60},
        "test_episodes": 3,
        "hidden": [8],
        "priming_hidden": [8],
        "train": {"step_size": 1e-2, "steps": 30, "batch": 32, "optimizer": {"kind": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}
    })
}

#[test]
fn copycat_runs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, pa) = run_copycat_suite(&spec(RunnerKind::Copycat, tiny_copycat(), vec![1, 2], a.path()), OutputFormat::Csv).unwrap();
    let (rb, pb) = run_copycat_suite(&spec(RunnerKind::Copycat, tiny_copycat(), vec![1, 2], b.path()), OutputFormat::Csv).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(pa.checks, pb.checks);
    for f in ["copycat_metrics.csv", "zeta_effects.csv", "copycat_summary.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(ra.models.len(), 6);
    let key_only: Vec<_> = ra.models.iter().filter(|m| m.model == "key_only").collect();
    assert!(key_only.iter().all(|m| m.flip.flip_rate == 0.0 || m.flip.moving == 0));
}

#[test]
fn copycat_artifacts_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = tiny_copycat();
    p["save_artifacts"] = json!(true);
    let (_, report) = run_copycat_suite(&spec(RunnerKind::Copycat, p, vec![0], dir.path()), OutputFormat::Json).unwrap();
    let ckpt = dir.path().join("copycat_primenet_seed0.ckpt");
    assert!(report.files.contains(&ckpt));
    let back = primelab::format::read_checkpoint(&ckpt).unwrap();
    assert_eq!(back.kind(), "prime_net");
    let metrics: Value = serde_json::from_slice(&std::fs::read(dir.path().join("copycat_metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 3);
}

#[test]
fn toy_table_shape_and_determinism() {
    let p = json!({"n_train": 64, "eval_points": 32, "hidden": [8], "train": {"step_size": 1e-2, "steps": 40}});
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, _) = run_toy_table(&spec(RunnerKind::ToyTable, p.clone(), vec![0, 1], a.path()), OutputFormat::Csv).unwrap();
    let (tb, _) = run_toy_table(&spec(RunnerKind::ToyTable, p, vec![0, 1], b.path()), OutputFormat::Csv).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(ta.rows.len(), 6);
    let zetas: Vec<&str> = ta.rows.iter().take(3).map(|r| r.zeta.as_str()).collect();
    assert_eq!(zetas, ["0", "x^4", "x^5"]);
    assert!(ta.rows.iter().all(|r| [r.iid_f1, r.iid_f2, r.ood_f1, r.ood_f2].iter().all(|v| *v >= 0.0)));
    let csv = std::fs::read_to_string(a.path().join("rmse_table.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "seed,zeta,iid_f1,iid_f2,ood_f1,ood_f2");
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn curves_contract() {
    let dir = tempfile::tempdir().unwrap();
    let p = json!({
        "n_train": 64, "hidden": [8], "zetas": [{"kind": "zero"}, {"kind": "power", "exponent": 5}],
        "train": {"step_size": 1e-2, "steps": 20}, "checkpoints": [0, 5, 20], "grid_points": 21
    });
    let (set, report) = run_learned_curves(&spec(RunnerKind::Curves, p, vec![0], dir.path()), OutputFormat::Csv, true).unwrap();
    assert_eq!(set.table.rows().len(), 2 * 3 * 21);
    let epoch = set.table.column("epoch").unwrap();
    let y = set.table.column("y_hat").unwrap();
    for row in set.table.rows() {
        if row[epoch] == 0usize.into() {
            assert_eq!(row[y], 0.0.into());
        }
    }
    let init_check = report.checks.iter().find(|c| c.name.contains("epoch-0")).expect("epoch-0 check");
    assert!(init_check.passed);
    assert!(dir.path().join("curves.csv").exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));

    let bad = json!({"train": {"step_size": 1e-2, "steps": 5}, "checkpoints": [10]});
    assert!(run_learned_curves(&spec(RunnerKind::Curves, bad, vec![0], dir.path()), OutputFormat::Csv, false).is_err());
}

#[test]
fn ablation_grid_covers_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = json!({"copycat": tiny_copycat(), "sources": ["output", "first_hidden"]});
    let (cells, report) = run_ablations(&spec(RunnerKind::Ablate, p, vec![0], dir.path()), OutputFormat::Csv).unwrap();
    assert_eq!(cells.len(), 3 * 2 * 2);
    for f in Fusion::ALL {
        for sg in [true, false] {
            assert_eq!(cells.iter().filter(|c| c.fusion == f && c.stop_gradient == sg).count(), 2);
        }
    }
    assert!(report.checks.iter().any(|c| c.name.contains("stop-gradient-off") && c.passed));
    let csv = std::fs::read_to_string(dir.path().join("ablations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);

    let empty = json!({"fusions": []});
    assert!(run_ablations(&spec(RunnerKind::Ablate, empty, vec![0], dir.path()), OutputFormat::Csv).is_err());
}

/// Every fusion point fits the training region about as well as the best one.
#[test]
fn fusion_points_match_in_distribution() {
    let mut p: ToyParams = serde_json::from_value(json!({"hidden": [32, 32]})).unwrap();
    p.train.steps = 6000;
    let data = p.training_data(0).unwrap();
    let grid = gen_toy_grid(p.eval_points, TOY_TRAIN_INTERVAL, ToyFn::F1, p.eval_noise, 11).unwrap();
    let mut rmse = Vec::new();
    for f in Fusion::ALL {
        p.fusion = f;
        let m = p.train(Teacher::Power { exponent: 5 }, 0, &data, &mut |_, _| {}).unwrap();
        let mut s = 0.0;
        for i in 0..grid.len() {
            let r = primelab::runners::toy::predict(&m, grid.inputs().get(i, 0)).unwrap() - grid.targets()[i];
            s += r * r;
        }
        rmse.push((s / grid.len() as f64).sqrt());
    }
    let best = rmse.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(rmse.iter().all(|&r| r <= 2.0 * best), "{rmse:?}");
}
