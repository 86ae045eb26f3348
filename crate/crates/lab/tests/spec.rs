use primelab::runners::ablate::AblateParams;
use primelab::runners::copycat::CopycatParams;
use primelab::runners::theory::TheoryParams;
use primelab::runners::toy::{CurveParams, ToyParams};
use primelab::{ExperimentSpec, LabError, RunnerKind};
use serde_json::json;

fn params_error(kind: RunnerKind, parameters: serde_json::Value) -> Option<LabError> {
    let spec = ExperimentSpec::new(kind).with_parameters(parameters).unwrap();
    let r = match kind {
        RunnerKind::ToyTable => spec.params::<ToyParams>().err(),
        RunnerKind::Curves => spec.params::<CurveParams>().err(),
        RunnerKind::Theory => spec.params::<TheoryParams>().err(),
        RunnerKind::Copycat => spec.params::<CopycatParams>().err(),
        RunnerKind::Ablate => spec.params::<AblateParams>().err(),
    };
    r
}

#[test]
fn every_runner_accepts_empty_parameters() {
    for kind in RunnerKind::ALL {
        assert!(params_error(kind, json!({})).is_none(), "{kind}");
    }
}

#[test]
fn unknown_parameter_keys_are_rejected() {
    for kind in RunnerKind::ALL {
        let e = params_error(kind, json!({"definitely_not_a_key": 1})).expect("rejected");
        assert!(matches!(e, LabError::Config(_)), "{kind}: {e}");
        assert_eq!(e.exit_code(), 1);
    }
    let nested = [
        (RunnerKind::ToyTable, json!({"train": {"step_size": 0.1, "steps": 1, "momentum": 0.9}})),
        (RunnerKind::Curves, json!({"train": {"step_size": 0.1, "steps": 1, "momentum": 0.9}})),
        (RunnerKind::Theory, json!({"ladder": {"depth": 3}})),
        (RunnerKind::Copycat, json!({"data": {"speed": 3}})),
        (RunnerKind::Ablate, json!({"copycat": {"bogus": true}})),
    ];
    for (kind, p) in nested {
        assert!(params_error(kind, p).is_some(), "{kind}");
    }
}

#[test]
fn curves_take_toy_keys_at_top_level() {
    let spec = ExperimentSpec::new(RunnerKind::Curves)
        .with_parameters(json!({"n_train": 50, "checkpoints": [0, 10], "grid_points": 11}))
        .unwrap();
    let p: CurveParams = spec.params().unwrap();
    assert_eq!(p.toy.n_train, 50);
    assert_eq!(p.checkpoints, vec![0, 10]);
}

#[test]
fn spec_files_validate_name_and_keys() {
    let s = ExperimentSpec::from_json(r#"{"name": "copycat"}"#).unwrap();
    assert_eq!(s.kind().unwrap(), RunnerKind::Copycat);
    assert_eq!(s.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(s.output_dir, std::path::PathBuf::from("out"));

    let s = ExperimentSpec::from_json(r#"{"name": "theory", "seeds": [7, 8], "output_dir": "x"}"#).unwrap();
    assert_eq!(s.seeds, vec![7, 8]);

    for bad in [
        r#"{"name": "nope"}"#,
        r#"{"name": "theory", "extra": 1}"#,
        r#"{"parameters": {}}"#,
        r#"{"name": "theory", "seeds": [-1]}"#,
        "[]",
    ] {
        assert!(matches!(ExperimentSpec::from_json(bad), Err(LabError::Config(_))), "{bad}");
    }
    assert!(ExperimentSpec::new(RunnerKind::Theory).with_parameters(json!([1])).is_err());
}

#[test]
fn runner_names_round_trip() {
    for kind in RunnerKind::ALL {
        assert_eq!(kind.name().parse::<RunnerKind>().unwrap(), kind);
        assert_eq!(serde_json::to_value(kind).unwrap(), json!(kind.name()));
        assert!(!kind.default_seeds().is_empty());
    }
}
