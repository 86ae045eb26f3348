//! Smooth-expert imitation: history models, single-frame models and primed
//! models compared on change points and under interventions.

use primelab_core::nnet::{train_sgd, Activation, Loss, Mlp, MlpInit, MlpShape, Optimizer, TrainConfig};
use primelab_core::priming::{
    flip_rate_samples, train_primenet, zeta_effects, Fusion, InterventionReport, KeyInputSpec, KeyPolicy,
    PrimeNetModel, PrimeNetSpec, PrimeTrainConfig, PrimingSpec, Policy, Schedule, ZetaSource, ZetaTransform,
};
use primelab_core::rng::derive_seed;
use primelab_core::synth::{gen_copycat_sequences, CopycatConfig, SequenceDataset, StackedSamples};
use serde::{Deserialize, Serialize};

use crate::error::LabResult;
use crate::format::{json_bytes, write_checkpoint, write_dataset, Checkpoint, OutputFormat, Table};
use crate::spec::{ExperimentSpec, RunReport, RunnerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopycatParams {
    pub data: CopycatConfig,
    pub test_episodes: usize,
    /// Hidden widths of the history model and of the main module.
    pub hidden: Vec<usize>,
    pub priming_hidden: Vec<usize>,
    pub activation: Activation,
    /// Initialization of the history, key-input and main networks.
    pub init: MlpInit,
    pub fusion: Fusion,
    pub stop_gradient: bool,
    pub train: TrainConfig,
    /// Predictions below this magnitude count as stationary.
    pub threshold: f64,
    pub save_artifacts: bool,
}

/// Latent-to-action weights of the default task (16-dim latent).
pub const DEFAULT_ACTION_WEIGHTS: [f64; 16] = [
    0.2, -0.2, 0.2, 0.2, -0.2, 0.2, 0.2, -0.2, 0.2, 0.2, -0.2, -0.2, 0.2, 0.2, 0.2, -0.2,
];

impl Default for CopycatParams {
    fn default() -> Self {
        Self {
            data: CopycatConfig {
                obs_noise: 0.2,
                action_weights: DEFAULT_ACTION_WEIGHTS.to_vec(),
                ..CopycatConfig::default()
            },
            test_episodes: 40,
            hidden: vec![64, 64],
            priming_hidden: vec![64],
            activation: Activation::Relu,
            init: MlpInit::Symmetric { scale: 1.0 },
            fusion: Fusion::PenultimateConcat,
            stop_gradient: true,
            train: TrainConfig {
                step_size: 1e-3,
                steps: 3000,
                batch: 128,
                loss: Loss::Squared,
                seed: 0,
                optimizer: Optimizer::adam(),
                weight_decay: 0.0,
            },
            threshold: 0.1,
            save_artifacts: false,
        }
    }
}

/// Train and held-out episodes for one seed.
pub struct CopycatData {
    pub train: SequenceDataset,
    pub test: SequenceDataset,
    pub train_samples: StackedSamples,
    pub test_samples: StackedSamples,
}

impl CopycatParams {
    pub fn data(&self, seed: u64) -> LabResult<CopycatData> {
        let train = gen_copycat_sequences(&self.data, derive_seed(seed, 0))?;
        let test_cfg = CopycatConfig {
            episodes: self.test_episodes,
            ..self.data.clone()
        };
        let test = gen_copycat_sequences(&test_cfg, derive_seed(seed, 1))?;
        Ok(CopycatData {
            train_samples: train.stacked(),
            test_samples: test.stacked(),
            train,
            test,
        })
    }

    fn train_cfg(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(seed, 2),
            ..self.train.clone()
        }
    }

    fn mlp(&self, input: usize, seed: u64) -> LabResult<Mlp> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        let shape = MlpShape {
            sizes,
            hidden: self.activation,
            output: Activation::Linear,
            injection: None,
        };
        Ok(Mlp::init(&shape, self.init, seed)?)
    }

    pub fn key_input(&self) -> KeyInputSpec {
        KeyInputSpec::LastFrame {
            history: self.data.history,
            frame_dim: self.data.action_weights.len() + 1,
        }
    }

    pub fn fit_vanilla(&self, d: &CopycatData, seed: u64) -> LabResult<Mlp> {
        let net = self.mlp(d.train_samples.inputs.cols(), derive_seed(seed, 3))?;
        let data = d.train_samples.to_dataset(seed)?;
        Ok(train_sgd(&net, &data, &self.train_cfg(seed))?.0)
    }

    pub fn fit_key_only(&self, d: &CopycatData, seed: u64) -> LabResult<KeyPolicy> {
        let last = d.train_samples.last_frame_only();
        let net = self.mlp(last.inputs.cols(), derive_seed(seed, 4))?;
        let data = last.to_dataset(seed)?;
        Ok(KeyPolicy {
            key_input: self.key_input(),
            net: train_sgd(&net, &data, &self.train_cfg(seed))?.0,
        })
    }

    pub fn primenet_spec(&self, fusion: Fusion, source: ZetaSource, stop_gradient: bool) -> PrimeNetSpec {
        PrimeNetSpec {
            key_input: self.key_input(),
            priming: PrimingSpec::Learned {
                hidden: self.priming_hidden.clone(),
                source,
            },
            main_hidden: self.hidden.clone(),
            output_dim: 1,
            activation: self.activation,
            fusion,
            stop_gradient,
            zeta_transform: ZetaTransform::Identity,
            main_init: self.init,
            priming_init: MlpInit::Uniform,
        }
    }

    pub fn fit_primenet(
        &self,
        d: &CopycatData,
        seed: u64,
        spec: &PrimeNetSpec,
        schedule: Schedule,
    ) -> LabResult<PrimeNetModel> {
        let model = PrimeNetModel::build(spec, derive_seed(seed, 5))?;
        let data = d.train_samples.to_dataset(seed)?;
        let cfg = PrimeTrainConfig {
            schedule,
            ..PrimeTrainConfig::new(self.train_cfg(seed))
        };
        Ok(train_primenet(&model, &data, &cfg)?.0)
    }
}

/// Squared-error summaries of a policy on stacked samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mse: f64,
    pub change_point_mse: f64,
    pub steady_mse: f64,
}

pub fn error_summary<P: Policy + ?Sized>(model: &P, s: &StackedSamples) -> LabResult<ErrorSummary> {
    let (mut all, mut cp, mut st) = ((0.0, 0usize), (0.0, 0usize), (0.0, 0usize));
    for i in 0..s.len() {
        let r = model.act(s.inputs.row(i))? - s.targets[i];
        let e = r * r;
        all = (all.0 + e, all.1 + 1);
        if s.change_point[i] {
            cp = (cp.0 + e, cp.1 + 1);
        } else {
            st = (st.0 + e, st.1 + 1);
        }
    }
    let mean = |(a, n): (f64, usize)| if n == 0 { f64::NAN } else { a / n as f64 };
    Ok(ErrorSummary {
        mse: mean(all),
        change_point_mse: mean(cp),
        steady_mse: mean(st),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub seed: u64,
    pub model: String,
    pub errors: ErrorSummary,
    pub flip: InterventionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopycatResult {
    pub models: Vec<ModelResult>,
    /// `(seed, sample index, change point, effect)` on held-out samples.
    pub zeta_effects: Vec<(u64, usize, bool, f64)>,
    /// `(seed, low, high)` override pair.
    pub overrides: Vec<(u64, f64, f64)>,
}

impl CopycatResult {
    pub fn get(&self, seed: u64, model: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.seed == seed && m.model == model)
    }
}

fn median(v: &mut [f64]) -> f64 {
    primelab_core::kernel::median(v)
}

pub fn run_copycat_suite(spec: &ExperimentSpec, format: OutputFormat) -> LabResult<(CopycatResult, RunReport)> {
    let p: CopycatParams = spec.params()?;
    let mut report = RunReport::new(RunnerKind::Copycat, &spec.seeds, &p)?;
    let dir = &spec.output_dir;
    let mut result = CopycatResult {
        models: Vec::new(),
        zeta_effects: Vec::new(),
        overrides: Vec::new(),
    };
    for &seed in &spec.seeds {
        let d = p.data(seed)?;
        let vanilla = p.fit_vanilla(&d, seed)?;
        let key_only = p.fit_key_only(&d, seed)?;
        let spec_pn = p.primenet_spec(p.fusion, ZetaSource::Output, p.stop_gradient);
        let primed = p.fit_primenet(&d, seed, &spec_pn, Schedule::EndToEnd)?;
        let models: [(&str, &dyn Policy); 3] = [("vanilla", &vanilla), ("key_only", &key_only), ("primenet", &primed)];
        for (name, m) in models {
            result.models.push(ModelResult {
                seed,
                model: name.into(),
                errors: error_summary(m, &d.test_samples)?,
                flip: flip_rate_samples(m, &d.test_samples, p.threshold)?,
            });
        }
        let high = d.train.max_action();
        result.overrides.push((seed, 0.0, high));
        let eff = zeta_effects(&primed, &d.test_samples.inputs, 0.0, high)?;
        for (i, e) in eff.into_iter().enumerate() {
            result.zeta_effects.push((seed, i, d.test_samples.change_point[i], e));
        }
        if p.save_artifacts {
            report.files.extend(write_dataset(&d.train_samples.to_dataset(seed)?, dir, &format!("copycat_train_seed{seed}"))?);
            report.files.extend(write_checkpoint(&Checkpoint::Mlp(vanilla), seed, dir, &format!("copycat_vanilla_seed{seed}"))?);
            report.files.extend(write_checkpoint(&Checkpoint::KeyPolicy(key_only), seed, dir, &format!("copycat_key_only_seed{seed}"))?);
            report.files.extend(write_checkpoint(&Checkpoint::PrimeNet(primed), seed, dir, &format!("copycat_primenet_seed{seed}"))?);
        }
    }

    for &seed in &spec.seeds {
        let (v, k, pn) = (
            result.get(seed, "vanilla").expect("vanilla row"),
            result.get(seed, "key_only").expect("key-only row"),
            result.get(seed, "primenet").expect("primenet row"),
        );
        report.check(
            format!("seed {seed} primenet flip rate < vanilla flip rate"),
            pn.flip.flip_rate < v.flip.flip_rate,
            format!("primenet {:.4} vs vanilla {:.4}", pn.flip.flip_rate, v.flip.flip_rate),
        );
        report.check(
            format!("seed {seed} key-only flip rate = 0"),
            k.flip.flip_rate == 0.0,
            format!("{:.4}", k.flip.flip_rate),
        );
        let cp: Vec<f64> = result
            .zeta_effects
            .iter()
            .filter(|e| e.0 == seed && e.2)
            .map(|e| e.3)
            .collect();
        let min = cp.iter().copied().fold(f64::INFINITY, f64::min);
        report.check(
            format!("seed {seed} zeta effect > 0 on every change-point sample"),
            !cp.is_empty() && min > 0.0,
            format!("{} change points, min effect {min:.4}", cp.len()),
        );
    }
    let mut pn_cp: Vec<f64> = result.models.iter().filter(|m| m.model == "primenet").map(|m| m.errors.change_point_mse).collect();
    let mut v_cp: Vec<f64> = result.models.iter().filter(|m| m.model == "vanilla").map(|m| m.errors.change_point_mse).collect();
    let (mp, mv) = (median(&mut pn_cp), median(&mut v_cp));
    report.check(
        "median change-point MSE primenet <= vanilla",
        mp <= mv,
        format!("primenet {mp:.5} vs vanilla {mv:.5}"),
    );

    let mut t = Table::new([
        "seed",
        "model",
        "mse",
        "change_point_mse",
        "steady_mse",
        "flip_rate",
        "baseline_flip_rate",
        "moving",
        "flipped",
    ]);
    for m in &result.models {
        t.push(vec![
            m.seed.into(),
            m.model.clone().into(),
            m.errors.mse.into(),
            m.errors.change_point_mse.into(),
            m.errors.steady_mse.into(),
            m.flip.flip_rate.into(),
            m.flip.baseline_flip_rate.into(),
            m.flip.moving.into(),
            m.flip.flipped.into(),
        ]);
    }
    report.write(dir, &format!("copycat_metrics.{}", format.extension()), &t.render(format)?)?;
    let mut e = Table::new(["seed", "sample", "change_point", "effect"]);
    for &(seed, i, cp, v) in &result.zeta_effects {
        e.push(vec![seed.into(), i.into(), cp.into(), v.into()]);
    }
    report.write(dir, &format!("zeta_effects.{}", format.extension()), &e.render(format)?)?;
    let summary = serde_json::json!({
        "overrides": result.overrides.iter().map(|(s, a, b)| serde_json::json!({"seed": s, "low": a, "high": b})).collect::<Vec<_>>(),
        "median_change_point_mse": {"primenet": mp, "vanilla": mv},
        "checks": report.checks,
    });
    report.write(dir, "copycat_summary.json", &json_bytes(&summary)?)?;
    report.write_manifest(dir, format)?;
    Ok((result, report))
}
