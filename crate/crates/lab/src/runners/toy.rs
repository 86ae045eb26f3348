//! The 1-D regression table and the learned-function curves.

use primelab_core::nnet::{Activation, Loss, MlpInit, Optimizer, TrainConfig};
use primelab_core::priming::{
    forward_primed, train_primenet_observed, Fusion, KeyInputSpec, PrimeNetModel, PrimeNetSpec, PrimeTrainConfig,
    PrimingSpec, Teacher, ZetaTransform,
};
use primelab_core::rng::derive_seed;
use primelab_core::synth::{
    gen_toy_grid, gen_toy_regression, linspace, Interval, SyntheticDataset, ToyFn, TOY_OOD_INTERVAL,
    TOY_TRAIN_INTERVAL,
};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::format::{write_checkpoint, write_dataset, Cell, Checkpoint, OutputFormat, Table};
use crate::spec::{ExperimentSpec, RunReport, RunnerKind};
use crate::svg::{line_chart, Series};

/// Model and training settings shared by the table and curves runners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    pub n_train: usize,
    pub noise: f64,
    /// Grid points per evaluation interval.
    pub eval_points: usize,
    /// Noise added to the evaluation targets.
    pub eval_noise: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: MlpInit,
    pub fusion: Fusion,
    pub train: TrainConfig,
    pub zetas: Vec<Teacher>,
    /// Also write the training set and final checkpoints.
    pub save_artifacts: bool,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            n_train: 1000,
            noise: 0.1,
            eval_points: 512,
            eval_noise: 0.1,
            hidden: vec![64],
            activation: Activation::Relu,
            init: MlpInit::Symmetric { scale: 0.01 },
            fusion: Fusion::InputConcat,
            train: TrainConfig {
                step_size: 1e-3,
                steps: 6000,
                batch: 0,
                loss: Loss::Squared,
                seed: 0,
                optimizer: Optimizer::adam(),
                weight_decay: 3e-3,
            },
            zetas: vec![
                Teacher::Zero,
                Teacher::Power { exponent: 4 },
                Teacher::Power { exponent: 5 },
            ],
            save_artifacts: false,
        }
    }
}

impl ToyParams {
    pub fn model_spec(&self, teacher: Teacher) -> PrimeNetSpec {
        PrimeNetSpec {
            key_input: KeyInputSpec::Identity { dim: 1 },
            priming: PrimingSpec::Teacher { teacher },
            main_hidden: self.hidden.clone(),
            output_dim: 1,
            activation: self.activation,
            fusion: self.fusion,
            stop_gradient: true,
            zeta_transform: ZetaTransform::Identity,
            main_init: self.init,
            priming_init: MlpInit::Uniform,
        }
    }

    pub fn training_data(&self, seed: u64) -> LabResult<SyntheticDataset> {
        Ok(gen_toy_regression(
            self.n_train,
            TOY_TRAIN_INTERVAL,
            ToyFn::F1,
            self.noise,
            derive_seed(seed, 0),
        )?)
    }

    /// Trains the primed model for `teacher`; `observer` sees every step.
    pub fn train(
        &self,
        teacher: Teacher,
        seed: u64,
        data: &SyntheticDataset,
        observer: &mut dyn FnMut(usize, &PrimeNetModel),
    ) -> LabResult<PrimeNetModel> {
        let model = PrimeNetModel::build(&self.model_spec(teacher), derive_seed(seed, 1))?;
        let cfg = PrimeTrainConfig::new(self.train.clone());
        let (trained, _) = train_primenet_observed(&model, data, &cfg, observer)?;
        Ok(trained)
    }
}

pub fn predict(model: &PrimeNetModel, x: f64) -> LabResult<f64> {
    Ok(forward_primed(model, &[x])?.0[0])
}

fn rmse_on(model: &PrimeNetModel, data: &SyntheticDataset) -> LabResult<f64> {
    let mut s = 0.0;
    for i in 0..data.len() {
        let r = predict(model, data.inputs().get(i, 0))? - data.targets()[i];
        s += r * r;
    }
    Ok((s / data.len() as f64).sqrt())
}

/// One configuration of the RMSE table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub seed: u64,
    pub zeta: String,
    pub iid_f1: f64,
    pub iid_f2: f64,
    pub ood_f1: f64,
    pub ood_f2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub rows: Vec<RmseRow>,
}

impl RmseTable {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["seed", "zeta", "iid_f1", "iid_f2", "ood_f1", "ood_f2"]);
        for r in &self.rows {
            t.push(vec![
                r.seed.into(),
                r.zeta.clone().into(),
                r.iid_f1.into(),
                r.iid_f2.into(),
                r.ood_f1.into(),
                r.ood_f2.into(),
            ]);
        }
        t
    }

    pub fn row(&self, seed: u64, zeta: &str) -> Option<&RmseRow> {
        self.rows.iter().find(|r| r.seed == seed && r.zeta == zeta)
    }
}

fn eval_grids(p: &ToyParams, seed: u64) -> LabResult<[SyntheticDataset; 4]> {
    let g = |iv: Interval, f: ToyFn, k: u64| gen_toy_grid(p.eval_points, iv, f, p.eval_noise, derive_seed(seed, k));
    Ok([
        g(TOY_TRAIN_INTERVAL, ToyFn::F1, 2)?,
        g(TOY_TRAIN_INTERVAL, ToyFn::F2, 2)?,
        g(TOY_OOD_INTERVAL, ToyFn::F1, 3)?,
        g(TOY_OOD_INTERVAL, ToyFn::F2, 3)?,
    ])
}

/// Expected shape of a table row, as `(check name, passed, detail)`.
pub fn row_expectations(r: &RmseRow) -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    let iid_ok = [r.iid_f1, r.iid_f2].iter().all(|v| (0.08..=0.20).contains(v));
    out.push((
        format!("seed {} zeta={} in-distribution RMSE in [0.08, 0.20]", r.seed, r.zeta),
        iid_ok,
        format!("iid_f1 {:.4}, iid_f2 {:.4}", r.iid_f1, r.iid_f2),
    ));
    let detail = format!("ood_f1 {:.4}, ood_f2 {:.4}", r.ood_f1, r.ood_f2);
    let (name, ok) = match r.zeta.as_str() {
        "0" => ("both OOD RMSEs > 5", r.ood_f1 > 5.0 && r.ood_f2 > 5.0),
        "x^5" => ("OOD vs f1 < 0.5 and vs f2 > 5", r.ood_f1 < 0.5 && r.ood_f2 > 5.0),
        "x^4" => ("OOD vs f2 < 0.5 and vs f1 > 5", r.ood_f2 < 0.5 && r.ood_f1 > 5.0),
        _ => return out,
    };
    out.push((format!("seed {} zeta={} {}", r.seed, r.zeta, name), ok, detail));
    out
}

pub fn run_toy_table(spec: &ExperimentSpec, format: OutputFormat) -> LabResult<(RmseTable, RunReport)> {
    let p: ToyParams = spec.params()?;
    let mut report = RunReport::new(RunnerKind::ToyTable, &spec.seeds, &p)?;
    let dir = &spec.output_dir;
    let mut table = RmseTable::default();
    for &seed in &spec.seeds {
        let data = p.training_data(seed)?;
        let grids = eval_grids(&p, seed)?;
        if p.save_artifacts {
            report.files.extend(write_dataset(&data, dir, &format!("toy_train_seed{seed}"))?);
        }
        for &teacher in &p.zetas {
            let model = p.train(teacher, seed, &data, &mut |_, _| {})?;
            let e: Vec<f64> = grids.iter().map(|g| rmse_on(&model, g)).collect::<LabResult<_>>()?;
            table.rows.push(RmseRow {
                seed,
                zeta: teacher.label(),
                iid_f1: e[0],
                iid_f2: e[1],
                ood_f1: e[2],
                ood_f2: e[3],
            });
            if p.save_artifacts {
                let stem = format!("toy_model_seed{seed}_zeta_{}", teacher.label().replace('^', ""));
                report
                    .files
                    .extend(write_checkpoint(&Checkpoint::PrimeNet(model), seed, dir, &stem)?);
            }
        }
    }
    let valid = table
        .rows
        .iter()
        .all(|r| [r.iid_f1, r.iid_f2, r.ood_f1, r.ood_f2].iter().all(|v| v.is_finite() && *v >= 0.0));
    report.check("all RMSE entries finite and >= 0", valid, format!("{} rows", table.rows.len()));
    for r in &table.rows {
        for (name, ok, detail) in row_expectations(r) {
            report.check(name, ok, detail);
        }
    }
    report.write(dir, &format!("rmse_table.{}", format.extension()), &table.table().render(format)?)?;
    report.write_manifest(dir, format)?;
    Ok((table, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct CurveParams {
    #[serde(flatten)]
    pub toy: ToyParams,
    /// Training steps (full-batch epochs) at which curves are recorded.
    pub checkpoints: Vec<usize>,
    /// Points on `[0, 2]`, endpoints included.
    pub grid_points: usize,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            toy: ToyParams::default(),
            checkpoints: vec![0, 500, 2000, 6000],
            grid_points: 401,
        }
    }
}

impl TryFrom<serde_json::Map<String, serde_json::Value>> for CurveParams {
    type Error = serde_json::Error;

    fn try_from(mut map: serde_json::Map<String, serde_json::Value>) -> Result<Self, Self::Error> {
        let d = Self::default();
        let checkpoints = match map.remove("checkpoints") {
            Some(v) => serde_json::from_value(v)?,
            None => d.checkpoints,
        };
        let grid_points = match map.remove("grid_points") {
            Some(v) => serde_json::from_value(v)?,
            None => d.grid_points,
        };
        Ok(Self {
            toy: serde_json::from_value(serde_json::Value::Object(map))?,
            checkpoints,
            grid_points,
        })
    }
}

/// Curve data in long format plus final-curve summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    pub table: Table,
    /// `(seed, zeta, max |y - f1|, max |y - f2|)` on `[1, 2]` for the last checkpoint.
    pub final_ood_max_dev: Vec<(u64, String, f64, f64)>,
}

pub fn run_learned_curves(spec: &ExperimentSpec, format: OutputFormat, svg: bool) -> LabResult<(CurveSet, RunReport)> {
    let p: CurveParams = spec.params()?;
    if p.grid_points < 2 {
        return Err(LabError::Config("grid_points must be at least 2".into()));
    }
    if let Some(&c) = p.checkpoints.iter().find(|&&c| c > p.toy.train.steps) {
        return Err(LabError::Config(format!("checkpoint {c} exceeds the {} training steps", p.toy.train.steps)));
    }
    let mut report = RunReport::new(RunnerKind::Curves, &spec.seeds, &p)?;
    let dir = &spec.output_dir;
    let xs = linspace(0.0, 2.0, p.grid_points);
    let mut table = Table::new(["seed", "zeta", "epoch", "x", "y_hat", "f1", "f2"]);
    let mut devs = Vec::new();
    let mut zero_at_init = true;
    for &seed in &spec.seeds {
        let data = p.toy.training_data(seed)?;
        for &teacher in &p.toy.zetas {
            let mut curves: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut err = None;
            p.toy.train(teacher, seed, &data, &mut |step, m| {
                if err.is_none() && p.checkpoints.contains(&step) {
                    match xs.iter().map(|&x| predict(m, x)).collect::<LabResult<Vec<_>>>() {
                        Ok(ys) => curves.push((step, ys)),
                        Err(e) => err = Some(e),
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            let label = teacher.label();
            for (epoch, ys) in &curves {
                if *epoch == 0 && matches!(p.toy.init, MlpInit::Symmetric { .. }) {
                    zero_at_init &= ys.iter().all(|&y| y == 0.0);
                }
                for (&x, &y) in xs.iter().zip(ys) {
                    table.push(vec![
                        seed.into(),
                        label.clone().into(),
                        (*epoch).into(),
                        x.into(),
                        y.into(),
                        ToyFn::F1.eval(x).into(),
                        ToyFn::F2.eval(x).into(),
                    ]);
                }
            }
            if let Some((_, ys)) = curves.last() {
                let (mut d1, mut d2) = (0.0f64, 0.0f64);
                for (&x, &y) in xs.iter().zip(ys) {
                    if x >= 1.0 {
                        d1 = d1.max((y - ToyFn::F1.eval(x)).abs());
                        d2 = d2.max((y - ToyFn::F2.eval(x)).abs());
                    }
                }
                devs.push((seed, label.clone(), d1, d2));
            }
            if svg {
                let mut series: Vec<Series> = curves
                    .iter()
                    .map(|(e, ys)| Series::new(format!("epoch {e}"), xs.clone(), ys.clone()))
                    .collect();
                series.push(Series::new("f1", xs.clone(), xs.iter().map(|&x| ToyFn::F1.eval(x)).collect()));
                series.push(Series::new("f2", xs.clone(), xs.iter().map(|&x| ToyFn::F2.eval(x)).collect()));
                let title = format!("zeta = {label}, seed {seed}");
                let file = format!("curves_seed{seed}_zeta_{}.svg", label.replace('^', ""));
                report.write(dir, &file, line_chart(&title, "x", "y", &series).as_bytes())?;
            }
        }
    }
    if p.checkpoints.contains(&0) && matches!(p.toy.init, MlpInit::Symmetric { .. }) {
        report.check("epoch-0 curves are identically 0", zero_at_init, "symmetric initialization");
    }
    let xcol = table.column("x").expect("x column");
    let has_ends = table.rows().iter().any(|r| r[xcol] == Cell::Num(0.0))
        && table.rows().iter().any(|r| r[xcol] == Cell::Num(2.0));
    report.check("grid endpoints 0 and 2 present", has_ends, format!("{} grid points", p.grid_points));
    for (seed, z, d1, d2) in &devs {
        if z == "x^5" {
            report.check(
                format!("seed {seed} zeta=x^5 final curve closer to f1 than f2 on [1, 2]"),
                d1 < d2,
                format!("max |y - f1| {d1:.4}, max |y - f2| {d2:.4}"),
            );
        }
    }
    report.write(dir, &format!("curves.{}", format.extension()), &table.render(format)?)?;
    report.write_manifest(dir, format)?;
    Ok((
        CurveSet {
            table,
            final_ood_max_dev: devs,
        },
        report,
    ))
}
