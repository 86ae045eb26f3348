//! Primed-model ablations on the copycat task: fusion point, stop-gradient
//! and the depth of the layer that supplies ζ.

use primelab_core::nnet::{Loss, Optimizer, TrainConfig};
use primelab_core::priming::{flip_rate_samples, Fusion, Schedule, ZetaSource};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::format::{json_bytes, OutputFormat, Table};
use crate::runners::copycat::{error_summary, CopycatParams};
use crate::spec::{ExperimentSpec, RunReport, RunnerKind};

/// Where ζ is read from in the priming network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDepth {
    Output,
    FirstHidden,
    LastHidden,
}

impl SourceDepth {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceDepth::Output => "output",
            SourceDepth::FirstHidden => "first_hidden",
            SourceDepth::LastHidden => "last_hidden",
        }
    }

    pub fn zeta_source(self, priming_hidden: usize) -> LabResult<ZetaSource> {
        if priming_hidden == 0 && self != SourceDepth::Output {
            return Err(LabError::Config("hidden ζ sources need a priming hidden layer".into()));
        }
        Ok(match self {
            SourceDepth::Output => ZetaSource::Output,
            SourceDepth::FirstHidden => ZetaSource::Hidden { layer: 0 },
            SourceDepth::LastHidden => ZetaSource::Hidden {
                layer: priming_hidden - 1,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateParams {
    pub copycat: CopycatParams,
    pub fusions: Vec<Fusion>,
    pub stop_gradient: Vec<bool>,
    pub sources: Vec<SourceDepth>,
    /// Cells whose fusion and stop-gradient match these are compared across sources.
    pub reference_fusion: Fusion,
    pub max_fusion_ratio: f64,
}

impl Default for AblateParams {
    fn default() -> Self {
        let copycat = CopycatParams {
            priming_hidden: vec![32, 32],
            hidden: vec![32, 32],
            train: TrainConfig {
                step_size: 2e-3,
                steps: 1500,
                batch: 128,
                loss: Loss::Squared,
                seed: 0,
                optimizer: Optimizer::adam(),
                weight_decay: 0.0,
            },
            ..CopycatParams::default()
        };
        Self {
            copycat,
            fusions: Fusion::ALL.to_vec(),
            stop_gradient: vec![true, false],
            sources: vec![SourceDepth::Output, SourceDepth::FirstHidden, SourceDepth::LastHidden],
            reference_fusion: Fusion::PenultimateConcat,
            max_fusion_ratio: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub seed: u64,
    pub fusion: Fusion,
    pub stop_gradient: bool,
    pub source: SourceDepth,
    /// Change-point MSE on held-out episodes.
    pub ood_mse: f64,
    /// Steady-segment MSE on held-out episodes.
    pub iid_mse: f64,
    pub flip_rate: f64,
}

fn median_of(cells: &[AblationCell], keep: impl Fn(&AblationCell) -> bool, value: impl Fn(&AblationCell) -> f64) -> f64 {
    let v: Vec<f64> = cells.iter().filter(|c| keep(c)).map(value).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    primelab_core::kernel::median(&v)
}

pub fn run_ablations(spec: &ExperimentSpec, format: OutputFormat) -> LabResult<(Vec<AblationCell>, RunReport)> {
    let p: AblateParams = spec.params()?;
    if p.fusions.is_empty() || p.stop_gradient.is_empty() || p.sources.is_empty() {
        return Err(LabError::Config("ablation grid axes must be non-empty".into()));
    }
    let mut report = RunReport::new(RunnerKind::Ablate, &spec.seeds, &p)?;
    let cc = &p.copycat;
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        let d = cc.data(seed)?;
        for &fusion in &p.fusions {
            for &sg in &p.stop_gradient {
                for &source in &p.sources {
                    let s = cc.primenet_spec(fusion, source.zeta_source(cc.priming_hidden.len())?, sg);
                    let model = cc.fit_primenet(&d, seed, &s, Schedule::EndToEnd)?;
                    let err = error_summary(&model, &d.test_samples)?;
                    let flip = flip_rate_samples(&model, &d.test_samples, cc.threshold)?;
                    cells.push(AblationCell {
                        seed,
                        fusion,
                        stop_gradient: sg,
                        source,
                        ood_mse: err.change_point_mse,
                        iid_mse: err.steady_mse,
                        flip_rate: flip.flip_rate,
                    });
                }
            }
        }
    }

    let reference = |c: &AblationCell, src: SourceDepth| c.fusion == p.reference_fusion && c.stop_gradient && c.source == src;
    if p.sources.contains(&SourceDepth::Output) && p.sources.contains(&SourceDepth::FirstHidden) {
        let out = median_of(&cells, |c| reference(c, SourceDepth::Output), |c| c.ood_mse);
        let first = median_of(&cells, |c| reference(c, SourceDepth::FirstHidden), |c| c.ood_mse);
        report.check(
            "median OOD MSE: output ζ < first-hidden ζ",
            out < first,
            format!("output {out:.5} vs first hidden {first:.5}"),
        );
    }
    if p.sources.contains(&SourceDepth::Output) && p.stop_gradient.contains(&true) {
        let per_fusion: Vec<(Fusion, f64)> = p
            .fusions
            .iter()
            .map(|&f| {
                let m = median_of(
                    &cells,
                    |c| c.fusion == f && c.stop_gradient && c.source == SourceDepth::Output,
                    |c| c.iid_mse,
                );
                (f, m)
            })
            .collect();
        let lo = per_fusion.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = per_fusion.iter().map(|x| x.1).fold(0.0, f64::max);
        let detail = per_fusion
            .iter()
            .map(|(f, m)| format!("{} {m:.5}", f.as_str()))
            .collect::<Vec<_>>()
            .join(", ");
        report.check(
            format!("fusion points within {}x in-distribution", p.max_fusion_ratio),
            lo > 0.0 && hi <= p.max_fusion_ratio * lo,
            detail,
        );
    }
    if p.stop_gradient.contains(&false) {
        let off: Vec<&AblationCell> = cells.iter().filter(|c| !c.stop_gradient).collect();
        let on = median_of(&cells, |c| c.stop_gradient, |c| c.ood_mse);
        let off_m = median_of(&cells, |c| !c.stop_gradient, |c| c.ood_mse);
        report.check(
            "stop-gradient-off cells recorded",
            !off.is_empty() && off.iter().all(|c| c.ood_mse.is_finite() && c.iid_mse.is_finite()),
            format!("{} cells, median OOD MSE on {on:.5} vs off {off_m:.5}", off.len()),
        );
    }

    let mut t = Table::new(["seed", "fusion", "stop_gradient", "zeta_source", "ood_mse", "iid_mse", "flip_rate"]);
    for c in &cells {
        t.push(vec![
            c.seed.into(),
            c.fusion.as_str().into(),
            c.stop_gradient.into(),
            c.source.as_str().into(),
            c.ood_mse.into(),
            c.iid_mse.into(),
            c.flip_rate.into(),
        ]);
    }
    let dir = &spec.output_dir;
    report.write(dir, &format!("ablations.{}", format.extension()), &t.render(format)?)?;
    report.write(dir, "ablation_checks.json", &json_bytes(&report.checks)?)?;
    report.write_manifest(dir, format)?;
    Ok((cells, report))
}
