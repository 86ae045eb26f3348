//! Kernel-regime diagnostics gathered into one report.

use primelab_core::kernel::{
    e_lipschitz_check, kernel_gap_ladder, theorem_c1c2_check, trajectory_equivalence_check, xtx_concentration_check,
    ConcentrationReport, GapLadderConfig, GapLadderReport, LipschitzReport, TheoremConfig, TheoremReport,
    TrajectoryCheckReport,
};
use primelab_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::LabResult;
use crate::format::{json_bytes, OutputFormat, Table};
use crate::spec::{ExperimentSpec, RunReport, RunnerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryParams {
    pub instances: usize,
    pub steps: Vec<u64>,
    pub tolerance: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            instances: 50,
            steps: vec![1, 7, 64, 1000],
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EBoundParams {
    pub t: Vec<u64>,
    pub grid: usize,
}

impl Default for EBoundParams {
    fn default() -> Self {
        Self {
            t: vec![2, 5, 20, 100],
            grid: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationParams {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    /// Every eigenvalue of `X^T X / n` must lie in `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        Self {
            n: 4000,
            d: 20,
            trials: 20,
            lower: 0.8,
            upper: 1.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryParams {
    pub trajectory: TrajectoryParams,
    /// Ladder seeds are offset by the run seed.
    pub ladder: GapLadderConfig,
    pub e_bound: EBoundParams,
    pub concentration: ConcentrationParams,
    /// Template; the seed field is replaced by `run seed + k`.
    pub theorem: TheoremConfig,
    pub theorem_trials: usize,
    pub theorem_min_passes: usize,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryParams::default(),
            ladder: GapLadderConfig::default(),
            e_bound: EBoundParams::default(),
            concentration: ConcentrationParams::default(),
            theorem: TheoremConfig::default(),
            theorem_trials: 5,
            theorem_min_passes: 4,
        }
    }
}

/// Measured values of every diagnostic for one run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub trajectory: TrajectoryCheckReport,
    pub gap_ladder: GapLadderReport,
    pub e_bound: Vec<LipschitzReport>,
    pub concentration: ConcentrationReport,
    pub theorem: Vec<TheoremReport>,
    pub theorem_passes: usize,
}

pub fn theory_suite(p: &TheoryParams, seed: u64) -> LabResult<TheoryReport> {
    let trajectory = trajectory_equivalence_check(p.trajectory.instances, &p.trajectory.steps, p.trajectory.tolerance, seed)?;
    let mut ladder = p.ladder.clone();
    ladder.seeds = ladder.seeds.iter().map(|s| s + seed).collect();
    let gap_ladder = kernel_gap_ladder(&ladder)?;
    let e_bound = p
        .e_bound
        .t
        .iter()
        .map(|&t| e_lipschitz_check(t, p.e_bound.grid))
        .collect::<Result<Vec<_>, _>>()?;
    let c = &p.concentration;
    let concentration = xtx_concentration_check(c.n, c.d, &Matrix::identity(c.d), c.trials, seed)?;
    let mut theorem = Vec::with_capacity(p.theorem_trials);
    for k in 0..p.theorem_trials as u64 {
        let cfg = TheoremConfig {
            seed: seed + k,
            ..p.theorem.clone()
        };
        theorem.push(theorem_c1c2_check(&cfg)?);
    }
    let theorem_passes = theorem.iter().filter(|r| r.small_train_error && r.closer_to_h).count();
    Ok(TheoryReport {
        seed,
        trajectory,
        gap_ladder,
        e_bound,
        concentration,
        theorem,
        theorem_passes,
    })
}

/// Pass/fail conditions of one report, as `(name, passed, detail)`.
pub fn theory_checks(p: &TheoryParams, r: &TheoryReport) -> Vec<(String, bool, String)> {
    let s = r.seed;
    let t = &r.trajectory;
    let mut out = vec![(
        format!("seed {s} trajectory closed form matches iterative GD"),
        t.passed,
        format!(
            "max relative deviation {:.3e} (over) / {:.3e} (under), tolerance {:.0e}",
            t.max_rel_dev_overparam, t.max_rel_dev_underparam, t.tolerance
        ),
    )];
    let medians: Vec<String> = r.gap_ladder.rows.iter().map(|row| format!("d={} {:.4e}", row.d, row.median_train)).collect();
    out.push((
        format!("seed {s} kernel gap medians strictly decreasing in d"),
        r.gap_ladder.strictly_decreasing,
        medians.join(", "),
    ));
    for e in &r.e_bound {
        out.push((
            format!("e(x) slope bound at t={}", e.t),
            e.within_bound,
            format!("max slope {:.6} vs t(t-1) = {}", e.max_slope, e.bound),
        ));
    }
    let c = &r.concentration;
    out.push((
        format!("seed {s} X^T X / n eigenvalues within [{}, {}]", p.concentration.lower, p.concentration.upper),
        c.range_min >= p.concentration.lower && c.range_max <= p.concentration.upper,
        format!("observed [{:.4}, {:.4}] over {} trials", c.range_min, c.range_max, c.trials.len()),
    ));
    let detail: Vec<String> = r
        .theorem
        .iter()
        .map(|th| {
            format!(
                "seed {}: residual {:.3}, |f-h| {:.3}, |f-s| {:.3}",
                th.seed, th.train_residual, th.ood_dist_h, th.ood_dist_s
            )
        })
        .collect();
    out.push((
        format!(
            "seed {s} trained kernel model closer to h than s out of distribution ({} of {} seeds required)",
            p.theorem_min_passes, p.theorem_trials
        ),
        r.theorem_passes >= p.theorem_min_passes,
        format!("{} passes; {}", r.theorem_passes, detail.join("; ")),
    ));
    out
}

pub fn run_theory_suite(spec: &ExperimentSpec, format: OutputFormat) -> LabResult<(Vec<TheoryReport>, RunReport)> {
    let p: TheoryParams = spec.params()?;
    let mut report = RunReport::new(RunnerKind::Theory, &spec.seeds, &p)?;
    let dir = &spec.output_dir;
    let mut reports = Vec::new();
    for &seed in &spec.seeds {
        let r = theory_suite(&p, seed)?;
        for (name, ok, detail) in theory_checks(&p, &r) {
            report.check(name, ok, detail);
        }
        reports.push(r);
    }
    let doc = serde_json::json!({
        "reports": reports,
        "checks": report.checks,
        "all_passed": report.all_passed(),
    });
    report.write(dir, "theory_report.json", &json_bytes(&doc)?)?;
    if format == OutputFormat::Csv {
        let mut t = Table::new(["check", "passed", "detail"]);
        for c in &report.checks {
            t.push(vec![c.name.clone().into(), c.passed.into(), c.detail.clone().into()]);
        }
        report.write(dir, "theory_checks.csv", &t.to_csv()?)?;
    }
    report.write_manifest(dir, format)?;
    Ok((reports, report))
}
