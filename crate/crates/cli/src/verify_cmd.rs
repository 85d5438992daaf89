//! `qflow verify`

use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::{json, Value};

use qflow_core::bench::{
    probe_small_angle_nan, verify_cost_reduction, verify_coupling_marginals, verify_marginal_preservation,
    verify_scheduler_cost, CostFn, MarginalRow, DEFAULT_NAN_PROBES,
};
use qflow_core::frames::FrameTransform;
use qflow_core::interpolants::SchedulerConfig;
use qflow_core::model::{pairs_from_noise, CouplingPair};
use qflow_core::so3_stats::{sample_noise_frame, Igso3, RngState};
use qflow_core::solvers::SolverConfig;

use crate::config::RunConfig;
use crate::train_cmd::dataset;
use crate::{io, prepare_out, streams};

pub const VERDICTS: &str = "verdicts.json";
pub const MARGINALS: &str = "marginals.csv";
pub const COSTS: &str = "costs.csv";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub details: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdicts {
    pub schema_version: u32,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

#[derive(Serialize)]
struct MarginalCsvRow {
    comparison: &'static str,
    t: f64,
    ks_rotation_angle: f64,
    ks_translation_norm: f64,
}

#[derive(Serialize)]
struct CostCsvRow {
    comparison: String,
    cost: &'static str,
    before_mean: f64,
    before_se: f64,
    after_mean: f64,
    after_se: f64,
    before_translation: f64,
    after_translation: f64,
    before_rotation: f64,
    after_rotation: f64,
    samples: usize,
}

fn require<'a>(p: Option<&'a Path>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) if p.is_file() => Ok(p),
        Some(p) => bail!("{flag} checkpoint {} not found", p.display()),
        None => bail!("missing {flag} <checkpoint>"),
    }
}

fn marginal_check(name: &str, rows: &[MarginalRow], threshold: f64, gated: bool) -> Check {
    let worst = rows.iter().map(MarginalRow::max).fold(0.0, f64::max);
    Check {
        name: name.into(),
        passed: !gated || worst < threshold,
        details: json!({ "gated": gated, "threshold": threshold, "worst": worst, "rows": rows }),
    }
}

/// Runs every check, writes the reports and returns `all_passed`.
pub fn run(mut cfg: RunConfig, checkpoint: Option<&Path>, rectified: Option<&Path>) -> Result<bool> {
    let original_path = require(checkpoint, "--checkpoint")?;
    let rectified_path = require(rectified, "--rectified")?;
    let v = cfg.verify.clone();
    if v.samples == 0 || v.time_grid.is_empty() {
        bail!("invalid [verify] section: need samples >= 1 and a nonempty time_grid");
    }
    let original = io::load_checkpoint(original_path)?;
    let rect = io::load_checkpoint(rectified_path)?;
    let data: Vec<FrameTransform> = dataset(&cfg)?.into_iter().flatten().collect();
    let prior = Igso3::new(original.train.igso3)?;
    let solver = SolverConfig::unscheduled(v.ks_steps);
    solver.validate()?;
    let out = prepare_out(&mut cfg, "verify")?;
    let base = RngState::with_stream(cfg.run.seed, streams::VERIFY);

    let mut checks = Vec::new();
    let mut marginal_rows = Vec::new();
    let mut cost_rows = Vec::new();

    // marginals
    let paths = verify_marginal_preservation(
        &original.params,
        &rect.params,
        v.samples,
        &v.time_grid,
        &solver,
        &prior,
        &base.split(1),
    )?;
    let noise: Vec<FrameTransform> = {
        let mut r = base.split(2);
        (0..v.samples).map(|_| sample_noise_frame(&prior, &mut r)).collect()
    };
    let generated = pairs_from_noise(&original.params, &noise, &solver)?;
    let coupling = verify_coupling_marginals(&generated, &rect.params, &v.time_grid, &solver, &prior, &base.split(3))?;
    // Rectification preserves the marginals of the coupling it was trained
    // on, which match the original ODE paths only at t = 1. The path
    // comparison is reported, the coupling comparison is gated.
    checks.push(marginal_check("marginal_paths", &paths, v.ks_threshold, false));
    checks.push(marginal_check("marginal_coupling", &coupling, v.ks_threshold, true));
    for (comparison, rows) in [("paths", &paths), ("coupling", &coupling)] {
        for r in rows.iter() {
            marginal_rows.push(MarginalCsvRow {
                comparison,
                t: r.t,
                ks_rotation_angle: r.ks_rotation_angle,
                ks_translation_norm: r.ks_translation_norm,
            });
        }
    }

    // transport cost: independent coupling vs the original model's coupling,
    // then the original model's coupling vs the rectified model's
    let independent: Vec<CouplingPair> = noise
        .iter()
        .enumerate()
        .map(|(i, t0)| CouplingPair {
            t0: *t0,
            t1: data[i % data.len()],
        })
        .collect();
    let regenerated = pairs_from_noise(&rect.params, &noise, &solver)?;
    let mut cost_check = |name: String, report: qflow_core::bench::TransportReport, gated: bool| {
        cost_rows.push(CostCsvRow {
            comparison: name.clone(),
            cost: report.cost.name(),
            before_mean: report.before.mean,
            before_se: report.before.se,
            after_mean: report.after.mean,
            after_se: report.after.se,
            before_translation: report.before.translation_mean,
            after_translation: report.after.translation_mean,
            before_rotation: report.before.rotation_mean,
            after_rotation: report.after.rotation_mean,
            samples: report.before.samples,
        });
        checks.push(Check {
            name,
            passed: !gated || report.not_increased(),
            details: json!({ "gated": gated, "report": report }),
        });
    };
    for c in CostFn::ALL {
        cost_check(
            format!("cost_independent_vs_generated_{}", c.name()),
            verify_cost_reduction(&independent, &generated, c)?,
            true,
        );
        cost_check(
            format!("cost_generated_vs_rectified_{}", c.name()),
            verify_cost_reduction(&generated, &regenerated, c)?,
            true,
        );
        for (gamma, gated) in [(v.scheduler_gamma, true), (v.limit_gamma, false)] {
            let sched = SchedulerConfig::new(gamma)?;
            let steps = v.ks_steps.max(gamma.ceil() as usize);
            cost_check(
                format!("cost_scheduled_gamma_{gamma}_{}", c.name()),
                verify_scheduler_cost(&original.params, &sched, steps, &independent, c)?,
                gated,
            );
        }
    }

    // stability probe
    let probe = probe_small_angle_nan(&DEFAULT_NAN_PROBES);
    let exp_ok = probe.iter().all(|r| r.exp_finite);
    let zero_row_fails = probe.iter().any(|r| r.phi == 0.0 && !r.additive_finite);
    checks.push(Check {
        name: "nan_probe".into(),
        passed: exp_ok && zero_row_fails,
        details: json!({ "rows": probe }),
    });

    let all_passed = checks.iter().all(|c| c.passed);
    io::write_rows(&out.join(MARGINALS), marginal_rows)?;
    io::write_rows(&out.join(COSTS), cost_rows)?;
    io::write_json(
        &out.join(VERDICTS),
        &Verdicts {
            schema_version: SCHEMA_VERSION,
            checks: checks.clone(),
            all_passed,
        },
    )?;
    for c in &checks {
        println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    Ok(all_passed)
}
