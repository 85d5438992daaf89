//! Numerical-stability benchmarks and Monte Carlo checks of the two
//! rectification properties: marginals are kept and convex transport cost
//! does not go up.
//!
//! Operations return plain reports. Pass/fail thresholds belong to the
//! caller, except for [`TransportReport::not_increased`], which encodes the
//! two-standard-error comparison every caller uses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::interpolants::{interpolate, slerp_additive, slerp_exp, SchedulerConfig};
use crate::model::{pairs_from_noise, CouplingPair, ModelParams};
use crate::quat::{exp_map, log_map, mat_exp, mat_log, AxisAngle, Vec3};
use crate::so3_stats::{sample_axis, sample_noise_frame, Igso3, RngState};
use crate::solvers::{integrate_trajectory, ScheduledVelocity, SolverConfig};
use crate::stats::{ks_statistic, mean_and_se};

/// Offsets `δ` with `φ = π - δ` probed by default.
pub const DEFAULT_OFFSETS: [f64; 7] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// Angles probed by default for additive-format failure.
pub const DEFAULT_NAN_PROBES: [f64; 8] = [
    0.0,
    1e-12,
    1e-9,
    1e-6,
    1e-3,
    1.0,
    std::f64::consts::PI - 1e-3,
    std::f64::consts::PI,
];

pub fn roundtrip_quat(omega: &AxisAngle) -> f64 {
    (omega.0 - log_map(&exp_map(omega)).0).norm()
}

pub fn roundtrip_matrix(omega: &AxisAngle) -> f64 {
    (omega.0 - mat_log(&mat_exp(omega)).0).norm()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTripRecord {
    pub offset: f64,
    pub phi: f64,
    pub quat_error: f64,
    pub matrix_error: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub records: Vec<RoundTripRecord>,
}

impl RoundTripReport {
    /// Mean quaternion error strictly below mean matrix error at every angle.
    pub fn quat_beats_matrix(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.quat_error < r.matrix_error)
    }
}

/// Mean round-trip errors at `φ = π - δ` over `trials` random axes per
/// offset. Axes are drawn in offset order from `rng`.
pub fn run_roundtrip_bench(offsets: &[f64], trials: usize, rng: &mut RngState) -> Result<RoundTripReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials_per_angle must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(offsets.len());
    for &offset in offsets {
        if !(offset > 0.0 && offset < std::f64::consts::PI) {
            return Err(Error::AngleOutOfRange(std::f64::consts::PI - offset));
        }
        let phi = std::f64::consts::PI - offset;
        let (mut q, mut m) = (0.0, 0.0);
        for _ in 0..trials {
            let omega = AxisAngle::new(sample_axis(rng) * phi);
            q += roundtrip_quat(&omega);
            m += roundtrip_matrix(&omega);
        }
        records.push(RoundTripRecord {
            offset,
            phi,
            quat_error: q / trials as f64,
            matrix_error: m / trials as f64,
            trials,
        });
    }
    Ok(RoundTripReport { records })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NanProbeRow {
    pub phi: f64,
    pub exp_finite: bool,
    pub additive_finite: bool,
}

/// Midpoint (`t = 0.5`) of both SLERP formats between a fixed rotation and
/// the same rotation composed with an extra turn of `φ`.
pub fn probe_small_angle_nan(phis: &[f64]) -> Vec<NanProbeRow> {
    let q0 = exp_map(&AxisAngle::new(Vec3::new(0.3, -0.2, 0.9)));
    let axis = Vec3::new(1.0, 2.0, 2.0) / 3.0;
    phis.iter()
        .map(|&phi| {
            let q1 = q0 * exp_map(&AxisAngle::new(axis * phi));
            NanProbeRow {
                phi,
                exp_finite: slerp_exp(&q0, &q1, 0.5).quaternion().is_finite(),
                additive_finite: slerp_additive(&q0, &q1, 0.5).is_finite(),
            }
        })
        .collect()
}

/// Rotation angle from the identity, in `[0, π]`.
pub fn rotation_angle(f: &FrameTransform) -> f64 {
    log_map(&f.q).angle()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MarginalRow {
    pub t: f64,
    pub ks_rotation_angle: f64,
    pub ks_translation_norm: f64,
}

impl MarginalRow {
    pub fn max(&self) -> f64 {
        self.ks_rotation_angle.max(self.ks_translation_norm)
    }
}

fn grid_indices(time_grid: &[f64], steps: usize) -> Result<Vec<usize>> {
    time_grid
        .iter()
        .map(|&t| {
            let k = (t * steps as f64).round();
            if !(0.0..=1.0).contains(&t) || (k - t * steps as f64).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "time {t} is not on the {steps}-step solver grid"
                )));
            }
            Ok(k as usize)
        })
        .collect()
}

fn ks_row(t: f64, a: &[FrameTransform], b: &[FrameTransform]) -> MarginalRow {
    let ang = |s: &[FrameTransform]| s.iter().map(rotation_angle).collect::<Vec<_>>();
    let norm = |s: &[FrameTransform]| s.iter().map(|f| f.x.norm()).collect::<Vec<_>>();
    MarginalRow {
        t,
        ks_rotation_angle: ks_statistic(&ang(a), &ang(b)).unwrap_or(1.0),
        ks_translation_norm: ks_statistic(&norm(a), &norm(b)).unwrap_or(1.0),
    }
}

fn trajectories(
    params: &ModelParams,
    noise: &[FrameTransform],
    solver: &SolverConfig,
) -> Result<Vec<Vec<FrameTransform>>> {
    noise.iter().map(|n| integrate_trajectory(params, n, solver)).collect()
}

fn draw_noise(prior: &Igso3, n: usize, rng: &mut RngState) -> Vec<FrameTransform> {
    (0..n).map(|_| sample_noise_frame(prior, rng)).collect()
}

/// Path-marginal comparison: integrates `sample_count` independent noise
/// draws through each model and compares, at every grid time, the laws of
/// rotation angle and translation norm by two-sample KS. Grid times must be
/// multiples of `1 / solver.steps`.
pub fn verify_marginal_preservation(
    before: &ModelParams,
    after: &ModelParams,
    sample_count: usize,
    time_grid: &[f64],
    solver: &SolverConfig,
    prior: &Igso3,
    rng: &RngState,
) -> Result<Vec<MarginalRow>> {
    if sample_count == 0 {
        return Err(Error::InvalidConfig("sample_count must be at least 1".into()));
    }
    solver.validate()?;
    let idx = grid_indices(time_grid, solver.steps)?;
    let a = trajectories(before, &draw_noise(prior, sample_count, &mut rng.split(1)), solver)?;
    let b = trajectories(after, &draw_noise(prior, sample_count, &mut rng.split(2)), solver)?;
    Ok(time_grid
        .iter()
        .zip(idx)
        .map(|(&t, k)| {
            let sa: Vec<_> = a.iter().map(|tr| tr[k]).collect();
            let sb: Vec<_> = b.iter().map(|tr| tr[k]).collect();
            ks_row(t, &sa, &sb)
        })
        .collect())
}

/// Coupling-marginal comparison: the law of the interpolant built from
/// `pairs` at time `t` against the law of the `rectified` model's ODE state
/// at `t`, started from fresh noise. This is the statement that the flow
/// trained on a coupling reproduces that coupling's interpolant marginals.
pub fn verify_coupling_marginals(
    pairs: &[CouplingPair],
    rectified: &ModelParams,
    time_grid: &[f64],
    solver: &SolverConfig,
    prior: &Igso3,
    rng: &RngState,
) -> Result<Vec<MarginalRow>> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no coupling pairs to compare against".into()));
    }
    solver.validate()?;
    let idx = grid_indices(time_grid, solver.steps)?;
    let b = trajectories(rectified, &draw_noise(prior, pairs.len(), &mut rng.split(3)), solver)?;
    Ok(time_grid
        .iter()
        .zip(idx)
        .map(|(&t, k)| {
            let sa: Vec<_> = pairs
                .iter()
                .map(|p| {
                    if t >= 1.0 {
                        p.t1
                    } else {
                        interpolate(&p.t0, &p.t1, t).frame()
                    }
                })
                .collect();
            let sb: Vec<_> = b.iter().map(|tr| tr[k]).collect();
            ks_row(t, &sa, &sb)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFn {
    SquaredNorm,
    Norm,
}

impl CostFn {
    pub const ALL: [CostFn; 2] = [CostFn::SquaredNorm, CostFn::Norm];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SquaredNorm => "squared_norm",
            Self::Norm => "norm",
        }
    }

    fn apply(&self, v: &Vec3) -> f64 {
        match self {
            Self::SquaredNorm => v.norm_squared(),
            Self::Norm => v.norm(),
        }
    }
}

/// Per-pair cost split into its R³ part `c(x1 - x0)` and its SO(3) part
/// `c(log(q0⁻¹ q1))`, with the quaternion log taken as the half-angle
/// vector `(φ/2) u`.
pub fn pair_cost(pair: &CouplingPair, cost: CostFn) -> (f64, f64) {
    let rel = pair.t0.q.inverse() * pair.t1.q;
    let half = log_map(&rel).0 * 0.5;
    (cost.apply(&(pair.t1.x - pair.t0.x)), cost.apply(&half))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostStats {
    pub mean: f64,
    pub se: f64,
    pub translation_mean: f64,
    pub translation_se: f64,
    pub rotation_mean: f64,
    pub rotation_se: f64,
    pub samples: usize,
}

fn cost_stats(pairs: &[CouplingPair], cost: CostFn) -> CostStats {
    let (tr, rot): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| pair_cost(p, cost)).unzip();
    let total: Vec<f64> = tr.iter().zip(&rot).map(|(a, b)| a + b).collect();
    let (mean, se) = mean_and_se(&total);
    let (translation_mean, translation_se) = mean_and_se(&tr);
    let (rotation_mean, rotation_se) = mean_and_se(&rot);
    CostStats {
        mean,
        se,
        translation_mean,
        translation_se,
        rotation_mean,
        rotation_se,
        samples: pairs.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransportReport {
    pub cost: CostFn,
    pub before: CostStats,
    pub after: CostStats,
}

fn within_two_se(before: f64, se_b: f64, after: f64, se_a: f64) -> bool {
    after <= before + 2.0 * (se_b * se_b + se_a * se_a).sqrt()
}

impl TransportReport {
    /// `after <= before + 2 * combined SE` for the total and for each
    /// component.
    pub fn not_increased(&self) -> bool {
        let (b, a) = (&self.before, &self.after);
        within_two_se(b.mean, b.se, a.mean, a.se)
            && within_two_se(b.translation_mean, b.translation_se, a.translation_mean, a.translation_se)
            && within_two_se(b.rotation_mean, b.rotation_se, a.rotation_mean, a.rotation_se)
    }

    /// `after < before - 2 * combined SE` on the total.
    pub fn strictly_reduced(&self) -> bool {
        let (b, a) = (&self.before, &self.after);
        a.mean < b.mean - 2.0 * (b.se * b.se + a.se * a.se).sqrt()
    }
}

pub fn verify_cost_reduction(
    before: &[CouplingPair],
    after: &[CouplingPair],
    cost: CostFn,
) -> Result<TransportReport> {
    if before.is_empty() || after.is_empty() {
        return Err(Error::InvalidConfig("both couplings need at least one pair".into()));
    }
    Ok(TransportReport {
        cost,
        before: cost_stats(before, cost),
        after: cost_stats(after, cost),
    })
}

/// Regenerates the coupling from the `before` noise frames with
/// nonconstant-speed (scheduled) rotation integration and compares its cost
/// with `before`.
pub fn verify_scheduler_cost(
    params: &ModelParams,
    scheduler: &SchedulerConfig,
    steps: usize,
    before: &[CouplingPair],
    cost: CostFn,
) -> Result<TransportReport> {
    scheduler.validate()?;
    let solver = SolverConfig {
        steps,
        gamma: scheduler.gamma,
        scheduler_enabled: true,
        scheduled_velocity: ScheduledVelocity::default(),
        ..SolverConfig::default()
    };
    let noise: Vec<FrameTransform> = before.iter().map(|p| p.t0).collect();
    let after = pairs_from_noise(params, &noise, &solver)?;
    verify_cost_reduction(before, &after, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::so3_stats::IgsoConfig;
    use std::f64::consts::PI;

    #[test]
    fn roundtrip_examples() {
        let axis = Vec3::new(2.0, -1.0, 2.0) / 3.0;
        assert!(roundtrip_quat(&AxisAngle::new(axis * (PI / 2.0))) < 1e-12);
        assert!(roundtrip_matrix(&AxisAngle::new(axis * (PI / 2.0))) < 1e-9);
        assert!(roundtrip_quat(&AxisAngle::new(axis * (PI - 1e-7))) < 1e-8);
    }

    #[test]
    fn quat_roundtrip_is_isotropic() {
        let mut rng = RngState::new(2);
        for phi in [0.3, 1.7, PI - 1e-3] {
            let e: Vec<f64> = (0..20)
                .map(|_| roundtrip_quat(&AxisAngle::new(sample_axis(&mut rng) * phi)))
                .collect();
            let spread = e.iter().cloned().fold(0.0, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 1e-12);
        }
    }

    #[test]
    fn bench_shape_order_and_determinism() {
        let r = run_roundtrip_bench(&DEFAULT_OFFSETS, 100, &mut RngState::new(1)).unwrap();
        assert_eq!(r.records.len(), 7);
        assert!(r.quat_beats_matrix());
        for w in r.records.windows(2) {
            assert!(w[1].matrix_error > w[0].matrix_error);
        }
        let d = r.records.iter().find(|x| x.offset == 1e-6).unwrap();
        assert!(d.matrix_error >= 1e3 * d.quat_error);
        assert_eq!(r, run_roundtrip_bench(&DEFAULT_OFFSETS, 100, &mut RngState::new(1)).unwrap());
        assert!(run_roundtrip_bench(&[0.0], 1, &mut RngState::new(1)).is_err());
        assert!(run_roundtrip_bench(&[0.1], 0, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn nan_probe_rows() {
        let rows = probe_small_angle_nan(&DEFAULT_NAN_PROBES);
        assert!(rows.iter().all(|r| r.exp_finite));
        assert!(!rows[0].additive_finite);
        let r = rows.iter().find(|r| r.phi == 1e-3).unwrap();
        assert!(r.additive_finite);
    }

    #[test]
    fn ks_grid_must_match_solver() {
        assert_eq!(grid_indices(&[0.0, 0.25, 1.0], 4).unwrap(), vec![0, 1, 4]);
        assert!(grid_indices(&[0.3], 4).is_err());
        assert!(grid_indices(&[1.5], 4).is_err());
    }

    #[test]
    fn identical_models_have_small_ks() {
        let mut rng = RngState::new(3);
        let p = ModelParams::init(Architecture::with_hidden(vec![4]), &mut rng).unwrap();
        let prior = Igso3::new(IgsoConfig::default()).unwrap();
        let rows = verify_marginal_preservation(
            &p,
            &p,
            2000,
            &[0.5, 1.0],
            &SolverConfig::unscheduled(4),
            &prior,
            &RngState::new(4),
        )
        .unwrap();
        for r in rows {
            assert!((0.0..=1.0).contains(&r.ks_rotation_angle));
            // 99% KS critical value at n = m = 2000 is 1.63 / sqrt(1000) = 0.052
            assert!(r.max() < 0.052, "{r:?}");
        }
    }

    #[test]
    fn equal_couplings_equal_costs() {
        let prior = Igso3::new(IgsoConfig::default()).unwrap();
        let mut rng = RngState::new(5);
        let pairs: Vec<CouplingPair> = (0..50)
            .map(|_| CouplingPair {
                t0: sample_noise_frame(&prior, &mut rng),
                t1: sample_noise_frame(&prior, &mut rng),
            })
            .collect();
        for c in CostFn::ALL {
            let r = verify_cost_reduction(&pairs, &pairs, c).unwrap();
            assert_eq!(r.before, r.after);
            assert!(r.before.mean >= 0.0 && r.before.se.is_finite());
            assert!(r.not_increased() && !r.strictly_reduced());
        }
        assert!(verify_cost_reduction(&[], &pairs, CostFn::Norm).is_err());
    }

    #[test]
    fn pair_cost_uses_half_angle() {
        let t0 = FrameTransform::identity();
        let t1 = FrameTransform::new(
            Vec3::new(3.0, 4.0, 0.0),
            exp_map(&AxisAngle::new(Vec3::new(0.0, 0.0, 1.0))),
        );
        let (x, r) = pair_cost(&CouplingPair { t0, t1 }, CostFn::Norm);
        assert!((x - 5.0).abs() < 1e-15 && (r - 0.5).abs() < 1e-15);
        let (x, r) = pair_cost(&CouplingPair { t0, t1 }, CostFn::SquaredNorm);
        assert!((x - 25.0).abs() < 1e-13 && (r - 0.25).abs() < 1e-15);
    }
}
