//! Rotation interpolants (exponential SLERP, additive SLERP, matrix geodesic),
//! the linear translation path, endpoint-to-velocity conversion and the
//! exponential step scheduler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::quat::{
    align_hemisphere, exp_map, log_map, mat_exp, mat_log, AxisAngle, Quaternion,
    RotationMatrix, UnitQuaternion, Vec3,
};

/// Lower clamp on `t` and on `1 - t` when sampling training times.
pub const TRAIN_T_MIN: f64 = 0.01;

/// A point on the interpolant together with its constant target velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolantSample {
    pub x_t: Vec3,
    pub q_t: UnitQuaternion,
    pub t: f64,
    pub v_target: Vec3,
    pub omega_target: Vec3,
}

impl InterpolantSample {
    pub fn frame(&self) -> FrameTransform {
        FrameTransform::new(self.x_t, self.q_t)
    }
}

/// Interpolates between a noise frame and a data frame at time `t`.
pub fn interpolate(t0: &FrameTransform, t1: &FrameTransform, t: f64) -> InterpolantSample {
    let (x_t, v_target) = lerp_translation(&t0.x, &t1.x, t);
    let omega_target = angular_velocity(&t0.q, &t1.q);
    let q_t = t0.q * exp_map(&AxisAngle::new(omega_target * t));
    InterpolantSample {
        x_t,
        q_t,
        t,
        v_target,
        omega_target,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { gamma: 10.0 }
    }
}

impl SchedulerConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let cfg = Self { gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_finite() && self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "scheduler gamma must be positive and finite, got {}",
                self.gamma
            )))
        }
    }

    /// Interpolation fraction `kappa(t) = 1 - exp(-gamma t)`.
    pub fn kappa(&self, t: f64) -> f64 {
        -(-self.gamma * t).exp_m1()
    }

    /// `d kappa / dt = gamma exp(-gamma t)`.
    pub fn kappa_rate(&self, t: f64) -> f64 {
        self.gamma * (-self.gamma * t).exp()
    }
}

/// `x_t = (1-t) x0 + t x1`, `v = x1 - x0`.
pub fn lerp_translation(x0: &Vec3, x1: &Vec3, t: f64) -> (Vec3, Vec3) {
    (x0 * (1.0 - t) + x1 * t, x1 - x0)
}

/// `omega = 2 log(q0⁻¹ ⊗ q1)` after hemisphere alignment.
pub fn angular_velocity(q0: &UnitQuaternion, q1: &UnitQuaternion) -> Vec3 {
    let q1 = align_hemisphere(q0, q1);
    log_map(&(q0.inverse() * q1)).0
}

/// `q0 ⊗ exp(t log(q0⁻¹ ⊗ q1))`.
pub fn slerp_exp(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> UnitQuaternion {
    let omega = angular_velocity(q0, q1);
    *q0 * exp_map(&AxisAngle::new(omega * t))
}

/// Sine-weighted blend of `q0` and `q1`. The angle comes from the arccos of
/// their inner product and is divided by unguarded; the output is neither
/// normalized nor checked for finiteness.
pub fn slerp_additive(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> Quaternion {
    let q1 = align_hemisphere(q0, q1);
    let half = q0.dot(&q1).acos();
    let denom = half.sin();
    let w0 = ((1.0 - t) * half).sin() / denom;
    let w1 = (t * half).sin() / denom;
    q0.quaternion().scale(w0) + q1.quaternion().scale(w1)
}

/// Renormalizing wrapper around [`slerp_additive`]. Non-finite input stays
/// non-finite.
pub fn slerp_additive_normalized(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> Quaternion {
    normalize_raw(&slerp_additive(q0, q1, t))
}

pub(crate) fn normalize_raw(q: &Quaternion) -> Quaternion {
    q.scale(1.0 / q.norm())
}

/// Time derivative of the additive path:
/// `eta_t = phi (cos(t phi/2) q1 - cos((1-t) phi/2) q0) / (2 sin(phi/2))`.
pub fn additive_velocity(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> Quaternion {
    let q1 = align_hemisphere(q0, q1);
    let half = q0.dot(&q1).acos();
    let phi = 2.0 * half;
    let k = phi / (2.0 * half.sin());
    q1.quaternion().scale(k * (t * half).cos()) - q0.quaternion().scale(k * ((1.0 - t) * half).cos())
}

/// `R0 exp_M(t log_M(R0ᵀ R1))`.
pub fn matrix_geodesic(r0: &RotationMatrix, r1: &RotationMatrix, t: f64) -> RotationMatrix {
    let rel = RotationMatrix::new_unchecked(r0.matrix().transpose() * r1.matrix());
    *r0 * mat_exp(&mat_log(&rel).scaled(t))
}

/// `q0 ⊗ exp(kappa(t) log(q0⁻¹ ⊗ q1))`.
pub fn scheduled_slerp(
    q0: &UnitQuaternion,
    q1: &UnitQuaternion,
    t: f64,
    cfg: &SchedulerConfig,
) -> UnitQuaternion {
    let omega = angular_velocity(q0, q1);
    *q0 * exp_map(&AxisAngle::new(omega * cfg.kappa(t)))
}

/// `gamma exp(-gamma t) omega`.
pub fn scheduled_angular_velocity(omega: &Vec3, t: f64, cfg: &SchedulerConfig) -> Vec3 {
    omega * cfg.kappa_rate(t)
}

/// Converts predicted endpoints into velocities:
/// `v = (x1 - x_t) / (1 - t)`, `omega = 2 log(q_t⁻¹ ⊗ q1) / (1 - t)`.
pub fn endpoint_velocities(
    x_t: &Vec3,
    q_t: &UnitQuaternion,
    x1_pred: &Vec3,
    q1_pred: &UnitQuaternion,
    t: f64,
    t_min: f64,
) -> Result<(Vec3, Vec3)> {
    let remaining = check_remaining(t, t_min)?;
    let v = (x1_pred - x_t) / remaining;
    let omega = angular_velocity(q_t, q1_pred) / remaining;
    Ok((v, omega))
}

/// `1 - t`, or an error when it falls below `t_min`. A relative slack of 1e-9
/// absorbs the rounding in `1 - k/L` at the last solver step.
pub(crate) fn check_remaining(t: f64, t_min: f64) -> Result<f64> {
    let remaining = 1.0 - t;
    if !(remaining >= t_min * (1.0 - 1e-9)) {
        return Err(Error::TimeTooClose { t, t_min });
    }
    Ok(remaining)
}
