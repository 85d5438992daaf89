//! Explicit Euler steps for the three rotation representations and the
//! endpoint-prediction inference loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::interpolants::{
    angular_velocity, check_remaining, normalize_raw, scheduled_angular_velocity, SchedulerConfig,
};
use crate::quat::{
    exp_map, mat_exp, AxisAngle, Quaternion, RotationMatrix, UnitQuaternion, Vec3,
};

/// How the angular velocity is formed when the scheduler is on.
///
/// `Kappa` divides the relative rotation by the remaining scheduled fraction
/// `1 - kappa(t)` before applying the `gamma e^{-gamma t}` factor, so each step
/// covers `gamma dt` of the remaining angle and the endpoint is reached up to
/// `~e^{-gamma} phi`. `Literal` divides by `1 - t` and then applies the
/// factor; near `t = 0` the two coincide, but the literal form stops well
/// short of the target (about `e^{-1.1} phi` left over at `gamma = 10`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduledVelocity {
    #[default]
    Kappa,
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub steps: usize,
    pub gamma: f64,
    pub scheduler_enabled: bool,
    /// Smallest admissible `1 - t` when converting endpoints to velocities.
    pub t_min: f64,
    pub scheduled_velocity: ScheduledVelocity,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            gamma: 10.0,
            scheduler_enabled: true,
            t_min: 1e-3,
            scheduled_velocity: ScheduledVelocity::Kappa,
        }
    }
}

impl SolverConfig {
    pub fn unscheduled(steps: usize) -> Self {
        Self {
            steps,
            scheduler_enabled: false,
            ..Self::default()
        }
    }

    pub fn scheduled(steps: usize, gamma: f64) -> Self {
        Self {
            steps,
            gamma,
            scheduler_enabled: true,
            ..Self::default()
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        SchedulerConfig { gamma: self.gamma }
    }

    /// Fewest steps allowed: one, or `ceil(gamma)` with the scheduler on so
    /// that a single step never moves past the predicted endpoint.
    pub fn min_steps(&self) -> usize {
        if self.scheduler_enabled {
            (self.gamma.ceil() as usize).max(1)
        } else {
            1
        }
    }

    /// Most steps allowed: the last step starts at `1 - 1/L`, which must keep
    /// at least `t_min` away from 1.
    pub fn max_steps(&self) -> usize {
        (1.0 / self.t_min * (1.0 + 1e-9)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "solver.t_min must lie in (0, 1), got {}",
                self.t_min
            )));
        }
        if self.scheduler_enabled {
            self.scheduler().validate()?;
        }
        let (lo, hi) = (self.min_steps(), self.max_steps());
        if self.steps < lo {
            return Err(Error::InvalidConfig(format!(
                "solver.steps = {} is below the minimum {lo} (scheduler {}, gamma {})",
                self.steps,
                if self.scheduler_enabled { "on" } else { "off" },
                self.gamma
            )));
        }
        if self.steps > hi {
            return Err(Error::InvalidConfig(format!(
                "solver.steps = {} exceeds {hi}: the last step would start within t_min = {} of t = 1",
                self.steps, self.t_min
            )));
        }
        Ok(())
    }
}

pub fn euler_step_translation(x_t: &Vec3, v: &Vec3, dt: f64) -> Vec3 {
    x_t + v * dt
}

/// `q_t ⊗ exp(dt omega / 2)`, without renormalization.
pub fn euler_step_quat_exp(q_t: &UnitQuaternion, omega_adj: &Vec3, dt: f64) -> UnitQuaternion {
    *q_t * exp_map(&AxisAngle::new(omega_adj * dt))
}

/// `q_t + dt eta_t`, projected back to unit length only when asked.
pub fn euler_step_quat_additive(
    q_t: &Quaternion,
    eta_t: &Quaternion,
    dt: f64,
    renormalize: bool,
) -> Quaternion {
    let next = *q_t + eta_t.scale(dt);
    if renormalize {
        normalize_raw(&next)
    } else {
        next
    }
}

/// `R_t exp_M(dt Omega)`.
pub fn euler_step_matrix(r_t: &RotationMatrix, omega: &Vec3, dt: f64) -> RotationMatrix {
    *r_t * mat_exp(&AxisAngle::new(omega * dt))
}

/// Anything that predicts the `t = 1` frame from the current frame and time.
pub trait EndpointModel {
    fn predict(&self, frame: &FrameTransform, t: f64) -> Result<FrameTransform>;
}

/// Always predicts a fixed target.
#[derive(Clone, Copy, Debug)]
pub struct OracleModel {
    pub target: FrameTransform,
}

impl EndpointModel for OracleModel {
    fn predict(&self, _frame: &FrameTransform, _t: f64) -> Result<FrameTransform> {
        Ok(self.target)
    }
}

impl<M: EndpointModel + ?Sized> EndpointModel for &M {
    fn predict(&self, frame: &FrameTransform, t: f64) -> Result<FrameTransform> {
        (**self).predict(frame, t)
    }
}

/// Translation velocity and (scheduler-adjusted) angular velocity at `t`.
pub fn solver_velocities(
    frame: &FrameTransform,
    pred: &FrameTransform,
    t: f64,
    cfg: &SolverConfig,
) -> Result<(Vec3, Vec3)> {
    let remaining = check_remaining(t, cfg.t_min)?;
    let v = (pred.x - frame.x) / remaining;
    let rel = angular_velocity(&frame.q, &pred.q);
    let omega = if !cfg.scheduler_enabled {
        rel / remaining
    } else {
        let sched = cfg.scheduler();
        let omega_theta = match cfg.scheduled_velocity {
            ScheduledVelocity::Kappa => rel / (1.0 - sched.kappa(t)),
            ScheduledVelocity::Literal => rel / remaining,
        };
        scheduled_angular_velocity(&omega_theta, t, &sched)
    };
    Ok((v, omega))
}

/// Euler integration from `t = 0` to `t = 1` on the grid `t_k = k/L`,
/// returning all `L + 1` frames.
pub fn integrate_trajectory<M: EndpointModel + ?Sized>(
    model: &M,
    t0_frame: &FrameTransform,
    cfg: &SolverConfig,
) -> Result<Vec<FrameTransform>> {
    cfg.validate()?;
    let dt = cfg.dt();
    let mut frame = *t0_frame;
    let mut path = Vec::with_capacity(cfg.steps + 1);
    path.push(frame);
    for k in 0..cfg.steps {
        let t = k as f64 / cfg.steps as f64;
        let pred = model.predict(&frame, t)?;
        let (v, omega) = solver_velocities(&frame, &pred, t, cfg)?;
        frame = FrameTransform::new(
            euler_step_translation(&frame.x, &v, dt),
            euler_step_quat_exp(&frame.q, &omega, dt),
        );
        path.push(frame);
    }
    Ok(path)
}

pub fn integrate_path<M: EndpointModel + ?Sized>(
    model: &M,
    t0_frame: &FrameTransform,
    cfg: &SolverConfig,
) -> Result<FrameTransform> {
    cfg.validate()?;
    let dt = cfg.dt();
    let mut frame = *t0_frame;
    for k in 0..cfg.steps {
        let t = k as f64 / cfg.steps as f64;
        let pred = model.predict(&frame, t)?;
        let (v, omega) = solver_velocities(&frame, &pred, t, cfg)?;
        frame = FrameTransform::new(
            euler_step_translation(&frame.x, &v, dt),
            euler_step_quat_exp(&frame.q, &omega, dt),
        );
    }
    Ok(frame)
}
