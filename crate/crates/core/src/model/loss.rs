//! Flow-matching loss on endpoint predictions and its exact gradient.
//!
//! Backward pass, per sample: velocity residuals -> log map -> Hamilton
//! product with `q_t⁻¹` -> hemisphere sign -> normalization of the raw head ->
//! MLP. Chain contexts add the auxiliary backbone loss, differentiated through
//! atom placement `x + q a q⁻¹`.

use serde::{Deserialize, Serialize};

use super::{backward, features, forward_cached, quaternion_head, split_output, ModelParams};
use crate::error::{Error, Result};
use crate::frames::{aux_loss_with_grad, FrameTransform, IdealResidue};
use crate::interpolants::{check_remaining, InterpolantSample, TRAIN_T_MIN};
use crate::quat::{hamilton_product, log_vector, Quaternion, UnitQuaternion, Vec3, SMALL_ANGLE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub translation_weight: f64,
    pub rotation_weight: f64,
    /// Weight `alpha` of the auxiliary backbone loss.
    pub aux_weight: f64,
    /// The auxiliary loss applies only for `t < aux_time_threshold`.
    pub aux_time_threshold: f64,
    pub t_min: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            translation_weight: 1.0,
            rotation_weight: 1.0,
            aux_weight: 0.0,
            aux_time_threshold: 0.5,
            t_min: TRAIN_T_MIN,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("translation_weight", self.translation_weight)?;
        nonneg("rotation_weight", self.rotation_weight)?;
        nonneg("aux_weight", self.aux_weight)?;
        if !(0.0..=1.0).contains(&self.aux_time_threshold) {
            return Err(Error::InvalidConfig(format!(
                "aux_time_threshold must lie in [0, 1], got {}",
                self.aux_time_threshold
            )));
        }
        if !(self.t_min > 0.0 && self.t_min < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "t_min must lie in (0, 0.5), got {}",
                self.t_min
            )));
        }
        Ok(())
    }
}

/// One chain at a shared time `t`: the interpolant sample of every residue
/// and the true residue frames at `t = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainContext {
    pub samples: Vec<InterpolantSample>,
    pub truth: Vec<FrameTransform>,
}

impl ChainContext {
    fn t(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() != self.truth.len() || self.samples.is_empty() {
            return Err(Error::LengthMismatch(format!(
                "chain context has {} samples and {} true frames",
                self.samples.len(),
                self.truth.len()
            )));
        }
        let t = self.t();
        if self.samples.iter().any(|s| s.t != t) {
            return Err(Error::LengthMismatch("chain samples must share one t".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean weighted translation velocity term.
    pub translation: f64,
    /// Mean weighted rotation velocity term.
    pub rotation: f64,
    /// `alpha` times the mean over chains of `1{t < zeta} L_aux`.
    pub aux: f64,
}

impl LossBreakdown {
    pub fn velocity(&self) -> f64 {
        self.translation + self.rotation
    }
}

pub fn flow_loss(
    params: &ModelParams,
    samples: &[InterpolantSample],
    chains: &[ChainContext],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    evaluate(params, samples, chains, cfg, None)
}

/// Loss and its gradient, laid out like the parameters.
pub fn loss_gradient(
    params: &ModelParams,
    samples: &[InterpolantSample],
    chains: &[ChainContext],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut grad = vec![0.0; params.len()];
    let loss = evaluate(params, samples, chains, cfg, Some(&mut grad))?;
    let grad = ModelParams::from_values(params.architecture().clone(), grad)?;
    Ok((loss, grad))
}

struct Prediction {
    cache: super::ForwardCache,
    x1: Vec3,
    raw: Quaternion,
    q1: UnitQuaternion,
}

fn predict(params: &ModelParams, s: &InterpolantSample) -> Prediction {
    let cache = forward_cached(params, &features(&s.x_t, &s.q_t, s.t));
    let (x1, raw) = split_output(cache.output());
    let q1 = quaternion_head(&raw);
    Prediction { cache, x1, raw, q1 }
}

/// Velocity terms of one sample. Returns `(translation, rotation)` loss and,
/// when asked, the gradient with respect to `x1` and the unit `q1`.
fn velocity_terms(
    s: &InterpolantSample,
    p: &Prediction,
    cfg: &LossConfig,
    scale: f64,
    want_grad: bool,
) -> Result<(f64, f64, Vec3, Quaternion)> {
    let rem = check_remaining(s.t, cfg.t_min)?;
    let dv = (p.x1 - s.x_t) / rem - s.v_target;
    let sign = if s.q_t.dot(&p.q1) >= 0.0 { 1.0 } else { -1.0 };
    let q_aligned = p.q1.quaternion().scale(sign);
    let r = hamilton_product(&s.q_t.quaternion().conjugate(), &q_aligned);
    let dw = log_vector(&r) / rem - s.omega_target;
    let lt = cfg.translation_weight * dv.norm_squared();
    let lr = cfg.rotation_weight * dw.norm_squared();
    if !want_grad {
        return Ok((lt, lr, Vec3::zeros(), Quaternion::new(0.0, 0.0, 0.0, 0.0)));
    }
    let g_x1 = dv * (2.0 * cfg.translation_weight * scale / rem);
    let g_w = dw * (2.0 * cfg.rotation_weight * scale / rem);
    let g_r = log_backward(&r, &g_w);
    // r = conj(q_t) ⊗ q', so dL/dq' = q_t ⊗ dL/dr
    let g_q1 = hamilton_product(s.q_t.quaternion(), &g_r).scale(sign);
    Ok((lt, lr, g_x1, g_q1))
}

fn evaluate(
    params: &ModelParams,
    samples: &[InterpolantSample],
    chains: &[ChainContext],
    cfg: &LossConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    params.check()?;
    for c in chains {
        c.validate()?;
    }
    let count = samples.len() + chains.iter().map(|c| c.samples.len()).sum::<usize>();
    if count == 0 {
        return Err(Error::LengthMismatch("empty batch".into()));
    }
    let scale = 1.0 / count as f64;
    let want_grad = grad.is_some();
    let mut out = LossBreakdown::default();

    for (index, s) in samples.iter().enumerate() {
        let p = predict(params, s);
        let (lt, lr, g_x1, g_q1) = velocity_terms(s, &p, cfg, scale, want_grad)?;
        if !(lt + lr).is_finite() {
            return Err(Error::NonFiniteLoss { index });
        }
        out.translation += lt * scale;
        out.rotation += lr * scale;
        if let Some(g) = grad.as_deref_mut() {
            push_back(params, &p, &g_x1, &g_q1, g);
        }
    }

    let ideal = IdealResidue::default();
    let local = ideal.atoms();
    let chain_scale = if chains.is_empty() {
        0.0
    } else {
        cfg.aux_weight / chains.len() as f64
    };
    let mut index = samples.len();
    for chain in chains {
        let preds: Vec<Prediction> = chain.samples.iter().map(|s| predict(params, s)).collect();
        let mut g_x = vec![Vec3::zeros(); preds.len()];
        let mut g_q = vec![Quaternion::new(0.0, 0.0, 0.0, 0.0); preds.len()];
        for (k, (s, p)) in chain.samples.iter().zip(&preds).enumerate() {
            let (lt, lr, gx, gq) = velocity_terms(s, p, cfg, scale, want_grad)?;
            if !(lt + lr).is_finite() {
                return Err(Error::NonFiniteLoss { index: index + k });
            }
            out.translation += lt * scale;
            out.rotation += lr * scale;
            g_x[k] = gx;
            g_q[k] = gq;
        }
        if cfg.aux_weight > 0.0 && chain.t() < cfg.aux_time_threshold {
            let pred_atoms: Vec<[Vec3; 4]> = preds
                .iter()
                .map(|p| local.map(|a| p.x1 + p.q1.rotate(&a)))
                .collect();
            let truth_atoms: Vec<[Vec3; 4]> = chain
                .truth
                .iter()
                .map(|f| local.map(|a| f.apply(&a)))
                .collect();
            let (aux, atom_grad) = aux_loss_with_grad(&pred_atoms, &truth_atoms)?;
            if !aux.total.is_finite() {
                return Err(Error::NonFiniteLoss { index });
            }
            out.aux += chain_scale * aux.total;
            if want_grad {
                for (k, p) in preds.iter().enumerate() {
                    for (a, ga) in local.iter().zip(&atom_grad[k]) {
                        let ga = ga * chain_scale;
                        g_x[k] += ga;
                        g_q[k] = g_q[k] + rotate_backward(p.q1.quaternion(), a, &ga);
                    }
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            for (k, p) in preds.iter().enumerate() {
                push_back(params, p, &g_x[k], &g_q[k], g);
            }
        }
        index += chain.samples.len();
    }
    out.total = out.translation + out.rotation + out.aux;
    Ok(out)
}

fn push_back(params: &ModelParams, p: &Prediction, g_x1: &Vec3, g_q1: &Quaternion, grad: &mut [f64]) {
    let g_raw = normalize_backward(&p.raw, g_q1);
    let d_out = [
        g_x1.x, g_x1.y, g_x1.z, g_raw.s, g_raw.u.x, g_raw.u.y, g_raw.u.z,
    ];
    backward(params, &p.cache, &d_out, grad);
}

/// Gradient through `q = y / |y|`; zero for the zero vector, whose head output
/// is the constant identity.
pub(crate) fn normalize_backward(raw: &Quaternion, g: &Quaternion) -> Quaternion {
    let n = raw.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Quaternion::new(0.0, 0.0, 0.0, 0.0);
    }
    let q = raw.scale(1.0 / n);
    (*g - q.scale(q.dot(g))).scale(1.0 / n)
}

/// Gradient of `omega = log_vector(r)` with respect to the 4 components of
/// `r`, for upstream gradient `g`. Mirrors the branches of the forward map.
pub(crate) fn log_backward(r: &Quaternion, g: &Vec3) -> Quaternion {
    let (sign, s, u) = if r.s < 0.0 { (-1.0, -r.s, -r.u) } else { (1.0, r.s, r.u) };
    let n = u.norm();
    let n2 = n * n;
    let phi = 2.0 * n.atan2(s);
    // omega = f(s, n) u
    let (f, df_ds, df_dn_over_n) = if phi < SMALL_ANGLE {
        let s2 = s * s;
        (
            (2.0 / s) * (1.0 - n2 / (3.0 * s2)),
            -2.0 / s2 + 2.0 * n2 / (s2 * s2),
            -4.0 / (3.0 * s2 * s),
        )
    } else {
        let f = phi / n;
        let denom = s * s + n2;
        let ratio = n / s;
        let d = if s > 0.0 && ratio < 0.1 {
            // (2s/(s²+n²) - f) / n², expanded in r = n/s to avoid cancellation
            let r2 = ratio * ratio;
            let mut sum = 0.0;
            let mut pow = 1.0;
            for k in 1..=10 {
                let kf = k as f64;
                let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                sum += sign * (2.0 * kf / (2.0 * kf + 1.0)) * pow;
                pow *= r2;
            }
            2.0 / (s * s * s) * sum
        } else {
            (2.0 * s / denom - f) / n2
        };
        (f, -2.0 / denom, d)
    };
    let ug = u.dot(g);
    let g_s = df_ds * ug;
    let g_u = g * f + u * (df_dn_over_n * ug);
    Quaternion::from_parts(g_s, g_u).scale(sign)
}

/// Gradient of `p = (s² - u·u) a + 2 (u·a) u + 2 s (u × a)` (which equals
/// `q a q⁻¹` on the unit sphere) with respect to `q`, for upstream `g`.
pub(crate) fn rotate_backward(q: &Quaternion, a: &Vec3, g: &Vec3) -> Quaternion {
    let (s, u) = (q.s, q.u);
    let g_s = g.dot(&(a * (2.0 * s) + u.cross(a) * 2.0));
    let g_u = u * (-2.0 * g.dot(a)) + a * (2.0 * g.dot(&u)) + g * (2.0 * u.dot(a)) + a.cross(g) * (2.0 * s);
    Quaternion::from_parts(g_s, g_u)
}
