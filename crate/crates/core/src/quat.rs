//! Quaternion algebra and the rotation representations built on it.
//!
//! Quaternions are stored scalar-first as `[s, x, y, z]`. Axis-angle vectors
//! carry the full rotation angle, so [`exp_map`] computes `exp(omega / 2)` and
//! [`log_map`] returns `2 log(q)`.
//!
//! The matrix exponential/logarithm pair ([`mat_exp`], [`mat_log`]) is kept in
//! the plain trace-and-arccos form used by matrix-based frame models. Its loss
//! of precision near a half turn is what the round-trip benchmark measures, so
//! it must not be replaced by a guarded variant.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this angle (radians) the exp/log maps switch to their Taylor branches.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance used when accepting externally supplied unit quaternions.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Tolerance on `R^T R = I` and `det R = 1` for [`RotationMatrix::try_new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A general quaternion `s + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub s: f64,
    pub u: Vec3,
}

impl Quaternion {
    pub const fn new(s: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            s,
            u: Vec3::new(x, y, z),
        }
    }

    pub fn from_parts(s: f64, u: Vec3) -> Self {
        Self { s, u }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.s, self.u.x, self.u.y, self.u.z]
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn pure(v: Vec3) -> Self {
        Self { s: 0.0, u: v }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.s * other.s + self.u.dot(&other.u)
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Self {
            s: self.s,
            u: -self.u,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            s: self.s * k,
            u: self.u * k,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.u.iter().all(|c| c.is_finite())
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, rhs: Self) -> Self {
        Self {
            s: self.s + rhs.s,
            u: self.u + rhs.u,
        }
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, rhs: Self) -> Self {
        Self {
            s: self.s - rhs.s,
            u: self.u - rhs.u,
        }
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Self {
        Self {
            s: -self.s,
            u: -self.u,
        }
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, rhs: Self) -> Self {
        hamilton_product(&self, &rhs)
    }
}

/// `q1 ⊗ q2 = [s1 s2 - u1·u2, s1 u2 + s2 u1 + u1 × u2]`.
pub fn hamilton_product(q1: &Quaternion, q2: &Quaternion) -> Quaternion {
    Quaternion {
        s: q1.s * q2.s - q1.u.dot(&q2.u),
        u: q2.u * q1.s + q1.u * q2.s + q1.u.cross(&q2.u),
    }
}

/// A quaternion on the unit sphere S³, representing a rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Accepts `q` if its norm is within [`UNIT_TOLERANCE`] of one, then
    /// renormalizes it exactly.
    pub fn try_new(q: Quaternion) -> Result<Self> {
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit {
                norm,
                tolerance: UNIT_TOLERANCE,
            });
        }
        // already unit to machine precision: keep the bits
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(q));
        }
        Ok(Self(q.scale(1.0 / norm)))
    }

    /// Projects an arbitrary quaternion onto S³. Returns `None` for zero or
    /// non-finite input.
    pub fn normalize(q: Quaternion) -> Option<Self> {
        let norm = q.norm();
        if norm > 0.0 && norm.is_finite() {
            Some(Self(q.scale(1.0 / norm)))
        } else {
            None
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::try_new(Quaternion::from_array(a))
    }

    pub fn quaternion(&self) -> &Quaternion {
        &self.0
    }

    pub fn into_inner(self) -> Quaternion {
        self.0
    }

    pub fn s(&self) -> f64 {
        self.0.s
    }

    pub fn u(&self) -> &Vec3 {
        &self.0.u
    }

    pub fn to_array(&self) -> [f64; 4] {
        self.0.to_array()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    /// Conjugate, which is the inverse on S³.
    pub fn inverse(&self) -> Self {
        Self(self.0.conjugate())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        rotate_vector(self, v)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, rhs: Self) -> Self {
        Self(hamilton_product(&self.0, &rhs.0))
    }
}

/// Rotation vector `omega = phi * axis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn new(omega: Vec3) -> Self {
        Self(omega)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self(axis.normalize() * angle)
    }

    pub fn zero() -> Self {
        Self(Vec3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0 * k)
    }
}

/// A 3×3 proper orthogonal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn try_new(m: Matrix3<f64>) -> Result<Self> {
        let orthogonality = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(orthogonality <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(Error::NotRotation { orthogonality, det });
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

/// Inverse of a raw 4-vector that is required to be a unit quaternion.
pub fn inverse(q: &Quaternion) -> Result<UnitQuaternion> {
    let unit = UnitQuaternion::try_new(*q)?;
    Ok(unit.inverse())
}

/// `exp(omega / 2) = [cos(phi/2), sin(phi/2) u]`.
pub fn exp_map(omega: &AxisAngle) -> UnitQuaternion {
    let phi = omega.0.norm();
    let half = 0.5 * phi;
    // sin(phi/2) / phi
    let k = if phi < SMALL_ANGLE {
        0.5 - phi * phi / 48.0
    } else {
        half.sin() / phi
    };
    UnitQuaternion(Quaternion {
        s: half.cos(),
        u: omega.0 * k,
    })
}

/// `2 log(q)` as a rotation vector with angle in `[0, pi]`.
pub fn log_map(q: &UnitQuaternion) -> AxisAngle {
    AxisAngle(log_vector(&q.0))
}

/// `2 log(q)` on a raw 4-vector: canonicalizes to `s >= 0`, then
/// `phi = 2 atan2(|u|, s)` and `omega = u * phi / |u|`.
pub(crate) fn log_vector(q: &Quaternion) -> Vec3 {
    let (s, u) = if q.s < 0.0 { (-q.s, -q.u) } else { (q.s, q.u) };
    let n = u.norm();
    let phi = 2.0 * n.atan2(s);
    let factor = if phi < SMALL_ANGLE {
        (2.0 / s) * (1.0 - n * n / (3.0 * s * s))
    } else {
        phi / n
    };
    u * factor
}

/// `Im(q ⊗ [0, v] ⊗ q⁻¹)`.
pub fn rotate_vector(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    let p = hamilton_product(&hamilton_product(&q.0, &Quaternion::pure(*v)), &q.0.conjugate());
    p.u
}

pub fn quat_to_matrix(q: &UnitQuaternion) -> RotationMatrix {
    let Quaternion { s, u } = q.0;
    let (x, y, z) = (u.x, u.y, u.z);
    RotationMatrix(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - s * z),
        2.0 * (x * z + s * y),
        2.0 * (x * y + s * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - s * x),
        2.0 * (x * z - s * y),
        2.0 * (y * z + s * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Branch-on-largest-diagonal extraction. The result has `s >= 0`.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> Result<UnitQuaternion> {
    let r = RotationMatrix::try_new(*m)?;
    let m = r.0;
    let trace = m.trace();
    let (d0, d1, d2) = (m[(0, 0)], m[(1, 1)], m[(2, 2)]);
    let q = if trace >= d0 && trace >= d1 && trace >= d2 {
        let w = 0.5 * (1.0 + trace).sqrt();
        let k = 0.25 / w;
        Quaternion::new(
            w,
            (m[(2, 1)] - m[(1, 2)]) * k,
            (m[(0, 2)] - m[(2, 0)]) * k,
            (m[(1, 0)] - m[(0, 1)]) * k,
        )
    } else if d0 >= d1 && d0 >= d2 {
        let x = 0.5 * (1.0 + d0 - d1 - d2).sqrt();
        let k = 0.25 / x;
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) * k,
            x,
            (m[(0, 1)] + m[(1, 0)]) * k,
            (m[(0, 2)] + m[(2, 0)]) * k,
        )
    } else if d1 >= d2 {
        let y = 0.5 * (1.0 - d0 + d1 - d2).sqrt();
        let k = 0.25 / y;
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) * k,
            (m[(0, 1)] + m[(1, 0)]) * k,
            y,
            (m[(1, 2)] + m[(2, 1)]) * k,
        )
    } else {
        let z = 0.5 * (1.0 - d0 - d1 + d2).sqrt();
        let k = 0.25 / z;
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) * k,
            (m[(0, 2)] + m[(2, 0)]) * k,
            (m[(1, 2)] + m[(2, 1)]) * k,
            z,
        )
    };
    let q = if q.s < 0.0 { -q } else { q };
    Ok(UnitQuaternion(q.scale(1.0 / q.norm())))
}

pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axial vector of the antisymmetric part scaled by two: `vee(A - A^T)`.
fn vee_antisymmetric(a: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    )
}

/// Rodrigues: `I + sin(phi) K + (1 - cos(phi)) K²`.
pub fn mat_exp(omega: &AxisAngle) -> RotationMatrix {
    let phi = omega.0.norm();
    let m = if phi < SMALL_ANGLE {
        let k = hat(&omega.0);
        Matrix3::identity() + k + k * k * 0.5
    } else {
        let k = hat(&(omega.0 / phi));
        Matrix3::identity() + k * phi.sin() + k * k * (1.0 - phi.cos())
    };
    RotationMatrix(m)
}

/// Trace-based logarithm: `phi = acos((tr R - 1) / 2)`, axis from the
/// antisymmetric part divided by `2 sin(phi)`. The arccos argument is clamped
/// to `[-1, 1]`; nothing else is guarded.
pub fn mat_log(r: &RotationMatrix) -> AxisAngle {
    let c = ((r.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let phi = c.acos();
    let factor = if phi < SMALL_ANGLE {
        0.5 + phi * phi / 12.0
    } else {
        phi / (2.0 * phi.sin())
    };
    AxisAngle(vee_antisymmetric(&r.0) * factor)
}

/// Returns `q1` or `-q1`, whichever lies in the hemisphere of `q0`.
pub fn align_hemisphere(q0: &UnitQuaternion, q1: &UnitQuaternion) -> UnitQuaternion {
    if q0.dot(q1) >= 0.0 {
        *q1
    } else {
        -*q1
    }
}

/// Rotation angle of `q0⁻¹ ⊗ q1`, in `[0, pi]`.
pub fn geodesic_distance(q0: &UnitQuaternion, q1: &UnitQuaternion) -> f64 {
    let rel = q0.inverse() * align_hemisphere(q0, q1);
    log_map(&rel).angle()
}
