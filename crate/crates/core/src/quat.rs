//! Quaternion algebra on the unit sphere `S³ ⊂ R⁴`.
//!
//! Quaternions are stored scalar-first, `(w, x, y, z)`, everywhere in this
//! crate and in every file it writes. `R³` is identified with the pure
//! quaternions, so a [`Vec3`] `v` doubles as the quaternion `(0, v)`.
//!
//! The exponential uses the half-angle-free convention
//! `exp(ω) = (cos‖ω‖, sinc(ω)·ω)`, so `exp(ω)` rotates by `2‖ω‖` about `ω`.
//! Its inverse is `log(q) = (acos(q₀)/‖q_v‖)·q_v` on `{q₀ > -1}`.
//!
//! Every formula that divides by `‖ω‖` or `‖q_v‖` switches to a Taylor
//! expansion below [`SMALL_ANGLE`].

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Matrix4x3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this norm, `sinc`, its gradient and `acos(q₀)/‖q_v‖` use series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Tolerance on `‖q‖ - 1` for quaternions used as manifold points.
pub const UNIT_TOL: f64 = 1e-9;

/// `log` refuses quaternions with `q₀ ≤ -1 + ANTIPODE_TOL`.
pub const ANTIPODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_parts(w: f64, v: Vec3) -> Self {
        Quaternion::new(w, v.x, v.y, v.z)
    }

    /// The pure quaternion `(0, v)`.
    pub fn pure(v: Vec3) -> Self {
        Quaternion::from_parts(0.0, v)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Quaternion::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector4(self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn dot(self, other: Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(self, s: f64) -> Self {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalize(self) -> Self {
        self.scale(1.0 / self.norm())
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    pub(crate) fn ensure_unit(self) -> Result<Self> {
        if self.is_unit() {
            Ok(self)
        } else {
            Err(Error::NotUnit { norm: self.norm() })
        }
    }

    /// Flips the sign so that the real part is nonnegative. `q` and `-q`
    /// represent the same rotation; logs of canonical quaternions stay on
    /// the principal branch.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Matrix `L(p)` with `p · q = L(p) q` in `(w, x, y, z)` layout.
    pub fn left_matrix(self) -> Matrix4<f64> {
        let Quaternion { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Matrix `R(p)` with `q · p = R(p) q`.
    pub fn right_matrix(self) -> Matrix4<f64> {
        let Quaternion { w, x, y, z } = self;
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, q: Quaternion) -> Quaternion {
        let p = self;
        Quaternion::new(
            p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
            p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
            p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
            p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
        )
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, q: Quaternion) -> Quaternion {
        Quaternion::new(self.w + q.w, self.x + q.x, self.y + q.y, self.z + q.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, q: Quaternion) -> Quaternion {
        Quaternion::new(self.w - q.w, self.x - q.x, self.y - q.y, self.z - q.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

pub fn quat_mul(p: Quaternion, q: Quaternion) -> Quaternion {
    p * q
}

pub fn quat_inv(q: Quaternion) -> Result<Quaternion> {
    let n2 = q.norm_squared();
    if n2 == 0.0 {
        return Err(Error::ZeroQuaternion);
    }
    Ok(q.conjugate().scale(1.0 / n2))
}

/// `[a, b] = a·b − b·a`.
pub fn commutator(a: Quaternion, b: Quaternion) -> Quaternion {
    a * b - b * a
}

/// Rotates `y` by the unit quaternion `q`: the pure part of `q·y·q⁻¹`.
pub fn rotate(q: Quaternion, y: Vec3) -> Result<Vec3> {
    let q = q.ensure_unit()?;
    Ok((q * Quaternion::pure(y) * q.conjugate()).vector())
}

/// `sinc(ω) = sin‖ω‖/‖ω‖` and its gradient `(cos r/r² − sin r/r³)·ω`.
pub fn sinc_and_grad(w: Vec3) -> (f64, Vec3) {
    let r = w.norm();
    if r < SMALL_ANGLE {
        sinc_series(r, w)
    } else {
        sinc_direct(r, w)
    }
}

pub(crate) fn sinc_series(r: f64, w: Vec3) -> (f64, Vec3) {
    let r2 = r * r;
    let sinc = 1.0 - r2 / 6.0 + r2 * r2 / 120.0;
    let coeff = -1.0 / 3.0 + r2 / 30.0 - r2 * r2 / 840.0;
    (sinc, w * coeff)
}

pub(crate) fn sinc_direct(r: f64, w: Vec3) -> (f64, Vec3) {
    let (s, c) = r.sin_cos();
    let coeff = c / (r * r) - s / (r * r * r);
    (s / r, w * coeff)
}

pub fn quat_exp(w: Vec3) -> Quaternion {
    let (sinc, _) = sinc_and_grad(w);
    Quaternion::from_parts(w.norm().cos(), w * sinc)
}

pub fn quat_log(q: Quaternion) -> Result<Vec3> {
    let s = q.vector().norm();
    if q.w <= -1.0 + ANTIPODE_TOL || (s == 0.0 && q.w < 0.0) {
        return Err(Error::LogSingularity { real_part: q.w });
    }
    Ok(q.vector() * angle_over_sine(q.w, s))
}

/// `acos(q₀)/‖q_v‖`, evaluated as `atan2(‖q_v‖, q₀)/‖q_v‖` so that slightly
/// non-unit inputs stay finite.
fn angle_over_sine(w: f64, s: f64) -> f64 {
    if s < SMALL_ANGLE && w > 0.0 {
        let s2 = s * s;
        1.0 + s2 / 6.0 + 3.0 * s2 * s2 / 40.0
    } else {
        s.atan2(w) / s
    }
}

/// The `4×3` matrix of `d exp_ω`: `[−sinc(ω)ωᵀ; sinc(ω)I₃ + ∇sinc(ω)ωᵀ]`.
pub fn dexp_matrix(w: Vec3) -> Matrix4x3<f64> {
    let (sinc, grad) = sinc_and_grad(w);
    let lower = Matrix3::identity() * sinc + grad * w.transpose();
    let mut m = Matrix4x3::zeros();
    m.row_mut(0).copy_from(&(-w.transpose() * sinc));
    m.fixed_view_mut::<3, 3>(1, 0).copy_from(&lower);
    m
}

/// Differential of `exp` at `w` applied to `eta`; tangent to `S³` at `exp(w)`.
pub fn dexp(w: Vec3, eta: Vec3) -> Quaternion {
    Quaternion::from_vector4(&(dexp_matrix(w) * eta))
}

/// Differential of `log` at the unit quaternion `q` applied to the tangent
/// vector `v`. Near the identity the series branch eliminates `v₀` through
/// tangency (`q₀v₀ + q_v·v_v = 0`).
pub fn dlog(q: Quaternion, v: Quaternion) -> Result<Vec3> {
    let s = q.vector().norm();
    if q.w <= -1.0 + ANTIPODE_TOL || (s == 0.0 && q.w < 0.0) {
        return Err(Error::LogSingularity { real_part: q.w });
    }
    if s < SMALL_ANGLE && q.w > 0.0 {
        Ok(dlog_series(q, v))
    } else {
        Ok(dlog_direct(q, v))
    }
}

pub(crate) fn dlog_direct(q: Quaternion, v: Quaternion) -> Vec3 {
    dlog_matrix_direct(q) * v.to_vector4()
}

/// `[−q_v/‖q_v‖²,  (acos(q₀)/‖q_v‖)(I₃ − q_v q_vᵀ/‖q_v‖²)]`, using
/// `√(1−q₀²) = ‖q_v‖` on `S³` to avoid cancellation near the identity.
fn dlog_matrix_direct(q: Quaternion) -> Matrix3x4<f64> {
    let qv = q.vector();
    let s = qv.norm();
    let k = s.atan2(q.w) / s;
    let mut m = Matrix3x4::zeros();
    m.column_mut(0).copy_from(&(-qv / (s * s)));
    let block = (Matrix3::identity() - qv * qv.transpose() / (s * s)) * k;
    m.fixed_view_mut::<3, 3>(0, 1).copy_from(&block);
    m
}

pub(crate) fn dlog_series(q: Quaternion, v: Quaternion) -> Vec3 {
    let qv = q.vector();
    let vv = v.vector();
    let s2 = qv.norm_squared();
    let k1 = 1.0 + s2 / 6.0 + 3.0 * s2 * s2 / 40.0;
    let k2 = 1.0 / 3.0 + 3.0 * s2 / 10.0;
    vv * k1 + qv * (k2 * qv.dot(&vv))
}
