//! Quaternion and exponential-map rotation math.
//!
//! Quaternions are Hamilton-convention, stored `(w, x, y, z)`. The world is
//! y-up: "heading" is the twist of a rotation about [`UP`].

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// World up axis.
pub const UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

const SMALL_ANGLE: f64 = 1e-8;
const UNIT_TOL: f64 = 1e-6;
const NLERP_DOT: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Rotation vector: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMap(pub Vector3<f64>);

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis * (s / n);
        Quat::new(c, a.x, a.y, a.z)
    }

    pub fn from_rotation_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, 0.0, 0.0, s)
    }

    pub fn from_rotation_y(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, 0.0, s, 0.0)
    }

    /// Infallible exponential map; callers guarantee a finite input.
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            let q = Quat::new(1.0 - t2 / 8.0, 0.0, 0.0, 0.0);
            let k = 0.5 - t2 / 48.0;
            return Quat::new(q.w, v.x * k, v.y * k, v.z * k).normalize();
        }
        let (s, c) = (0.5 * theta).sin_cos();
        let k = s / theta;
        Quat::new(c, v.x * k, v.y * k, v.z * k)
    }

    /// Infallible logarithm; the result lies in the canonical hemisphere so
    /// its magnitude is in `[0, π]`.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        let q = self.canonical();
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < SMALL_ANGLE {
            return v * (2.0 / q.w);
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Flips into the `w >= 0` hemisphere.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a proper rotation matrix, canonical hemisphere.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalize().canonical()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let v = Vector3::new(self.x, self.y, self.z).norm();
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic distance between two rotations, in `[0, π]`.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        (self.conjugate() * *other).angle()
    }

    /// Rotation vector carrying `self` to `other` in the local frame,
    /// `log(self⁻¹·other)`; exactly zero for equal rotations.
    pub fn delta_to(&self, other: &Quat) -> Vector3<f64> {
        if self == other {
            Vector3::zeros()
        } else {
            (self.conjugate() * *other).scaled_axis()
        }
    }

    /// Twist of this rotation about the world up axis.
    pub fn heading(&self) -> Quat {
        let n = (self.w * self.w + self.y * self.y).sqrt();
        if n < 1e-12 {
            return Quat::IDENTITY;
        }
        Quat::new(self.w / n, 0.0, self.y / n, 0.0)
    }

    /// Signed heading angle about the up axis.
    pub fn heading_angle(&self) -> f64 {
        let h = self.heading().canonical();
        2.0 * h.y.atan2(h.w)
    }

    /// First two columns of the rotation matrix, a continuous 6D encoding.
    pub fn tan_norm(&self) -> [f64; 6] {
        let t = self.rotate(&Vector3::x());
        let n = self.rotate(&UP);
        [t.x, t.y, t.z, n.x, n.y, n.z]
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl ExpMap {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        ExpMap(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Converts a rotation vector to a unit quaternion.
pub fn exp_map_to_quat(v: &ExpMap) -> Result<Quat> {
    if !v.0.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid(format!("non-finite exponential map {:?}", v.0)));
    }
    Ok(Quat::from_scaled_axis(&v.0))
}

/// Converts a unit quaternion to its canonical rotation vector.
pub fn quat_to_exp_map(q: &Quat) -> Result<ExpMap> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
    }
    Ok(ExpMap(q.scaled_axis()))
}

/// Shortest-arc spherical interpolation.
pub fn slerp(q0: &Quat, q1: &Quat, u: f64) -> Result<Quat> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("slerp parameter {u} outside [0, 1]")));
    }
    Ok(slerp_unchecked(q0, q1, u))
}

pub(crate) fn slerp_unchecked(q0: &Quat, q1: &Quat, u: f64) -> Quat {
    let mut dot = q0.dot(q1);
    let mut b = *q1;
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    if dot > NLERP_DOT {
        let q = Quat::new(
            q0.w + u * (b.w - q0.w),
            q0.x + u * (b.x - q0.x),
            q0.y + u * (b.y - q0.y),
            q0.z + u * (b.z - q0.z),
        );
        return q.normalize();
    }
    let theta = dot.min(1.0).acos();
    let s = theta.sin();
    let k0 = ((1.0 - u) * theta).sin() / s;
    let k1 = (u * theta).sin() / s;
    Quat::new(
        k0 * q0.w + k1 * b.w,
        k0 * q0.x + k1 * b.x,
        k0 * q0.y + k1 * b.y,
        k0 * q0.z + k1 * b.z,
    )
    .normalize()
}
