//! Unit vectors on the 2-sphere and the bisector-symmetric rotation map
//! `(a, b) -> (â, b̂)` used by the joint-measurement rule of the model.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Neg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when validating that an angle lies in `[0, π]`.
pub const ANGLE_DOMAIN_SLACK: f64 = 1e-9;

/// Below this norm `a + b` (or `a − b`) is treated as exactly zero.
const DEGENERATE_NORM: f64 = 1e-15;

/// A point on the unit 2-sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector {
    pub const X: UnitVector = UnitVector { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: UnitVector = UnitVector { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: UnitVector = UnitVector { x: 0.0, y: 0.0, z: 1.0 };

    /// Normalizes `(x, y, z)`. Fails on zero or non-finite input.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < DEGENERATE_NORM {
            return Err(Error::Degenerate(format!("cannot normalize ({x}, {y}, {z})")));
        }
        Ok(UnitVector { x: x / norm, y: y / norm, z: z / norm })
    }

    /// Direction with polar angle `theta` from +z and azimuth `phi` from +x.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        UnitVector { x: st * cp, y: st * sp, z: ct }
    }

    /// Direction in the xz-plane at angle `angle` from +z, turning towards +x.
    pub fn in_xz_plane(angle: f64) -> Self {
        Self::from_spherical(angle, 0.0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &UnitVector) -> [f64; 3] {
        cross(self.components(), other.components())
    }
}

impl Neg for UnitVector {
    type Output = UnitVector;

    fn neg(self) -> UnitVector {
        UnitVector { x: -self.x, y: -self.y, z: -self.z }
    }
}

impl TryFrom<[f64; 3]> for UnitVector {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVector::new(v[0], v[1], v[2])
    }
}

impl From<UnitVector> for [f64; 3] {
    fn from(v: UnitVector) -> [f64; 3] {
        v.components()
    }
}

impl fmt::Display for UnitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// An angle in radians. Pair angles and polar angles live in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleRad(f64);

impl AngleRad {
    pub const ZERO: AngleRad = AngleRad(0.0);
    pub const RIGHT: AngleRad = AngleRad(FRAC_PI_2);
    pub const STRAIGHT: AngleRad = AngleRad(PI);

    /// Wraps an angle known to lie in `[0, π]` (within [`ANGLE_DOMAIN_SLACK`]),
    /// clamping the slack away.
    pub fn pair(value: f64) -> Result<Self> {
        if !value.is_finite() || !(-ANGLE_DOMAIN_SLACK..=PI + ANGLE_DOMAIN_SLACK).contains(&value) {
            return Err(Error::Domain(format!("angle {value} outside [0, pi]")));
        }
        Ok(AngleRad(value.clamp(0.0, PI)))
    }

    /// Wraps any finite angle without range checks.
    pub fn raw(value: f64) -> Self {
        AngleRad(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

impl From<AngleRad> for f64 {
    fn from(a: AngleRad) -> f64 {
        a.0
    }
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Angle between two unit vectors, in `[0, π]`, symmetric in its arguments.
pub fn angle_between(u: &UnitVector, v: &UnitVector) -> AngleRad {
    let sin = norm3(u.cross(v));
    let cos = u.dot(v).clamp(-1.0, 1.0);
    AngleRad(sin.atan2(cos))
}

/// `ω̂ = π·sin²(ω/2)`, the pair angle after the joint-measurement rotation.
pub fn omega_hat(omega: AngleRad) -> Result<AngleRad> {
    let w = AngleRad::pair(omega.value())?.value();
    let s = (w / 2.0).sin();
    Ok(AngleRad(PI * s * s))
}

/// Rotates `(a, b)` within their common plane so that the two vectors stay
/// symmetric about the bisector of `(a, b)` and enclose `omega_hat(ω)`.
/// `â` stays on the side of `a`, `b̂` on the side of `b`; for `ω > π/2` both
/// move away from the bisector, for `ω < π/2` towards it.
///
/// `ω = 0` and `ω = π` are fixed points and need no plane.
pub fn rotate_pair(a: &UnitVector, b: &UnitVector) -> (UnitVector, UnitVector) {
    let omega = angle_between(a, b);
    let half_hat = omega_hat(omega).expect("angle_between is in [0, pi]").value() / 2.0;

    let sum = [a.x + b.x, a.y + b.y, a.z + b.z];
    let diff = [a.x - b.x, a.y - b.y, a.z - b.z];
    let sum_norm = norm3(sum);
    let diff_norm = norm3(diff);
    if sum_norm < DEGENERATE_NORM || diff_norm < DEGENERATE_NORM {
        return (*a, *b);
    }

    // bisector and in-plane normal to it, pointing from b towards a
    let m = sum.map(|c| c / sum_norm);
    let n = diff.map(|c| c / diff_norm);
    let (s, c) = half_hat.sin_cos();
    let a_hat = [c * m[0] + s * n[0], c * m[1] + s * n[1], c * m[2] + s * n[2]];
    let b_hat = [c * m[0] - s * n[0], c * m[1] - s * n[1], c * m[2] - s * n[2]];
    (
        UnitVector::try_from(a_hat).expect("unit combination of orthonormal pair"),
        UnitVector::try_from(b_hat).expect("unit combination of orthonormal pair"),
    )
}

/// Rotates `from` towards `to` (in their common plane) until it makes the
/// angle `target` with `to`. Used by the asymmetric reference model.
pub(crate) fn rotate_to_angle_from(from: &UnitVector, to: &UnitVector, target: AngleRad) -> UnitVector {
    let omega = angle_between(from, to).value();
    let t = target.value();
    if omega < 1e-15 || (PI - omega) < 1e-15 {
        // collinear: the target angle equals ω at both fixed points
        return *from;
    }
    // orthonormal frame (to, w) with `from` in the upper half-plane
    let d = from.dot(to);
    let w = [from.x - d * to.x, from.y - d * to.y, from.z - d * to.z];
    let wn = norm3(w);
    let w = w.map(|c| c / wn);
    let (s, c) = t.sin_cos();
    UnitVector::try_from([c * to.x + s * w[0], c * to.y + s * w[1], c * to.z + s * w[2]])
        .expect("unit combination of orthonormal pair")
}

/// `det[u, v, w]`, the signed volume spanned by three vectors.
pub fn triple_product(u: &UnitVector, v: &UnitVector, w: &UnitVector) -> f64 {
    let c = v.cross(w);
    u.x * c[0] + u.y * c[1] + u.z * c[2]
}
