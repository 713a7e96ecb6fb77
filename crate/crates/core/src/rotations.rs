//! The rotation group SO(3).
//!
//! Rotations are stored as unit quaternions with a canonical sign, so the two
//! antipodal quaternions covering one rotation collapse to a single value and
//! `==` is equality of rotations. Matrices are derived on demand.
//!
//! The metric is the bi-invariant one: the distance between `g` and `h` is the
//! rotation angle of `g⁻¹h`, a value in `[0, π]`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Mul;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on the norm of a vector passed as a unit axis.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Below this sine of the displacement angle, `euler_decompose` treats `g·u`
/// as parallel to `u`.
const DEGENERATE_SINE: f64 = 1e-9;

/// A unit vector in R³.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVec3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVec3 {
    pub const E_X: UnitVec3 = UnitVec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const E_Y: UnitVec3 = UnitVec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const E_Z: UnitVec3 = UnitVec3 { x: 0.0, y: 0.0, z: 1.0 };

    /// Accepts a vector whose norm is within [`UNIT_TOLERANCE`] of one and
    /// renormalizes it.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = norm3([x, y, z]);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(invalid(format!("axis ({x}, {y}, {z}) is not a unit vector (norm {n})")));
        }
        Ok(Self::scaled([x, y, z], n))
    }

    /// Normalizes any finite nonzero vector.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = norm3([x, y, z]);
        if !n.is_finite() || n < 1e-300 {
            return Err(invalid(format!("cannot normalize ({x}, {y}, {z})")));
        }
        Ok(Self::scaled([x, y, z], n))
    }

    /// Point on the sphere at polar angle `polar` from `e_z` and azimuth
    /// `azimuth` from `e_x`. Both angles are periodic.
    pub fn from_spherical(polar: f64, azimuth: f64) -> Self {
        let (sp, cp) = polar.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Self::scaled([sp * ca, sp * sa, cp], norm3([sp * ca, sp * sa, cp]))
    }

    fn scaled(v: [f64; 3], n: f64) -> Self {
        UnitVec3 {
            x: v[0] / n,
            y: v[1] / n,
            z: v[2] / n,
        }
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

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &UnitVec3) -> [f64; 3] {
        cross3(self.to_array(), other.to_array())
    }

    /// A fixed unit vector orthogonal to `self`: the cross product with the
    /// coordinate axis of smallest absolute component (first one on ties).
    pub fn perpendicular(&self) -> Self {
        let (ax, ay, az) = (self.x.abs(), self.y.abs(), self.z.abs());
        let v = if ax <= ay && ax <= az {
            [0.0, -self.z, self.y]
        } else if ay <= az {
            [self.z, 0.0, -self.x]
        } else {
            [-self.y, self.x, 0.0]
        };
        Self::scaled(v, norm3(v))
    }
}

impl TryFrom<[f64; 3]> for UnitVec3 {
    type Error = crate::Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::normalize(v[0], v[1], v[2])
    }
}

impl From<UnitVec3> for [f64; 3] {
    fn from(v: UnitVec3) -> Self {
        v.to_array()
    }
}

impl std::ops::Neg for UnitVec3 {
    type Output = UnitVec3;

    fn neg(self) -> UnitVec3 {
        UnitVec3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// A rotation of R³ as a canonical unit quaternion `(w, x, y, z)`.
///
/// Canonical sign: `w > 0`, or `w == 0` and the first nonzero of `(x, y, z)`
/// is positive.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rotation({:.12}, {:.12}, {:.12}, {:.12})",
            self.w, self.x, self.y, self.z
        )
    }
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a rotation from any finite nonzero quaternion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(invalid(format!("quaternion ({w}, {x}, {y}, {z}) cannot be normalized")));
        }
        // Inputs already of unit norm keep their bits (canonical only
        // rescales when the norm is off by more than a few ulps).
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(w, x, y, z));
        }
        Ok(Self::canonical(w / n, x / n, y / n, z / n))
    }

    /// Normalizes and fixes the sign. Input must be finite and nonzero.
    pub(crate) fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n2 = w * w + x * x + y * y + z * z;
        let inv = if (n2 - 1.0).abs() > 4.0 * f64::EPSILON {
            1.0 / n2.sqrt()
        } else {
            1.0
        };
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        let s = if flip { -inv } else { inv };
        // 0.0 * -1 is -0.0; keep zeros positive so field equality is exact.
        Rotation {
            w: (w * s) + 0.0,
            x: (x * s) + 0.0,
            y: (y * s) + 0.0,
            z: (z * s) + 0.0,
        }
    }

    /// Counter-clockwise rotation by `angle` about `axis` (right-hand rule).
    pub fn from_axis_angle(axis: UnitVec3, angle: f64) -> Self {
        // Angles in [−π, π] are used as given so that (u, φ) and (−u, −φ)
        // produce bit-identical quaternions.
        let angle = if angle.abs() <= PI { angle } else { wrap_pi(angle) };
        let half = 0.5 * angle;
        let (s, c) = half.sin_cos();
        Self::canonical(c, s * axis.x, s * axis.y, s * axis.z)
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Quaternion components `[w, x, y, z]`.
    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// The rotation "`other` first, then `self`", i.e. the matrix product
    /// `self · other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let (a1, b1, c1, d1) = (self.w, self.x, self.y, self.z);
        let (a2, b2, c2, d2) = (other.w, other.x, other.y, other.z);
        Self::canonical(
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        )
    }

    pub fn inverse(&self) -> Rotation {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotates a unit vector.
    pub fn act(&self, v: &UnitVec3) -> UnitVec3 {
        let r = self.apply(v.to_array());
        UnitVec3::scaled(r, norm3(r))
    }

    /// Rotates an arbitrary vector.
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let q = [self.x, self.y, self.z];
        let t = cross3(q, v).map(|c| 2.0 * c);
        let u = cross3(q, t);
        [
            v[0] + self.w * t[0] + u[0],
            v[1] + self.w * t[1] + u[1],
            v[2] + self.w * t[2] + u[2],
        ]
    }

    /// Rotation angle in `[0, π]`, equal to `2·arccos|w|`.
    pub fn rotation_angle(&self) -> f64 {
        let v = norm3([self.x, self.y, self.z]);
        2.0 * v.atan2(self.w.abs())
    }

    /// Bi-invariant distance: the rotation angle of `self⁻¹ · other`.
    pub fn distance(&self, other: &Rotation) -> f64 {
        // Components of conj(self) * other.
        let (a1, b1, c1, d1) = (self.w, -self.x, -self.y, -self.z);
        let (a2, b2, c2, d2) = (other.w, other.x, other.y, other.z);
        let w = a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2;
        let x = a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2;
        let y = a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2;
        let z = a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2;
        2.0 * norm3([x, y, z]).atan2(w.abs())
    }

    /// Euclidean distance between the quaternions, minimized over the sign.
    pub fn quaternion_distance(&self, other: &Rotation) -> f64 {
        let a = self.components();
        let b = other.components();
        let minus: f64 = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum();
        let plus: f64 = (0..4).map(|i| (a[i] + b[i]).powi(2)).sum();
        minus.min(plus).sqrt()
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Draws a rotation from the normalized Haar measure: four independent
    /// standard Gaussians normalized to a unit quaternion.
    pub fn haar_sample<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n2: f64 = q.iter().map(|c| c * c).sum();
            if n2 > 1e-200 {
                let inv = 1.0 / n2.sqrt();
                return Self::canonical(q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv);
            }
        }
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl TryFrom<[f64; 4]> for Rotation {
    type Error = crate::Error;

    fn try_from(q: [f64; 4]) -> Result<Self> {
        Self::from_quaternion(q[0], q[1], q[2], q[3])
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        r.components()
    }
}

/// Angle between two unit vectors, in `[0, π]`.
pub fn angle_between(u: &UnitVec3, v: &UnitVec3) -> f64 {
    // atan2 of (|u×v|, u·v) agrees with the clamped arccos of the dot product
    // and stays accurate near 0 and π.
    let c = u.cross(v);
    norm3(c).atan2(u.dot(v).clamp(-1.0, 1.0))
}

/// `r − sin r`, without cancellation for small `r`.
pub(crate) fn r_minus_sin(r: f64) -> f64 {
    if r.abs() < 0.1 {
        // r³/3! − r⁵/5! + r⁷/7! − r⁹/9! + r¹¹/11!
        let r2 = r * r;
        let mut term = r * r2 / 6.0;
        let mut sum = 0.0;
        for k in 0..5 {
            sum += term;
            let n = (2 * k + 4) as f64;
            term *= -r2 / (n * (n + 1.0));
        }
        sum
    } else {
        r - r.sin()
    }
}

/// Normalized Haar measure of the metric ball `{g : rotation_angle(g) ≤ r}`:
/// `(r − sin r)/π`.
pub fn ball_measure(r: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&r) {
        return Err(invalid(format!("ball radius {r} outside [0, π]")));
    }
    Ok(r_minus_sin(r) / PI)
}

/// `g = R_v^θ · R_u^φ` with `v ⊥ u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerDecomposition {
    pub v: UnitVec3,
    /// Angle in `[0, π]`; equals `angle_between(u, g·u)`.
    pub theta: f64,
    /// Angle in `[−π, π)`.
    pub phi: f64,
}

impl EulerDecomposition {
    pub fn reconstruct(&self, u: UnitVec3) -> Rotation {
        Rotation::from_axis_angle(self.v, self.theta) * Rotation::from_axis_angle(u, self.phi)
    }
}

/// Writes `g` as a rotation fixing `u` followed by a rotation about an axis
/// orthogonal to `u`.
///
/// `v` is the normalized `u × g·u`. When `g·u` is parallel to `u`, `v` is
/// [`UnitVec3::perpendicular`] of `u` and `θ` is `0` or `π`.
pub fn euler_decompose(g: &Rotation, u: &UnitVec3) -> EulerDecomposition {
    let gu = g.act(u);
    let c = u.cross(&gu);
    let s = norm3(c);
    let (v, theta) = if s < DEGENERATE_SINE {
        let theta = if u.dot(&gu) >= 0.0 { 0.0 } else { PI };
        (u.perpendicular(), theta)
    } else {
        (UnitVec3::scaled(c, s), angle_between(u, &gu))
    };
    // h = R_v^{-θ} g fixes u, so h = ±(cos φ/2, sin φ/2 · u).
    let h = Rotation::from_axis_angle(v, -theta) * *g;
    let along = h.x * u.x + h.y * u.y + h.z * u.z;
    let phi = wrap_pi(2.0 * along.atan2(h.w));
    EulerDecomposition { v, theta, phi }
}

/// Reduces an angle to `[−π, π)`.
pub(crate) fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
