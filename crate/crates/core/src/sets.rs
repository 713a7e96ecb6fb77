//! Constructive measurable subsets of SO(3).
//!
//! A [`SetSpec`] is an expression tree over two kinds of leaves:
//!
//! * `Cap { axis, theta }`: the rotations moving `axis` by less than `theta`,
//!   i.e. the preimage of a spherical cap under `g ↦ g·axis`;
//! * `Ball { radius }`: the rotations with rotation angle below `radius`;
//!
//! combined by finite unions and intersections. Every tree exposes a
//! 1-Lipschitz function whose negative set is the member set, which is what
//! makes grid rasterization certifiable.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotations::{angle_between, euler_decompose, Rotation, UnitVec3};

/// A measurable subset of SO(3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSetSpec", into = "RawSetSpec")]
pub enum SetSpec {
    Cap { axis: UnitVec3, theta: f64 },
    Ball { radius: f64 },
    Union(Vec<SetSpec>),
    Intersection(Vec<SetSpec>),
}

/// The JSON form of a [`SetSpec`].
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawSetSpec {
    Cap { axis: [f64; 3], theta: f64 },
    Ball { radius: f64 },
    Union { parts: Vec<SetSpec> },
    Intersection { parts: Vec<SetSpec> },
}

impl TryFrom<RawSetSpec> for SetSpec {
    type Error = Error;

    fn try_from(raw: RawSetSpec) -> Result<Self> {
        match raw {
            RawSetSpec::Cap { axis, theta } => {
                let axis = UnitVec3::normalize(axis[0], axis[1], axis[2])?;
                SetSpec::cap(axis, theta)
            }
            RawSetSpec::Ball { radius } => SetSpec::ball(radius),
            RawSetSpec::Union { parts } => SetSpec::union(parts),
            RawSetSpec::Intersection { parts } => SetSpec::intersection(parts),
        }
    }
}

impl From<SetSpec> for RawSetSpec {
    fn from(s: SetSpec) -> Self {
        match s {
            SetSpec::Cap { axis, theta } => RawSetSpec::Cap {
                axis: axis.to_array(),
                theta,
            },
            SetSpec::Ball { radius } => RawSetSpec::Ball { radius },
            SetSpec::Union(parts) => RawSetSpec::Union { parts },
            SetSpec::Intersection(parts) => RawSetSpec::Intersection { parts },
        }
    }
}

fn check_angle(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0 && value <= PI) {
        return Err(invalid(format!("{name} = {value} outside (0, π]")));
    }
    Ok(())
}

impl SetSpec {
    /// `{g : ∠(axis, g·axis) < theta}` with `theta ∈ (0, π]`.
    pub fn cap(axis: UnitVec3, theta: f64) -> Result<Self> {
        check_angle("cap theta", theta)?;
        Ok(SetSpec::Cap { axis, theta })
    }

    /// `{g : rotation_angle(g) < radius}` with `radius ∈ (0, π]`.
    pub fn ball(radius: f64) -> Result<Self> {
        check_angle("ball radius", radius)?;
        Ok(SetSpec::Ball { radius })
    }

    pub fn union(parts: Vec<SetSpec>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("union needs at least one part"));
        }
        Ok(SetSpec::Union(parts))
    }

    pub fn intersection(parts: Vec<SetSpec>) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("intersection needs at least one part"));
        }
        Ok(SetSpec::Intersection(parts))
    }

    /// Parses the JSON form.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("set specs always serialize")
    }

    /// Strict membership; boundaries are Haar-null.
    pub fn contains(&self, g: &Rotation) -> bool {
        match self {
            SetSpec::Cap { axis, theta } => angle_between(axis, &g.act(axis)) < *theta,
            SetSpec::Ball { radius } => g.rotation_angle() < *radius,
            SetSpec::Union(parts) => parts.iter().any(|p| p.contains(g)),
            SetSpec::Intersection(parts) => parts.iter().all(|p| p.contains(g)),
        }
    }

    /// A 1-Lipschitz function (in the rotation metric) that is negative
    /// exactly on the set.
    pub fn lipschitz_eval(&self, g: &Rotation) -> f64 {
        match self {
            SetSpec::Cap { axis, theta } => angle_between(axis, &g.act(axis)) - theta,
            SetSpec::Ball { radius } => g.rotation_angle() - radius,
            SetSpec::Union(parts) => parts.iter().map(|p| p.lipschitz_eval(g)).fold(f64::INFINITY, f64::min),
            SetSpec::Intersection(parts) => parts
                .iter()
                .map(|p| p.lipschitz_eval(g))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// True when the set is all of SO(3) up to a null set.
    pub fn covers_group(&self) -> bool {
        match self {
            SetSpec::Cap { theta, .. } => *theta >= PI,
            SetSpec::Ball { radius } => *radius >= PI,
            SetSpec::Union(parts) => parts.iter().any(SetSpec::covers_group),
            SetSpec::Intersection(parts) => parts.iter().all(SetSpec::covers_group),
        }
    }

    /// Exact measure for single leaves.
    pub fn closed_form_measure(&self) -> Option<f64> {
        match self {
            SetSpec::Cap { theta, .. } => cap_measure(*theta).ok(),
            SetSpec::Ball { radius } => crate::rotations::ball_measure(*radius).ok(),
            _ if self.covers_group() => Some(1.0),
            _ => None,
        }
    }

    /// A cap `(u, t)` with the set contained in `Cap(u, t)`, if one with
    /// `t < π` can be derived.
    ///
    /// Uses `Ball(r) ⊆ Cap(u, r)` for every `u` and
    /// `Cap(u₂, r) ⊆ Cap(u₁, r + 2∠(u₁, u₂))`.
    pub fn bounding_cap(&self) -> Option<(UnitVec3, f64)> {
        let axis = self.first_axis().unwrap_or(UnitVec3::E_Z);
        let t = self.cap_bound_about(&axis);
        (t < PI).then_some((axis, t))
    }

    fn first_axis(&self) -> Option<UnitVec3> {
        match self {
            SetSpec::Cap { axis, .. } => Some(*axis),
            SetSpec::Ball { .. } => None,
            SetSpec::Union(parts) | SetSpec::Intersection(parts) => parts.iter().find_map(SetSpec::first_axis),
        }
    }

    /// Smallest radius `t` this tree can certify for `set ⊆ Cap(u, t)`.
    fn cap_bound_about(&self, u: &UnitVec3) -> f64 {
        match self {
            SetSpec::Cap { axis, theta } => theta + 2.0 * angle_between(u, axis),
            SetSpec::Ball { radius } => *radius,
            SetSpec::Union(parts) => parts.iter().map(|p| p.cap_bound_about(u)).fold(0.0, f64::max),
            SetSpec::Intersection(parts) => parts.iter().map(|p| p.cap_bound_about(u)).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Normalized Haar measure of `Cap(u, θ)`: `(1 − cos θ)/2`, computed as
/// `sin²(θ/2)`.
pub fn cap_measure(theta: f64) -> Result<f64> {
    check_angle("cap theta", theta)?;
    Ok((0.5 * theta).sin().powi(2))
}

/// The cap radius with the given measure: `arccos(1 − 2m)`.
pub fn cap_radius_for_measure(m: f64) -> Result<f64> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(invalid(format!("measure {m} outside (0, 1]")));
    }
    Ok(2.0 * m.sqrt().asin())
}

/// `Cap(u, θ₁) · Cap(u, θ₂) = Cap(u, min(θ₁ + θ₂, π))` up to a null set, for
/// `θᵢ ∈ (0, π/2]`.
pub fn cap_product_spec(axis: UnitVec3, theta1: f64, theta2: f64) -> Result<SetSpec> {
    for (name, t) in [("theta1", theta1), ("theta2", theta2)] {
        if !(t.is_finite() && t > 0.0 && t <= FRAC_PI_2) {
            return Err(invalid(format!("{name} = {t} outside (0, π/2]")));
        }
    }
    SetSpec::cap(axis, (theta1 + theta2).min(PI))
}

/// `Ball(r₁) · Ball(r₂) = Ball(min(r₁ + r₂, π))`.
pub fn ball_product_spec(r1: f64, r2: f64) -> Result<SetSpec> {
    check_angle("r1", r1)?;
    check_angle("r2", r2)?;
    SetSpec::ball((r1 + r2).min(PI))
}

/// Splits `g ∈ Cap(u, 2θ)` into `g₁ g₂` with both factors in `Cap(u, θ)`.
///
/// With `g = R_v^ψ R_u^φ` from [`euler_decompose`], the factors are
/// `g₁ = R_v^{ψ/2}` and `g₂ = R_v^{ψ/2} R_u^φ`; each moves `u` by `ψ/2`.
pub fn cap_square_factor(g: &Rotation, u: &UnitVec3, theta: f64) -> Result<(Rotation, Rotation)> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(invalid(format!("theta = {theta} must be positive")));
    }
    if theta > FRAC_PI_2 {
        return Err(Error::Domain(format!("cap side: theta = {theta} exceeds π/2")));
    }
    let d = euler_decompose(g, u);
    let bound = (2.0 * theta).min(PI);
    if d.theta >= bound {
        return Err(Error::Domain(format!(
            "element side: α(u, g·u) = {} is not below min(2θ, π) = {bound}",
            d.theta
        )));
    }
    let half = Rotation::from_axis_angle(d.v, 0.5 * d.theta);
    Ok((half, half * Rotation::from_axis_angle(*u, d.phi)))
}

/// `(m, m₂)` for a cap of radius `θ ∈ (0, π/2]`: `m = (1 − cos θ)/2` and
/// `μ(A²) = m₂ = 4m(1 − m)`, which is checked against `sin²θ`.
pub fn cap_doubling(theta: f64) -> Result<(f64, f64)> {
    if !(theta.is_finite() && theta > 0.0 && theta <= FRAC_PI_2) {
        return Err(invalid(format!("theta = {theta} outside (0, π/2]")));
    }
    let m = cap_measure(theta)?;
    let m2 = 4.0 * m * (1.0 - m);
    let s2 = theta.sin().powi(2);
    assert!((m2 - s2).abs() < 1e-14, "4m(1-m) = {m2} differs from sin²θ = {s2}");
    Ok((m, m2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::haar_at;
    use approx::assert_abs_diff_eq;

    fn unit(seed: u64, i: u64) -> UnitVec3 {
        haar_at(seed, i).act(&UnitVec3::E_Z)
    }

    #[test]
    fn membership_examples() {
        let cap = SetSpec::cap(UnitVec3::E_Z, 0.5).unwrap();
        assert!(cap.contains(&Rotation::IDENTITY));
        assert!(!cap.contains(&Rotation::from_axis_angle(UnitVec3::E_X, 0.6)));
        let ball = SetSpec::ball(0.3).unwrap();
        assert!(ball.contains(&Rotation::from_axis_angle(unit(1, 0), 0.29)));
        assert!(!ball.contains(&Rotation::from_axis_angle(unit(1, 0), 0.31)));
    }

    #[test]
    fn lipschitz_eval_examples() {
        let cap = SetSpec::cap(UnitVec3::E_Z, 0.5).unwrap();
        assert_eq!(cap.lipschitz_eval(&Rotation::IDENTITY), -0.5);
        let ball = SetSpec::ball(0.3).unwrap();
        let g = Rotation::from_axis_angle(unit(2, 0), 0.4);
        assert_abs_diff_eq!(ball.lipschitz_eval(&g), 0.1, epsilon = 1e-14);
        let u = SetSpec::union(vec![
            SetSpec::cap(UnitVec3::E_Z, 0.2).unwrap(),
            SetSpec::ball(0.4).unwrap(),
        ])
        .unwrap();
        let g = Rotation::from_axis_angle(UnitVec3::E_Z, 0.1);
        assert_abs_diff_eq!(u.lipschitz_eval(&g), -0.3, epsilon = 1e-14);
    }

    #[test]
    fn cap_measure_examples() {
        assert_eq!(cap_measure(PI).unwrap(), 1.0);
        assert_abs_diff_eq!(cap_measure(PI / 3.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(cap_measure(0.1).unwrap(), 0.00249792, epsilon = 1e-8);
        assert!(cap_measure(0.0).is_err());
        assert!(cap_measure(3.5).is_err());
        assert_abs_diff_eq!(cap_radius_for_measure(0.01).unwrap(), 0.20033484, epsilon = 1e-8);
        assert_abs_diff_eq!(cap_radius_for_measure(0.5).unwrap(), FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn cap_product_examples() {
        let u = unit(3, 0);
        assert!(cap_product_spec(u, FRAC_PI_2, FRAC_PI_2).unwrap().covers_group());
        assert_eq!(cap_product_spec(u, 0.3, 0.3).unwrap(), SetSpec::cap(u, 0.6).unwrap());
        let p = cap_product_spec(u, 0.2, 0.5).unwrap();
        assert_abs_diff_eq!(p.closed_form_measure().unwrap(), 0.11757891, epsilon = 1e-8);
        assert!(cap_product_spec(u, 0.0, 0.3).is_err());
        assert!(cap_product_spec(u, 1.6, 0.3).is_err());
    }

    #[test]
    fn cap_square_factor_examples() {
        let g = Rotation::from_axis_angle(UnitVec3::E_X, 1.0);
        let (g1, g2) = cap_square_factor(&g, &UnitVec3::E_Z, 0.6).unwrap();
        let half = Rotation::from_axis_angle(UnitVec3::E_X, 0.5);
        assert!(g1.quaternion_distance(&half) < 1e-12);
        assert!(g2.quaternion_distance(&half) < 1e-12);
        assert_abs_diff_eq!(
            angle_between(&UnitVec3::E_Z, &g1.act(&UnitVec3::E_Z)),
            0.5,
            epsilon = 1e-14
        );
        assert!((g1 * g2).quaternion_distance(&g) < 1e-12);

        let (a, b) = cap_square_factor(&Rotation::IDENTITY, &UnitVec3::E_Z, 0.3).unwrap();
        assert_eq!((a, b), (Rotation::IDENTITY, Rotation::IDENTITY));

        let u = unit(4, 0);
        let g = Rotation::from_axis_angle(u, 2.2);
        let (a, b) = cap_square_factor(&g, &u, 0.1).unwrap();
        assert_eq!(a, Rotation::IDENTITY);
        assert!(b.quaternion_distance(&g) < 1e-12);
    }

    #[test]
    fn cap_square_factor_names_failed_side() {
        let g = Rotation::from_axis_angle(UnitVec3::E_X, 1.0);
        let err = cap_square_factor(&g, &UnitVec3::E_Z, 0.4).unwrap_err();
        assert!(matches!(&err, Error::Domain(m) if m.starts_with("element side")));
        let err = cap_square_factor(&g, &UnitVec3::E_Z, 1.7).unwrap_err();
        assert!(matches!(&err, Error::Domain(m) if m.starts_with("cap side")));
    }

    #[test]
    fn cap_doubling_examples() {
        let (m, m2) = cap_doubling(PI / 3.0).unwrap();
        assert_abs_diff_eq!(m, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m2, 0.75, epsilon = 1e-15);
        let (m, m2) = cap_doubling(FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-15);
        let (m, m2) = cap_doubling(0.1).unwrap();
        assert_abs_diff_eq!(m, 0.00249792, epsilon = 1e-8);
        assert_abs_diff_eq!(m2, 0.00996671, epsilon = 1e-8);
        assert_abs_diff_eq!(m2 / m, 3.99001, epsilon = 1e-5);
        assert!(m2 / m > 3.99);
        assert!(cap_doubling(1.6).is_err());
    }

    #[test]
    fn doubling_identity_on_grid() {
        for i in 1..=100 {
            let theta = FRAC_PI_2 * i as f64 / 100.0;
            let (m, m2) = cap_doubling(theta).unwrap();
            assert!((4.0 * m * (1.0 - m) - theta.sin().powi(2)).abs() < 1e-14);
            assert_eq!(m2, 4.0 * m * (1.0 - m));
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = SetSpec::from_json(
            r#"{"type":"union","parts":[{"type":"cap","axis":[0,0,2],"theta":0.3},
                {"type":"intersection","parts":[{"type":"ball","radius":0.5}]}]}"#,
        )
        .unwrap();
        let expected = SetSpec::Union(vec![
            SetSpec::cap(UnitVec3::E_Z, 0.3).unwrap(),
            SetSpec::Intersection(vec![SetSpec::ball(0.5).unwrap()]),
        ]);
        assert_eq!(s, expected);
        assert_eq!(SetSpec::from_json(&s.to_json()).unwrap(), s);
        assert!(SetSpec::from_json(r#"{"type":"cap","axis":[0,0,0],"theta":0.3}"#).is_err());
        assert!(SetSpec::from_json(r#"{"type":"ball","radius":0}"#).is_err());
        assert!(SetSpec::from_json(r#"{"type":"ball","radius":4}"#).is_err());
        assert!(SetSpec::from_json(r#"{"type":"union","parts":[]}"#).is_err());
        assert!(SetSpec::from_json(r#"{"type":"cone","radius":1}"#).is_err());
        assert!(SetSpec::from_json(r#"{"type":"ball","radius":1e999}"#).is_err());
    }

    #[test]
    fn bounding_cap_contains_set() {
        let a = unit(6, 0);
        let b = unit(6, 1);
        let s = SetSpec::union(vec![
            SetSpec::cap(a, 0.2).unwrap(),
            SetSpec::cap(Rotation::from_axis_angle(a.perpendicular(), 0.1).act(&a), 0.3).unwrap(),
            SetSpec::ball(0.25).unwrap(),
        ])
        .unwrap();
        let (u, t) = s.bounding_cap().unwrap();
        let bound = SetSpec::cap(u, t).unwrap();
        for i in 0..20_000 {
            let g = haar_at(7, i);
            if s.contains(&g) {
                assert!(bound.contains(&g));
            }
        }
        assert!(SetSpec::cap(b, PI).unwrap().bounding_cap().is_none());
    }

    #[test]
    fn ball_product_is_exact() {
        // Every g with angle < 2r factors as two same-axis half rotations in
        // Ball(r), and products of Ball(r) elements have angle < 2r.
        let r = 0.7;
        let square = ball_product_spec(r, r).unwrap();
        let ball = SetSpec::ball(r).unwrap();
        for i in 0..5_000 {
            let g = haar_at(8, i);
            if square.contains(&g) {
                let angle = g.rotation_angle();
                let c = g.components();
                let axis = UnitVec3::normalize(c[1], c[2], c[3]).unwrap_or(UnitVec3::E_Z);
                let h = Rotation::from_axis_angle(axis, 0.5 * angle);
                assert!(ball.contains(&h));
                assert!((h * h).quaternion_distance(&g) < 1e-12);
            }
            let (a, b) = (haar_at(9, 2 * i), haar_at(9, 2 * i + 1));
            if ball.contains(&a) && ball.contains(&b) {
                assert!(square.contains(&(a * b)));
            }
        }
    }
}
