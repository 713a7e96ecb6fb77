//! Closed forms on the model spaces: the round sphere S² = SO(3)/SO(2), the
//! hyperbolic plane H² = SL(2,ℝ)/SO(2), and small geodesic balls in a space
//! of constant scalar curvature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rotations::ball_measure;

/// Surface area of the unit `n`-sphere in R^{n+1}:
/// `2^{2k+1} π^k k!/(2k)!` for `n = 2k` and `2π^{k+1}/k!` for `n = 2k + 1`.
pub fn alpha_constant(n: u32) -> f64 {
    let k = n / 2;
    if n % 2 == 0 {
        // 2·∏_{i=1}^{k} 4π·i/((2i−1)·2i) = 2·∏ 2π/(2i−1)
        (1..=k).fold(2.0, |acc, i| acc * 2.0 * PI / (2 * i - 1) as f64)
    } else {
        (1..=k).fold(2.0 * PI, |acc, i| acc * PI / i as f64)
    }
}

/// A small geodesic ball of radius `r` in an `n`-manifold of constant scalar
/// curvature `scalar_curvature`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSeriesQuery {
    pub n: u32,
    pub scalar_curvature: f64,
    pub r: f64,
}

/// Two-term volume expansion `(1/n)·α_{n−1}·rⁿ·(1 − S r²/(6(n+2)))`.
///
/// The truncated series is returned as is; no smallness cutoff is applied.
pub fn ball_volume_series(q: BallSeriesQuery) -> Result<f64> {
    if q.n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(q.r >= 0.0 && q.r.is_finite()) || !q.scalar_curvature.is_finite() {
        return Err(invalid(format!(
            "need finite r ≥ 0 and finite curvature, got r = {}, S = {}",
            q.r, q.scalar_curvature
        )));
    }
    let n = q.n as f64;
    let leading = alpha_constant(q.n - 1) / n * q.r.powi(q.n as i32);
    Ok(leading * (1.0 - q.scalar_curvature * q.r * q.r / (6.0 * (n + 2.0))))
}

/// Area of a geodesic disc of radius `r ∈ [0, π]` on the unit sphere:
/// `2π(1 − cos r)`.
pub fn sphere_cap_area(r: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&r) {
        return Err(invalid(format!("radius {r} outside [0, π]")));
    }
    Ok(4.0 * PI * (0.5 * r).sin().powi(2))
}

/// `area(min(2r, π)) / area(r)` on the unit sphere, for `r ∈ (0, π]`.
pub fn sphere_doubling_ratio(r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(invalid(format!("radius {r} must be positive")));
    }
    Ok(sphere_cap_area((2.0 * r).min(PI))? / sphere_cap_area(r)?)
}

/// Doubling ratio of metric balls in SO(3):
/// `μ(Ball(min(2r, π))) / μ(Ball(r))`, for `r ∈ (0, π]`.
pub fn ball_doubling_ratio(r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(invalid(format!("radius {r} must be positive")));
    }
    Ok(ball_measure((2.0 * r).min(PI))? / ball_measure(r)?)
}

/// The small-radius doubling limit `2^{d−m}` of tubes around an
/// `m`-dimensional subgroup of a `d`-dimensional group.
pub fn doubling_ratio_limit(d: u32, m: u32) -> Result<f64> {
    if d <= m {
        return Err(invalid(format!("need d > m, got d = {d}, m = {m}")));
    }
    Ok(2f64.powi((d - m) as i32))
}

/// Volume normalization for geodesic discs in the hyperbolic plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperbolicNormalization {
    /// `sinh²(r/2) = (cosh r − 1)/2`, under which
    /// `vol(2r) = 4·vol(r)·(1 + vol(r))` holds exactly.
    #[default]
    Corrected,
    /// `∫₀^r sinh t dt = cosh r − 1`, twice the corrected value; the doubling
    /// identity then fails by `2(cosh r − 1)²`.
    Integral,
}

/// A disc of radius `r` in H² with its normalized volume `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicTube {
    pub r: f64,
    pub m: f64,
}

impl HyperbolicTube {
    pub fn new(r: f64, normalization: HyperbolicNormalization) -> Result<Self> {
        Ok(HyperbolicTube {
            r,
            m: hyperbolic_ball_volume(r, normalization)?,
        })
    }
}

/// Volume of a radius-`r` disc in H² under the given normalization.
pub fn hyperbolic_ball_volume(r: f64, normalization: HyperbolicNormalization) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid(format!("radius {r} must be positive and finite")));
    }
    let half = (0.5 * r).sinh().powi(2);
    Ok(match normalization {
        HyperbolicNormalization::Corrected => half,
        HyperbolicNormalization::Integral => 2.0 * half,
    })
}

/// Both sides of the hyperbolic doubling identity at radius `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicCheck {
    pub r: f64,
    pub m: f64,
    /// Volume of the disc of radius `2r`.
    pub lhs: f64,
    /// `4m(1 + m)`.
    pub rhs: f64,
}

impl HyperbolicCheck {
    /// `|lhs − rhs| / lhs`.
    pub fn relative_residual(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs
    }

    /// `lhs / m`, the doubling ratio `4(1 + m)` when the identity holds.
    pub fn doubling_ratio(&self) -> f64 {
        self.lhs / self.m
    }
}

/// Evaluates `vol(2r)` and `4m(1 + m)` with `m = vol(r)`.
pub fn hyperbolic_double_check(r: f64, normalization: HyperbolicNormalization) -> Result<HyperbolicCheck> {
    let m = hyperbolic_ball_volume(r, normalization)?;
    let lhs = hyperbolic_ball_volume(2.0 * r, normalization)?;
    Ok(HyperbolicCheck {
        r,
        m,
        lhs,
        rhs: 4.0 * m * (1.0 + m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn alpha_examples() {
        assert_relative_eq!(alpha_constant(0), 2.0, max_relative = 1e-15);
        assert_relative_eq!(alpha_constant(1), 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(alpha_constant(2), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(alpha_constant(3), 2.0 * PI * PI, max_relative = 1e-15);
        // Recurrence α_n = 2π α_{n−2}/(n − 1) for sphere areas.
        for n in 2..20u32 {
            assert_relative_eq!(
                alpha_constant(n),
                2.0 * PI * alpha_constant(n - 2) / (n - 1) as f64,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn literal_alpha_formulas() {
        fn fact(n: u32) -> f64 {
            (1..=n).map(|i| i as f64).product()
        }
        for k in 0..8u32 {
            let even = 2f64.powi(2 * k as i32 + 1) * PI.powi(k as i32) * fact(k) / fact(2 * k);
            assert_relative_eq!(alpha_constant(2 * k), even, max_relative = 1e-13);
            let odd = 2.0 * PI.powi(k as i32 + 1) / fact(k);
            assert_relative_eq!(alpha_constant(2 * k + 1), odd, max_relative = 1e-13);
        }
    }

    #[test]
    fn series_examples() {
        let v = ball_volume_series(BallSeriesQuery {
            n: 2,
            scalar_curvature: 2.0,
            r: 0.3,
        })
        .unwrap();
        assert_abs_diff_eq!(v, 0.2806227, epsilon = 1e-7);
        let exact = sphere_cap_area(0.3).unwrap();
        assert_relative_eq!(exact, 2.0 * PI * (1.0 - 0.3f64.cos()), max_relative = 1e-14);
        assert!((v / exact - 1.0).abs() < 3e-5);

        let v = ball_volume_series(BallSeriesQuery {
            n: 3,
            scalar_curvature: 1.5,
            r: 0.2,
        })
        .unwrap();
        let normalized = v / (8.0 * PI * PI);
        let truth = ball_measure(0.2).unwrap();
        assert!((normalized / truth - 1.0).abs() < 1e-3);

        for n in 1..6 {
            let v = ball_volume_series(BallSeriesQuery {
                n,
                scalar_curvature: 0.0,
                r: 0.7,
            })
            .unwrap();
            assert_relative_eq!(
                v,
                alpha_constant(n - 1) / n as f64 * 0.7f64.powi(n as i32),
                max_relative = 1e-15
            );
        }
        assert_relative_eq!(
            ball_volume_series(BallSeriesQuery {
                n: 3,
                scalar_curvature: 0.0,
                r: 1.0
            })
            .unwrap(),
            4.0 * PI / 3.0,
            max_relative = 1e-15
        );
        assert!(ball_volume_series(BallSeriesQuery {
            n: 0,
            scalar_curvature: 0.0,
            r: 1.0
        })
        .is_err());
    }

    #[test]
    fn series_consistency_on_sphere() {
        for r in [0.02, 0.05, 0.1] {
            let v = ball_volume_series(BallSeriesQuery {
                n: 2,
                scalar_curvature: 2.0,
                r,
            })
            .unwrap();
            assert!((v / sphere_cap_area(r).unwrap() - 1.0).abs() <= r.powi(3));
        }
    }

    #[test]
    fn cap_area_examples() {
        assert_relative_eq!(sphere_cap_area(PI).unwrap(), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_cap_area(PI / 2.0).unwrap(), 2.0 * PI, max_relative = 1e-15);
        let ratio = sphere_cap_area(0.02).unwrap() / sphere_cap_area(0.01).unwrap();
        assert_abs_diff_eq!(ratio, 3.99990, epsilon = 1e-5);
        assert!(ratio < 4.0);
        assert!(sphere_cap_area(-0.1).is_err());
        assert!(sphere_cap_area(3.2).is_err());
    }

    #[test]
    fn doubling_limit_examples() {
        assert_eq!(doubling_ratio_limit(3, 1).unwrap(), 4.0);
        assert_eq!(doubling_ratio_limit(3, 0).unwrap(), 8.0);
        assert_eq!(doubling_ratio_limit(5, 4).unwrap(), 2.0);
        assert!(doubling_ratio_limit(2, 2).is_err());
        // (2r − sin 2r)/(r − sin r) → 8
        assert_abs_diff_eq!(ball_doubling_ratio(1e-3).unwrap(), 8.0, epsilon = 1e-5);
    }

    #[test]
    fn hyperbolic_examples() {
        let c = hyperbolic_double_check(1.0, HyperbolicNormalization::Corrected).unwrap();
        assert_abs_diff_eq!(c.m, 0.2715403, epsilon = 1e-7);
        assert_abs_diff_eq!(c.lhs, 1.3810978, epsilon = 1e-7);
        assert_abs_diff_eq!(c.rhs, 1.3810978, epsilon = 1e-7);
        let c = hyperbolic_double_check(2.0, HyperbolicNormalization::Corrected).unwrap();
        assert_relative_eq!(c.lhs, 2f64.sinh().powi(2), max_relative = 1e-15);
        assert!(c.relative_residual() < 1e-12);
        let r = 1e-4;
        let m = hyperbolic_ball_volume(r, HyperbolicNormalization::Corrected).unwrap();
        assert_abs_diff_eq!(m / (r / 2.0).powi(2), 1.0, epsilon = 1e-8);
        assert!(hyperbolic_ball_volume(0.0, HyperbolicNormalization::Corrected).is_err());
    }

    #[test]
    fn integral_normalization_misses_identity_by_known_amount() {
        for r in [0.3, 1.0, 2.0] {
            let c = hyperbolic_double_check(r, HyperbolicNormalization::Integral).unwrap();
            let expected_gap = 2.0 * (f64::cosh(r) - 1.0).powi(2);
            assert_relative_eq!(c.rhs - c.lhs, expected_gap, max_relative = 1e-10);
        }
    }

    #[test]
    fn curvature_sign_contrast() {
        for i in 1..=100 {
            let r = 3.0 * i as f64 / 100.0;
            let h = hyperbolic_double_check(r, HyperbolicNormalization::Corrected).unwrap();
            assert!(h.relative_residual() < 1e-12);
            assert!(h.doubling_ratio() > 4.0);
            if r < PI / 2.0 {
                assert!(sphere_doubling_ratio(r).unwrap() < 4.0);
            }
        }
    }
}
