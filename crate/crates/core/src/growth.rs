//! Growth functionals of product sets.
//!
//! * The Brunn–Minkowski exponent `BM(A, B)`: the `r > 0` with
//!   `μ(AB)^{1/r} = μ(A)^{1/r} + μ(B)^{1/r}`.
//! * Kemperman slack `μ(AB) − min(μ(A) + μ(B), 1)`.
//! * Breuillard–Green slack `μ(A²) − min(1, 4μ(A)(1 − μ(A)))`.
//! * The expansion gap test `μ(A²) ≥ (2 + 10⁻¹²)μ(A)`.
//!
//! [`build_report`] bundles them for one pair of sets, from closed forms when
//! the pair has one and from Monte Carlo plus certified grid brackets
//! otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridSpec, HopfGrid};
use crate::measure_mc::{estimate_measure, estimate_product_lower, MeasureEstimate};
use crate::rotations::{angle_between, ball_measure};
use crate::sampling::derive_seed;
use crate::sets::{cap_measure, SetSpec};

use std::f64::consts::{FRAC_PI_2, PI};

/// Lower and upper ends of the bisection bracket for `s = 1/r`.
pub const BM_S_MIN: f64 = 1e-9;
pub const BM_S_MAX: f64 = 1e9;
const BM_ITERATIONS: usize = 200;

/// Ratio defining the expansion gap.
pub const EXPANSION_GAP: f64 = 2.0 + 1e-12;

/// `ln((x^s + y^s)^{1/s})`, evaluated as `ln max + ln(1 + t^s)/s` with
/// `t = min/max` so that neither tiny nor huge `s` overflows.
fn ln_power_mean(x: f64, y: f64, s: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    hi.ln() + (lo / hi).powf(s).ln_1p() / s
}

/// `(μ_A^{1/r} + μ_B^{1/r})^r`, the product measure that exponent `r`
/// predicts.
pub fn bm_reconstruct(mu_a: f64, mu_b: f64, r: f64) -> f64 {
    ln_power_mean(mu_a, mu_b, 1.0 / r).exp()
}

/// Solves `μ(AB)^{1/r} = μ(A)^{1/r} + μ(B)^{1/r}` for `r`.
///
/// The power mean `(x^s + y^s)^{1/s}` decreases from `+∞` to `max(x, y)` as
/// `s` runs over `(0, ∞)`, so a unique root exists exactly when
/// `μ(AB) > max(μ(A), μ(B))`. It is found by bisection on `log s` over
/// `[BM_S_MIN, BM_S_MAX]`.
pub fn bm_growth(mu_a: f64, mu_b: f64, mu_ab: f64) -> Result<f64> {
    for (name, v) in [("mu_a", mu_a), ("mu_b", mu_b), ("mu_ab", mu_ab)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} = {v} must be positive and finite")));
        }
    }
    if mu_ab <= mu_a.max(mu_b) {
        return Err(Error::NoSolution(format!(
            "mu_ab = {mu_ab} does not exceed max(mu_a, mu_b) = {}",
            mu_a.max(mu_b)
        )));
    }
    let target = mu_ab.ln();
    // g(s) = ln M(s) − ln μ(AB) is decreasing in s.
    let g = |ln_s: f64| ln_power_mean(mu_a, mu_b, ln_s.exp()) - target;
    let (mut lo, mut hi) = (BM_S_MIN.ln(), BM_S_MAX.ln());
    if g(lo) < 0.0 || g(hi) > 0.0 {
        return Err(Error::NoSolution(format!(
            "root for ({mu_a}, {mu_b}, {mu_ab}) lies outside s ∈ [{BM_S_MIN:e}, {BM_S_MAX:e}]"
        )));
    }
    for _ in 0..BM_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 / (0.5 * (lo + hi)).exp())
}

/// [`bm_growth`], extended by its limit `0` when `μ(AB) ≤ max(μ(A), μ(B))`.
///
/// Used for the ends of reported brackets, where a noisy lower estimate of
/// `μ(AB)` may fall below `max(μ(A), μ(B))`.
pub fn bm_growth_or_zero(mu_a: f64, mu_b: f64, mu_ab: f64) -> Result<f64> {
    match bm_growth(mu_a, mu_b, mu_ab) {
        Err(Error::NoSolution(_)) if mu_ab <= mu_a.max(mu_b) => Ok(0.0),
        other => other,
    }
}

/// `μ(AB) − min(μ(A) + μ(B), 1)`; nonnegative in connected compact groups.
pub fn kemperman_slack(mu_a: f64, mu_b: f64, mu_ab: f64) -> f64 {
    mu_ab - (mu_a + mu_b).min(1.0)
}

/// `μ(A²) − min(1, 4μ(A)(1 − μ(A)))`; conjecturally nonnegative, with
/// equality for cap preimages.
pub fn bg_slack(mu_a: f64, mu_a2: f64) -> f64 {
    mu_a2 - (4.0 * mu_a * (1.0 - mu_a)).min(1.0)
}

/// Whether `μ(A²) ≥ (2 + 10⁻¹²)·μ(A)`.
pub fn expansion_gap_check(mu_a: f64, mu_a2: f64) -> Result<bool> {
    if mu_a.is_nan() || mu_a <= 0.0 {
        return Err(invalid(format!("mu_a = {mu_a} must be positive")));
    }
    Ok(mu_a2 >= EXPANSION_GAP * mu_a)
}

/// A measure that is either known exactly or estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureValue {
    Exact(f64),
    Estimate(MeasureEstimate),
}

impl MeasureValue {
    pub fn value(&self) -> f64 {
        match self {
            MeasureValue::Exact(v) => *v,
            MeasureValue::Estimate(e) => e.value,
        }
    }

    pub fn stderr(&self) -> f64 {
        match self {
            MeasureValue::Exact(_) => 0.0,
            MeasureValue::Estimate(e) => e.stderr,
        }
    }
}

/// The two sets of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSpecs {
    pub a: SetSpec,
    pub b: SetSpec,
}

/// Growth quantities of one pair `(A, B)`.
///
/// Field order is the serialization order and is part of the output format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub mu_a: MeasureValue,
    pub mu_b: MeasureValue,
    pub mu_ab_lower: f64,
    pub mu_ab_upper: f64,
    pub bm_lower: f64,
    pub bm_upper: f64,
    /// From `mu_ab_upper`.
    pub kemperman_slack: f64,
    /// From `mu_ab_upper`; present only when `A = B`.
    pub bg_slack: Option<f64>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub specs: ReportSpecs,
    pub tool_version: String,
}

impl GrowthReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Combined standard error of `μ(A) + μ(B)`.
    pub fn kemperman_stderr(&self) -> f64 {
        self.mu_a.stderr().hypot(self.mu_b.stderr())
    }
}

/// Parameters of the sampled route.
#[derive(Clone, Copy, Debug)]
pub struct McGridParams<'g> {
    pub grid: &'g HopfGrid,
    pub witnesses: usize,
    pub samples: u64,
    pub seed: u64,
}

/// How [`build_report`] obtains the measures.
#[derive(Clone, Copy, Debug)]
pub enum Method<'g> {
    /// Exact values; only for same-axis cap pairs with angles in `(0, π/2]`,
    /// ball pairs, and pairs involving the whole group.
    ClosedForm,
    /// Monte Carlo for `μ(A)`, `μ(B)`; witness-union lower and grid upper
    /// bounds for `μ(AB)`.
    McGrid(McGridParams<'g>),
}

/// `μ(AB)` in closed form, when known.
pub fn closed_form_product(a: &SetSpec, b: &SetSpec) -> Option<f64> {
    if a.covers_group() || b.covers_group() {
        return Some(1.0);
    }
    match (a, b) {
        (SetSpec::Cap { axis: u, theta: t1 }, SetSpec::Cap { axis: v, theta: t2 })
            if angle_between(u, v) < 1e-12 && *t1 <= FRAC_PI_2 && *t2 <= FRAC_PI_2 =>
        {
            cap_measure((t1 + t2).min(PI)).ok()
        }
        (SetSpec::Ball { radius: r1 }, SetSpec::Ball { radius: r2 }) => ball_measure((r1 + r2).min(PI)).ok(),
        _ => None,
    }
}

const STREAM_MU_A: u64 = 100;
const STREAM_MU_B: u64 = 101;
const STREAM_PRODUCT: u64 = 102;

/// Builds the growth report of `(A, B)`.
///
/// Brackets are conservative per quantity: `bm_lower` uses `mu_ab_lower`
/// with `μ(A)`, `μ(B)` raised by three standard errors, `bm_upper` uses
/// `mu_ab_upper` with them lowered by three standard errors.
pub fn build_report(a: &SetSpec, b: &SetSpec, method: Method<'_>) -> Result<GrowthReport> {
    let (mu_a, mu_b, lower, upper, seed, grid) = match method {
        Method::ClosedForm => {
            let missing = |s: &SetSpec| Error::NoClosedForm(format!("no closed-form measure for {}", s.to_json()));
            let mu_a = a.closed_form_measure().ok_or_else(|| missing(a))?;
            let mu_b = b.closed_form_measure().ok_or_else(|| missing(b))?;
            let mu_ab = closed_form_product(a, b).ok_or_else(|| {
                Error::NoClosedForm(format!("no closed-form product for {} · {}", a.to_json(), b.to_json()))
            })?;
            (
                MeasureValue::Exact(mu_a),
                MeasureValue::Exact(mu_b),
                mu_ab,
                mu_ab,
                None,
                None,
            )
        }
        Method::McGrid(p) => {
            let mu_a = estimate_measure(a, p.samples, derive_seed(p.seed, STREAM_MU_A))?;
            let mu_b = if a == b {
                mu_a
            } else {
                estimate_measure(b, p.samples, derive_seed(p.seed, STREAM_MU_B))?
            };
            let (lower, upper) = if a.covers_group() || b.covers_group() {
                (1.0, 1.0)
            } else {
                let w = estimate_product_lower(a, b, p.witnesses, p.samples, derive_seed(p.seed, STREAM_PRODUCT))?;
                let ca = p.grid.rasterize(a);
                let cb = if a == b { ca.clone() } else { p.grid.rasterize(b) };
                let upper = p.grid.product_outer(&ca, &cb)?.measure_upper();
                ((w.value - 3.0 * w.stderr).max(0.0), upper)
            };
            (
                MeasureValue::Estimate(mu_a),
                MeasureValue::Estimate(mu_b),
                lower,
                upper,
                Some(p.seed),
                Some(p.grid.spec()),
            )
        }
    };
    let widen = |m: &MeasureValue, k: f64| (m.value() + k * m.stderr()).clamp(f64::MIN_POSITIVE, 1.0);
    let bm_lower = bm_growth_or_zero(widen(&mu_a, 3.0), widen(&mu_b, 3.0), lower.max(f64::MIN_POSITIVE))?;
    let bm_upper = bm_growth_or_zero(widen(&mu_a, -3.0), widen(&mu_b, -3.0), upper)?;
    Ok(GrowthReport {
        mu_a,
        mu_b,
        mu_ab_lower: lower,
        mu_ab_upper: upper,
        bm_lower,
        bm_upper,
        kemperman_slack: kemperman_slack(mu_a.value(), mu_b.value(), upper),
        bg_slack: (a == b).then(|| bg_slack(mu_a.value(), upper)),
        seed,
        grid,
        specs: ReportSpecs {
            a: a.clone(),
            b: b.clone(),
        },
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::UnitVec3;
    use crate::sampling::rng_at;
    use crate::sets::cap_doubling;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn bm_examples() {
        let m = 0.01;
        assert_abs_diff_eq!(bm_growth(m, m, 4.0 * m).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bm_growth(m, m, 2.0 * m).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(bm_growth(0.2, 0.1, 0.2), Err(Error::NoSolution(_))));
        assert!(matches!(bm_growth(0.0, 0.1, 0.2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bm_matches_dense_scan() {
        // Independent oracle: scan f(r) = (0.1^{1/r} + 0.2^{1/r})^r − 0.5 over
        // [1, 2] and interpolate at the sign change.
        let f = |r: f64| (0.1f64.powf(1.0 / r) + 0.2f64.powf(1.0 / r)).powf(r) - 0.5;
        let steps = 1_000_000;
        let mut root = f64::NAN;
        for k in 0..steps {
            let (r0, r1) = (1.0 + k as f64 / steps as f64, 1.0 + (k + 1) as f64 / steps as f64);
            if f(r0) * f(r1) <= 0.0 {
                root = r0 - f(r0) * (r1 - r0) / (f(r1) - f(r0));
                break;
            }
        }
        let r = bm_growth(0.1, 0.2, 0.5).unwrap();
        assert_abs_diff_eq!(r, root, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 1.7733782, epsilon = 1e-6);
    }

    #[test]
    fn bm_round_trip_on_random_triples() {
        let mut rng = rng_at(51, 0);
        for _ in 0..1000 {
            let x: f64 = 10f64.powf(rng.random_range(-6.0..0.0));
            let y: f64 = 10f64.powf(rng.random_range(-6.0..0.0));
            let z = x.max(y) * (1.0 + 10f64.powf(rng.random_range(-6.0..1.0)));
            let r = bm_growth(x, y, z).unwrap();
            assert!((bm_reconstruct(x, y, r) - z).abs() / z < 1e-12, "({x}, {y}, {z})");
        }
    }

    #[test]
    fn bm_is_monotone_in_product() {
        for &(x, y) in &[(0.01f64, 0.02f64), (0.1, 0.1), (0.001, 0.3)] {
            let mut last = 0.0;
            for k in 1..50 {
                let z = x.max(y) * (1.0 + 0.1 * k as f64);
                let r = bm_growth(x, y, z).unwrap();
                assert!(r > last);
                last = r;
            }
        }
    }

    #[test]
    fn cap_pair_bm_bounded_by_two() {
        let u = UnitVec3::E_Z;
        for i in 1..=30 {
            for j in 1..=30 {
                let (t1, t2) = (FRAC_PI_2 * i as f64 / 30.0, FRAC_PI_2 * j as f64 / 30.0);
                let a = SetSpec::cap(u, t1).unwrap();
                let b = SetSpec::cap(u, t2).unwrap();
                let rep = build_report(&a, &b, Method::ClosedForm).unwrap();
                assert!(rep.bm_upper <= 2.0 + 1e-12, "{t1} {t2}: {}", rep.bm_upper);
                if i == j && t1 <= 0.1 {
                    assert!(rep.bm_lower >= 1.95);
                }
            }
        }
    }

    #[test]
    fn kemperman_examples() {
        assert_abs_diff_eq!(kemperman_slack(0.2, 0.3, 0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kemperman_slack(0.6, 0.7, 1.0), 0.0, epsilon = 1e-15);
        let (m, m2) = cap_doubling(0.3).unwrap();
        assert_abs_diff_eq!(m, 0.0223318, epsilon = 1e-6);
        assert_abs_diff_eq!(kemperman_slack(m, m, m2), 0.0426687, epsilon = 1e-6);
    }

    #[test]
    fn bg_examples() {
        let (m, m2) = cap_doubling(0.4).unwrap();
        assert_abs_diff_eq!(bg_slack(m, m2), 0.0, epsilon = 1e-15);
        let (b1, b2) = (ball_measure(0.2).unwrap(), ball_measure(0.4).unwrap());
        assert!(bg_slack(b1, b2) > 0.0);
        assert_abs_diff_eq!(bg_slack(0.6, 1.0), 0.04, epsilon = 1e-15);
    }

    #[test]
    fn expansion_gap_examples() {
        assert!(expansion_gap_check(0.001, 0.0021).unwrap());
        assert!(!expansion_gap_check(0.001, 0.002).unwrap());
        for i in 1..100 {
            let (m, m2) = cap_doubling(FRAC_PI_2 * i as f64 / 100.0).unwrap();
            assert!(expansion_gap_check(m, m2).unwrap());
        }
        assert!(expansion_gap_check(0.0, 0.1).is_err());
    }

    #[test]
    fn closed_form_reports() {
        let a = SetSpec::cap(UnitVec3::E_Z, 0.2).unwrap();
        let rep = build_report(&a, &a, Method::ClosedForm).unwrap();
        let expected = (4.0 * 0.1f64.cos().powi(2)).log2();
        assert_abs_diff_eq!(rep.bm_lower, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.bm_upper, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.bg_slack.unwrap(), 0.0, epsilon = 1e-15);
        assert!(rep.kemperman_slack >= 0.0);

        let ball = SetSpec::ball(0.1).unwrap();
        let rep = build_report(&ball, &ball, Method::ClosedForm).unwrap();
        assert_abs_diff_eq!(rep.mu_ab_upper, ball_measure(0.2).unwrap(), epsilon = 1e-18);
        assert!((rep.bm_upper - 3.0).abs() < 0.01);

        let b = SetSpec::cap(UnitVec3::E_X, 0.2).unwrap();
        assert!(matches!(
            build_report(&a, &b, Method::ClosedForm),
            Err(Error::NoClosedForm(_))
        ));
        let rep = build_report(&a, &b, Method::ClosedForm).err();
        assert!(rep.is_some());

        let whole = SetSpec::cap(UnitVec3::E_Y, PI).unwrap();
        let rep = build_report(&whole, &a, Method::ClosedForm).unwrap();
        assert_eq!((rep.mu_ab_lower, rep.mu_ab_upper), (1.0, 1.0));
        assert_eq!(rep.bg_slack, None);
    }

    #[test]
    fn report_field_order_is_fixed() {
        let a = SetSpec::cap(UnitVec3::E_Z, 0.2).unwrap();
        let json = build_report(&a, &a, Method::ClosedForm).unwrap().to_json_pretty();
        let keys = [
            "mu_a",
            "mu_b",
            "mu_ab_lower",
            "mu_ab_upper",
            "bm_lower",
            "bm_upper",
            "kemperman_slack",
            "bg_slack",
            "seed",
            "grid",
            "specs",
            "tool_version",
        ];
        let positions: Vec<usize> = keys
            .iter()
            .map(|k| json.find(&format!("\n  \"{k}\"")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let back: GrowthReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json_pretty(), json);
    }

    #[test]
    fn mc_grid_report_brackets_cap_square() {
        let grid = HopfGrid::build(GridSpec::new(12, 24, 48)).unwrap();
        let a = SetSpec::cap(UnitVec3::E_Z, 0.4).unwrap();
        let p = McGridParams {
            grid: &grid,
            witnesses: 256,
            samples: 100_000,
            seed: 5,
        };
        let rep = build_report(&a, &a, Method::McGrid(p)).unwrap();
        let truth = 0.4f64.sin().powi(2);
        assert!(rep.mu_ab_lower <= truth && truth <= rep.mu_ab_upper);
        let m = cap_measure(0.4).unwrap();
        let bm = (4.0 * (1.0 - m)).log2();
        assert!(rep.bm_lower <= bm && bm <= rep.bm_upper, "{rep:?}");
        assert!(rep.kemperman_slack >= -3.0 * rep.kemperman_stderr());
        assert_eq!(rep, build_report(&a, &a, Method::McGrid(p)).unwrap());

        let whole = SetSpec::ball(PI).unwrap();
        let rep = build_report(&whole, &a, Method::McGrid(p)).unwrap();
        assert_eq!((rep.mu_ab_lower, rep.mu_ab_upper), (1.0, 1.0));
    }
}
