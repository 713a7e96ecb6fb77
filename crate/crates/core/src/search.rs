//! Derivative-free search for small-doubling sets in parametric families.
//!
//! Three families are searched at a fixed target measure `m`:
//!
//! * `single-cap`: `Cap(u, θ)`, parameters `[polar, azimuth, θ]`;
//! * `two-cap-union`: `Cap(u₁, θ₁) ∪ Cap(u₂, θ₂)`, parameters
//!   `[polar₁, azimuth₁, θ₁, polar₂, azimuth₂, θ₂]`;
//! * `cap-ball-union`: `Cap(u, θ) ∪ Ball(r)`, parameters
//!   `[polar, azimuth, θ, r]`.
//!
//! The objective is a certified upper bound on `μ(A²)` plus a penalty
//! `100·|μ(A) − m|`. The upper bound is the smaller of an analytic
//! containment `A² ⊆ Cap(u, t)` and the grid product bound; `μ(A)` is exact
//! for single caps and computed by Gauss–Legendre quadrature for unions.

use std::f64::consts::{FRAC_PI_2, PI};
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridSpec, HopfGrid};
use crate::rotations::{angle_between, r_minus_sin, UnitVec3};
use crate::sampling::{derive_seed, rng_at};
use crate::sets::{cap_measure, cap_radius_for_measure, SetSpec};

/// Weight of the measure penalty.
pub const PENALTY_WEIGHT: f64 = 100.0;
/// Largest accepted `|μ(A) − m|` of a returned optimum.
pub const MEASURE_TOLERANCE: f64 = 1e-3;
/// Radii are clamped into `[RADIUS_MIN, π/2]`.
pub const RADIUS_MIN: f64 = 1e-6;
/// Absolute slack of the conjecture-consistency check.
pub const ANOMALY_SLACK: f64 = 1e-9;

const STREAM_RESTART: u64 = 10;
const QUADRATURE_ORDER: usize = 16;
const QUADRATURE_PANELS: usize = 2;

/// Parametric set families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SingleCap,
    TwoCapUnion,
    CapBallUnion,
}

impl Family {
    /// Number of continuous parameters.
    pub fn dimension(self) -> usize {
        match self {
            Family::SingleCap => 3,
            Family::TwoCapUnion => 6,
            Family::CapBallUnion => 4,
        }
    }

    /// Positions of the radius parameters in the parameter vector.
    fn radius_slots(self) -> &'static [usize] {
        match self {
            Family::SingleCap => &[2],
            Family::TwoCapUnion => &[2, 5],
            Family::CapBallUnion => &[2, 3],
        }
    }

    /// Positions of `(polar, azimuth)` pairs in the parameter vector.
    fn axis_slots(self) -> &'static [usize] {
        match self {
            Family::SingleCap | Family::CapBallUnion => &[0],
            Family::TwoCapUnion => &[0, 3],
        }
    }
}

/// A member of a family together with the target measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParam {
    pub family: Family,
    pub params: Vec<f64>,
    pub target_measure: f64,
}

/// Canonical geometric form of a family member, with redundant parts
/// dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Cap { theta: f64 },
    TwoCaps { theta1: f64, theta2: f64, delta: f64 },
    CapBall { theta: f64, radius: f64 },
}

impl FamilyParam {
    /// Validates lengths and the target; radii are clamped and axes
    /// re-expressed with polar angle in `[0, π]` and azimuth in `(−π, π]`.
    pub fn new(family: Family, params: Vec<f64>, target_measure: f64) -> Result<Self> {
        if params.len() != family.dimension() {
            return Err(invalid(format!(
                "{family:?} takes {} parameters, got {}",
                family.dimension(),
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("parameter {bad} is not finite")));
        }
        if !(target_measure > 0.0 && target_measure < 1.0) {
            return Err(invalid(format!("target measure {target_measure} must lie in (0, 1)")));
        }
        let mut params = params;
        for &i in family.radius_slots() {
            params[i] = params[i].clamp(RADIUS_MIN, FRAC_PI_2);
        }
        for &i in family.axis_slots() {
            let u = UnitVec3::from_spherical(params[i], params[i + 1]);
            params[i] = u.z().clamp(-1.0, 1.0).acos();
            params[i + 1] = u.y().atan2(u.x());
        }
        Ok(FamilyParam {
            family,
            params,
            target_measure,
        })
    }

    /// Axes of the cap parts.
    pub fn axes(&self) -> Vec<UnitVec3> {
        self.family
            .axis_slots()
            .iter()
            .map(|&i| UnitVec3::from_spherical(self.params[i], self.params[i + 1]))
            .collect()
    }

    /// The set as a [`SetSpec`].
    pub fn to_set_spec(&self) -> SetSpec {
        let p = &self.params;
        let axes = self.axes();
        let cap = |k: usize, t: f64| SetSpec::Cap {
            axis: axes[k],
            theta: t,
        };
        match self.family {
            Family::SingleCap => cap(0, p[2]),
            Family::TwoCapUnion => SetSpec::Union(vec![cap(0, p[2]), cap(1, p[5])]),
            Family::CapBallUnion => SetSpec::Union(vec![cap(0, p[2]), SetSpec::Ball { radius: p[3] }]),
        }
    }

    /// Angle between the two cap axes of a two-cap member.
    pub fn axis_separation(&self) -> Option<f64> {
        let axes = self.axes();
        (axes.len() == 2).then(|| angle_between(&axes[0], &axes[1]))
    }

    /// Axis separation of the set itself: `0` when one cap contains the
    /// other, so that the union is a single cap, and the raw separation
    /// otherwise.
    pub fn effective_separation(&self) -> Option<f64> {
        self.axis_separation().map(|d| match self.shape() {
            Shape::Cap { .. } => 0.0,
            _ => d,
        })
    }

    fn shape(&self) -> Shape {
        let p = &self.params;
        match self.family {
            Family::SingleCap => Shape::Cap { theta: p[2] },
            Family::TwoCapUnion => {
                let axes = self.axes();
                let delta = angle_between(&axes[0], &axes[1]);
                let (t1, t2) = (p[2], p[5]);
                // Cap(u₂, θ₂) ⊆ Cap(u₁, θ₂ + 2δ).
                if t2 + 2.0 * delta <= t1 {
                    Shape::Cap { theta: t1 }
                } else if t1 + 2.0 * delta <= t2 {
                    Shape::Cap { theta: t2 }
                } else {
                    Shape::TwoCaps {
                        theta1: t1,
                        theta2: t2,
                        delta,
                    }
                }
            }
            Family::CapBallUnion => {
                // Ball(r) ⊆ Cap(u, r).
                if p[3] <= p[2] {
                    Shape::Cap { theta: p[2] }
                } else {
                    Shape::CapBall {
                        theta: p[2],
                        radius: p[3],
                    }
                }
            }
        }
    }

    /// `μ(A)`: exact for caps, quadrature for unions.
    pub fn measure(&self) -> f64 {
        match self.shape() {
            Shape::Cap { theta } => sin2_half(theta),
            Shape::TwoCaps { theta1, theta2, delta } => {
                sin2_half(theta1) + sin2_half(theta2) - two_cap_intersection(theta1, theta2, delta)
            }
            Shape::CapBall { theta, radius } => {
                sin2_half(theta) + r_minus_sin(radius) / PI - cap_ball_intersection(theta, radius)
            }
        }
    }

    /// Analytic certified upper bound on `μ(A²)`; exact for single caps.
    ///
    /// Uses `A² ⊆ Cap(u, t)` with, for two caps based at `u₁`,
    /// `t = max(2θ₁, θ₁ + θ₂ + 2δ, 2θ₂ + 2δ)` (minimized over the choice of
    /// base axis), and for `Cap(u, θ) ∪ Ball(r)`, `t = 2·max(θ, r)`.
    pub fn analytic_square_bound(&self) -> f64 {
        let t = match self.shape() {
            Shape::Cap { theta } => 2.0 * theta,
            Shape::TwoCaps { theta1, theta2, delta } => {
                let about = |a: f64, b: f64| (2.0 * a).max(a + b + 2.0 * delta).max(2.0 * b + 2.0 * delta);
                about(theta1, theta2).min(about(theta2, theta1))
            }
            Shape::CapBall { theta, radius } => 2.0 * theta.max(radius),
        };
        sin2_half(t.min(PI))
    }

    fn is_single_cap(&self) -> bool {
        matches!(self.shape(), Shape::Cap { .. })
    }
}

fn sin2_half(t: f64) -> f64 {
    cap_measure(t).expect("radii are validated positive")
}

fn legendre() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(QUADRATURE_ORDER).expect("nonzero order")))
}

/// Composite Gauss–Legendre over `[a, b]`.
fn integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let h = (b - a) / QUADRATURE_PANELS as f64;
    (0..QUADRATURE_PANELS)
        .map(|k| {
            let lo = a + h * k as f64;
            legendre().integrate(lo, lo + h, &mut f)
        })
        .sum()
}

/// [`integrate`] over `[a, b]` split at the given interior kinks.
fn integrate_split<F: FnMut(f64) -> f64>(a: f64, b: f64, kinks: &[f64], mut f: F) -> f64 {
    let mut points: Vec<f64> = kinks.iter().copied().filter(|&k| k > a && k < b).collect();
    points.sort_by(f64::total_cmp);
    points.insert(0, a);
    points.push(b);
    // x = lo + (hi − lo)(1 − cos πt)/2 flattens square-root behavior at the
    // ends of each piece.
    points
        .windows(2)
        .map(|w| {
            let half = 0.5 * (w[1] - w[0]);
            integrate(0.0, 1.0, |t| {
                let x = w[0] + half * (1.0 - (PI * t).cos());
                f(x) * half * PI * (PI * t).sin()
            })
        })
        .sum()
}

/// `μ(Cap(u₁, θ₁) ∩ Cap(u₂, θ₂))` with `∠(u₁, u₂) = δ`.
///
/// With `g` Haar, `x = g·u₁` is uniform on the sphere and `g·u₂` is uniform
/// on the circle of radius `δ` about `x`; the fraction of that circle inside
/// the cap of radius `θ₂` about `u₂` is closed form, leaving a double
/// integral over `x` in the cap of radius `θ₁` about `u₁`. The fraction has
/// square-root kinks where `∠(x, u₂)` crosses `|θ₂ − δ|` or `θ₂ + δ`; both
/// integrals are split there.
fn two_cap_intersection(theta1: f64, theta2: f64, delta: f64) -> f64 {
    let (cd, sd, ct2) = (delta.cos(), delta.sin(), theta2.cos());
    let arc_fraction = |cos_dist: f64| {
        let sin_dist = (1.0 - cos_dist * cos_dist).max(0.0).sqrt();
        let denom = sd * sin_dist;
        if denom < 1e-300 {
            return if cd * cos_dist > ct2 { 1.0 } else { 0.0 };
        }
        ((ct2 - cd * cos_dist) / denom).clamp(-1.0, 1.0).acos() / PI
    };
    let critical = [(theta2 - delta).abs(), theta2 + delta];
    let outer_kinks = [theta2, (theta2 - 2.0 * delta).abs(), theta2 + 2.0 * delta];
    integrate_split(0.0, theta1, &outer_kinks, |a| {
        let (ca, sa) = (a.cos(), a.sin());
        // ∠(x, u₂) runs from |a − δ| to a + δ as b runs over [0, π].
        let kinks = critical.map(|t| {
            let c = (t.cos() - ca * cd) / (sa * sd);
            if c.abs() < 1.0 {
                c.acos()
            } else {
                -1.0
            }
        });
        let inner = integrate_split(0.0, PI, &kinks, |b| arc_fraction(ca * cd + sa * sd * b.cos()));
        sa * inner / (2.0 * PI)
    })
}

/// `μ(Cap(u, θ) ∩ Ball(r))` for `r > θ`.
///
/// A rotation by `ψ` about `w` moves `u` by less than `θ` iff
/// `(u·w)² > (cos θ − cos ψ)/(1 − cos ψ)`; `u·w` is uniform on `[−1, 1]` and
/// `ψ` has density `(1 − cos ψ)/π`.
fn cap_ball_intersection(theta: f64, radius: f64) -> f64 {
    let inside = r_minus_sin(theta.min(radius)) / PI;
    if radius <= theta {
        return inside;
    }
    let span = radius - theta;
    // ψ = θ + span·s² removes the square-root singularity at ψ = θ.
    let shell = integrate(0.0, 1.0, |s| {
        let psi = theta + span * s * s;
        let one_minus_cos = 2.0 * (0.5 * psi).sin().powi(2);
        let t = 2.0 * (0.5 * (psi + theta)).sin() * (0.5 * (psi - theta)).sin() / one_minus_cos;
        one_minus_cos / PI * (1.0 - t.clamp(0.0, 1.0).sqrt()) * 2.0 * span * s
    });
    inside + shell
}

/// Components of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Certified upper bound on `μ(A²)`.
    pub square_upper: f64,
    pub measure: f64,
    pub penalty: f64,
}

/// Certified upper bound on `μ(A²)` plus `100·|μ(A) − m|`.
///
/// The grid bound is skipped when it cannot improve on the analytic one:
/// it always dominates the outer measure of `A` (the marked cells contain a
/// translate of the outer cells), and it is never below the exact value for
/// single caps.
pub fn objective(p: &FamilyParam, grid: &HopfGrid) -> Result<ObjectiveValue> {
    let measure = p.measure();
    let mut upper = p.analytic_square_bound();
    if !p.is_single_cap() {
        let cells = grid.rasterize(&p.to_set_spec());
        if upper > cells.measure_upper() {
            upper = upper.min(grid.product_outer(&cells, &cells)?.measure_upper());
        }
    }
    let penalty = PENALTY_WEIGHT * (measure - p.target_measure).abs();
    Ok(ObjectiveValue {
        value: upper + penalty,
        square_upper: upper,
        measure,
        penalty,
    })
}

/// Nelder–Mead coefficients and stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NelderMeadConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_evals: usize,
    /// Stop once `f(worst) − f(best) < tol`.
    pub tol: f64,
    /// Edge length of the axis-aligned initial simplex used by restarts.
    pub initial_step: f64,
}

impl NelderMeadConfig {
    /// Coefficients 1, 2, 0.5, 0.5.
    pub fn standard(max_evals: usize, tol: f64, initial_step: f64) -> Self {
        NelderMeadConfig {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals,
            tol,
            initial_step,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > self.reflection
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.tol >= 0.0
            && self.initial_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid Nelder–Mead coefficients {self:?}")))
        }
    }
}

/// Result of one Nelder–Mead run.
#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    /// Every evaluated point in evaluation order.
    pub trace: Vec<(Vec<f64>, f64)>,
}

struct Budget<'f, F> {
    f: &'f mut F,
    max: usize,
    trace: Vec<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Budget<'_, F> {
    /// `None` once the budget is spent.
    fn eval(&mut self, x: &[f64]) -> Result<Option<f64>> {
        if self.trace.len() >= self.max {
            return Ok(None);
        }
        let v = (self.f)(x)?;
        self.trace.push((x.to_vec(), v));
        Ok(Some(v))
    }
}

fn centroid_of(pts: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut c = vec![0.0; pts[0].0.len()];
    for (x, _) in pts {
        for (c, v) in c.iter_mut().zip(x) {
            *c += v / pts.len() as f64;
        }
    }
    c
}

/// Minimizes `f` from an initial simplex of `dim + 1` points.
pub fn nelder_mead<F>(simplex: Vec<Vec<f64>>, config: &NelderMeadConfig, mut f: F) -> Result<NelderMeadOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let n = simplex
        .len()
        .checked_sub(1)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid("simplex needs at least two points"))?;
    if simplex.iter().any(|x| x.len() != n) {
        return Err(invalid(format!(
            "simplex of {} points needs points of dimension {n}",
            n + 1
        )));
    }
    if config.max_evals < n + 1 {
        return Err(invalid(format!(
            "max_evals {} is below dim + 1 = {}",
            config.max_evals,
            n + 1
        )));
    }
    let edges = DMatrix::from_fn(n, n, |r, c| simplex[r + 1][c] - simplex[0][c]);
    let scale = edges.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || edges.rank(1e-10 * scale) < n {
        return Err(invalid("initial simplex is affinely dependent"));
    }

    let mut budget = Budget {
        f: &mut f,
        max: config.max_evals,
        trace: Vec::new(),
    };
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for x in simplex {
        let v = budget.eval(&x)?.expect("budget covers the initial simplex");
        pts.push((x, v));
    }
    let along =
        |from: &[f64], to: &[f64], t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
    'search: loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        if pts[n].1 - pts[0].1 < config.tol {
            // A simplex whose vertices straddle a valley at equal heights
            // has a small spread without having converged; probe its
            // centroid once before stopping.
            let mid = centroid_of(&pts);
            let Some(fm) = budget.eval(&mid)? else { break };
            if fm < pts[0].1 - config.tol {
                pts[n] = (mid, fm);
                continue;
            }
            break;
        }
        let centroid = centroid_of(&pts[..n]);
        let worst = pts[n].clone();
        let xr = along(&centroid, &worst.0, -config.reflection);
        let Some(fr) = budget.eval(&xr)? else { break };
        if fr < pts[0].1 {
            let xe = along(&centroid, &xr, config.expansion / config.reflection);
            let Some(fe) = budget.eval(&xe)? else {
                pts[n] = (xr, fr);
                break;
            };
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
            continue;
        }
        let (xc, improved) = if fr < worst.1 {
            let xc = along(&centroid, &xr, config.contraction);
            let Some(fc) = budget.eval(&xc)? else { break };
            ((xc, fc), fc <= fr)
        } else {
            let xc = along(&centroid, &worst.0, config.contraction);
            let Some(fc) = budget.eval(&xc)? else { break };
            ((xc, fc), fc < worst.1)
        };
        if improved {
            pts[n] = xc;
            continue;
        }
        let best = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            let x = along(&best, &p.0, config.shrink);
            let Some(v) = budget.eval(&x)? else { break 'search };
            *p = (x, v);
        }
    }
    let (best, best_value) = pts
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex is nonempty");
    let trace = budget.trace;
    Ok(NelderMeadOutcome {
        best,
        best_value,
        evaluations: trace.len(),
        trace,
    })
}

/// Search configuration; every field is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub family: Family,
    pub target_measure: f64,
    pub restarts: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub optimizer: NelderMeadConfig,
}

impl SearchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SearchConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.target_measure > 0.0 && self.target_measure < 1.0) {
            return Err(invalid(format!(
                "target measure {} must lie in (0, 1)",
                self.target_measure
            )));
        }
        self.optimizer.validate()
    }
}

/// One evaluated point of a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub restart: usize,
    pub params: Vec<f64>,
    pub objective: f64,
}

/// Outcome of [`random_restarts`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_param: FamilyParam,
    pub best_objective: f64,
    pub evaluations: usize,
    pub seed: u64,
    pub trace: Vec<TraceEntry>,
}

/// Seeded initial simplex of restart `k`: axes uniform on the sphere, radii
/// uniform in `[θ*/2, 3θ*/2]` with `θ* = arccos(1 − 2m)`, and the other
/// vertices offset by `initial_step` along each coordinate.
pub fn initial_simplex(config: &SearchConfig, restart: usize) -> Result<Vec<Vec<f64>>> {
    let family = config.family;
    let theta_star = cap_radius_for_measure(config.target_measure)?;
    let mut rng = rng_at(derive_seed(config.seed, STREAM_RESTART), restart as u64);
    let mut x0 = vec![0.0; family.dimension()];
    for &i in family.axis_slots() {
        x0[i] = rng.random_range(-1.0f64..1.0).acos();
        x0[i + 1] = rng.random_range(-PI..PI);
    }
    for &i in family.radius_slots() {
        x0[i] = rng
            .random_range(0.5 * theta_star..1.5 * theta_star)
            .clamp(RADIUS_MIN, FRAC_PI_2);
    }
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut x = x0.clone();
        x[i] += config.optimizer.initial_step;
        simplex.push(x);
    }
    Ok(simplex)
}

/// Nelder–Mead from `restarts` seeded simplices, run concurrently and
/// merged in restart order; ties keep the lowest restart index.
///
/// Fails with [`Error::Infeasible`] if the optimum misses the target
/// measure by more than [`MEASURE_TOLERANCE`].
pub fn random_restarts(config: &SearchConfig, grid: &HopfGrid) -> Result<SearchResult> {
    config.validate()?;
    if grid.spec() != config.grid {
        return Err(invalid(format!(
            "grid {} does not match configured {}",
            grid.spec(),
            config.grid
        )));
    }
    let runs: Vec<Result<NelderMeadOutcome>> = (0..config.restarts)
        .into_par_iter()
        .map(|k| {
            let simplex = initial_simplex(config, k)?;
            nelder_mead(simplex, &config.optimizer, |x| {
                let p = FamilyParam::new(config.family, x.to_vec(), config.target_measure)?;
                Ok(objective(&p, grid)?.value)
            })
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for (k, run) in runs.into_iter().enumerate() {
        let run = run?;
        evaluations += run.evaluations;
        if best.as_ref().is_none_or(|(_, v)| run.best_value < *v) {
            best = Some((run.best.clone(), run.best_value));
        }
        trace.extend(run.trace.into_iter().map(|(params, objective)| TraceEntry {
            restart: k,
            params,
            objective,
        }));
    }
    let (x, best_objective) = best.expect("at least one restart");
    let best_param = FamilyParam::new(config.family, x, config.target_measure)?;
    let measure = best_param.measure();
    if (measure - config.target_measure).abs() > MEASURE_TOLERANCE {
        return Err(Error::Infeasible(format!(
            "best {:?} has measure {measure}, target {} ± {MEASURE_TOLERANCE}",
            best_param.params, config.target_measure
        )));
    }
    Ok(SearchResult {
        best_param,
        best_objective,
        evaluations,
        seed: config.seed,
        trace,
    })
}

/// The conjecture-consistency comparison for a finished search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureCheck {
    pub measure: f64,
    pub square_upper: f64,
    /// `min(1, 4m(1 − m))` at the optimum's measure.
    pub conjectured_minimum: f64,
    /// Outer minus inner measure of the optimum on the search grid.
    pub sandwich_gap: f64,
}

/// Checks `μ⁺(A²) ≥ 4m(1 − m) − 2·gap` at the optimum; a violation is a
/// [`Error::ConjectureAnomaly`].
pub fn check_conjecture(result: &SearchResult, grid: &HopfGrid) -> Result<ConjectureCheck> {
    let p = &result.best_param;
    let value = objective(p, grid)?;
    let m = value.measure;
    let check = ConjectureCheck {
        measure: m,
        square_upper: value.square_upper,
        conjectured_minimum: (4.0 * m * (1.0 - m)).min(1.0),
        sandwich_gap: grid.rasterize(&p.to_set_spec()).gap(),
    };
    if check.square_upper < check.conjectured_minimum - 2.0 * check.sandwich_gap - ANOMALY_SLACK {
        return Err(Error::ConjectureAnomaly(format!(
            "{:?}: certified μ(A²) ≤ {} below 4m(1−m) = {} minus twice the gap {}",
            p, check.square_upper, check.conjectured_minimum, check.sandwich_gap
        )));
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_mc::estimate_measure;
    use crate::rotations::ball_measure;
    use approx::assert_abs_diff_eq;

    fn coarse() -> HopfGrid {
        HopfGrid::build(GridSpec::new(6, 12, 24)).unwrap()
    }

    fn config(family: Family, restarts: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            family,
            target_measure: 0.01,
            restarts,
            seed,
            grid: GridSpec::new(6, 12, 24),
            optimizer: NelderMeadConfig::standard(1500, 1e-12, 0.05),
        }
    }

    #[test]
    fn quadratic_converges() {
        let cfg = NelderMeadConfig::standard(200, 1e-14, 0.1);
        let out = nelder_mead(vec![vec![1.0], vec![1.1]], &cfg, |x| Ok((x[0] - 0.3).powi(2))).unwrap();
        assert!((out.best[0] - 0.3).abs() < 1e-6, "{}", out.best[0]);
        assert!(out.evaluations <= 200);
        assert_eq!(out.trace.len(), out.evaluations);
    }

    #[test]
    fn rosenbrock_converges() {
        let cfg = NelderMeadConfig::standard(2000, 1e-20, 0.1);
        let out = nelder_mead(vec![vec![-1.2, 1.0], vec![-1.1, 1.0], vec![-1.2, 1.1]], &cfg, |x| {
            Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
        })
        .unwrap();
        assert!((out.best[0] - 1.0).abs() < 1e-4 && (out.best[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_rejects_bad_input() {
        let cfg = NelderMeadConfig::standard(100, 1e-12, 0.1);
        let flat = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(matches!(
            nelder_mead(flat, &cfg, |_| Ok(0.0)),
            Err(Error::InvalidArgument(_))
        ));
        let ragged = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(nelder_mead(ragged, &cfg, |_| Ok(0.0)).is_err());
        let small = NelderMeadConfig::standard(2, 1e-12, 0.1);
        let ok = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(nelder_mead(ok, &small, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn nelder_mead_respects_budget() {
        let cfg = NelderMeadConfig::standard(17, 0.0, 0.1);
        let out = nelder_mead(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &cfg, |x| {
            Ok(x[0].sin() + x[1].cos())
        })
        .unwrap();
        assert_eq!(out.evaluations, 17);
    }

    #[test]
    fn union_measures_match_monte_carlo() {
        let cases = [
            FamilyParam::new(Family::TwoCapUnion, vec![0.3, 0.1, 0.5, 0.9, -0.4, 0.4], 0.1).unwrap(),
            FamilyParam::new(Family::TwoCapUnion, vec![1.0, 0.0, 1.2, 1.0, 0.2, 0.3], 0.1).unwrap(),
            FamilyParam::new(Family::CapBallUnion, vec![0.2, 0.3, 0.3, 0.9], 0.1).unwrap(),
            FamilyParam::new(Family::CapBallUnion, vec![0.2, 0.3, 1.0, 1.5], 0.1).unwrap(),
        ];
        for (k, p) in cases.iter().enumerate() {
            let mc = estimate_measure(&p.to_set_spec(), 1_000_000, 40 + k as u64).unwrap();
            assert!(
                mc.agrees_with(p.measure(), 4.0),
                "{p:?}: quadrature {} vs {mc:?}",
                p.measure()
            );
        }
    }

    #[test]
    fn union_measure_handles_nesting_and_disjointness() {
        // Cap(u₂, 0.1) ⊂ Cap(u₁, 0.5) when 0.1 + 2δ ≤ 0.5; the quadrature at
        // δ slightly above the canonicalization threshold agrees.
        let nested = two_cap_intersection(0.5, 0.1, 0.2 - 1e-9);
        assert_abs_diff_eq!(nested, cap_measure(0.1).unwrap(), epsilon = 1e-10);
        // The double integral runs over the first cap; swapping roles must
        // give the same value.
        let (x, y) = (two_cap_intersection(0.3, 0.5, 0.4), two_cap_intersection(0.5, 0.3, 0.4));
        assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        let whole = cap_ball_intersection(0.4, 0.3);
        assert_abs_diff_eq!(whole, ball_measure(0.3).unwrap(), epsilon = 1e-15);
        let full_ball = cap_ball_intersection(0.4, PI);
        assert_abs_diff_eq!(full_ball, cap_measure(0.4).unwrap(), epsilon = 1e-7);
    }

    #[test]
    fn analytic_bound_contains_square() {
        // Every sampled product a·b of members must satisfy the bound's cap.
        let p = FamilyParam::new(Family::TwoCapUnion, vec![0.3, 0.1, 0.3, 0.5, 0.2, 0.25], 0.01).unwrap();
        let a = p.to_set_spec();
        let ws = crate::measure_mc::sample_in_set(&a, 2000, 3).unwrap();
        let axes = p.axes();
        let delta = angle_between(&axes[0], &axes[1]);
        let t = (0.6f64).max(0.55 + 2.0 * delta).max(0.5 + 2.0 * delta);
        for pair in ws.chunks(2) {
            let g = pair[0].compose(&pair[1]);
            assert!(angle_between(&axes[0], &g.act(&axes[0])) < t);
        }
        assert!(p.analytic_square_bound() >= cap_measure(t.min(PI)).unwrap() - 1e-15 || delta > 0.0);
    }

    #[test]
    fn single_cap_objective_examples() {
        let grid = coarse();
        let m = 0.01;
        let theta = cap_radius_for_measure(m).unwrap();
        let p = FamilyParam::new(Family::SingleCap, vec![0.0, 0.0, theta], m).unwrap();
        let v = objective(&p, &grid).unwrap();
        assert_abs_diff_eq!(v.value, 4.0 * m * (1.0 - m), epsilon = 1e-15);

        let coincident = FamilyParam::new(Family::TwoCapUnion, vec![0.7, 0.2, theta, 0.7, 0.2, theta], m).unwrap();
        assert!((objective(&coincident, &grid).unwrap().value - v.value).abs() <= 1e-12);

        let off = FamilyParam::new(
            Family::SingleCap,
            vec![0.0, 0.0, cap_radius_for_measure(m + 0.01).unwrap()],
            m,
        )
        .unwrap();
        let w = objective(&off, &grid).unwrap();
        assert!(w.penalty >= 0.9, "{w:?}");
    }

    #[test]
    fn objective_takes_smaller_certified_bound() {
        let grid = HopfGrid::build(GridSpec::new(12, 24, 48)).unwrap();
        for params in [
            vec![0.0, 0.0, 0.2, FRAC_PI_2, 0.0, 0.2],
            vec![0.0, 0.0, 0.5, 0.3, 0.0, 0.5],
        ] {
            let p = FamilyParam::new(Family::TwoCapUnion, params, 0.02).unwrap();
            let cells = grid.rasterize(&p.to_set_spec());
            let grid_bound = grid.product_outer(&cells, &cells).unwrap().measure_upper();
            let v = objective(&p, &grid).unwrap();
            assert_eq!(v.square_upper, p.analytic_square_bound().min(grid_bound));
            let w =
                crate::measure_mc::estimate_product_lower(&p.to_set_spec(), &p.to_set_spec(), 256, 50_000, 1).unwrap();
            assert!(v.square_upper > w.value);
        }
    }

    #[test]
    fn config_requires_every_field() {
        let good = r#"{"family":"two-cap-union","target_measure":0.01,"restarts":4,"seed":1,
            "grid":{"n_eta":6,"n_xi1":12,"n_xi2":24},
            "optimizer":{"reflection":1.0,"expansion":2.0,"contraction":0.5,"shrink":0.5,
                         "max_evals":100,"tol":1e-9,"initial_step":0.05}}"#;
        let c = SearchConfig::from_json(good).unwrap();
        assert_eq!(c.family, Family::TwoCapUnion);
        let missing = good.replace(r#""restarts":4,"#, "");
        assert!(SearchConfig::from_json(&missing).is_err());
        let extra = good.replace(r#""seed":1,"#, r#""seed":1,"verbose":true,"#);
        assert!(SearchConfig::from_json(&extra).is_err());
        let zero = good.replace(r#""restarts":4"#, r#""restarts":0"#);
        assert!(SearchConfig::from_json(&zero).is_err());
    }

    #[test]
    fn single_cap_search_recovers_radius() {
        let grid = coarse();
        let cfg = config(Family::SingleCap, 2, 3);
        let res = random_restarts(&cfg, &grid).unwrap();
        let theta = res.best_param.params[2];
        assert!((theta - 0.2003348).abs() < 1e-3, "{theta}");
        check_conjecture(&res, &grid).unwrap();
    }

    #[test]
    fn one_restart_is_plain_nelder_mead() {
        let grid = coarse();
        let cfg = config(Family::CapBallUnion, 1, 9);
        let res = random_restarts(&cfg, &grid).unwrap();
        let direct = nelder_mead(initial_simplex(&cfg, 0).unwrap(), &cfg.optimizer, |x| {
            Ok(objective(&FamilyParam::new(cfg.family, x.to_vec(), 0.01)?, &grid)?.value)
        })
        .unwrap();
        assert_eq!(res.best_objective, direct.best_value);
        assert_eq!(res.evaluations, direct.evaluations);
        let again = random_restarts(&cfg, &grid).unwrap();
        assert_eq!(
            serde_json::to_string(&res).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn two_cap_search_merges_caps() {
        let grid = coarse();
        let cfg = config(Family::TwoCapUnion, 16, 11);
        let res = random_restarts(&cfg, &grid).unwrap();
        let m = 0.01;
        assert!(
            res.best_objective <= 4.0 * m * (1.0 - m) + 1e-3,
            "{}",
            res.best_objective
        );
        let check = check_conjecture(&res, &grid).unwrap();
        assert!((check.measure - m).abs() <= MEASURE_TOLERANCE);
        let sep = res.best_param.effective_separation().unwrap();
        assert!(sep < 0.05, "separation {sep}, {:?}", res.best_param);
    }
}
