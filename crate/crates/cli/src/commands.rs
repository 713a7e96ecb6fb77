//! Experiment configurations and their pure runners.
//!
//! A runner maps a configuration to the report bytes, a JSON summary for the
//! journal and a pass/fail verdict. Runners do no file output, which lets
//! `replay` recompute a journal line and compare digests.

use std::f64::consts::{FRAC_PI_2, PI};

use doubling_lab_core::growth::{
    bg_slack, bm_growth, build_report, expansion_gap_check, kemperman_slack, McGridParams, Method,
};
use doubling_lab_core::measure_mc::estimate_measure;
use doubling_lab_core::model_spaces::{hyperbolic_double_check, sphere_doubling_ratio, HyperbolicNormalization};
use doubling_lab_core::sampling::derive_seed;
use doubling_lab_core::search::{check_conjecture, random_restarts, SearchConfig};
use doubling_lab_core::sets::{ball_product_spec, cap_doubling, cap_product_spec};
use doubling_lab_core::{ball_measure, Error, GridSpec, HopfGrid, Result, SetSpec, UnitVec3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::format::csv_table;

/// Agreement threshold for Monte Carlo cross-checks, in standard errors.
pub const CROSS_CHECK_SIGMAS: f64 = 4.0;

/// What a runner produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    /// Report file contents.
    pub report: Vec<u8>,
    /// Journal result.
    pub summary: Value,
    /// Whether every property check passed.
    pub passed: bool,
    /// One-line human summary.
    pub message: String,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// `steps` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| {
            if k + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

fn check_range(name: &str, lo: f64, hi: f64, max: f64, steps: usize) -> Result<()> {
    if !(lo > 0.0 && lo < hi && hi <= max) {
        return Err(invalid(format!(
            "{name} range must satisfy 0 < min < max ≤ {max}, got [{lo}, {hi}]"
        )));
    }
    if steps < 2 {
        return Err(invalid(format!("steps must be at least 2, got {steps}")));
    }
    Ok(())
}

pub const SCAN_HEADER: [&str; 8] = [
    "theta",
    "mu",
    "mu2_closed",
    "mu_mc",
    "mu2_mc",
    "ratio",
    "bg_slack",
    "kemperman_slack",
];
pub const BALL_SCAN_HEADER: [&str; 8] = [
    "r",
    "mu",
    "mu2_closed",
    "mu_mc",
    "mu2_mc",
    "ratio",
    "bg_slack",
    "kemperman_slack",
];

/// Cap-preimage scan: closed forms against Monte Carlo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapScanConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub steps: usize,
    pub samples: u64,
    pub seed: u64,
}

/// Metric-ball scan: closed forms against Monte Carlo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallScanConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub steps: usize,
    pub samples: u64,
    pub seed: u64,
}

/// One row of a family scan.
struct ScanRow {
    param: f64,
    mu: f64,
    mu2: f64,
    set: SetSpec,
    square: SetSpec,
}

fn run_scan(rows: Vec<ScanRow>, header: &[&str], samples: u64, seed: u64) -> Result<Outcome> {
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    let mut table = Vec::with_capacity(rows.len());
    let mut worst_z = 0.0f64;
    let mut gap_ok = true;
    for (k, row) in rows.iter().enumerate() {
        let mu_mc = estimate_measure(&row.set, samples, derive_seed(seed, 2 * k as u64))?;
        let mu2_mc = estimate_measure(&row.square, samples, derive_seed(seed, 2 * k as u64 + 1))?;
        for (est, truth) in [(mu_mc, row.mu), (mu2_mc, row.mu2)] {
            let z = if est.stderr > 0.0 {
                (est.value - truth).abs() / est.stderr
            } else if est.value == truth {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
        if row.mu <= 0.49 {
            gap_ok &= expansion_gap_check(row.mu, row.mu2)?;
        }
        table.push(vec![
            row.param,
            row.mu,
            row.mu2,
            mu_mc.value,
            mu2_mc.value,
            row.mu2 / row.mu,
            bg_slack(row.mu, row.mu2),
            kemperman_slack(row.mu, row.mu, row.mu2),
        ]);
    }
    let min_kemperman = table.iter().map(|r| r[7]).fold(f64::INFINITY, f64::min);
    let passed = worst_z <= CROSS_CHECK_SIGMAS;
    let report = csv_table(header, &table)?;
    let summary = json!({
        "rows": table.len(),
        "max_abs_z": worst_z,
        "min_kemperman_slack": min_kemperman,
        "expansion_gap_holds": gap_ok,
        "within_4_stderr": passed,
    });
    let message = format!(
        "{} rows, worst Monte Carlo deviation {:.2} stderr ({})",
        table.len(),
        worst_z,
        if passed { "ok" } else { "FAILED" }
    );
    Ok(Outcome {
        report,
        summary,
        passed,
        message,
    })
}

pub fn run_cap_scan(c: &CapScanConfig) -> Result<Outcome> {
    check_range("theta", c.theta_min, c.theta_max, FRAC_PI_2, c.steps)?;
    let rows = linspace(c.theta_min, c.theta_max, c.steps)
        .into_iter()
        .map(|theta| {
            let (mu, mu2) = cap_doubling(theta)?;
            Ok(ScanRow {
                param: theta,
                mu,
                mu2,
                set: SetSpec::cap(UnitVec3::E_Z, theta)?,
                square: cap_product_spec(UnitVec3::E_Z, theta, theta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_scan(rows, &SCAN_HEADER, c.samples, c.seed)
}

pub fn run_ball_scan(c: &BallScanConfig) -> Result<Outcome> {
    check_range("r", c.r_min, c.r_max, FRAC_PI_2, c.steps)?;
    let rows = linspace(c.r_min, c.r_max, c.steps)
        .into_iter()
        .map(|r| {
            Ok(ScanRow {
                param: r,
                mu: ball_measure(r)?,
                mu2: ball_measure((2.0 * r).min(PI))?,
                set: SetSpec::ball(r)?,
                square: ball_product_spec(r, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_scan(rows, &BALL_SCAN_HEADER, c.samples, c.seed)
}

/// Growth report of a general pair from Monte Carlo and the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    pub a: SetSpec,
    pub b: SetSpec,
    pub grid: GridSpec,
    pub witnesses: usize,
    pub samples: u64,
    pub seed: u64,
}

pub fn run_product(c: &ProductConfig, grid: &HopfGrid) -> Result<Outcome> {
    if grid.spec() != c.grid {
        return Err(invalid(format!(
            "grid {} does not match configured {}",
            grid.spec(),
            c.grid
        )));
    }
    let params = McGridParams {
        grid,
        witnesses: c.witnesses,
        samples: c.samples,
        seed: c.seed,
    };
    let report = build_report(&c.a, &c.b, Method::McGrid(params))?;
    let sandwich = report.mu_ab_lower <= report.mu_ab_upper;
    let kemperman_ok = report.kemperman_slack >= -3.0 * report.kemperman_stderr();
    let passed = sandwich && kemperman_ok;
    let message = format!(
        "mu(AB) in [{:.6}, {:.6}], BM in [{:.4}, {:.4}], Kemperman slack {:.6}{}",
        report.mu_ab_lower,
        report.mu_ab_upper,
        report.bm_lower,
        report.bm_upper,
        report.kemperman_slack,
        if passed {
            ""
        } else if !sandwich {
            " — SANDWICH INVERTED"
        } else {
            " — KEMPERMAN VIOLATED"
        }
    );
    let mut bytes = report.to_json_pretty().into_bytes();
    bytes.push(b'\n');
    Ok(Outcome {
        report: bytes,
        summary: serde_json::to_value(&report)?,
        passed,
        message,
    })
}

/// Builds a grid; the report is the cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBuildConfig {
    pub grid: GridSpec,
}

pub fn run_grid_build(c: &GridBuildConfig) -> Result<(HopfGrid, Outcome)> {
    let grid = HopfGrid::build(c.grid)?;
    let report = grid.cache_bytes();
    let summary = json!({
        "cells": grid.len(),
        "max_radius": grid.max_radius(),
        "cache_bytes": report.len(),
    });
    let message = format!(
        "grid {} with {} cells, cell radius {:.6}",
        c.grid,
        grid.len(),
        grid.max_radius()
    );
    Ok((
        grid,
        Outcome {
            report,
            summary,
            passed: true,
            message,
        },
    ))
}

/// Solves for the Brunn–Minkowski exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmConfig {
    pub mu_a: f64,
    pub mu_b: f64,
    pub mu_ab: f64,
}

pub fn run_bm(c: &BmConfig) -> Result<Outcome> {
    let r = bm_growth(c.mu_a, c.mu_b, c.mu_ab)?;
    let summary = json!({ "r": r });
    let mut report = serde_json::to_vec_pretty(&json!({
        "mu_a": c.mu_a, "mu_b": c.mu_b, "mu_ab": c.mu_ab, "r": r,
    }))?;
    report.push(b'\n');
    Ok(Outcome {
        report,
        summary,
        passed: true,
        message: format!("r = {r}"),
    })
}

pub fn run_search(c: &SearchConfig) -> Result<Outcome> {
    c.validate()?;
    let grid = HopfGrid::build(c.grid)?;
    let result = random_restarts(c, &grid)?;
    let (passed, check_value) = match check_conjecture(&result, &grid) {
        Ok(v) => (true, serde_json::to_value(v)?),
        Err(Error::ConjectureAnomaly(msg)) => (false, json!({ "anomaly": msg })),
        Err(e) => return Err(e),
    };
    let p = &result.best_param;
    let summary = json!({
        "best_param": p,
        "best_objective": result.best_objective,
        "evaluations": result.evaluations,
        "seed": result.seed,
        "measure": p.measure(),
        "axis_separation": p.axis_separation(),
        "effective_separation": p.effective_separation(),
        "conjecture_check": check_value,
    });
    let message = format!(
        "best objective {:.9} at {:?} after {} evaluations{}",
        result.best_objective,
        p.params,
        result.evaluations,
        if passed { "" } else { " — CONJECTURE ANOMALY" }
    );
    let mut report = serde_json::to_vec_pretty(&result)?;
    report.push(b'\n');
    Ok(Outcome {
        report,
        summary,
        passed,
        message,
    })
}

pub const HYPERBOLIC_HEADER: [&str; 7] = [
    "r",
    "m",
    "lhs",
    "rhs",
    "relative_residual",
    "hyperbolic_ratio",
    "spherical_ratio",
];

/// Residual tolerance of the hyperbolic doubling identity.
pub const HYPERBOLIC_TOLERANCE: f64 = 1e-12;

/// Hyperbolic doubling identity over a radius range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperbolicConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub steps: usize,
    pub normalization: HyperbolicNormalization,
}

pub fn run_hyperbolic(c: &HyperbolicConfig) -> Result<Outcome> {
    check_range("r", c.r_min, c.r_max, PI, c.steps)?;
    let mut rows = Vec::with_capacity(c.steps);
    let (mut worst, mut contrast) = (0.0f64, true);
    for r in linspace(c.r_min, c.r_max, c.steps) {
        let h = hyperbolic_double_check(r, c.normalization)?;
        let s = sphere_doubling_ratio(r)?;
        worst = worst.max(h.relative_residual());
        contrast &= s < 4.0 && 4.0 < h.doubling_ratio();
        rows.push(vec![r, h.m, h.lhs, h.rhs, h.relative_residual(), h.doubling_ratio(), s]);
    }
    let passed = worst < HYPERBOLIC_TOLERANCE && contrast;
    let summary = json!({
        "rows": rows.len(),
        "max_relative_residual": worst,
        "curvature_contrast": contrast,
    });
    let message = format!(
        "{} radii, max relative residual {worst:.3e}, curvature contrast {}",
        rows.len(),
        if contrast { "holds" } else { "FAILS" }
    );
    Ok(Outcome {
        report: csv_table(&HYPERBOLIC_HEADER, &rows)?,
        summary,
        passed,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_is_inclusive() {
        let v = linspace(0.1, 1.5, 15);
        assert_eq!(v.len(), 15);
        assert_eq!((v[0], v[14]), (0.1, 1.5));
        assert!((v[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn scan_arguments_are_checked() {
        let c = CapScanConfig {
            theta_min: 0.1,
            theta_max: 1.5,
            steps: 1,
            samples: 10,
            seed: 1,
        };
        assert!(matches!(run_cap_scan(&c), Err(Error::InvalidArgument(_))));
        let c = CapScanConfig {
            theta_min: 0.1,
            theta_max: 1.6,
            steps: 3,
            samples: 10,
            seed: 1,
        };
        assert!(run_cap_scan(&c).is_err());
        let c = HyperbolicConfig {
            r_min: 0.0,
            r_max: 1.0,
            steps: 3,
            normalization: HyperbolicNormalization::Corrected,
        };
        assert!(run_hyperbolic(&c).is_err());
    }

    #[test]
    fn bm_runner_reports_root() {
        let out = run_bm(&BmConfig {
            mu_a: 0.1,
            mu_b: 0.2,
            mu_ab: 0.5,
        })
        .unwrap();
        let r = out.summary["r"].as_f64().unwrap();
        assert!((r - 1.7733782).abs() < 1e-6);
        assert!(matches!(
            run_bm(&BmConfig {
                mu_a: 0.1,
                mu_b: 0.2,
                mu_ab: 0.2
            }),
            Err(Error::NoSolution(_))
        ));
    }

    #[test]
    fn hyperbolic_normalizations() {
        let mut c = HyperbolicConfig {
            r_min: 0.1,
            r_max: 2.0,
            steps: 20,
            normalization: HyperbolicNormalization::Corrected,
        };
        assert!(run_hyperbolic(&c).unwrap().passed);
        c.normalization = HyperbolicNormalization::Integral;
        assert!(!run_hyperbolic(&c).unwrap().passed);
    }
}
