//! Seeded Monte Carlo measures.
//!
//! Sample `i` of a run with seed `s` is always [`haar_at`]`(s', i)` for a
//! stream seed `s'` derived from `s`, so the work can be split into
//! fixed-size chunks across any number of workers without changing a single
//! bit of the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotations::{Rotation, UnitVec3};
use crate::sampling::{derive_seed, haar_at};
use crate::sets::SetSpec;

/// Samples per work unit; partial counts are combined in chunk order.
pub const CHUNK_SIZE: u64 = 65_536;

/// Draws used to estimate the acceptance rate before rejection sampling.
pub const PILOT_SAMPLES: u64 = 200_000;

/// Minimum acceptance rate for rejection sampling.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// Consecutive rejections after which rejection sampling gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

const STREAM_MEASURE: u64 = 0;
const STREAM_PILOT: u64 = 1;
const STREAM_REJECTION: u64 = 2;
const STREAM_WITNESS: u64 = 3;
const STREAM_PRODUCT: u64 = 4;

/// A Monte Carlo estimate of a normalized measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    /// `sqrt(value·(1 − value)/samples)`.
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

impl MeasureEstimate {
    pub fn from_hits(hits: u64, samples: u64, seed: u64) -> Self {
        let value = hits as f64 / samples as f64;
        MeasureEstimate {
            value,
            stderr: (value * (1.0 - value) / samples as f64).sqrt(),
            samples,
            seed,
        }
    }

    /// Whether `truth` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, truth: f64, k: f64) -> bool {
        (self.value - truth).abs() <= k * self.stderr
    }
}

/// Counts indices `i < samples` for which `hit(haar_at(stream, i))` holds,
/// in parallel chunks of [`CHUNK_SIZE`].
pub fn count_hits<F>(samples: u64, stream: u64, hit: F) -> u64
where
    F: Fn(&Rotation) -> bool + Sync,
{
    let chunks = samples.div_ceil(CHUNK_SIZE);
    let counts: Vec<u64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK_SIZE).min(samples);
            (c * CHUNK_SIZE..end).filter(|&i| hit(&haar_at(stream, i))).count() as u64
        })
        .collect();
    counts.iter().sum()
}

/// Estimates the Haar measure of `{g : hit(g)}`.
pub fn estimate_indicator<F>(samples: u64, seed: u64, hit: F) -> Result<MeasureEstimate>
where
    F: Fn(&Rotation) -> bool + Sync,
{
    if samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let hits = count_hits(samples, derive_seed(seed, STREAM_MEASURE), hit);
    Ok(MeasureEstimate::from_hits(hits, samples, seed))
}

/// Estimates `μ(s)` from `samples` Haar draws.
pub fn estimate_measure(s: &SetSpec, samples: u64, seed: u64) -> Result<MeasureEstimate> {
    estimate_indicator(samples, seed, |g| s.contains(g))
}

/// Draws `count` independent Haar samples conditioned on `s`, by rejection.
///
/// A pilot run of [`PILOT_SAMPLES`] draws estimates the acceptance rate
/// first; below [`MIN_ACCEPTANCE`] the set is reported as too small.
pub fn sample_in_set(s: &SetSpec, count: usize, seed: u64) -> Result<Vec<Rotation>> {
    let pilot = count_hits(PILOT_SAMPLES, derive_seed(seed, STREAM_PILOT), |g| s.contains(g));
    let acceptance = pilot as f64 / PILOT_SAMPLES as f64;
    if acceptance < MIN_ACCEPTANCE {
        return Err(Error::SetTooSmall { acceptance });
    }
    let stream = derive_seed(seed, STREAM_REJECTION);
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    let mut rejections = 0u64;
    while out.len() < count {
        let g = haar_at(stream, index);
        index += 1;
        if s.contains(&g) {
            out.push(g);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::SetTooSmall { acceptance });
            }
        }
    }
    Ok(out)
}

/// A finite subset `F ⊆ A` whose translates `aB` (`a ∈ F`) lie inside `AB`.
#[derive(Clone, Debug)]
pub struct WitnessSet {
    witnesses: Vec<Rotation>,
}

impl WitnessSet {
    /// Draws `count` witnesses from `a`.
    pub fn sample(a: &SetSpec, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("witness count must be at least 1"));
        }
        let witnesses = sample_in_set(a, count, derive_seed(seed, STREAM_WITNESS))?;
        Ok(WitnessSet { witnesses })
    }

    /// Uses the given rotations, which must all lie in `a`.
    pub fn from_members(a: &SetSpec, witnesses: Vec<Rotation>) -> Result<Self> {
        if witnesses.is_empty() {
            return Err(invalid("witness set must be nonempty"));
        }
        if let Some(bad) = witnesses.iter().position(|g| !a.contains(g)) {
            return Err(invalid(format!("witness {bad} is not a member of A")));
        }
        Ok(WitnessSet { witnesses })
    }

    pub fn witnesses(&self) -> &[Rotation] {
        &self.witnesses
    }

    pub fn len(&self) -> usize {
        self.witnesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.witnesses.is_empty()
    }
}

/// Per-witness data for the union membership test `g ∈ ∪ aB`.
struct Translate {
    inverse: Rotation,
    /// `a·u` for the bounding cap `(u, t)` of `B`.
    moved_axis: UnitVec3,
}

/// Estimates `μ(∪_{a∈F} aB)`, which lower-bounds `μ(AB)` because every
/// translate `aB` with `a ∈ A` lies in `AB`.
///
/// Membership `a⁻¹g ∈ B` is tested after a cheap prune: with `B ⊆ Cap(u, t)`,
/// `a⁻¹g ∈ B` requires `∠(a·u, g·u) < t`.
pub fn estimate_union_measure(witnesses: &WitnessSet, b: &SetSpec, samples: u64, seed: u64) -> Result<MeasureEstimate> {
    if samples == 0 {
        return Err(invalid("samples must be at least 1"));
    }
    let bound = b.bounding_cap();
    let translates: Vec<Translate> = witnesses
        .witnesses
        .iter()
        .map(|a| Translate {
            inverse: a.inverse(),
            moved_axis: bound.map_or(UnitVec3::E_Z, |(u, _)| a.act(&u)),
        })
        .collect();
    // Slack keeps the prune conservative against rounding in the dot product.
    let prune = bound.map(|(u, t)| (u, t.cos() - 1e-12));
    let hits = count_hits(samples, derive_seed(seed, STREAM_PRODUCT), |g| {
        let gu = prune.map(|(u, _)| g.act(&u));
        translates.iter().any(|tr| {
            if let (Some(gu), Some((_, cos_t))) = (gu, prune) {
                if tr.moved_axis.dot(&gu) <= cos_t {
                    return false;
                }
            }
            b.contains(&(tr.inverse * *g))
        })
    });
    Ok(MeasureEstimate::from_hits(hits, samples, seed))
}

/// Witness-union lower estimate for `μ(AB)`: draws `witness_count` points of
/// `A`, then estimates the measure of their translates of `B`.
pub fn estimate_product_lower(
    a: &SetSpec,
    b: &SetSpec,
    witness_count: usize,
    samples: u64,
    seed: u64,
) -> Result<MeasureEstimate> {
    let witnesses = WitnessSet::sample(a, witness_count, seed)?;
    estimate_union_measure(&witnesses, b, samples, seed)
}
