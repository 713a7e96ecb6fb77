//! A Hopf-coordinate partition of SO(3) with certified set brackets.
//!
//! Unit quaternions are written in Hopf coordinates
//!
//! ```text
//! q = (cos η cos ξ₁, cos η sin ξ₁, sin η cos ξ₂, sin η sin ξ₂),
//! η ∈ [0, π/2], ξ₁ ∈ [0, π), ξ₂ ∈ [0, 2π),
//! ```
//!
//! where restricting `ξ₁` to `[0, π)` picks one sheet of the double cover
//! (`−q` has coordinates `(η, ξ₁ + π, ξ₂ + π)`). The Haar volume element is
//! `sin η cos η dη dξ₁ dξ₂ / π²`, so every box of a uniform subdivision has a
//! closed-form weight.
//!
//! # Certified brackets
//!
//! A cell of radius `ρ` around center `c` contains only rotations within `ρ`
//! of `c`. For a set with 1-Lipschitz value `f`, cells with `f(c) ≤ −ρ` lie
//! inside the set and cells with `f(c) ≥ ρ` lie outside, which brackets the
//! measure between the inner and outer weight sums.
//!
//! # Product bound
//!
//! By bi-invariance, `d(g₁g₂, c₁c₂) ≤ d(g₁, c₁) + d(g₂, c₂)`, so a product of
//! outer cells `i`, `j` stays within `ρᵢ + ρⱼ` of `cᵢcⱼ`. The bound is
//! computed in two passes. First every product `cᵢcⱼ` is located in its cell
//! `p`. Then every cell `k` with `d(c_k, c_p) ≤ ρᵢ + ρⱼ + ρ_k + ρ_p` is
//! marked. This covers every cell that can meet `A·B`.
//!
//! Both passes use the torus symmetry of the chart. Left and right
//! multiplication by `e^{iσ}` and `e^{iτ}` shift `(ξ₁, ξ₂)` by `(σ + τ, σ − τ)`,
//! which permutes cells whenever `n_xi2` is even. Products are then read off
//! a small table indexed by the two `η` layers and one phase. The dilation
//! applies one precomputed stencil per pair of layers.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rotations::Rotation;
use crate::sets::SetSpec;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// Magic bytes opening a grid cache file.
pub const CACHE_MAGIC: &[u8; 8] = b"SO3GRID1";

/// Slack added to distance comparisons in the product bound.
const DISTANCE_SLACK: f64 = 1e-9;

/// Subdivision counts of a [`HopfGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_eta: u32,
    pub n_xi1: u32,
    pub n_xi2: u32,
}

impl GridSpec {
    pub fn new(n_eta: u32, n_xi1: u32, n_xi2: u32) -> Self {
        GridSpec { n_eta, n_xi1, n_xi2 }
    }

    /// Halves every mesh width.
    pub fn refined(&self) -> Self {
        GridSpec::new(2 * self.n_eta, 2 * self.n_xi1, 2 * self.n_xi2)
    }

    pub fn cell_count(&self) -> usize {
        self.n_eta as usize * self.n_xi1 as usize * self.n_xi2 as usize
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.n_eta, self.n_xi1, self.n_xi2)
    }
}

/// A fixed-length bit array over cells.
#[derive(Clone, PartialEq, Eq)]
pub struct CellBits {
    len: usize,
    words: Vec<u64>,
}

impl fmt::Debug for CellBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CellBits({}/{})", self.count(), self.len)
    }
}

impl CellBits {
    pub fn empty(len: usize) -> Self {
        CellBits {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut bits = CellBits {
            len,
            words: vec![u64::MAX; len.div_ceil(64)],
        };
        if len % 64 != 0 {
            if let Some(last) = bits.words.last_mut() {
                *last = (1u64 << (len % 64)) - 1;
            }
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i >> 6] |= 1 << (i & 63);
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn none(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn all(&self) -> bool {
        self.count() == self.len
    }

    pub fn union_with(&mut self, other: &CellBits) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    /// Whether every bit of `self` is also set in `other`.
    pub fn is_subset(&self, other: &CellBits) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + bit)
            })
        })
    }
}

/// Index of a cell as `(η layer, ξ₁ column, ξ₂ column)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellCoord {
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

/// Product cells `loc(x_{a_i} · e^{iuΔ} · x_{a_j, rep})`, see
/// [`HopfGrid::product_cells`].
struct ProductTable {
    n_phase: usize,
    cells: Vec<[u16; 3]>,
}

/// Cyclic runs `(start, len)` of `ξ₂` offsets for one `ξ₁` offset.
struct StencilRow {
    db: u32,
    runs: Vec<(u32, u32)>,
}

/// For each pair of layers `(a_p, a_k)`, the cell offsets `(db, dc)` with
/// `d(center(a_k, db, dc), center(a_p, 0, 0)) ≤ reach`.
struct Stencils {
    reach: f64,
    by_layers: Vec<Option<Vec<StencilRow>>>,
}

/// A uniform Hopf-coordinate partition of SO(3).
pub struct HopfGrid {
    spec: GridSpec,
    centers: Vec<Rotation>,
    radii: Vec<f64>,
    weights: Vec<f64>,
    product_table: OnceLock<ProductTable>,
    stencils: OnceLock<Stencils>,
}

impl fmt::Debug for HopfGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HopfGrid{}", self.spec)
    }
}

impl Clone for HopfGrid {
    fn clone(&self) -> Self {
        HopfGrid {
            spec: self.spec,
            centers: self.centers.clone(),
            radii: self.radii.clone(),
            weights: self.weights.clone(),
            product_table: OnceLock::new(),
            stencils: OnceLock::new(),
        }
    }
}

/// Hopf coordinates of a unit quaternion, with `ξ₁` reduced to `[0, π)`.
pub fn hopf_coordinates(q: [f64; 4]) -> (f64, f64, f64) {
    let [w, x, y, z] = q;
    let eta = (y * y + z * z).sqrt().atan2((w * w + x * x).sqrt());
    let mut xi1 = x.atan2(w);
    let mut xi2 = z.atan2(y);
    if xi1 < 0.0 {
        xi1 += PI;
        xi2 += PI;
    }
    // atan2 may return π, and −ε + π may round to π.
    if xi1 >= PI {
        xi1 -= PI;
        xi2 -= PI;
    }
    (eta, xi1.max(0.0), xi2.rem_euclid(TAU))
}

fn hopf_quaternion(eta: f64, xi1: f64, xi2: f64) -> [f64; 4] {
    let (se, ce) = eta.sin_cos();
    let (s1, c1) = xi1.sin_cos();
    let (s2, c2) = xi2.sin_cos();
    [ce * c1, ce * s1, se * c2, se * s2]
}

impl HopfGrid {
    /// Builds the uniform subdivision with `n_eta × n_xi1 × n_xi2` cells.
    pub fn build(spec: GridSpec) -> Result<Self> {
        if spec.n_eta == 0 || spec.n_xi1 == 0 || spec.n_xi2 == 0 {
            return Err(invalid(format!("grid counts must be positive, got {spec}")));
        }
        if spec.n_eta > u16::MAX as u32 || spec.n_xi1 > u16::MAX as u32 || spec.n_xi2 > u16::MAX as u32 {
            return Err(invalid(format!("grid counts above {} are unsupported", u16::MAX)));
        }
        if spec.cell_count() > (1 << 31) {
            return Err(invalid(format!("grid {spec} has too many cells")));
        }
        let (ne, n1, n2) = (spec.n_eta as usize, spec.n_xi1 as usize, spec.n_xi2 as usize);
        let (d_eta, d1, d2) = Self::widths(spec);
        let radius = d_eta + d1 + d2;
        let mut layer_weights = Vec::with_capacity(ne);
        for a in 0..ne {
            let lo = a as f64 * d_eta;
            let hi = if a + 1 == ne { FRAC_PI_2 } else { (a + 1) as f64 * d_eta };
            // sin²(hi) − sin²(lo) = sin(hi + lo)·sin(hi − lo)
            let ds2 = (hi + lo).sin() * (hi - lo).sin();
            layer_weights.push(ds2 / (n1 * n2) as f64);
        }
        let n = spec.cell_count();
        let mut centers = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (a, &lw) in layer_weights.iter().enumerate() {
            let eta = (a as f64 + 0.5) * d_eta;
            for b in 0..n1 {
                let xi1 = (b as f64 + 0.5) * d1;
                for c in 0..n2 {
                    let xi2 = (c as f64 + 0.5) * d2;
                    let [w, x, y, z] = hopf_quaternion(eta, xi1, xi2);
                    centers.push(Rotation::canonical(w, x, y, z));
                    weights.push(lw);
                }
            }
        }
        Ok(HopfGrid {
            spec,
            centers,
            radii: vec![radius; n],
            weights,
            product_table: OnceLock::new(),
            stencils: OnceLock::new(),
        })
    }

    fn widths(spec: GridSpec) -> (f64, f64, f64) {
        (
            FRAC_PI_2 / spec.n_eta as f64,
            PI / spec.n_xi1 as f64,
            TAU / spec.n_xi2 as f64,
        )
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, cell: usize) -> Rotation {
        self.centers[cell]
    }

    pub fn radius(&self, cell: usize) -> f64 {
        self.radii[cell]
    }

    pub fn weight(&self, cell: usize) -> f64 {
        self.weights[cell]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    pub fn index(&self, c: CellCoord) -> usize {
        (c.a as usize * self.spec.n_xi1 as usize + c.b as usize) * self.spec.n_xi2 as usize + c.c as usize
    }

    pub fn coord(&self, index: usize) -> CellCoord {
        let n1 = self.spec.n_xi1 as usize;
        let n2 = self.spec.n_xi2 as usize;
        CellCoord {
            a: (index / (n1 * n2)) as u32,
            b: (index / n2 % n1) as u32,
            c: (index % n2) as u32,
        }
    }

    /// The cell containing `g`, from the analytic inverse of the chart.
    pub fn locate(&self, g: &Rotation) -> usize {
        self.index(self.locate_coord(g))
    }

    pub fn locate_coord(&self, g: &Rotation) -> CellCoord {
        let (eta, xi1, xi2) = hopf_coordinates(g.components());
        let (d_eta, d1, d2) = Self::widths(self.spec);
        let bin = |v: f64, width: f64, n: u32| ((v / width) as u32).min(n - 1);
        CellCoord {
            a: bin(eta, d_eta, self.spec.n_eta),
            b: bin(xi1, d1, self.spec.n_xi1),
            c: bin(xi2, d2, self.spec.n_xi2),
        }
    }

    /// Classifies every cell against `s`.
    pub fn rasterize(&self, s: &SetSpec) -> CellSet {
        let n = self.len();
        if s.covers_group() {
            return CellSet::new(self, CellBits::full(n), CellBits::full(n));
        }
        // 0 = excluded, 1 = boundary, 2 = inner
        let class: Vec<u8> = (0..n)
            .into_par_iter()
            .map(|i| {
                let f = s.lipschitz_eval(&self.centers[i]);
                let r = self.radii[i];
                if f <= -r {
                    2
                } else if f >= r {
                    0
                } else {
                    1
                }
            })
            .collect();
        let mut inner = CellBits::empty(n);
        let mut outer = CellBits::empty(n);
        for (i, &k) in class.iter().enumerate() {
            if k >= 1 {
                outer.set(i);
            }
            if k == 2 {
                inner.set(i);
            }
        }
        CellSet::new(self, inner, outer)
    }

    fn check_same_grid(&self, sets: &[&CellSet]) -> Result<()> {
        for s in sets {
            if s.spec != self.spec {
                return Err(invalid(format!(
                    "cell set on grid {} used with grid {}",
                    s.spec, self.spec
                )));
            }
        }
        Ok(())
    }

    /// A certified superset of `A·B` for sets bracketed by `a` and `b`:
    /// every cell that can contain a product of an outer cell of `a` with an
    /// outer cell of `b` is marked.
    pub fn product_outer(&self, a: &CellSet, b: &CellSet) -> Result<CellSet> {
        self.check_same_grid(&[a, b])?;
        let n = self.len();
        if a.outer.none() || b.outer.none() {
            return Ok(CellSet::new(self, CellBits::empty(n), CellBits::empty(n)));
        }
        if a.outer.all() || b.outer.all() {
            return Ok(CellSet::new(self, CellBits::empty(n), CellBits::full(n)));
        }
        let cells = if self.spec.n_xi2 == 2 * self.spec.n_xi1 {
            self.product_cells(a, b)
        } else {
            self.product_cells_direct(a, b)
        };
        let reach = 4.0 * self.max_radius() + DISTANCE_SLACK;
        let outer = if self.spec.n_xi2 % 2 == 0 {
            self.dilate(&cells)
        } else {
            self.dilate_direct(&cells, reach)
        };
        Ok(CellSet::new(self, CellBits::empty(n), outer))
    }

    /// The pairwise product bound: for every outer pair `(i, j)` mark each
    /// cell `k` with `d(c_k, cᵢcⱼ) ≤ ρᵢ + ρⱼ + ρ_k`. Cost is quadratic in the
    /// outer cells times the grid size; meant for small grids and for testing
    /// the fast path.
    pub fn product_outer_reference(&self, a: &CellSet, b: &CellSet) -> Result<CellSet> {
        self.check_same_grid(&[a, b])?;
        let n = self.len();
        let mut outer = CellBits::empty(n);
        for i in a.outer.ones() {
            for j in b.outer.ones() {
                let g = self.centers[i] * self.centers[j];
                let r = self.radii[i] + self.radii[j];
                for k in 0..n {
                    if self.centers[k].distance(&g) <= r + self.radii[k] + DISTANCE_SLACK {
                        outer.set(k);
                    }
                }
            }
        }
        Ok(CellSet::new(self, CellBits::empty(n), outer))
    }

    fn product_table(&self) -> &ProductTable {
        self.product_table.get_or_init(|| {
            let (ne, n1) = (self.spec.n_eta as usize, self.spec.n_xi1 as usize);
            let delta = PI / n1 as f64;
            let base = |a: usize, rep: usize| {
                self.centers[self.index(CellCoord {
                    a: a as u32,
                    b: 0,
                    c: rep as u32,
                })]
            };
            let phases: Vec<Rotation> = (0..n1)
                .map(|u| {
                    let (s, c) = (u as f64 * delta).sin_cos();
                    Rotation::canonical(c, s, 0.0, 0.0)
                })
                .collect();
            let cells: Vec<[u16; 3]> = (0..ne * ne * 2)
                .into_par_iter()
                .flat_map_iter(|row| {
                    let (ai, rest) = (row / (2 * ne), row % (2 * ne));
                    let (aj, rep) = (rest / 2, rest % 2);
                    let left = base(ai, 0);
                    let right = base(aj, rep);
                    phases.iter().map(move |ph| {
                        let p = self.locate_coord(&(left * *ph * right));
                        [p.a as u16, p.b as u16, p.c as u16]
                    })
                })
                .collect();
            ProductTable { n_phase: n1, cells }
        })
    }

    /// Cells containing `cᵢcⱼ` for all outer pairs, via the product table.
    ///
    /// With `Δ = π/n_xi1 = 2π/n_xi2`, the center of `(a, b, c)` is
    /// `e^{iσ} x_a e^{iτ}` with `σ + τ = bΔ`, `σ − τ = cΔ`, where `x_a` is the
    /// center of `(a, 0, 0)`. Writing cell `j` relative to `x_{a_j, rep}`
    /// (the center of `(a_j, 0, rep)`) with `rep` chosen to make the middle
    /// phase an integer multiple `u` of `Δ`, the product is
    /// `e^{iσᵢ} (x_{aᵢ} e^{iuΔ} x_{a_j, rep}) e^{iτ'}`, i.e. a tabulated cell
    /// shifted by `(s₁, s₂)` columns.
    fn product_cells(&self, a: &CellSet, b: &CellSet) -> CellBits {
        let table = self.product_table();
        let ne = self.spec.n_eta as usize;
        let n1 = self.spec.n_xi1 as i32;
        let n2 = 2 * n1;
        let n = self.len();
        let layer_rows = ne * 2 * table.n_phase;
        // Per left cell: layer, b − c, b + c.
        let left: Vec<(usize, i32, i32)> = a
            .outer
            .ones()
            .map(|i| {
                let c = self.coord(i);
                (c.a as usize, c.b as i32 - c.c as i32, c.b as i32 + c.c as i32)
            })
            .collect();
        // Per right cell and left parity: table row offset, b + c', b − c'
        // with c' = c − rep.
        let right: [Vec<(u32, i32, i32)>; 2] = std::array::from_fn(|pi| {
            b.outer
                .ones()
                .map(|j| {
                    let c = self.coord(j);
                    let (bj, cj) = (c.b as i32, c.c as i32);
                    let rep = (pi as i32) ^ ((bj + cj) & 1);
                    let offset = (c.a as usize * 2 + rep as usize) * table.n_phase;
                    (offset as u32, bj + cj - rep, bj - cj + rep)
                })
                .collect()
        });
        left.par_chunks(64)
            .fold(
                || CellBits::empty(n),
                |mut acc, chunk| {
                    for &(ai, alpha, beta) in chunk {
                        let rows = &table.cells[ai * layer_rows..(ai + 1) * layer_rows];
                        for &(offset, gamma, delta) in &right[(beta & 1) as usize] {
                            // All sums below are even by the choice of rep.
                            let mut u = (alpha + gamma) >> 1;
                            if u < 0 {
                                u += n1;
                            } else if u >= n1 {
                                u -= n1;
                            }
                            let cell = rows[offset as usize + u as usize];
                            let mut xb = cell[1] as i32 + ((beta + delta) >> 1);
                            let mut xc = cell[2] as i32 + ((beta - delta) >> 1);
                            // (ξ₁ ± π, ξ₂ ± π) is the same rotation.
                            if xb < 0 {
                                xb += n1;
                                xc -= n1;
                            }
                            while xb >= n1 {
                                xb -= n1;
                                xc += n1;
                            }
                            while xc < 0 {
                                xc += n2;
                            }
                            while xc >= n2 {
                                xc -= n2;
                            }
                            acc.set((cell[0] as usize * n1 as usize + xb as usize) * n2 as usize + xc as usize);
                        }
                    }
                    acc
                },
            )
            .reduce(
                || CellBits::empty(n),
                |mut x, y| {
                    x.union_with(&y);
                    x
                },
            )
    }

    /// Cells containing `cᵢcⱼ` by direct multiplication.
    fn product_cells_direct(&self, a: &CellSet, b: &CellSet) -> CellBits {
        let n = self.len();
        let right: Vec<Rotation> = b.outer.ones().map(|j| self.centers[j]).collect();
        let left: Vec<usize> = a.outer.ones().collect();
        left.par_chunks(64)
            .fold(
                || CellBits::empty(n),
                |mut acc, chunk| {
                    for &i in chunk {
                        for cj in &right {
                            acc.set(self.locate(&(self.centers[i] * *cj)));
                        }
                    }
                    acc
                },
            )
            .reduce(
                || CellBits::empty(n),
                |mut x, y| {
                    x.union_with(&y);
                    x
                },
            )
    }

    fn stencils(&self) -> &Stencils {
        self.stencils.get_or_init(|| {
            let reach = 4.0 * self.max_radius() + DISTANCE_SLACK;
            let (ne, n1, n2) = (
                self.spec.n_eta as usize,
                self.spec.n_xi1 as usize,
                self.spec.n_xi2 as usize,
            );
            let d_eta = FRAC_PI_2 / ne as f64;
            let by_layers = (0..ne * ne)
                .into_par_iter()
                .map(|pair| {
                    let (ap, ak) = (pair / ne, pair % ne);
                    // η is 1-Lipschitz on S³ and the rotation metric doubles
                    // S³ distances, so layers further than reach/2 apart in η
                    // cannot meet.
                    if 2.0 * ak.abs_diff(ap) as f64 * d_eta > reach + 1e-12 {
                        return None;
                    }
                    let origin = self.centers[self.index(CellCoord {
                        a: ap as u32,
                        b: 0,
                        c: 0,
                    })];
                    let mut rows = Vec::new();
                    let mut hit = vec![false; n2];
                    for db in 0..n1 {
                        for (dc, h) in hit.iter_mut().enumerate() {
                            let k = (ak * n1 + db) * n2 + dc;
                            *h = self.centers[k].distance(&origin) <= reach;
                        }
                        let runs = cyclic_runs(&hit);
                        if !runs.is_empty() {
                            rows.push(StencilRow { db: db as u32, runs });
                        }
                    }
                    Some(rows)
                })
                .collect();
            Stencils { reach, by_layers }
        })
    }

    /// Marks every cell within `reach` of a cell of `cells`, one stencil per
    /// pair of layers, applied to whole `ξ₂` rows as cyclic window sums.
    fn dilate(&self, cells: &CellBits) -> CellBits {
        let stencils = self.stencils();
        debug_assert!(stencils.reach >= 4.0 * self.max_radius());
        let (ne, n1, n2) = (
            self.spec.n_eta as usize,
            self.spec.n_xi1 as usize,
            self.spec.n_xi2 as usize,
        );
        let n = self.len();
        let rows: Vec<usize> = (0..ne * n1)
            .filter(|&r| (0..n2).any(|c| cells.get(r * n2 + c)))
            .collect();
        rows.par_iter()
            .fold(
                || CellBits::empty(n),
                |mut acc, &row| {
                    let (ap, bp) = (row / n1, row % n1);
                    // prefix[c] = number of marked cells in columns < c
                    let mut prefix = vec![0u32; n2 + 1];
                    for c in 0..n2 {
                        prefix[c + 1] = prefix[c] + cells.get(row * n2 + c) as u32;
                    }
                    let count = |lo: usize, len: usize| {
                        if lo + len <= n2 {
                            prefix[lo + len] - prefix[lo]
                        } else {
                            prefix[n2] - prefix[lo] + prefix[lo + len - n2]
                        }
                    };
                    for ak in 0..ne {
                        let Some(stencil) = &stencils.by_layers[ap * ne + ak] else {
                            continue;
                        };
                        for sr in stencil {
                            let mut bt = bp + sr.db as usize;
                            let mut extra = 0;
                            if bt >= n1 {
                                bt -= n1;
                                extra = n2 / 2;
                            }
                            let base = (ak * n1 + bt) * n2;
                            for &(start, len) in &sr.runs {
                                let (start, len) = (start as usize, len as usize);
                                if len >= n2 {
                                    for x in 0..n2 {
                                        acc.set(base + x);
                                    }
                                    continue;
                                }
                                // Target column x receives source columns
                                // x − extra − start − t for t in [0, len).
                                let shift = (extra + start + len - 1) % n2;
                                for x in 0..n2 {
                                    let lo = (x + n2 - shift) % n2;
                                    if count(lo, len) > 0 {
                                        acc.set(base + x);
                                    }
                                }
                            }
                        }
                    }
                    acc
                },
            )
            .reduce(
                || CellBits::empty(n),
                |mut x, y| {
                    x.union_with(&y);
                    x
                },
            )
    }

    /// Marks every cell within `reach` of a cell of `cells` by scanning.
    fn dilate_direct(&self, cells: &CellBits, reach: f64) -> CellBits {
        let n = self.len();
        let sources: Vec<Rotation> = cells.ones().map(|p| self.centers[p]).collect();
        let marked: Vec<bool> = (0..n)
            .into_par_iter()
            .map(|k| sources.iter().any(|c| self.centers[k].distance(c) <= reach))
            .collect();
        let mut out = CellBits::empty(n);
        for (k, &m) in marked.iter().enumerate() {
            if m {
                out.set(k);
            }
        }
        out
    }

    /// Writes the grid to `path` atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.cache_bytes())
    }

    /// The cache file contents: magic, three little-endian `u32` counts, then
    /// `(w, x, y, z, radius, weight)` as little-endian `f64` per cell.
    pub fn cache_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(20 + 48 * self.len());
        bytes.extend_from_slice(CACHE_MAGIC);
        for n in [self.spec.n_eta, self.spec.n_xi1, self.spec.n_xi2] {
            bytes.extend_from_slice(&n.to_le_bytes());
        }
        for i in 0..self.len() {
            for v in self.centers[i].components() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&self.radii[i].to_le_bytes());
            bytes.extend_from_slice(&self.weights[i].to_le_bytes());
        }
        bytes
    }

    /// Reads a grid written by [`HopfGrid::save`]. The contents must match a
    /// fresh build bit for bit, since certified bounds rely on the layout.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |reason: String| Error::CorruptCache {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 20 || &bytes[..8] != CACHE_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap());
        let spec = GridSpec::new(word(0), word(1), word(2));
        let expected = spec
            .cell_count()
            .checked_mul(48)
            .and_then(|b| b.checked_add(20))
            .ok_or_else(|| corrupt(format!("implausible grid size {spec}")))?;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "length {} does not match {expected} bytes for grid {spec}",
                bytes.len()
            )));
        }
        let grid = Self::build(spec).map_err(|e| corrupt(e.to_string()))?;
        let f = |k: usize| f64::from_le_bytes(bytes[20 + 8 * k..28 + 8 * k].try_into().unwrap());
        for i in 0..grid.len() {
            let rec: [f64; 6] = std::array::from_fn(|t| f(6 * i + t));
            let c = grid.centers[i].components();
            let same = (0..4).all(|t| rec[t].to_bits() == c[t].to_bits())
                && rec[4].to_bits() == grid.radii[i].to_bits()
                && rec[5].to_bits() == grid.weights[i].to_bits();
            if !same {
                return Err(corrupt(format!("cell {i} does not match the Hopf layout")));
            }
        }
        Ok(grid)
    }
}

/// Maximal cyclic runs of `true` as `(start, len)`.
fn cyclic_runs(hit: &[bool]) -> Vec<(u32, u32)> {
    let n = hit.len();
    let Some(gap) = hit.iter().position(|&h| !h) else {
        return vec![(0, n as u32)];
    };
    let mut runs = Vec::new();
    let mut t = 1;
    while t <= n {
        let x = (gap + t) % n;
        if hit[x] {
            let mut len = 0;
            while len < n && hit[(x + len) % n] {
                len += 1;
            }
            runs.push((x as u32, len as u32));
            t += len;
        } else {
            t += 1;
        }
    }
    runs
}

/// Writes `bytes` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Cells classified against a set: `inner` cells lie inside it, `outer`
/// cells cover it.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSet {
    spec: GridSpec,
    inner: CellBits,
    outer: CellBits,
    measure_lower: f64,
    measure_upper: f64,
}

impl CellSet {
    fn new(grid: &HopfGrid, inner: CellBits, outer: CellBits) -> Self {
        debug_assert!(inner.is_subset(&outer));
        let sum = |bits: &CellBits| bits.ones().map(|i| grid.weights[i]).sum::<f64>();
        let measure_lower = if inner.all() { 1.0 } else { sum(&inner) };
        let measure_upper = if outer.all() { 1.0 } else { sum(&outer) };
        CellSet {
            spec: grid.spec,
            inner,
            outer,
            measure_lower,
            measure_upper,
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn inner(&self) -> &CellBits {
        &self.inner
    }

    pub fn outer(&self) -> &CellBits {
        &self.outer
    }

    /// Total weight of inner cells, a lower bound on the set's measure.
    pub fn measure_lower(&self) -> f64 {
        self.measure_lower
    }

    /// Total weight of outer cells, an upper bound on the set's measure.
    pub fn measure_upper(&self) -> f64 {
        self.measure_upper
    }

    /// `(lower + upper)/2`.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.measure_lower + self.measure_upper)
    }

    /// Width of the bracket.
    pub fn gap(&self) -> f64 {
        self.measure_upper - self.measure_lower
    }
}
