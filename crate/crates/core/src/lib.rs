//! Numerical laboratory for measure doubling of small sets in SO(3).
//!
//! The crate is organized bottom-up:
//!
//! * [`rotations`]: the group, its bi-invariant metric and Haar sampling;
//! * [`sets`]: cap preimages, metric balls and their Boolean combinations;
//! * [`measure_mc`]: seeded Monte Carlo measures and witness-union lower
//!   bounds for product sets;
//! * [`grid`]: a Hopf-coordinate partition with certified inner/outer
//!   rasterization and a certified upper bound for product sets;
//! * [`model_spaces`]: closed forms on the sphere and the hyperbolic plane;
//! * [`growth`]: Brunn–Minkowski exponents, Kemperman and
//!   Breuillard–Green slacks, and growth reports;
//! * [`search`]: Nelder–Mead search for small-doubling sets in parametric
//!   families.

pub mod error;
pub mod grid;
pub mod growth;
pub mod measure_mc;
pub mod model_spaces;
pub mod rotations;
pub mod sampling;
pub mod search;
pub mod sets;

pub use error::{Error, Result};
pub use grid::{CellSet, GridSpec, HopfGrid};
pub use growth::{GrowthReport, MeasureValue};
pub use measure_mc::MeasureEstimate;
pub use rotations::{angle_between, ball_measure, euler_decompose, EulerDecomposition, Rotation, UnitVec3};
pub use sets::SetSpec;
