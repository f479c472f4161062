//! Exact-arithmetic modeling and enumeration of plane tropical curves.
//!
//! The library models parameterized plane tropical curves (metric graphs
//! mapped to the plane by balanced piecewise affine maps), their Newton
//! polygons and dual subdivisions, complex and real (Welschinger-type)
//! multiplicities, and the combinatorial hypothesis checks needed to feed
//! patchworking-style constructions. Everything is computed over exact
//! integers and rationals; there is no floating point in any geometric or
//! arithmetic path.
//!
//! Modules follow the pipeline:
//!
//! * [`lattice`] — integer/rational plane geometry: polygons, lattice
//!   volume, Minkowski sums.
//! * [`curve`] — abstract tropical curves, plane parameterized tropical
//!   (PPT) curves, marked and real curves, embedded (EPT) curves.
//! * [`duality`] — Newton polygons, dual subdivisions, tropicalization of
//!   valuated polynomials.
//! * [`position`] — point configurations, the reconstruction solver for a
//!   combinatorial type, orientation of marked curves, genericity checks.
//! * [`weights`] — complex and real weights of marked curves.
//! * [`patchdata`] — multiplicity vectors, boundary tangency data and the
//!   hypothesis validators (T/R/A rules, compatible tuples).
//! * [`enumerate`] — curve enumeration through point configurations and
//!   weight aggregation.
//! * [`document`], [`render`] — JSON schemas and SVG output for the CLI.

pub mod curve;
pub mod document;
pub mod duality;
pub mod enumerate;
pub mod error;
pub mod lattice;
pub mod patchdata;
pub mod position;
pub mod render;
pub mod weights;

pub use error::{Error, Result};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
