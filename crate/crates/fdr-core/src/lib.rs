//! Free-discontinuity regression on scattered data.
//!
//! Recovers a piecewise-smooth surface together with the location and size of
//! its discontinuities from a noisy point cloud, by solving a convex
//! relaxation of a Mumford-Shah type problem on a lifted grid. The crate is
//! organised as a pipeline:
//!
//! * [`grid`] bins the points into per-cell response averages and a density
//!   estimate,
//! * [`calculus`] provides the discrete gradient, its adjoint and the duality
//!   pairing on the lifted grid,
//! * [`projections`] holds the exact projections onto the primal box and the
//!   dual constraint sets,
//! * [`solver`] runs the extended primal-dual iteration,
//! * [`segmentation`] thresholds the relaxed solution back into a surface, a
//!   jump set and error metrics,
//! * [`sure`] selects the two hyperparameters by unbiased risk estimation,
//! * [`inference`] wraps the estimate with subsampling or split-conformal
//!   uncertainty bands,
//! * [`simulate`] generates the synthetic scenarios used for calibration
//!   tables.
//!
//! All randomness is drawn from counter-based generators seeded explicitly,
//! and parallel sections collect results in task order, so every entry point
//! is deterministic for a fixed seed regardless of thread count.

pub mod calculus;
pub mod error;
pub mod grid;
pub mod inference;
pub mod projections;
pub mod segmentation;
pub mod simulate;
pub mod solver;
pub mod sure;

mod lattice;
mod stats;

pub use error::{FdrError, Result};
