//! Occlusion-aware image reconstruction geometry.
//!
//! Building blocks for view synthesis from depth, camera motion, and optical
//! flow: pinhole projection and rigid transforms ([`camera`]), bilinear
//! warping and multi-scale pyramids ([`warp`]), geometric visibility masks
//! ([`occlusion`]), robust reconstruction/smoothness/consistency losses with
//! analytic gradients ([`loss`]), closed-form synthetic scenes that serve as
//! the reference implementation for all of the above ([`synth`]), evaluation
//! metrics ([`metrics`]), and the file formats tying them together ([`io`]).
//!
//! Conventions used throughout: pixel coordinates are `(x, y)` = (column,
//! row) with centers on integers and an inclusive image domain
//! `[0, W-1] x [0, H-1]`; grids are row-major; all internal arithmetic is
//! `f64`, and every reduction runs in a fixed sequential order so results
//! are reproducible bit for bit.

pub mod camera;
pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod occlusion;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};

/// Re-exported so downstream code can name vector/matrix types without
/// pinning its own copy of the dependency.
pub use nalgebra;
