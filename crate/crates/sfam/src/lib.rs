//! Articulated non-rigid structure from motion.
//!
//! Recovers per-frame 3D joint positions from 2D point tracks under an
//! orthographic camera by combining a low-rank shape factorization with a
//! soft prior on bone-length proportions. The pipeline is:
//!
//! 1. centroid registration and rank-3K SVD factorization of the tracks,
//! 2. camera recovery via orthonormality constraints on a corrective
//!    transform ([`camera_recovery`]),
//! 3. alternating refinement of the 3D shape: a Levenberg–Marquardt pass on
//!    the bone-prior subproblem interleaved with nuclear-norm shrinkage
//!    steps ([`articulated_solver`]),
//! 4. metrics against ground truth when available ([`evaluation`]).
//!
//! [`synth`] generates ground-truth articulated scenes for testing, and
//! [`cli_io`] handles file formats and the windowed end-to-end run driven by
//! the `sfam` binary.

pub mod articulated_solver;
pub mod camera_recovery;
pub mod cli_io;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Bone, CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton};
