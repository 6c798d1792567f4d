//! Trajectory reconstruction of moving point targets seen by temporally
//! unsynchronized cameras.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: pinhole projection, quaternions, sight rays and the
//!   point-to-ray residual.
//! - [`motion`]: camera clocks and temporal-polynomial trajectories.
//! - [`intersection`]: closed-form triangulation and known-time trajectory fits.
//! - [`nlls`]: a Levenberg–Marquardt engine over parameter blocks.
//! - [`estimators`]: Multi-TI, the iterative Li baseline, and the two joint
//!   bundle adjustments (time + motion, and rotation + time + motion).
//! - [`simulator`]: synthetic scenes and pose/pixel noise.
//! - [`bench`] and [`io`]: Monte Carlo harness, CSV output and JSON formats.

pub mod bench;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod intersection;
pub mod io;
pub mod motion;
pub mod nlls;
pub mod simulator;

pub use error::{Error, Result};
pub use nalgebra;
