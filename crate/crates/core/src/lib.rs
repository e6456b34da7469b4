//! Isometric non-rigid structure-from-motion with camera calibration.

pub mod calib;
pub mod cli;
pub mod conic;
pub mod error;
pub mod geometry;
pub mod incremental;
pub mod io;
pub mod reconstruct;
pub mod synth;
pub mod upgrade;

pub use error::{Error, Result};
