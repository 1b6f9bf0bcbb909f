//! Desk-scale rotational-scan hyperspectral imaging and sorting pipeline.
//!
//! The crate simulates a line-scan camera aimed through a rotating
//! reflective prism, reconstructs and distortion-corrects the resulting
//! hyperspectral cubes, reduces bands with a minimum noise fraction
//! transform, classifies pixels with a small 1-D convolutional network,
//! aggregates pixel labels into detected objects with suction points, plans
//! 100 Hz Cartesian pick trajectories with finite-horizon LQ tracking, and
//! closes the loop with a simulated sorting harness that scores per-class
//! success over seeded trials.
//!
//! Everything is deterministic given the configured seeds: scenes, noise,
//! training, and campaign statistics reproduce bit-for-bit.

// index-based loops are the house style for the numeric kernels here
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
#![allow(clippy::explicit_counter_loop)]

pub mod classifier;
pub mod config;
pub mod cube;
pub mod detect;
pub mod draw;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod mnf;
pub mod nn;
pub mod resolution;
pub mod scene;
pub mod sim;
pub mod spectra;
pub mod trajectory;

pub use error::{Error, Result};
