//! Adaptive exposure control for fiducial tracking.
//!
//! This crate bundles a photometric camera simulator, a planar-marker
//! detection and pose pipeline, a percentile-weighted gradient exposure
//! metric with its analytic derivative, and a set of exposure controllers —
//! the RoI-tracking momentum ascent controller plus three classical
//! baselines — together with the benchmark harness that compares them.
//!
//! Modules, roughly bottom-up:
//!
//! - [`imgproc`]: images, rectangles, Sobel gradients
//! - [`geom`]: intrinsics, poses, projection
//! - [`marker`]: fiducial rendering, detection, pose recovery
//! - [`camera`]: response functions, sensor noise, scenes, trajectories
//! - [`metric`]: the exposure metric and its exposure derivative
//! - [`controller`]: exposure controllers
//! - [`sim`]: closed-loop runs
//! - [`eval`]: run statistics
//! - [`config`], [`report`], [`cli`]: settings files, result files, and the
//!   command-line front end

pub mod camera;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod eval;
pub mod geom;
pub mod imgproc;
pub mod marker;
pub mod metric;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
