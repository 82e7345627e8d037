//! RSS-based visible light positioning with optimally calibrated LED tilt
//! and gain.
//!
//! The pipeline has two stages. Calibration ([`calibration`]) estimates each
//! ceiling LED's tilt direction and radiometric gain in closed form from
//! ground-plane RSS samples, along with the measurement-noise variance, and
//! plans where to put the samples (evenly on a circle of radius ~0.55 times
//! the LED height, which minimizes the estimator's summed MSE).
//! Localization ([`localization`]) then fixes a receiver on the ground from
//! one RSS reading per LED with a weighted least-squares solver whose
//! weights account for the residual calibration error, and evaluates the
//! Fisher-information error bound. A Gaussian-process comparator
//! ([`gp`]), a multilateration baseline, Monte Carlo verification harnesses
//! ([`simulation`]), and the file formats ([`io`]) round out the crate.
//!
//! All randomness flows through seeded, schedule-independent streams
//! ([`rng`]); simulations are bit-reproducible across runs and thread
//! counts.

pub mod calibration;
pub mod error;
pub mod gp;
pub mod io;
pub mod localization;
pub mod model;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use model::Vec3;
