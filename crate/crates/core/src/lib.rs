//! Interacting-process model of operational losses.
//!
//! Losses of `N` processes evolve by a ramp-thresholded discrete-time rule
//! with lagged, asymmetric couplings and exponential noise. The crate
//! provides simulation, an exact stationary solution by activation-window
//! enumeration, censored maximum-likelihood estimation, cumulative-loss
//! forecasting with Gaussian VaR, and the file formats tying them together.

pub mod error;
pub mod gauss;
pub mod graph;
pub mod io;
pub mod model;
pub mod moments;
pub mod noise;
pub mod estimate;
pub mod exact;
pub mod forecast;
pub mod simulate;

pub use error::{Error, Result};
pub use graph::CouplingGraph;
pub use model::{validate_params, ModelParams, Rule, Trajectory, ValidationReport, Violation};
pub use noise::NoiseSource;
pub use simulate::{ensemble_z_moments, simulate, EnsembleMoments, HistoryWindow};
