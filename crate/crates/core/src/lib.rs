//! Multi-model combination (MMC) for probabilistic wind power forecasting.
//!
//! A single forecasting model rarely dominates across wind farms and
//! look-ahead times, so this crate combines heterogeneous probabilistic
//! forecasters into one weighted predictive density:
//!
//! * [`sbl`] — a sparse Bayesian learning regressor yielding conditional
//!   Gaussian densities,
//! * [`ckde`] — a conditional kernel density estimator yielding Gaussian
//!   mixtures,
//! * [`bde`] — a Beta-distribution member whose expectation comes from a
//!   pluggable spot forecaster and whose variance is estimated jointly
//!   with the combination weights.
//!
//! The [`combine`] module estimates the member weights and the Beta
//! variance by expectation maximization on a held-out training partition
//! and optionally refines them by minimizing the training CRPS with a
//! seeded particle swarm. [`density`] is the shared currency: every
//! member maps a feature vector to a [`density::PredictiveDensity`],
//! and all downstream scoring ([`evaluate`]) works on that type alone.
//!
//! [`data`] handles ingestion of hourly wind-farm records, wind vector
//! transforms, lag-feature construction per forecast horizon, and the
//! chronological train/optimize/validate split. [`synth`] generates a
//! seeded synthetic dataset in the same format so that the full pipeline
//! runs without external data.

extern crate blas_src;

pub mod bde;
pub mod ckde;
pub mod combine;
pub mod data;
pub mod density;
pub mod error;
pub mod evaluate;
pub mod sbl;
pub mod synth;

pub use error::{Error, Result};

/// Anything that maps a (scaled) feature vector to a predictive density
/// supported on the unit interval.
///
/// Implemented by the three member models and by the combined model, so
/// evaluation code can score them uniformly.
pub trait DensityForecaster {
    fn predict_density(&self, features: &[f64]) -> Result<density::PredictiveDensity>;
}
