//! Bearing remaining-useful-life prediction from vibration spectra, with
//! Weibull-informed loss functions and a reproducible random-search harness.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`weibull`]: distribution math and Weibayes characteristic-life estimation
//! - [`signal`]: detrend, Kaiser taper, FFT and max-per-bin spectral features
//! - [`dataset`]: run ingestion/synthesis, life-fraction labels, scaling, splits
//! - [`network`]: feed-forward regressor with dropout, backprop and ADAM
//! - [`losses`]: the nine traditional / Weibull / combined losses and gradients
//! - [`trainer`]: mini-batch training with early stopping, evaluation metrics
//! - [`search`]: random search, filtering, frequency ranking, statistics, reports

pub mod dataset;
pub mod error;
pub mod losses;
pub mod network;
pub mod search;
pub mod signal;
pub mod trainer;
pub mod weibull;

pub use error::{Error, Result};
