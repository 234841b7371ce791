//! Supply chain twin toolkit.
//!
//! A three-echelon make-to-order flow line is simulated under disruption
//! scenarios; the resulting daily feature series feed a hybrid disruption
//! detector (autoencoder reconstruction error, its first principal component
//! and a one-class SVM), an LSTM classifier that names the disrupted echelon,
//! and per-scenario LSTM regressors that predict time to recovery.

pub mod data;
pub mod detect;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sequence;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
