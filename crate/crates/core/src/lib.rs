//! Fingerprinting of categorical relations that survives correlation-aware
//! attacks, with matching attacks, defenses and evaluation metrics.

pub mod attacks;
pub mod bounds;
pub mod correlations;
pub mod defenses;
pub mod error;
pub mod experiment;
pub mod fingerprint;
pub mod metrics;
pub mod relation;
pub mod synth;
pub mod transport;

pub use error::{FpError, Result};
