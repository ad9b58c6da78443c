//! Stationary workload of mixed polling systems with rerouting: a single
//! server travels a circle, customers arrive at atoms or anywhere along a
//! density, and each may be rerouted for up to `N` services.

pub mod analytic;
pub mod apps;
pub mod discretize;
pub mod error;
pub mod measure;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
