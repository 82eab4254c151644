//! Shared fixtures for the criterion benchmarks.

use ndopo_core::params::{DerivedParams, OpoParams};

/// Entanglement configuration of the experiment in normalized units.
pub fn experiment_params() -> OpoParams {
    DerivedParams::from_eta_sigma(0.62, 1.0, 0.74, 0.98)
        .expect("valid parameters")
        .to_opo_params(1.0)
}
