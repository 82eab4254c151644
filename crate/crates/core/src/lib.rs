//! Quantum noise of a non-degenerate optical parametric oscillator below
//! threshold: closed-form and matrix-path output spectra, entanglement and EPR
//! figures of merit, a Langevin Monte-Carlo oracle, and the calibration
//! arithmetic connecting them to laboratory readings.

pub mod config;
pub mod error;
pub mod io;
pub mod lab;
pub mod langevin;
pub mod metrics;
pub mod params;
pub mod spectra;

pub use error::{Error, Result};
pub use metrics::{NoiseFigure, Reference};
pub use params::{derive_params, CavityGeometry, DerivedParams, DetectionChain, OpoParams};
pub use spectra::{combo_spectrum, optimal_psi, sweep, NoiseSpectrum, RotationAngle};
