//! Physical parameters of the oscillator and the dimensionless quantities
//! derived from them.
//!
//! Rates are amplitude decay rates. When they come from a cavity geometry the
//! convention is `gamma = pi * FWHM_Hz` (rad/s), with the power FWHM given by
//! `FWHM_Hz = total_round_trip_loss * FSR / (2 pi)`. Any consistent unit works
//! for the spectra since only ratios and `Omega / sqrt(gamma_+ gamma_-)` enter.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Rates and pump settings of the two resonant modes (`+` signal, `-` idler).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoParams {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub kappa_plus: f64,
    pub kappa_minus: f64,
    /// Pump amplitude as a fraction of the threshold amplitude.
    pub epsilon: f64,
    /// Pump phase (rad).
    pub chi: f64,
}

impl OpoParams {
    /// Equal rates for both modes.
    pub fn symmetric(gamma: f64, kappa: f64, epsilon: f64) -> Self {
        OpoParams {
            gamma_plus: gamma,
            gamma_minus: gamma,
            kappa_plus: kappa,
            kappa_minus: kappa,
            epsilon,
            chi: 0.0,
        }
    }

    /// Same parameters with an updated pump.
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        OpoParams { epsilon, ..self }
    }

    /// Exchanges the roles of signal and idler.
    pub fn swapped(self) -> Self {
        OpoParams {
            gamma_plus: self.gamma_minus,
            gamma_minus: self.gamma_plus,
            kappa_plus: self.kappa_minus,
            kappa_minus: self.kappa_plus,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_plus", self.gamma_plus), ("gamma_minus", self.gamma_minus)] {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: g,
                    reason: "decay rate must be positive and finite",
                });
            }
        }
        for (name, k, g) in [
            ("kappa_plus", self.kappa_plus, self.gamma_plus),
            ("kappa_minus", self.kappa_minus, self.gamma_minus),
        ] {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: k,
                    reason: "coupler rate must be non-negative",
                });
            }
            if k > g {
                return Err(Error::InvalidParameter {
                    name,
                    value: k,
                    reason: "coupler rate exceeds total decay rate",
                });
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "pump parameter must be non-negative",
            });
        }
        if self.epsilon >= 1.0 {
            return Err(Error::AboveThreshold {
                epsilon: self.epsilon,
                limit: 1.0,
            });
        }
        if !self.chi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "chi",
                value: self.chi,
                reason: "pump phase must be finite",
            });
        }
        Ok(())
    }

    /// Geometric mean decay rate `sqrt(gamma_+ gamma_-)`, the frequency unit of Delta.
    pub fn rate_scale(&self) -> f64 {
        (self.gamma_plus * self.gamma_minus).sqrt()
    }
}

/// Dimensionless quantities entering the closed-form spectra.
///
/// The efficiencies are escape efficiencies after [`derive_params`], and may be
/// replaced by overall detection efficiencies with
/// [`DerivedParams::with_efficiencies`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub epsilon: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    /// `sqrt(eta_+ eta_-)`
    pub eta: f64,
    /// `sqrt(eta_+ / eta_-)`
    pub sigma: f64,
    /// `sqrt(gamma_+ / gamma_-)`
    pub rho: f64,
    /// `(rho + 1/rho) / 2`
    pub lambda: f64,
    /// Effective pump `sqrt(epsilon^2 + lambda^2 - 1)`.
    pub e_eff: f64,
}

pub fn derive_params(p: &OpoParams) -> Result<DerivedParams> {
    p.validate()?;
    let rho = (p.gamma_plus / p.gamma_minus).sqrt();
    DerivedParams::from_efficiencies(
        p.epsilon,
        rho,
        p.kappa_plus / p.gamma_plus,
        p.kappa_minus / p.gamma_minus,
    )
}

impl DerivedParams {
    /// Builds the derived set directly from the pump, loss asymmetry and the
    /// two per-mode efficiencies.
    pub fn from_efficiencies(epsilon: f64, rho: f64, eta_plus: f64, eta_minus: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: epsilon,
                reason: "pump parameter must be non-negative",
            });
        }
        if epsilon >= 1.0 {
            return Err(Error::AboveThreshold { epsilon, limit: 1.0 });
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                value: rho,
                reason: "loss asymmetry must be positive",
            });
        }
        for (name, e) in [("eta_plus", eta_plus), ("eta_minus", eta_minus)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidParameter {
                    name,
                    value: e,
                    reason: "efficiency must lie in [0, 1]",
                });
            }
        }
        let eta = (eta_plus * eta_minus).sqrt();
        // sigma is undefined when either efficiency vanishes; the spectra only
        // ever use eta*sigma = eta_+ and eta/sigma = eta_-, so fall back to 1.
        let sigma = if eta_plus > 0.0 && eta_minus > 0.0 {
            (eta_plus / eta_minus).sqrt()
        } else {
            1.0
        };
        let lambda = 0.5 * (rho + 1.0 / rho);
        let e_eff = (epsilon * epsilon + lambda * lambda - 1.0).max(0.0).sqrt();
        Ok(DerivedParams {
            epsilon,
            eta_plus,
            eta_minus,
            eta,
            sigma,
            rho,
            lambda,
            e_eff,
        })
    }

    /// Builds the derived set from the generalized efficiency and its asymmetry.
    pub fn from_eta_sigma(epsilon: f64, rho: f64, eta: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: sigma,
                reason: "efficiency asymmetry must be positive",
            });
        }
        Self::from_efficiencies(epsilon, rho, eta * sigma, eta / sigma)
    }

    /// Replaces the escape efficiencies by overall detection efficiencies.
    pub fn with_efficiencies(self, xi_plus: f64, xi_minus: f64) -> Result<Self> {
        Self::from_efficiencies(self.epsilon, self.rho, xi_plus, xi_minus)
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::from_efficiencies(epsilon, self.rho, self.eta_plus, self.eta_minus)
    }

    /// Rates realizing this parameter set, with `gamma_- = gamma_minus` and
    /// the efficiencies treated as escape efficiencies (`kappa = eta * gamma`).
    pub fn to_opo_params(&self, gamma_minus: f64) -> OpoParams {
        let gamma_plus = self.rho * self.rho * gamma_minus;
        OpoParams {
            gamma_plus,
            gamma_minus,
            kappa_plus: self.eta_plus * gamma_plus,
            kappa_minus: self.eta_minus * gamma_minus,
            epsilon: self.epsilon,
            chi: 0.0,
        }
    }

    pub fn swapped(self) -> Self {
        Self::from_efficiencies(self.epsilon, 1.0 / self.rho, self.eta_minus, self.eta_plus)
            .expect("swapping labels preserves validity")
    }
}

/// Round-trip geometry of a ring cavity. Losses are power fractions per round trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    pub fsr_hz: f64,
    pub coupler_t: f64,
    pub residual_l: f64,
    pub pump_loss_lp: f64,
    /// Single-pass nonlinearity (W^-1). Only used for threshold arithmetic.
    pub e_nl_per_watt: f64,
}

impl CavityGeometry {
    pub fn total_loss(&self) -> f64 {
        self.coupler_t + self.residual_l + self.pump_loss_lp
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fsr_hz.is_finite() && self.fsr_hz > 0.0) {
            return Err(Error::InvalidParameter {
                name: "fsr_hz",
                value: self.fsr_hz,
                reason: "free spectral range must be positive",
            });
        }
        for (name, v) in [
            ("coupler_T", self.coupler_t),
            ("residual_L", self.residual_l),
            ("pump_loss_Lp", self.pump_loss_lp),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "loss must lie in [0, 1)",
                });
            }
        }
        if self.e_nl_per_watt < 0.0 || !self.e_nl_per_watt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "e_nl_per_watt",
                value: self.e_nl_per_watt,
                reason: "nonlinearity must be non-negative",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityRates {
    pub fwhm_hz: f64,
    /// Amplitude decay rate (rad/s).
    pub gamma: f64,
    /// Coupler share of `gamma` (rad/s).
    pub kappa: f64,
}

pub fn cavity_rates(g: &CavityGeometry) -> Result<CavityRates> {
    g.validate()?;
    let loss = g.total_loss();
    if loss <= 0.0 {
        return Err(Error::ZeroLoss);
    }
    let fwhm_hz = loss * g.fsr_hz / (2.0 * PI);
    let gamma = PI * fwhm_hz;
    Ok(CavityRates {
        fwhm_hz,
        gamma,
        kappa: gamma * g.coupler_t / loss,
    })
}

/// Per-arm photon survival budget from generation to detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionChain {
    pub escape: f64,
    pub prop: f64,
    /// Local-oscillator mode overlap (fringe visibility squared).
    pub lo_overlap: f64,
    pub qe: f64,
}

impl DetectionChain {
    pub fn lossless() -> Self {
        DetectionChain {
            escape: 1.0,
            prop: 1.0,
            lo_overlap: 1.0,
            qe: 1.0,
        }
    }
}

pub fn overall_efficiency(d: &DetectionChain) -> Result<f64> {
    for (name, v) in [
        ("escape", d.escape),
        ("prop", d.prop),
        ("lo_overlap", d.lo_overlap),
        ("qe", d.qe),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter {
                name,
                value: v,
                reason: "efficiency factor must lie in [0, 1]",
            });
        }
    }
    Ok(d.escape * d.prop * d.lo_overlap * d.qe)
}

/// An analysis frequency in absolute and normalized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPoint {
    pub omega: f64,
    pub delta: f64,
}

impl FrequencyPoint {
    pub fn from_delta(delta: f64, rate_scale: f64) -> Self {
        FrequencyPoint {
            omega: delta * rate_scale,
            delta,
        }
    }

    pub fn f_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

/// `Delta = 2 pi f / sqrt(gamma_+ gamma_-)`.
pub fn normalize_frequency(f_hz: f64, gamma_plus: f64, gamma_minus: f64) -> f64 {
    2.0 * PI * f_hz / (gamma_plus * gamma_minus).sqrt()
}

/// Pump in terms of power, for converting measured powers into `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpModel {
    /// Nonlinear coupling `g`, kept for the amplitude threshold only.
    pub coupling: f64,
    pub pump_power: f64,
    pub threshold_power: f64,
}

impl PumpModel {
    /// Threshold pump amplitude `sqrt(gamma_+ gamma_-) / g`.
    pub fn alpha_th(&self, gamma_plus: f64, gamma_minus: f64) -> f64 {
        (gamma_plus * gamma_minus).sqrt() / self.coupling
    }

    /// `epsilon = sqrt(P / P_th)`: epsilon is an amplitude ratio.
    pub fn epsilon(&self) -> Result<f64> {
        crate::lab::epsilon_from_powers(self.pump_power, self.threshold_power)
    }
}

pub fn db(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::NonPositiveRatio(ratio));
    }
    Ok(10.0 * ratio.log10())
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
