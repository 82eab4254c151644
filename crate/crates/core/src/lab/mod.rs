//! Calibration arithmetic used to turn laboratory readings into model inputs,
//! plus the classical-injection phase bookkeeping in [`fringe`].

pub mod fringe;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::DerivedParams;
use crate::spectra::combo_spectrum;

pub use fringe::{
    dfg_fringes, fit_fringe, phase_audit, FringeFit, FringeTrace, InjectionModel, LockMode,
    PhaseAudit,
};

/// Pump power at oscillation threshold for a singly pumped ring cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdModel {
    pub coupler_t: f64,
    pub residual_l: f64,
    pub pump_loss_lp: f64,
    pub e_nl: f64,
    pub p_th: f64,
}

impl ThresholdModel {
    pub fn from_nonlinearity(coupler_t: f64, residual_l: f64, pump_loss_lp: f64, e_nl: f64) -> Result<Self> {
        Ok(ThresholdModel {
            coupler_t,
            residual_l,
            pump_loss_lp,
            e_nl,
            p_th: threshold_power(coupler_t, residual_l, pump_loss_lp, e_nl)?,
        })
    }

    pub fn from_threshold(p_th: f64, coupler_t: f64, residual_l: f64, pump_loss_lp: f64) -> Result<Self> {
        Ok(ThresholdModel {
            coupler_t,
            residual_l,
            pump_loss_lp,
            e_nl: e_nl_from_threshold(p_th, coupler_t, residual_l, pump_loss_lp)?,
            p_th,
        })
    }
}

fn total_loss(t: f64, l: f64, lp: f64) -> Result<f64> {
    for (name, v) in [("coupler_T", t), ("residual_L", l), ("pump_loss_Lp", lp)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter {
                name,
                value: v,
                reason: "loss must be non-negative",
            });
        }
    }
    let loss = t + l + lp;
    if loss <= 0.0 {
        return Err(Error::ZeroLoss);
    }
    Ok(loss)
}

/// `P_th = (T + L + L_P)^2 / (4 E_NL)`.
pub fn threshold_power(t: f64, l: f64, lp: f64, e_nl: f64) -> Result<f64> {
    let loss = total_loss(t, l, lp)?;
    if !(e_nl.is_finite() && e_nl > 0.0) {
        return Err(Error::InvalidParameter {
            name: "e_nl",
            value: e_nl,
            reason: "nonlinearity must be positive",
        });
    }
    Ok(loss * loss / (4.0 * e_nl))
}

pub fn e_nl_from_threshold(p_th: f64, t: f64, l: f64, lp: f64) -> Result<f64> {
    let loss = total_loss(t, l, lp)?;
    if !(p_th.is_finite() && p_th > 0.0) {
        return Err(Error::InvalidParameter {
            name: "p_th",
            value: p_th,
            reason: "threshold power must be positive",
        });
    }
    Ok(loss * loss / (4.0 * p_th))
}

/// Inverts the phase-sensitive gain `G = (1 - eps)^-2`.
pub fn pump_param_from_gain(gain: f64) -> Result<f64> {
    if !(gain.is_finite() && gain >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "gain",
            value: gain,
            reason: "phase-sensitive gain must be at least 1",
        });
    }
    Ok(1.0 - 1.0 / gain.sqrt())
}

/// `eps = sqrt(P / P_th)` for a pump below threshold.
pub fn epsilon_from_powers(p_pump: f64, p_th: f64) -> Result<f64> {
    if !(p_th.is_finite() && p_th > 0.0) {
        return Err(Error::InvalidParameter {
            name: "p_th",
            value: p_th,
            reason: "threshold power must be positive",
        });
    }
    if !(p_pump.is_finite() && p_pump >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "p_pump",
            value: p_pump,
            reason: "pump power must be non-negative",
        });
    }
    if p_pump >= p_th {
        return Err(Error::AboveThreshold {
            epsilon: (p_pump / p_th).sqrt(),
            limit: 1.0,
        });
    }
    Ok((p_pump / p_th).sqrt())
}

/// Full width (Hz) of the band where the `Q_-` noise reduction exceeds half its
/// zero-frequency value.
///
/// `rate_scale` is `sqrt(gamma_+ gamma_-)` in rad/s. The first crossing is
/// bracketed on a geometric scan and then bisected.
pub fn entanglement_bandwidth(d: &DerivedParams, psi: f64, rate_scale: f64) -> Result<f64> {
    if !(rate_scale.is_finite() && rate_scale > 0.0) {
        return Err(Error::InvalidParameter {
            name: "rate_scale",
            value: rate_scale,
            reason: "rate scale must be positive",
        });
    }
    let reduction = |delta: f64| combo_spectrum(d, psi, delta).map(|(_, v)| 1.0 - v);
    let r0 = reduction(0.0)?;
    if !(r0 > 0.0) {
        return Err(Error::NoSqueezing { reduction: r0 });
    }
    let target = 0.5 * r0;

    let mut lo = 0.0;
    let mut hi = 1e-3;
    while reduction(hi)? > target {
        lo = hi;
        hi *= 1.5;
        if hi > 1e9 {
            return Err(Error::NoSqueezing { reduction: r0 });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reduction(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta_half = 0.5 * (lo + hi);
    Ok(2.0 * delta_half * rate_scale / (2.0 * PI))
}
