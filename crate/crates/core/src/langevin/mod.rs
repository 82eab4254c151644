//! Time-domain stochastic oracle for the analytic spectra.
//!
//! The coupled quadrature equations are integrated with Euler-Maruyama; the
//! output field is formed from the coupler boundary condition reusing the
//! same-step input increment, and spectra are estimated with Welch averaging.
//! Each realization draws from its own stream of a counter-based generator, so
//! results do not depend on how realizations are scheduled across threads.

mod dump;
mod psd;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{derive_params, OpoParams};
use crate::spectra::{sweep, NoiseSpectrum};

pub use dump::{read_dump, write_dump, Dump, DumpHeader, DUMP_HEADER_LEN};
pub use psd::{
    compare_to_analytic, estimate_psd, ChannelComparison, ComparisonReport, PsdEstimate, Thresholds,
    WelchAccumulator, WelchConfig, Window, MIN_SEGMENTS,
};

/// Stream ids at and above this value are reserved for calibration runs.
const CALIBRATION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    /// Steps per realization, including the burn-in.
    pub n_steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub n_realizations: usize,
    /// Include the `-w_a / sqrt(dt)` input term in the output field. Turning it
    /// off is only useful as a negative control.
    pub feedthrough: bool,
}

impl SimConfig {
    /// Smallest admissible burn-in for `p`, with `record` retained steps.
    pub fn new(p: &OpoParams, dt: f64, record: usize, seed: u64, n_realizations: usize) -> Self {
        let burn_in = min_burn_in(p, dt);
        SimConfig {
            dt,
            n_steps: burn_in + record,
            burn_in,
            seed,
            n_realizations,
            feedthrough: true,
        }
    }

    pub fn record_len(&self) -> usize {
        self.n_steps.saturating_sub(self.burn_in)
    }

    pub fn validate(&self, p: &OpoParams) -> Result<()> {
        p.validate()?;
        let max_gamma = p.gamma_plus.max(p.gamma_minus);
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::SimConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > 0.01 / max_gamma * (1.0 + 1e-12) {
            return Err(Error::SimConfig(format!(
                "dt = {} exceeds 0.01 / max(gamma) = {}",
                self.dt,
                0.01 / max_gamma
            )));
        }
        let need = min_burn_in(p, self.dt);
        if self.burn_in < need {
            return Err(Error::SimConfig(format!(
                "burn_in = {} steps is shorter than 10 decay times ({need} steps)",
                self.burn_in
            )));
        }
        if self.n_steps <= self.burn_in {
            return Err(Error::SimConfig(format!(
                "n_steps = {} must exceed burn_in = {}",
                self.n_steps, self.burn_in
            )));
        }
        if self.n_realizations == 0 {
            return Err(Error::SimConfig("n_realizations must be at least 1".into()));
        }
        Ok(())
    }
}

fn min_burn_in(p: &OpoParams, dt: f64) -> usize {
    (10.0 / p.gamma_plus.min(p.gamma_minus) / dt).ceil() as usize
}

/// One integration step's worth of data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    /// Intracavity quadratures at the start of the step.
    pub q_intra: [f64; 2],
    pub q_out: [f64; 2],
    /// Unit-variance coupler-port increments used in this step.
    pub w_a: [f64; 2],
}

/// Sequential integrator for one realization.
#[derive(Debug, Clone)]
pub struct Stepper {
    q: [f64; 2],
    /// `1 + M dt`
    prop: [[f64; 2]; 2],
    drive_a: [f64; 2],
    drive_b: [f64; 2],
    out_gain: [f64; 2],
    feed: f64,
    rng: ChaCha8Rng,
}

impl Stepper {
    pub fn new(p: &OpoParams, cfg: &SimConfig, realization: u64) -> Result<Self> {
        cfg.validate(p)?;
        Ok(Self::new_unchecked(p, cfg, realization))
    }

    fn new_unchecked(p: &OpoParams, cfg: &SimConfig, stream: u64) -> Self {
        let dt = cfg.dt;
        let g = p.epsilon * p.rate_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let k = [p.kappa_plus, p.kappa_minus];
        let gamma = [p.gamma_plus, p.gamma_minus];
        Stepper {
            q: [0.0; 2],
            prop: [[1.0 - gamma[0] * dt, g * dt], [g * dt, 1.0 - gamma[1] * dt]],
            drive_a: [(2.0 * k[0] * dt).sqrt(), (2.0 * k[1] * dt).sqrt()],
            drive_b: [
                (2.0 * (gamma[0] - k[0]) * dt).sqrt(),
                (2.0 * (gamma[1] - k[1]) * dt).sqrt(),
            ],
            out_gain: [(2.0 * k[0]).sqrt(), (2.0 * k[1]).sqrt()],
            feed: if cfg.feedthrough { 1.0 / dt.sqrt() } else { 0.0 },
            rng,
        }
    }

    #[inline]
    pub fn step(&mut self) -> StepSample {
        let wa: [f64; 2] = [StandardNormal.sample(&mut self.rng), StandardNormal.sample(&mut self.rng)];
        let wb: [f64; 2] = [StandardNormal.sample(&mut self.rng), StandardNormal.sample(&mut self.rng)];
        let q = self.q;
        let q_out = [
            self.out_gain[0] * q[0] - self.feed * wa[0],
            self.out_gain[1] * q[1] - self.feed * wa[1],
        ];
        let m = &self.prop;
        self.q = [
            m[0][0] * q[0] + m[0][1] * q[1] + self.drive_a[0] * wa[0] + self.drive_b[0] * wb[0],
            m[1][0] * q[0] + m[1][1] * q[1] + self.drive_a[1] * wa[1] + self.drive_b[1] * wb[1],
        ];
        StepSample { q_intra: q, q_out, w_a: wa }
    }
}

/// Recorded samples of one realization after burn-in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeriesBundle {
    pub q_intra: Vec<[f64; 2]>,
    pub q_out: Vec<[f64; 2]>,
    pub noise_in: Vec<[f64; 2]>,
    pub dt: f64,
}

impl TimeSeriesBundle {
    pub fn len(&self) -> usize {
        self.q_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_out.is_empty()
    }
}

/// Realization 0 of `cfg`; see [`simulate_realization`].
pub fn simulate(p: &OpoParams, cfg: &SimConfig) -> Result<TimeSeriesBundle> {
    simulate_realization(p, cfg, 0)
}

/// Stores every post-burn-in sample. Long spectral runs should stream through
/// [`oracle_psd`] instead.
pub fn simulate_realization(p: &OpoParams, cfg: &SimConfig, realization: u64) -> Result<TimeSeriesBundle> {
    let mut stepper = Stepper::new(p, cfg, realization)?;
    for _ in 0..cfg.burn_in {
        stepper.step();
    }
    let n = cfg.record_len();
    let mut b = TimeSeriesBundle {
        q_intra: Vec::with_capacity(n),
        q_out: Vec::with_capacity(n),
        noise_in: Vec::with_capacity(n),
        dt: cfg.dt,
    };
    for _ in 0..n {
        let s = stepper.step();
        if !(s.q_intra.iter().chain(&s.q_out).all(|v| v.is_finite())) {
            return Err(Error::Divergence {
                value: s.q_intra[0].abs().max(s.q_intra[1].abs()),
                limit: f64::MAX,
            });
        }
        b.q_intra.push(s.q_intra);
        b.q_out.push(s.q_out);
        b.noise_in.push(s.w_a);
    }
    Ok(b)
}

#[inline]
fn rotate(q: [f64; 2], c: f64, s: f64) -> [f64; 2] {
    [c * q[0] + s * q[1], -s * q[0] + c * q[1]]
}

/// `Q_+ = cos(psi) q_+ + sin(psi) q_-`, `Q_- = -sin(psi) q_+ + cos(psi) q_-`.
pub fn rotate_outputs(b: &TimeSeriesBundle, psi: f64) -> Vec<[f64; 2]> {
    let (s, c) = psi.sin_cos();
    b.q_out.iter().map(|&q| rotate(q, c, s)).collect()
}

/// Sample mean of `x` and its standard error from `n_batches` contiguous batch means.
pub fn batch_mean(x: &[f64], n_batches: usize) -> Result<(f64, f64)> {
    if n_batches < 2 || x.len() < n_batches {
        return Err(Error::Empty("batch_mean needs at least two non-empty batches"));
    }
    let len = x.len() / n_batches;
    let means: Vec<f64> = x
        .chunks_exact(len)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((mean, (var / n_batches as f64).sqrt()))
}

fn accumulate_stream(
    p: &OpoParams,
    cfg: &SimConfig,
    welch: &WelchConfig,
    psi: f64,
    stream: u64,
) -> Result<WelchAccumulator> {
    let mut stepper = Stepper::new_unchecked(p, cfg, stream);
    for _ in 0..cfg.burn_in {
        stepper.step();
    }
    let (s, c) = psi.sin_cos();
    let mut acc = WelchAccumulator::new(welch, cfg.dt)?;
    for _ in 0..cfg.record_len() {
        acc.push(rotate(stepper.step().q_out, c, s));
    }
    Ok(acc)
}

/// Uncalibrated Welch estimate over all realizations, streamed so memory does
/// not grow with run length. Realizations run in parallel and are merged in
/// index order, so the result is independent of the thread count.
fn streamed_psd(p: &OpoParams, cfg: &SimConfig, welch: &WelchConfig, psi: f64, first_stream: u64) -> Result<PsdEstimate> {
    cfg.validate(p)?;
    let parts = (0..cfg.n_realizations as u64)
        .into_par_iter()
        .map(|r| accumulate_stream(p, cfg, welch, psi, first_stream + r))
        .collect::<Result<Vec<_>>>()?;
    let mut it = parts.into_iter();
    let mut total = it.next().expect("at least one realization");
    for part in it {
        total.merge(&part)?;
    }
    let mut est = total.finish(p.rate_scale())?;
    est.psi = psi;
    Ok(est)
}

/// SQL level of the estimator: mean raw density of an `epsilon = 0` run with the
/// same rates and settings, over `0 <= Delta <= max_delta`, on calibration streams.
pub fn calibration_level(p: &OpoParams, cfg: &SimConfig, welch: &WelchConfig, max_delta: f64) -> Result<f64> {
    let vacuum = p.with_epsilon(0.0);
    let cal_cfg = SimConfig {
        feedthrough: true,
        ..*cfg
    };
    let raw = streamed_psd(&vacuum, &cal_cfg, welch, 0.0, CALIBRATION_STREAM)?.band(max_delta)?;
    let n = raw.len() as f64;
    Ok((raw.v_plus.iter().sum::<f64>() + raw.v_minus.iter().sum::<f64>()) / (2.0 * n))
}

/// Calibrated output spectra of `Q_+` and `Q_-` for `0 <= Delta <= max_delta`.
pub fn oracle_psd(p: &OpoParams, cfg: &SimConfig, welch: &WelchConfig, psi: f64, max_delta: f64) -> Result<PsdEstimate> {
    let cal = calibration_level(p, cfg, welch, max_delta)?;
    let raw = streamed_psd(p, cfg, welch, psi, 0)?.band(max_delta)?;
    raw.calibrated(cal)
}

/// Analytic spectra on the grid of `psd`, for the escape efficiencies of `p`.
pub fn analytic_on_grid(p: &OpoParams, psd: &PsdEstimate) -> Result<NoiseSpectrum> {
    sweep(&derive_params(p)?, psd.psi, &psd.delta, p.rate_scale())
}

/// Everything produced by one oracle run.
#[derive(Debug, Clone)]
pub struct Validation {
    pub psd: PsdEstimate,
    pub analytic: NoiseSpectrum,
    pub report: ComparisonReport,
}

/// Full Monte-Carlo check of the analytic spectra at rotation `psi`.
pub fn validate_against_analytic(
    p: &OpoParams,
    cfg: &SimConfig,
    welch: &WelchConfig,
    psi: f64,
    max_delta: f64,
    thresholds: &Thresholds,
) -> Result<Validation> {
    let psd = oracle_psd(p, cfg, welch, psi, max_delta)?;
    let analytic = analytic_on_grid(p, &psd)?;
    let report = compare_to_analytic(&psd, &analytic, thresholds)?;
    Ok(Validation { psd, analytic, report })
}
