//! DC interference fringes of a weak injected field and its difference-frequency
//! partner, and the sinusoid fits used to read local-oscillator phases off them.
//!
//! A field injected at the idler frequency with phase `chi/2 - theta'` produces a
//! signal field with phase `chi/2 + theta'`. Scanning `theta'` therefore moves the
//! two fringes in opposite directions, and the difference of their fitted
//! phases equals the local-oscillator phase sum minus `chi`, independent of the
//! scan.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Wraps to `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockMode {
    /// Local oscillators set for maximal inter-beam correlation.
    Correlations,
    /// Both detection phases advanced by pi/2: the conjugate (anticorrelated) pair.
    Anticorrelations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionModel {
    pub chi: f64,
    /// Offset of the injected-field phase added to every scan value.
    pub theta_prime: f64,
    pub lock_mode: LockMode,
}

impl InjectionModel {
    /// `(signal, idler)` field phases for scan value `scan`.
    pub fn field_phases(&self, scan: f64) -> (f64, f64) {
        let t = self.theta_prime + scan;
        (0.5 * self.chi + t, 0.5 * self.chi - t)
    }

    /// Local-oscillator phases actually applied in this lock mode.
    pub fn applied_lo_phases(&self, lo_phases: (f64, f64)) -> (f64, f64) {
        match self.lock_mode {
            LockMode::Correlations => lo_phases,
            LockMode::Anticorrelations => (lo_phases.0 + FRAC_PI_2, lo_phases.1 + FRAC_PI_2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeTrace {
    pub scan: Vec<f64>,
    pub level: Vec<f64>,
    pub noise_level: f64,
}

impl FringeTrace {
    pub fn len(&self) -> usize {
        self.scan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scan.is_empty()
    }

    /// Sub-trace of samples `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FringeTrace {
        FringeTrace {
            scan: self.scan[range.clone()].to_vec(),
            level: self.level[range].to_vec(),
            noise_level: self.noise_level,
        }
    }
}

/// Unit-amplitude fringes `cos(theta_LO - field phase)` plus Gaussian noise of
/// standard deviation `noise_level`, one trace per arm.
pub fn dfg_fringes(
    m: &InjectionModel,
    scan: &[f64],
    lo_phases: (f64, f64),
    noise_level: f64,
    seed: u64,
) -> Result<(FringeTrace, FringeTrace)> {
    if scan.is_empty() {
        return Err(Error::Empty("fringe scan"));
    }
    if scan.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadGrid);
    }
    if !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "noise_level",
            value: noise_level,
            reason: "noise level must be non-negative",
        });
    }
    let (lo_plus, lo_minus) = m.applied_lo_phases(lo_phases);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut plus = Vec::with_capacity(scan.len());
    let mut minus = Vec::with_capacity(scan.len());
    for &x in scan {
        let (f_plus, f_minus) = m.field_phases(x);
        let (n_plus, n_minus) = if noise_level > 0.0 {
            (normal.sample(&mut rng), normal.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        plus.push((lo_plus - f_plus).cos() + noise_level * n_plus);
        minus.push((lo_minus - f_minus).cos() + noise_level * n_minus);
    }
    let trace = |level| FringeTrace {
        scan: scan.to_vec(),
        level,
        noise_level,
    };
    Ok((trace(plus), trace(minus)))
}

/// Least-squares fit `amplitude * sin(frequency * x + phase) + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub amplitude: f64,
    /// Wrapped to `(-pi, pi]`.
    pub phase: f64,
    pub offset: f64,
    /// Angular frequency per unit of scan coordinate.
    pub frequency: f64,
    pub residual_rms: f64,
    /// One-sigma phase uncertainty from the fit covariance.
    pub phase_stderr: f64,
}

const MIN_SAMPLES: usize = 8;
const MAX_ITERATIONS: usize = 200;

/// Linear least squares for `a sin(wx) + b cos(wx) + c` at fixed `w`.
fn linear_fit(x: &[f64], y: &[f64], w: f64) -> Option<([f64; 3], f64)> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (w * xi).sin_cos();
        let row = nalgebra::Vector3::new(s, c, 1.0);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let sol = ata.lu().solve(&aty)?;
    let rss = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let (s, c) = (w * xi).sin_cos();
            let r = yi - (sol[0] * s + sol[1] * c + sol[2]);
            r * r
        })
        .sum();
    Some(([sol[0], sol[1], sol[2]], rss))
}

pub fn fit_fringe(t: &FringeTrace) -> Result<FringeFit> {
    let n = t.scan.len();
    if n < MIN_SAMPLES || t.level.len() != n {
        return Err(Error::Empty("fringe trace needs at least 8 matching samples"));
    }
    if t.scan.iter().chain(&t.level).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "trace",
            value: f64::NAN,
            reason: "trace contains non-finite samples",
        });
    }
    if t.scan.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadGrid);
    }

    // Work in a centred coordinate for conditioning; the phase is shifted back
    // to the caller's origin at the end.
    let centre = t.scan.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = t.scan.iter().map(|v| v - centre).collect();
    let mean = t.level.iter().sum::<f64>() / n as f64;
    let y = &t.level;
    let scale = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(mean.abs());
    if scale == 0.0 {
        return Err(Error::NoFringe { amplitude: 0.0 });
    }

    // Dominant bin of the discrete spectrum, treating samples as evenly spaced.
    let span = t.scan[n - 1] - t.scan[0];
    let record = span * n as f64 / (n - 1) as f64;
    let bin = 2.0 * PI / record;
    let (mut best_k, mut best_power) = (0usize, 0.0f64);
    for k in 1..=n / 2 {
        let w = bin * k as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let (s, c) = (w * xi).sin_cos();
            re += (yi - mean) * c;
            im += (yi - mean) * s;
        }
        let power = re * re + im * im;
        if power > best_power {
            best_power = power;
            best_k = k;
        }
    }
    if best_k == 0 || best_power.sqrt() <= 1e-12 * scale * n as f64 {
        return Err(Error::NoFringe {
            amplitude: 2.0 * best_power.sqrt() / n as f64,
        });
    }

    // Refine on a fine frequency grid around that bin.
    let mut w = bin * best_k as f64;
    let mut best_rss = f64::INFINITY;
    for j in -40..=40 {
        let cand = bin * (best_k as f64 + j as f64 / 40.0);
        if cand <= 0.0 {
            continue;
        }
        if let Some((_, rss)) = linear_fit(&x, y, cand) {
            if rss < best_rss {
                best_rss = rss;
                w = cand;
            }
        }
    }
    let (lin, _) = linear_fit(&x, y, w).ok_or(Error::NoFringe { amplitude: 0.0 })?;

    // Levenberg-Marquardt on (a, b, c, w) for a sin(wx) + b cos(wx) + c.
    let mut p = Vector4::new(lin[0], lin[1], lin[2], w);
    let residuals = |p: &Vector4<f64>| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let (s, c) = (p[3] * xi).sin_cos();
                let r = yi - (p[0] * s + p[1] * c + p[2]);
                r * r
            })
            .sum()
    };
    let normal_equations = |p: &Vector4<f64>| {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let (s, c) = (p[3] * xi).sin_cos();
            let r = yi - (p[0] * s + p[1] * c + p[2]);
            let row = Vector4::new(s, c, 1.0, xi * (p[0] * c - p[1] * s));
            jtj += row * row.transpose();
            jtr += row * r;
        }
        (jtj, jtr)
    };

    let mut rss = residuals(&p);
    let mut damping = 1e-6;
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (jtj, jtr) = normal_equations(&p);
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += damping * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            damping *= 10.0;
            continue;
        };
        let trial = p + step;
        let trial_rss = residuals(&trial);
        let rel = step.norm() / p.norm().max(1e-300);
        if trial_rss <= rss {
            p = trial;
            last_step = rel;
            let improvement = rss - trial_rss;
            rss = trial_rss;
            damping = (damping * 0.3).max(1e-12);
            if rel < 1e-13 || improvement <= 1e-15 * rss.max(1e-300) && rel < 1e-9 || rss == 0.0 {
                converged = true;
                break;
            }
        } else {
            damping *= 10.0;
            if damping > 1e12 {
                // No descent direction left: already at the minimum to rounding.
                converged = rel < 1e-6;
                last_step = rel;
                break;
            }
        }
    }
    let rms = (rss / n as f64).sqrt();
    if !converged {
        return Err(Error::FitNotConverged {
            iterations: MAX_ITERATIONS,
            last_step,
            rms,
        });
    }

    let (mut a, b, mut frequency) = (p[0], p[1], p[3]);
    if frequency < 0.0 {
        // a sin(-wx) + b cos(-wx) = -a sin(wx) + b cos(wx)
        frequency = -frequency;
        a = -a;
    }
    let amplitude = a.hypot(b);
    if amplitude <= 1e-9 * scale {
        return Err(Error::NoFringe { amplitude });
    }
    let periods = frequency * record / (2.0 * PI);
    if periods < 3.0 {
        return Err(Error::InsufficientPeriods { periods });
    }

    // Phase covariance: theta = atan2(b, a) at the centred origin, then shifted.
    let (jtj, _) = normal_equations(&Vector4::new(a, b, p[2], frequency));
    let dof = (n as f64 - 4.0).max(1.0);
    let sigma2 = rss / dof;
    let phase_stderr = match jtj.try_inverse() {
        Some(cov) => {
            let g = Vector4::new(-b, a, 0.0, 0.0) / (amplitude * amplitude);
            let g_shift = Vector4::new(0.0, 0.0, 0.0, -centre);
            let grad = g + g_shift;
            (sigma2 * (grad.transpose() * cov * grad)[(0, 0)]).max(0.0).sqrt()
        }
        None => f64::INFINITY,
    };
    let phase = wrap_phase(b.atan2(a) - frequency * centre);
    Ok(FringeFit {
        amplitude,
        phase,
        offset: p[2],
        frequency,
        residual_rms: rms,
        phase_stderr,
    })
}

/// Fringe phases in both lock modes and the shift between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAudit {
    /// `phase(idler fit) - phase(signal fit)` locked for correlations; equals
    /// the LO phase sum minus `chi`.
    pub difference_correlations: f64,
    pub difference_anticorrelations: f64,
    /// `difference_anticorrelations - difference_correlations`, wrapped around pi.
    pub shift: f64,
    /// Propagated one-sigma uncertainty of `shift`.
    pub shift_stderr: f64,
}

/// Difference of fitted fringe phases, `phase(-) - phase(+)`, with its uncertainty.
pub fn fringe_phase_difference(plus: &FringeTrace, minus: &FringeTrace) -> Result<(f64, f64)> {
    let fp = fit_fringe(plus)?;
    let fm = fit_fringe(minus)?;
    Ok((
        wrap_phase(fm.phase - fp.phase),
        fp.phase_stderr.hypot(fm.phase_stderr),
    ))
}

/// Synthesizes both lock modes with the same LO setting and reports the shift of
/// the fitted phase difference. Ideally the shift is pi.
pub fn phase_audit(
    chi: f64,
    theta_prime: f64,
    scan: &[f64],
    lo_phases: (f64, f64),
    noise_level: f64,
    seed: u64,
) -> Result<PhaseAudit> {
    let corr = InjectionModel {
        chi,
        theta_prime,
        lock_mode: LockMode::Correlations,
    };
    let anti = InjectionModel {
        lock_mode: LockMode::Anticorrelations,
        ..corr
    };
    let (cp, cm) = dfg_fringes(&corr, scan, lo_phases, noise_level, seed)?;
    let (ap, am) = dfg_fringes(&anti, scan, lo_phases, noise_level, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
    let (dc, ec) = fringe_phase_difference(&cp, &cm)?;
    let (da, ea) = fringe_phase_difference(&ap, &am)?;
    Ok(PhaseAudit {
        difference_correlations: dc,
        difference_anticorrelations: da,
        shift: PI + wrap_phase(da - dc - PI),
        shift_stderr: ec.hypot(ea),
    })
}
