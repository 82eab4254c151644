//! Output noise spectra of the two modes and of their rotated combinations.
//!
//! Two independent routes are provided: closed forms in the dimensionless
//! parameters ([`combo_spectrum`] and friends) and the linear input-output
//! solution built from 2x2 complex transfer matrices ([`spectrum_via_matrices`]).
//! All values are ratios to the standard quantum limit of the chosen
//! combination; the SQL level itself is carried as a [`Reference`] tag.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::Reference;
use crate::params::{db, DerivedParams, OpoParams};

/// Spectra refuse pump parameters at or above this value.
pub const EPSILON_GUARD: f64 = 0.999;

/// Values above this are reported as [`Error::Divergence`].
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Mixing angle of the signal/idler quadratures, kept in `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn new(psi: f64) -> Self {
        RotationAngle(canonical_angle(psi))
    }

    pub fn single_beam() -> Self {
        RotationAngle(0.0)
    }

    pub fn balanced() -> Self {
        RotationAngle(FRAC_PI_4)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn reference(self) -> Reference {
        if self.0 == 0.0 {
            Reference::SingleSql
        } else {
            Reference::TwoSql
        }
    }
}

fn canonical_angle(psi: f64) -> f64 {
    let mut a = psi.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Interacting quadrature phases for a detection phase offset `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub theta: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
}

impl PhaseConfig {
    pub fn new(chi: f64, theta: f64) -> Self {
        PhaseConfig {
            theta,
            phi_plus: 0.5 * chi + theta,
            phi_minus: 0.5 * chi - theta,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= EPSILON_GUARD {
        return Err(Error::AboveThreshold {
            epsilon,
            limit: EPSILON_GUARD,
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "pump parameter must be non-negative",
        });
    }
    Ok(())
}

fn check_finite(v: f64) -> Result<f64> {
    if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            value: v,
            limit: DIVERGENCE_LIMIT,
        });
    }
    Ok(v)
}

fn denominator(d: &DerivedParams, delta: f64) -> f64 {
    let d2 = delta * delta;
    (d2 + (d.e_eff + d.lambda).powi(2)) * (d2 + (d.e_eff - d.lambda).powi(2))
}

/// Single-beam spectra of signal and idler (SQL = 1).
pub fn single_beam_spectrum(d: &DerivedParams, delta: f64) -> Result<(f64, f64)> {
    check_epsilon(d.epsilon)?;
    let excess = 8.0 * d.epsilon * d.epsilon / denominator(d, delta);
    Ok((
        check_finite(1.0 + d.eta_plus * excess)?,
        check_finite(1.0 + d.eta_minus * excess)?,
    ))
}

/// Spectra of `Q_+` and `Q_-` for mixing angle `psi`, as ratios to the SQL of
/// that combination.
pub fn combo_spectrum(d: &DerivedParams, psi: f64, delta: f64) -> Result<(f64, f64)> {
    check_epsilon(d.epsilon)?;
    let eps = d.epsilon;
    let (s, c) = psi.sin_cos();
    let (s2, c2) = (s * s, c * c);
    // 4 eps eta * 2 eps sigma^{+-1} == 8 eps^2 eta_{+-}
    let cross = 4.0 * eps * d.eta * (delta * delta + 1.0 + eps * eps) * (2.0 * psi).sin();
    let den = denominator(d, delta);
    let v_plus = 1.0 + (8.0 * eps * eps * (d.eta_plus * c2 + d.eta_minus * s2) + cross) / den;
    let v_minus = 1.0 + (8.0 * eps * eps * (d.eta_plus * s2 + d.eta_minus * c2) - cross) / den;
    Ok((check_finite(v_plus)?, check_finite(v_minus)?))
}

/// Balanced sum/difference spectra for equal losses and efficiencies.
pub fn symmetric_spectrum(eta: f64, epsilon: f64, delta: f64) -> Result<(f64, f64)> {
    check_epsilon(epsilon)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter {
            name: "eta",
            value: eta,
            reason: "efficiency must lie in [0, 1]",
        });
    }
    let d2 = delta * delta;
    let v_plus = 1.0 + eta * 4.0 * epsilon / (d2 + (epsilon - 1.0).powi(2));
    let v_minus = 1.0 - eta * 4.0 * epsilon / (d2 + (epsilon + 1.0).powi(2));
    Ok((check_finite(v_plus)?, check_finite(v_minus)?))
}

/// Mixing angle minimizing the `Q_-` spectrum at `delta0`.
///
/// Both roots of `tan 2psi = (delta0^2 + 1 + eps^2) / ((sigma - 1/sigma) eps)`
/// in `(-pi/2, pi/2]` are evaluated and the one giving the smaller `Q_-`
/// noise is kept. The other root, [`mirror_branch`] of the result, makes `Q_+`
/// the quiet channel with the same noise level.
pub fn optimal_psi(delta0: f64, epsilon: f64, sigma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "pump parameter must lie in [0, 1)",
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            reason: "efficiency asymmetry must be positive",
        });
    }
    if !(delta0.is_finite() && delta0 >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta0",
            value: delta0,
            reason: "optimization frequency must be non-negative",
        });
    }
    let skew = (sigma - 1.0 / sigma) * epsilon;
    if skew == 0.0 {
        return Ok(FRAC_PI_4);
    }
    let b = delta0 * delta0 + 1.0 + epsilon * epsilon;
    let first = 0.5 * (b / skew).atan();
    let second = canonical_angle(first + FRAC_PI_2);
    // psi-dependent part of the Q_- numerator; eta, rho and the denominator
    // only rescale it.
    let quiet = |psi: f64| {
        let (s, c) = psi.sin_cos();
        2.0 * epsilon * (sigma * s * s + c * c / sigma) - b * (2.0 * psi).sin()
    };
    Ok(if quiet(first) <= quiet(second) {
        first
    } else {
        second
    })
}

/// The other root of the optimal-angle equation; swaps which output is quiet.
pub fn mirror_branch(psi: f64) -> f64 {
    canonical_angle(psi - FRAC_PI_2)
}

/// Minimal dense 2x2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub fn identity() -> Self {
        Self::diag(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))
    }

    pub fn diag(a: Complex64, b: Complex64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Mat2([[a, z], [z, b]])
    }

    pub fn real(m: [[f64; 2]; 2]) -> Self {
        Mat2(m.map(|row| row.map(|x| Complex64::new(x, 0.0))))
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn conj(&self) -> Self {
        Mat2(self.0.map(|row| row.map(|x| x.conj())))
    }

    pub fn adjoint(&self) -> Self {
        self.transpose().conj()
    }

    pub fn det(&self) -> Complex64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Closed-form inverse; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        let m = self.0;
        let r = det.inv();
        Some(Mat2([
            [m[1][1] * r, -m[0][1] * r],
            [-m[1][0] * r, m[0][0] * r],
        ]))
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        worst
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let (a, b) = (self.0, rhs.0);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] -= rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

/// Input-output transfer of the two output quadratures at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrices {
    pub omega: f64,
    /// Coupler vacuum input to output.
    pub t_in: Mat2,
    /// Residual-loss vacuum input to output.
    pub t_loss: Mat2,
}

pub fn transfer_matrices(p: &OpoParams, omega: f64) -> Result<TransferMatrices> {
    p.validate()?;
    let coupling = p.epsilon * p.rate_scale();
    let drift = Mat2([
        [Complex64::new(p.gamma_plus, -omega), Complex64::new(-coupling, 0.0)],
        [Complex64::new(-coupling, 0.0), Complex64::new(p.gamma_minus, -omega)],
    ]);
    let drift_inv = drift.inverse().ok_or(Error::Singular { omega })?;
    let a = Mat2::diag(
        Complex64::new((2.0 * p.kappa_plus).sqrt(), 0.0),
        Complex64::new((2.0 * p.kappa_minus).sqrt(), 0.0),
    );
    let b = Mat2::diag(
        Complex64::new((2.0 * (p.gamma_plus - p.kappa_plus)).sqrt(), 0.0),
        Complex64::new((2.0 * (p.gamma_minus - p.kappa_minus)).sqrt(), 0.0),
    );
    Ok(TransferMatrices {
        omega,
        t_in: a * drift_inv * a - Mat2::identity(),
        t_loss: a * drift_inv * b,
    })
}

/// Quadrature rotation `U(psi)`: `Q_+ = cos q_+ + sin q_-`, `Q_- = -sin q_+ + cos q_-`.
pub fn rotation(psi: f64) -> Mat2 {
    let (s, c) = psi.sin_cos();
    Mat2::real([[c, s], [-s, c]])
}

/// Spectral matrix of `(Q_+, Q_-)` at angular frequency `omega`, for unit
/// vacuum input spectra.
pub fn spectrum_via_matrices(p: &OpoParams, psi: f64, omega: f64) -> Result<Mat2> {
    let t = transfer_matrices(p, omega)?;
    let u = rotation(psi);
    let m_in = u * t.t_in * u.transpose();
    let m_loss = u * t.t_loss * u.transpose();
    Ok(m_in.conj() * m_in.transpose() + m_loss.conj() * m_loss.transpose())
}

/// Squeezed and anti-squeezed spectra of the degenerate mode (SQL = 1).
pub fn degenerate_squeezing(xi: f64, epsilon: f64, delta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidParameter {
            name: "xi",
            value: xi,
            reason: "efficiency must lie in [0, 1]",
        });
    }
    check_epsilon(epsilon)?;
    let d2 = delta * delta;
    let squeezed = 1.0 - xi * 4.0 * epsilon / (d2 + (1.0 + epsilon).powi(2));
    let anti = 1.0 + xi * 4.0 * epsilon / (d2 + (1.0 - epsilon).powi(2));
    Ok((check_finite(squeezed)?, check_finite(anti)?))
}

/// SQL-normalized spectra of `Q_+` and `Q_-` over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    pub delta: Vec<f64>,
    pub f_hz: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub reference: Reference,
    pub psi: f64,
}

impl NoiseSpectrum {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn v_plus_db(&self) -> Vec<f64> {
        self.v_plus.iter().map(|&v| db(v).unwrap_or(f64::NAN)).collect()
    }

    pub fn v_minus_db(&self) -> Vec<f64> {
        self.v_minus.iter().map(|&v| db(v).unwrap_or(f64::NAN)).collect()
    }

    /// Index and value of the lowest point of the `Q_-` spectrum.
    pub fn quiet_minimum(&self) -> Option<(usize, f64)> {
        self.v_minus
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Evaluates [`combo_spectrum`] on a strictly increasing grid of Delta values.
///
/// `rate_scale` is `sqrt(gamma_+ gamma_-)` in rad/s; it only fills the `f_hz`
/// column. Points are evaluated in parallel; each is independent, so the result
/// equals sequential evaluation bit for bit.
pub fn sweep(d: &DerivedParams, psi: f64, grid: &[f64], rate_scale: f64) -> Result<NoiseSpectrum> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::BadGrid);
    }
    let angle = RotationAngle::new(psi);
    let values = grid
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| combo_spectrum(d, angle.radians(), delta).map_err(|e| Error::at(i, e)))
        .collect::<Result<Vec<_>>>()?;
    let (v_plus, v_minus) = values.into_iter().unzip();
    Ok(NoiseSpectrum {
        delta: grid.to_vec(),
        f_hz: grid.iter().map(|x| x * rate_scale / (2.0 * PI)).collect(),
        v_plus,
        v_minus,
        reference: angle.reference(),
        psi: angle.radians(),
    })
}

/// Evenly spaced grid `[min, max]` with `n` points.
pub fn linear_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !(min.is_finite() && max.is_finite()) || (n > 1 && !(max > min)) {
        return Err(Error::BadGrid);
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let step = (max - min) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { max } else { min + step * i as f64 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn experiment_entanglement() -> DerivedParams {
        DerivedParams::from_eta_sigma(0.62, 1.0, 0.74, 0.98).unwrap()
    }

    /// Delta of the 1.15 MHz analysis frequency in the 8.48 MHz cavity.
    const EXPERIMENT_DELTA: f64 = 0.271_233_599_972_091_76;

    #[test]
    fn single_beam_values() {
        let vac = DerivedParams::from_efficiencies(0.0, 1.0, 0.8, 0.6).unwrap();
        assert_eq!(single_beam_spectrum(&vac, 0.7).unwrap(), (1.0, 1.0));
        let d = DerivedParams::from_efficiencies(0.5, 1.0, 1.0, 1.0).unwrap();
        let (p, m) = single_beam_spectrum(&d, 0.0).unwrap();
        assert_relative_eq!(p, 1.0 + 2.0 / 0.5625, epsilon = 1e-14);
        assert_eq!(p, m);
        let (far, _) = single_beam_spectrum(&d, 1e4).unwrap();
        assert!(far > 1.0 && far - 1.0 < 1e-14);
    }

    #[test]
    fn single_beam_is_zero_angle_combo() {
        let d = DerivedParams::from_efficiencies(0.7, 1.7, 0.8, 0.4).unwrap();
        for delta in [0.0, 0.3, 2.0] {
            let a = single_beam_spectrum(&d, delta).unwrap();
            let b = combo_spectrum(&d, 0.0, delta).unwrap();
            assert_relative_eq!(a.0, b.0, max_relative = 1e-15);
            assert_relative_eq!(a.1, b.1, max_relative = 1e-15);
        }
    }

    #[test]
    fn near_threshold_perfect_correlation() {
        let d = DerivedParams::from_efficiencies(0.998, 1.0, 1.0, 1.0).unwrap();
        let (_, quiet) = combo_spectrum(&d, FRAC_PI_4, 0.0).unwrap();
        assert!(quiet < 2e-6);
        let d = DerivedParams::from_efficiencies(0.9989, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            combo_spectrum(&d, FRAC_PI_4, 0.0),
            Err(Error::Divergence { .. })
        ));
        assert!(matches!(
            symmetric_spectrum(1.0, 0.9995, 0.0),
            Err(Error::AboveThreshold { .. })
        ));
    }

    #[test]
    fn experiment_inter_beam_correlations() {
        let d = experiment_entanglement();
        let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
        let (_, quiet) = combo_spectrum(&d, psi0, EXPERIMENT_DELTA).unwrap();
        // mpmath evaluation of the closed form
        assert_relative_eq!(quiet, 0.319_904_229_713_746_2, max_relative = 1e-12);
        assert!((db(quiet).unwrap() + 4.9).abs() < 0.15);
    }

    #[test]
    fn balanced_symmetric_matches_reference_formula() {
        for eta in [0.3, 0.74, 1.0] {
            for eps in [0.0, 0.1, 0.62, 0.95] {
                for delta in [0.0, 0.271, 1.0, 5.0] {
                    let d = DerivedParams::from_efficiencies(eps, 1.0, eta, eta).unwrap();
                    let a = combo_spectrum(&d, FRAC_PI_4, delta).unwrap();
                    let b = symmetric_spectrum(eta, eps, delta).unwrap();
                    // near threshold the quiet value is a difference of O(1) terms
                    assert_relative_eq!(a.0, b.0, epsilon = 1e-13, max_relative = 1e-13);
                    assert_relative_eq!(a.1, b.1, epsilon = 1e-13, max_relative = 1e-13);
                }
            }
        }
    }

    #[test]
    fn symmetric_values() {
        let (p, m) = symmetric_spectrum(1.0, 0.998, 0.0).unwrap();
        assert!(m < 2e-6 && p > 1e5);
        let (_, m) = symmetric_spectrum(0.74, 0.62, EXPERIMENT_DELTA).unwrap();
        assert_relative_eq!(m, 0.319_784_286_781_939_9, max_relative = 1e-12);
        assert!((db(m).unwrap() + 4.95).abs() < 0.01);
    }

    #[test]
    fn optimal_angle_cases() {
        for eps in [0.0, 0.2, 0.9] {
            assert_eq!(optimal_psi(0.4, eps, 1.0).unwrap(), FRAC_PI_4);
        }
        assert_eq!(optimal_psi(0.0, 0.0, 0.5).unwrap(), FRAC_PI_4);

        let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
        assert_relative_eq!(psi0 - FRAC_PI_4, 0.009_047_358_741_590_87, epsilon = 1e-12);
        let mirrored = mirror_branch(psi0);
        assert!(((mirrored.abs()) - (FRAC_PI_4 - 0.009)).abs() < 0.001);
        assert!(mirrored < 0.0);

        let d = experiment_entanglement();
        let a = combo_spectrum(&d, psi0, 0.3).unwrap();
        let b = combo_spectrum(&d, mirrored, 0.3).unwrap();
        assert_relative_eq!(a.1, b.0, max_relative = 1e-12);
        assert_relative_eq!(a.0, b.1, max_relative = 1e-12);
    }

    #[test]
    fn optimal_angle_beats_dense_scan() {
        for (delta0, eps, sigma) in [(0.0, 0.62, 0.98), (0.0, 0.5, 0.6), (1.3, 0.8, 1.7), (0.2, 0.3, 1.02)] {
            let d = DerivedParams::from_eta_sigma(eps, 1.0, 0.5, sigma).unwrap();
            let psi0 = optimal_psi(delta0, eps, sigma).unwrap();
            let best = combo_spectrum(&d, psi0, delta0).unwrap().1;
            for k in 0..10_000 {
                let psi = -FRAC_PI_2 + PI * (k as f64 + 0.5) / 10_000.0;
                let v = combo_spectrum(&d, psi, delta0).unwrap().1;
                assert!(best <= v + 1e-14, "psi={psi} v={v} best={best}");
            }
        }
    }

    #[test]
    fn passive_cavity_transfer() {
        let p = OpoParams::symmetric(2.0, 2.0, 0.0);
        let t = transfer_matrices(&p, 0.0).unwrap();
        assert!(t.t_in.max_abs_diff(&Mat2::identity()) < 1e-15);
        assert!(t.t_loss.max_abs_diff(&Mat2::real([[0.0; 2]; 2])) < 1e-15);

        let lossy = OpoParams {
            gamma_plus: 1.3,
            gamma_minus: 0.7,
            kappa_plus: 0.9,
            kappa_minus: 0.2,
            epsilon: 0.0,
            chi: 0.0,
        };
        for omega in [0.0, 0.5, 3.0, 40.0] {
            let t = transfer_matrices(&lossy, omega).unwrap();
            assert_eq!(t.t_in.0[0][1], Complex64::new(0.0, 0.0));
            assert_eq!(t.t_loss.0[1][0], Complex64::new(0.0, 0.0));
            let total = t.t_in * t.t_in.adjoint() + t.t_loss * t.t_loss.adjoint();
            assert!(total.max_abs_diff(&Mat2::identity()) < 1e-12);
        }
    }

    #[test]
    fn matrix_path_vacuum_and_symmetric() {
        let vac = OpoParams::symmetric(1.0, 0.6, 0.0);
        let s = spectrum_via_matrices(&vac, 0.3, 1.1).unwrap();
        assert!(s.max_abs_diff(&Mat2::identity()) < 1e-12);

        let p = OpoParams::symmetric(1.0, 0.8, 0.5);
        for delta in [0.0, 0.7, 4.0] {
            let s = spectrum_via_matrices(&p, FRAC_PI_4, delta).unwrap();
            let (vp, vm) = symmetric_spectrum(0.8, 0.5, delta).unwrap();
            assert_relative_eq!(s.0[0][0].re, vp, max_relative = 1e-10);
            assert_relative_eq!(s.0[1][1].re, vm, max_relative = 1e-10);
            assert!(s.0[0][0].im.abs() < 1e-14);
            assert!((s.0[0][1] - s.0[1][0].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn matrix_path_experiment_configuration() {
        let d = experiment_entanglement();
        let p = d.to_opo_params(1.0);
        let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
        let s = spectrum_via_matrices(&p, psi0, EXPERIMENT_DELTA).unwrap();
        assert!((db(s.0[1][1].re).unwrap() + 4.9).abs() < 0.15);
    }

    #[test]
    fn degenerate_mode() {
        let (sq, _) = degenerate_squeezing(0.76, 0.62, EXPERIMENT_DELTA).unwrap();
        assert_relative_eq!(sq, 0.301_400_078_316_586_9, max_relative = 1e-12);
        assert!((db(sq).unwrap() + 5.2).abs() < 0.1);
        assert_eq!(degenerate_squeezing(0.5, 0.0, 1.0).unwrap(), (1.0, 1.0));
        assert!(degenerate_squeezing(1.0, 0.998, 0.0).unwrap().0 < 1e-5);
        assert!(degenerate_squeezing(1.2, 0.5, 0.0).is_err());
    }

    #[test]
    fn degenerate_mode_matches_matrix_path() {
        for (xi, eps, delta) in [(0.76, 0.62, 0.271), (1.0, 0.3, 0.0), (0.5, 0.9, 2.0)] {
            let p = OpoParams::symmetric(1.0, xi, eps);
            let s = spectrum_via_matrices(&p, FRAC_PI_4, delta).unwrap();
            let (sq, anti) = degenerate_squeezing(xi, eps, delta).unwrap();
            assert_relative_eq!(s.0[1][1].re, sq, max_relative = 1e-10);
            assert_relative_eq!(s.0[0][0].re, anti, max_relative = 1e-10);
        }
    }

    #[test]
    fn sweep_vacuum_and_errors() {
        let d = DerivedParams::from_efficiencies(0.0, 1.0, 1.0, 1.0).unwrap();
        let s = sweep(&d, FRAC_PI_4, &[0.0, 0.5, 1.0], 1.0).unwrap();
        assert!(s.v_plus.iter().chain(&s.v_minus).all(|&v| v == 1.0));
        assert_eq!(s.reference, Reference::TwoSql);
        assert_eq!(sweep(&d, 0.0, &[0.0], 1.0).unwrap().reference, Reference::SingleSql);
        assert!(matches!(sweep(&d, 0.0, &[], 1.0), Err(Error::BadGrid)));
        assert!(matches!(sweep(&d, 0.0, &[1.0, 1.0], 1.0), Err(Error::BadGrid)));

        let hot = DerivedParams::from_efficiencies(0.9989, 1.0, 1.0, 1.0).unwrap();
        match sweep(&hot, FRAC_PI_4, &[0.0, 0.5], 1.0) {
            Err(Error::AtGridPoint { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strong_asymmetry_loses_balanced_correlations() {
        // kappa_+ = kappa_- = gamma_-, gamma_+ = 9 gamma_-
        let grid = linear_grid(0.0, 3.0, 61).unwrap();
        for eps in [0.3, 0.62, 0.9] {
            let d = DerivedParams::from_efficiencies(eps, 3.0, 1.0 / 9.0, 1.0).unwrap();
            let s = sweep(&d, FRAC_PI_4, &grid, 1.0).unwrap();
            let (_, min) = s.quiet_minimum().unwrap();
            assert!(db(min).unwrap() > -0.5, "eps={eps}: {}", db(min).unwrap());
        }
    }

    #[test]
    fn optimized_angle_keeps_zero_frequency_correlations() {
        let psi0 = optimal_psi(0.0, 0.6, 1.3).unwrap();
        let base = DerivedParams::from_eta_sigma(0.6, 1.0, 0.7, 1.3).unwrap();
        let reference = combo_spectrum(&base, psi0, 0.0).unwrap().1;
        for rho in [1.5, 3.0, 10.0] {
            let d = DerivedParams::from_eta_sigma(0.6, rho, 0.7, 1.3).unwrap();
            let v = combo_spectrum(&d, psi0, 0.0).unwrap().1;
            assert_relative_eq!(v, reference, max_relative = 1e-12);
        }
    }

    #[test]
    fn canonical_angles() {
        assert_eq!(RotationAngle::new(FRAC_PI_2).radians(), FRAC_PI_2);
        assert_relative_eq!(RotationAngle::new(-FRAC_PI_2).radians(), FRAC_PI_2);
        assert_relative_eq!(RotationAngle::new(PI + 0.1).radians(), 0.1, epsilon = 1e-15);
        let ph = PhaseConfig::new(0.8, 0.3);
        assert_relative_eq!(ph.phi_plus + ph.phi_minus, 0.8);
    }

    fn arb_derived() -> impl Strategy<Value = DerivedParams> {
        (0.0f64..0.95, 1.0f64 / 3.0..3.0, 0.05f64..=1.0, 0.05f64..=1.0)
            .prop_map(|(e, r, a, b)| DerivedParams::from_efficiencies(e, r, a, b).unwrap())
    }

    proptest! {
        #[test]
        fn closed_form_equals_matrix_path(d in arb_derived(), delta in 0.0f64..10.0, psi in -FRAC_PI_2..FRAC_PI_2) {
            let p = d.to_opo_params(1.0);
            let s = spectrum_via_matrices(&p, psi, delta * p.rate_scale()).unwrap();
            let (vp, vm) = combo_spectrum(&d, psi, delta).unwrap();
            prop_assert!((s.0[0][0].re - vp).abs() <= 1e-9 * vp);
            prop_assert!((s.0[1][1].re - vm).abs() <= 1e-9 * vm);
        }

        #[test]
        fn lossless_symmetric_minimum_uncertainty(eps in 0.0f64..=0.99, delta in 0.0f64..=10.0) {
            let (p, m) = symmetric_spectrum(1.0, eps, delta).unwrap();
            prop_assert!((p * m - 1.0).abs() < 1e-10);
        }

        #[test]
        fn losses_keep_product_above_one(d in arb_derived(), delta in 0.0f64..10.0) {
            let (p, m) = combo_spectrum(&d, FRAC_PI_4, delta).unwrap();
            prop_assert!(p * m >= 1.0 - 1e-10);
        }

        #[test]
        fn periodic_in_psi(d in arb_derived(), delta in 0.0f64..10.0, psi in -FRAC_PI_2..FRAC_PI_2) {
            let a = combo_spectrum(&d, psi, delta).unwrap();
            let b = combo_spectrum(&d, psi + PI, delta).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-12 * a.0 && (a.1 - b.1).abs() <= 1e-12 * a.1);
        }

        #[test]
        fn label_swap_reflects_angle(d in arb_derived(), delta in 0.0f64..10.0, psi in -FRAC_PI_2..FRAC_PI_2) {
            let a = combo_spectrum(&d, psi, delta).unwrap();
            let b = combo_spectrum(&d.swapped(), -psi, delta).unwrap();
            prop_assert!((a.0 - b.1).abs() <= 1e-12 * a.0);
            prop_assert!((a.1 - b.0).abs() <= 1e-12 * a.1);
        }

        #[test]
        fn negating_angle_swaps_outputs_when_balanced(eps in 0.0f64..0.95, rho in 1.0f64/3.0..3.0, eta in 0.0f64..=1.0, delta in 0.0f64..10.0, psi in -FRAC_PI_2..FRAC_PI_2) {
            let d = DerivedParams::from_efficiencies(eps, rho, eta, eta).unwrap();
            let a = combo_spectrum(&d, psi, delta).unwrap();
            let b = combo_spectrum(&d, -psi, delta).unwrap();
            prop_assert!((a.0 - b.1).abs() <= 1e-12 * a.0);
        }

        #[test]
        fn single_beam_excess_noise(d in arb_derived(), delta in 0.0f64..10.0) {
            let (p, m) = single_beam_spectrum(&d, delta).unwrap();
            prop_assert!(p >= 1.0 && m >= 1.0);
            if d.epsilon > 0.0 {
                prop_assert!(p > 1.0 && m > 1.0);
            }
        }

        #[test]
        fn quiet_channel_deepens_with_pump(eta in 0.0f64..=1.0, delta in 0.0f64..10.0, e1 in 0.0f64..0.998, e2 in 0.0f64..0.998) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = DerivedParams::from_efficiencies(lo, 1.0, eta, eta).unwrap();
            let b = DerivedParams::from_efficiencies(hi, 1.0, eta, eta).unwrap();
            let va = combo_spectrum(&a, optimal_psi(delta, lo, 1.0).unwrap(), delta).unwrap().1;
            let vb = combo_spectrum(&b, optimal_psi(delta, hi, 1.0).unwrap(), delta).unwrap().1;
            prop_assert!(vb <= va + 1e-14);
        }
    }
}
