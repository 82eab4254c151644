//! Welch spectral estimation of the two output channels and comparison with
//! the analytic spectra.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::metrics::Reference;
use crate::spectra::NoiseSpectrum;

/// Fewer segments than this give no meaningful per-bin error bars.
pub const MIN_SEGMENTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }

    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // periodic form, which tiles exactly at 50% overlap
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next one.
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            segment_len: 1 << 17,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

impl WelchConfig {
    fn hop(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    /// Variance of a Welch mean relative to `m` independent periodograms.
    ///
    /// Overlapping segments of broadband noise give periodograms correlated by
    /// `c_l = (sum w(n) w(n + l hop))^2 / (sum w^2)^2`; the mean then has
    /// variance `(1 + 2 sum_l c_l) var / m`.
    pub fn overlap_variance_factor(&self) -> f64 {
        let n = self.segment_len;
        let w = self.window.coefficients(n);
        let energy: f64 = w.iter().map(|x| x * x).sum();
        let hop = self.hop();
        let mut factor = 1.0;
        let mut shift = hop;
        while shift < n {
            let cross: f64 = w.iter().zip(&w[shift..]).map(|(a, b)| a * b).sum();
            factor += 2.0 * (cross / energy).powi(2);
            shift += hop;
        }
        factor
    }

    fn validate(&self) -> Result<()> {
        if self.segment_len < 16 || !self.segment_len.is_multiple_of(2) {
            return Err(Error::InvalidParameter {
                name: "segment_len",
                value: self.segment_len as f64,
                reason: "segment length must be even and at least 16",
            });
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(Error::InvalidParameter {
                name: "overlap",
                value: self.overlap,
                reason: "overlap must lie in [0, 0.9]",
            });
        }
        Ok(())
    }
}

/// Streaming Welch averages of both channels of a two-component series.
///
/// Both channels share one complex FFT per segment. Densities are two-sided
/// values on the non-negative frequency bins (identical to the negative ones
/// for a real series), scaled so white noise of variance `1/dt` reads 1.
pub struct WelchAccumulator {
    cfg: WelchConfig,
    dt: f64,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<[f64; 2]>,
    work: Vec<Complex64>,
    scratch: Vec<Complex64>,
    sum: [Vec<f64>; 2],
    sum_sq: [Vec<f64>; 2],
    segments: usize,
}

impl fmt::Debug for WelchAccumulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WelchAccumulator")
            .field("cfg", &self.cfg)
            .field("dt", &self.dt)
            .field("segments", &self.segments)
            .finish()
    }
}

impl WelchAccumulator {
    pub fn new(cfg: &WelchConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: dt,
                reason: "sample interval must be positive",
            });
        }
        let n = cfg.segment_len;
        let window = cfg.window.coefficients(n);
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let bins = n / 2 + 1;
        Ok(WelchAccumulator {
            cfg: *cfg,
            dt,
            window,
            scale: dt / energy,
            fft,
            buf: Vec::with_capacity(n),
            work: vec![Complex64::default(); n],
            scratch,
            sum: [vec![0.0; bins], vec![0.0; bins]],
            sum_sq: [vec![0.0; bins], vec![0.0; bins]],
            segments: 0,
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    #[inline]
    pub fn push(&mut self, x: [f64; 2]) {
        self.buf.push(x);
        if self.buf.len() == self.cfg.segment_len {
            self.process_segment();
            self.buf.drain(..self.cfg.hop().min(self.cfg.segment_len));
        }
    }

    fn process_segment(&mut self) {
        let n = self.cfg.segment_len;
        for ((w, x), z) in self.window.iter().zip(&self.buf).zip(self.work.iter_mut()) {
            *z = Complex64::new(w * x[0], w * x[1]);
        }
        self.fft.process_with_scratch(&mut self.work, &mut self.scratch);
        for k in 0..=n / 2 {
            let a = self.work[k];
            let b = self.work[(n - k) % n].conj();
            // split the packed transform of a + i b into the two real transforms
            let pa = 0.25 * (a + b).norm_sqr() * self.scale;
            let pb = 0.25 * (a - b).norm_sqr() * self.scale;
            self.sum[0][k] += pa;
            self.sum[1][k] += pb;
            self.sum_sq[0][k] += pa * pa;
            self.sum_sq[1][k] += pb * pb;
        }
        self.segments += 1;
    }

    /// Adds the segments of `other`; merging in a fixed order keeps results
    /// reproducible.
    pub fn merge(&mut self, other: &WelchAccumulator) -> Result<()> {
        if other.cfg != self.cfg || other.dt != self.dt {
            return Err(Error::SimConfig("cannot merge Welch accumulators with different settings".into()));
        }
        for ch in 0..2 {
            for (s, o) in self.sum[ch].iter_mut().zip(&other.sum[ch]) {
                *s += o;
            }
            for (s, o) in self.sum_sq[ch].iter_mut().zip(&other.sum_sq[ch]) {
                *s += o;
            }
        }
        self.segments += other.segments;
        Ok(())
    }

    /// Mean densities and standard errors on all non-negative frequency bins.
    pub fn finish(&self, rate_scale: f64) -> Result<PsdEstimate> {
        if self.segments < MIN_SEGMENTS {
            return Err(Error::InsufficientSegments {
                got: self.segments,
                need: MIN_SEGMENTS,
            });
        }
        let m = self.segments as f64;
        let n = self.cfg.segment_len;
        let inflation = self.cfg.overlap_variance_factor();
        let stats = |ch: usize| -> (Vec<f64>, Vec<f64>) {
            self.sum[ch]
                .iter()
                .zip(&self.sum_sq[ch])
                .map(|(&s, &s2)| {
                    let mean = s / m;
                    let var = ((s2 - s * mean) / (m - 1.0)).max(0.0);
                    (mean, (inflation * var / m).sqrt())
                })
                .unzip()
        };
        let (v_plus, stderr_plus) = stats(0);
        let (v_minus, stderr_minus) = stats(1);
        let f_hz: Vec<f64> = (0..=n / 2).map(|k| k as f64 / (n as f64 * self.dt)).collect();
        Ok(PsdEstimate {
            delta: f_hz.iter().map(|f| 2.0 * PI * f / rate_scale).collect(),
            f_hz,
            v_plus,
            v_minus,
            stderr_plus,
            stderr_minus,
            segments: self.segments,
            window: self.cfg.window,
            calibration: 1.0,
            psi: 0.0,
        })
    }
}

/// Welch estimate of a stored two-channel series sampled every `dt`.
pub fn estimate_psd(series: &[[f64; 2]], dt: f64, rate_scale: f64, cfg: &WelchConfig) -> Result<PsdEstimate> {
    if series.len() < cfg.segment_len {
        return Err(Error::InsufficientSegments { got: 0, need: MIN_SEGMENTS });
    }
    let mut acc = WelchAccumulator::new(cfg, dt)?;
    for &x in series {
        acc.push(x);
    }
    acc.finish(rate_scale)
}

/// Estimated spectra of the two rotated output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub delta: Vec<f64>,
    pub f_hz: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub stderr_plus: Vec<f64>,
    pub stderr_minus: Vec<f64>,
    pub segments: usize,
    pub window: Window,
    /// Raw density that was divided out to put the vacuum level at 1.
    pub calibration: f64,
    /// Rotation applied to the outputs before estimation.
    pub psi: f64,
}

impl PsdEstimate {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Bins with `Delta <= max_delta`.
    pub fn band(mut self, max_delta: f64) -> Result<Self> {
        let keep = self.delta.iter().take_while(|&&d| d <= max_delta * (1.0 + 1e-12)).count();
        if keep < 2 {
            return Err(Error::BadGrid);
        }
        for v in [
            &mut self.delta,
            &mut self.f_hz,
            &mut self.v_plus,
            &mut self.v_minus,
            &mut self.stderr_plus,
            &mut self.stderr_minus,
        ] {
            v.truncate(keep);
        }
        Ok(self)
    }

    /// Divides values and errors by the vacuum level `level`.
    pub fn calibrated(mut self, level: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(Error::NonPositiveRatio(level));
        }
        for v in [
            &mut self.v_plus,
            &mut self.v_minus,
            &mut self.stderr_plus,
            &mut self.stderr_minus,
        ] {
            v.iter_mut().for_each(|x| *x /= level);
        }
        self.calibration *= level;
        Ok(self)
    }

    /// Constant `value` in both channels on this grid.
    pub fn constant_spectrum(&self, value: f64) -> NoiseSpectrum {
        NoiseSpectrum {
            delta: self.delta.clone(),
            f_hz: self.f_hz.clone(),
            v_plus: vec![value; self.len()],
            v_minus: vec![value; self.len()],
            reference: Reference::SingleSql,
            psi: self.psi,
        }
    }

    /// The estimate viewed as a spectrum (errors dropped).
    pub fn to_spectrum(&self) -> NoiseSpectrum {
        NoiseSpectrum {
            delta: self.delta.clone(),
            f_hz: self.f_hz.clone(),
            v_plus: self.v_plus.clone(),
            v_minus: self.v_minus.clone(),
            reference: if self.psi == 0.0 { Reference::SingleSql } else { Reference::TwoSql },
            psi: self.psi,
        }
    }
}

/// Pass criteria for [`compare_to_analytic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub k_sigma: f64,
    /// Minimum fraction of bins with `|z| <= k_sigma`.
    pub min_fraction: f64,
    /// Maximum RMS of `(estimate - analytic) / analytic`.
    pub max_rms: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            k_sigma: 3.0,
            min_fraction: 0.99,
            max_rms: 0.02,
        }
    }
}

impl Thresholds {
    /// Looser gates for short runs in unit tests.
    pub fn lenient() -> Self {
        Thresholds {
            k_sigma: 3.0,
            min_fraction: 0.95,
            max_rms: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelComparison {
    pub z: Vec<f64>,
    pub fraction_within: f64,
    pub max_abs_z: f64,
    pub rms_relative: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub plus: ChannelComparison,
    pub minus: ChannelComparison,
    pub thresholds: Thresholds,
    pub segments: usize,
    pub pass: bool,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in [("Q+", &self.plus), ("Q-", &self.minus)] {
            writeln!(
                f,
                "{name}: {:.1}% of {} bins within {}σ (need {:.1}%), max |z| = {:.2}, RMS rel. dev. = {:.4} (max {:.4}) -> {}",
                100.0 * c.fraction_within,
                c.z.len(),
                self.thresholds.k_sigma,
                100.0 * self.thresholds.min_fraction,
                c.max_abs_z,
                c.rms_relative,
                self.thresholds.max_rms,
                if c.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "segments: {}, overall: {}",
            self.segments,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn compare_channel(est: &[f64], stderr: &[f64], analytic: &[f64], t: &Thresholds) -> ChannelComparison {
    let z: Vec<f64> = est
        .iter()
        .zip(stderr)
        .zip(analytic)
        .map(|((&e, &s), &a)| {
            if e == a {
                0.0
            } else if s > 0.0 {
                (e - a) / s
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let n = z.len() as f64;
    let fraction_within = z.iter().filter(|v| v.abs() <= t.k_sigma).count() as f64 / n;
    let max_abs_z = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms_relative = (est
        .iter()
        .zip(analytic)
        .map(|(&e, &a)| ((e - a) / a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    ChannelComparison {
        pass: fraction_within >= t.min_fraction && rms_relative <= t.max_rms,
        z,
        fraction_within,
        max_abs_z,
        rms_relative,
    }
}

/// Per-bin z-scores, fraction within `k_sigma` and RMS relative deviation for
/// both channels. Passes only if both channels pass.
pub fn compare_to_analytic(psd: &PsdEstimate, analytic: &NoiseSpectrum, t: &Thresholds) -> Result<ComparisonReport> {
    if psd.is_empty() {
        return Err(Error::Empty("PSD estimate"));
    }
    if analytic.len() != psd.len() {
        return Err(Error::GridMismatch {
            index: psd.len().min(analytic.len()),
        });
    }
    for (i, (a, b)) in psd.delta.iter().zip(&analytic.delta).enumerate() {
        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
            return Err(Error::GridMismatch { index: i });
        }
    }
    let plus = compare_channel(&psd.v_plus, &psd.stderr_plus, &analytic.v_plus, t);
    let minus = compare_channel(&psd.v_minus, &psd.stderr_minus, &analytic.v_minus, t);
    Ok(ComparisonReport {
        pass: plus.pass && minus.pass,
        plus,
        minus,
        thresholds: *t,
        segments: psd.segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, dt: f64, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / dt.sqrt();
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [s * a, s * b]
            })
            .collect()
    }

    #[test]
    fn white_noise_reads_one() {
        let cfg = WelchConfig {
            segment_len: 1024,
            ..Default::default()
        };
        for window in [Window::Hann, Window::Rectangular] {
            let psd = estimate_psd(&white(1024 * 300, 0.01, 1), 0.01, 1.0, &WelchConfig { window, ..cfg }).unwrap();
            let mean = psd.v_plus[1..].iter().chain(&psd.v_minus[1..]).sum::<f64>() / (2 * (psd.len() - 1)) as f64;
            assert!((mean - 1.0).abs() < 0.01, "{window:?}: {mean}");
            let rep = compare_to_analytic(&psd, &psd.constant_spectrum(1.0), &Thresholds::lenient()).unwrap();
            assert!(rep.pass, "{rep}");
            assert!(psd.stderr_plus.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn overlap_factor_values() {
        // periodic Hann: the shared half gives sum w(n) w(n + N/2) = N/16 against sum w^2 = 3N/8
        let hann = WelchConfig { segment_len: 512, ..Default::default() };
        assert!((hann.overlap_variance_factor() - (1.0 + 2.0 / 36.0)).abs() < 1e-12);
        let rect = WelchConfig { segment_len: 512, overlap: 0.0, window: Window::Rectangular };
        assert_eq!(rect.overlap_variance_factor(), 1.0);
    }

    #[test]
    fn stderr_matches_scatter_between_records() {
        let cfg = WelchConfig { segment_len: 64, ..Default::default() };
        let runs: Vec<PsdEstimate> = (0..400).map(|s| estimate_psd(&white(64 * 40, 1.0, 100 + s), 1.0, 1.0, &cfg).unwrap()).collect();
        let k = 10;
        let means: Vec<f64> = runs.iter().map(|p| p.v_plus[k]).collect();
        let mu = means.iter().sum::<f64>() / 400.0;
        let scatter = (means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 399.0).sqrt();
        let quoted = runs.iter().map(|p| p.stderr_plus[k]).sum::<f64>() / 400.0;
        assert!((quoted / scatter - 1.0).abs() < 0.1, "quoted {quoted}, observed {scatter}");
    }

    #[test]
    fn channels_are_separated() {
        // Channel + white, channel - silent: the packed FFT must not leak.
        let mut x = white(1024 * 40, 1.0, 2);
        x.iter_mut().for_each(|v| v[1] = 0.0);
        let psd = estimate_psd(&x, 1.0, 1.0, &WelchConfig { segment_len: 1024, ..Default::default() }).unwrap();
        assert!(psd.v_minus.iter().all(|&v| v < 1e-25));
        assert!(psd.v_plus[10] > 0.1);
    }

    #[test]
    fn sinusoid_lands_in_its_bin() {
        let n = 256;
        let dt = 0.5;
        let k0 = 20;
        let x: Vec<[f64; 2]> = (0..n * 20)
            .map(|i| {
                let t = i as f64 * dt;
                [(2.0 * PI * k0 as f64 / (n as f64 * dt) * t).cos(), 0.0]
            })
            .collect();
        let psd = estimate_psd(&x, dt, 1.0, &WelchConfig { segment_len: n, ..Default::default() }).unwrap();
        let peak = psd.v_plus.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert_eq!(peak, k0);
        assert!((psd.f_hz[k0] - k0 as f64 / (n as f64 * dt)).abs() < 1e-12);
    }

    #[test]
    fn too_few_segments() {
        let cfg = WelchConfig {
            segment_len: 1024,
            ..Default::default()
        };
        assert!(matches!(
            estimate_psd(&white(1024 * 8, 1.0, 3), 1.0, 1.0, &cfg),
            Err(Error::InsufficientSegments { .. })
        ));
        assert!(estimate_psd(&white(100, 1.0, 3), 1.0, 1.0, &cfg).is_err());
        assert!(WelchAccumulator::new(&WelchConfig { overlap: 0.95, ..cfg }, 1.0).is_err());
    }

    #[test]
    fn self_comparison_passes() {
        let psd = estimate_psd(&white(256 * 40, 1.0, 4), 1.0, 1.0, &WelchConfig { segment_len: 256, ..Default::default() }).unwrap();
        let rep = compare_to_analytic(&psd, &psd.to_spectrum(), &Thresholds::default()).unwrap();
        assert!(rep.pass);
        assert!(rep.plus.z.iter().chain(&rep.minus.z).all(|&z| z == 0.0));
        assert_eq!(rep.plus.rms_relative, 0.0);
    }

    #[test]
    fn grid_mismatch() {
        let psd = estimate_psd(&white(256 * 40, 1.0, 4), 1.0, 1.0, &WelchConfig { segment_len: 256, ..Default::default() }).unwrap();
        let mut other = psd.to_spectrum();
        other.delta[5] += 1e-3;
        assert!(matches!(
            compare_to_analytic(&psd, &other, &Thresholds::default()),
            Err(Error::GridMismatch { index: 5 })
        ));
        let short = psd.clone().band(0.5).unwrap();
        assert!(matches!(
            compare_to_analytic(&short, &psd.to_spectrum(), &Thresholds::default()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn merge_matches_single_stream() {
        let cfg = WelchConfig {
            segment_len: 128,
            overlap: 0.0,
            window: Window::Hann,
        };
        let x = white(128 * 40, 1.0, 5);
        let whole = estimate_psd(&x, 1.0, 1.0, &cfg).unwrap();
        let mut a = WelchAccumulator::new(&cfg, 1.0).unwrap();
        let mut b = WelchAccumulator::new(&cfg, 1.0).unwrap();
        x[..128 * 20].iter().for_each(|&v| a.push(v));
        x[128 * 20..].iter().for_each(|&v| b.push(v));
        a.merge(&b).unwrap();
        let merged = a.finish(1.0).unwrap();
        assert_eq!(merged.segments, whole.segments);
        for (m, w) in merged.v_plus.iter().zip(&whole.v_plus) {
            assert!((m - w).abs() < 1e-12 * w.abs().max(1.0));
        }
    }
}
