//! End-to-end acceptance checks, one numbered line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always printed;
//! the process exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_4, PI};
use std::time::{Duration, Instant};

use ndopo_core::lab::{
    e_nl_from_threshold, entanglement_bandwidth, epsilon_from_powers, phase_audit, pump_param_from_gain,
    threshold_power,
};
use ndopo_core::langevin::{validate_against_analytic, SimConfig, Thresholds, WelchConfig, Window};
use ndopo_core::metrics::{correct_electronic, epr_product, separability, NoiseFigure, Reference};
use ndopo_core::params::{cavity_rates, db, normalize_frequency, CavityGeometry, DerivedParams, OpoParams};
use ndopo_core::spectra::{
    combo_spectrum, degenerate_squeezing, linear_grid, mirror_branch, optimal_psi, spectrum_via_matrices,
    symmetric_spectrum, sweep,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cavity(loss_t: f64, fsr: f64) -> CavityGeometry {
    CavityGeometry {
        fsr_hz: fsr,
        coupler_t: loss_t,
        residual_l: 0.0,
        pump_loss_lp: 0.0,
        e_nl_per_watt: 0.0,
    }
}

fn opo_cavity() -> CavityGeometry {
    CavityGeometry {
        fsr_hz: 370e6,
        coupler_t: 0.122,
        residual_l: 0.007,
        pump_loss_lp: 0.015,
        e_nl_per_watt: 0.0131,
    }
}

/// Normalized 1.15 MHz analysis frequency of the 370 MHz FSR cavity.
fn analysis_delta() -> f64 {
    let g = cavity_rates(&opo_cavity()).unwrap().gamma;
    normalize_frequency(1.15e6, g, g)
}

fn c1() -> Outcome {
    let (sq, _) = degenerate_squeezing(0.76, 0.62, analysis_delta()).map_err(|e| e.to_string())?;
    let v = db(sq).unwrap();
    check((v + 5.2).abs() <= 0.1, format!("degenerate squeezing {v:.3} dB (target -5.2 +- 0.1)"))
}

fn c2() -> Outcome {
    let d = DerivedParams::from_eta_sigma(0.62, 1.0, 0.74, 0.98).unwrap();
    let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
    let (_, quiet) = combo_spectrum(&d, psi0, analysis_delta()).unwrap();
    let v = db(quiet).unwrap();
    check((v + 4.9).abs() <= 0.15, format!("inter-beam correlation {v:.3} dB at psi0 (target -4.9 +- 0.15)"))
}

fn c3() -> Outcome {
    let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
    let dev = psi0 - FRAC_PI_4;
    let mirror = mirror_branch(psi0);
    let mdev = mirror + FRAC_PI_4;
    check(
        (dev - 0.009).abs() <= 0.001 && (mdev - 0.009).abs() <= 0.001,
        format!("psi0 = pi/4 + {dev:.5}; quiet-Q+ branch = -pi/4 + {mdev:.5} (target 0.009 +- 0.001)"),
    )
}

fn c4() -> Outcome {
    let p = threshold_power(0.122, 0.007, 0.015, 0.0131).unwrap();
    let e = e_nl_from_threshold(0.395, 0.122, 0.007, 0.015).unwrap();
    let eps = pump_param_from_gain(6.8).unwrap();
    let eps_p = epsilon_from_powers(0.152, 0.395).unwrap();
    check(
        (p - 0.395).abs() <= 0.005 && (e - 0.013).abs() <= 0.0005 && (eps - 0.617).abs() <= 0.005 && (eps_p - 0.62).abs() <= 0.01,
        format!("P_th = {:.1} mW, E_NL = {e:.5} /W, eps(G=6.8) = {eps:.4}, sqrt(152/395) = {eps_p:.4}", p * 1e3),
    )
}

fn c5() -> Outcome {
    let a = cavity_rates(&cavity(0.144, 370e6)).unwrap().fwhm_hz;
    let b = cavity_rates(&cavity(0.156, 1.5e9)).unwrap().fwhm_hz;
    check(
        (a - 8.48e6).abs() <= 0.1e6 && (b - 37.2e6).abs() <= 1e6,
        format!("FWHM {:.3} MHz (370 MHz FSR), {:.2} MHz (1.5 GHz FSR)", a / 1e6, b / 1e6),
    )
}

fn c6() -> Outcome {
    let fix = |v: f64, r| correct_electronic(NoiseFigure::from_db(v, r).unwrap(), 11.76).unwrap().db();
    let sq = fix(-4.0, Reference::SingleSql);
    let anti = fix(8.0, Reference::SingleSql);
    let corr = fix(-3.8, Reference::TwoSql);
    check(
        (sq + 4.5).abs() <= 0.05 && (anti - 8.3).abs() <= 0.1 && (corr + 4.3).abs() <= 0.15,
        format!("corrected {sq:.3} / {anti:.3} / {corr:.3} dB"),
    )
}

fn c7() -> Outcome {
    let v = NoiseFigure::new(0.372, Reference::TwoSql).unwrap();
    let r = separability(v, v).unwrap();
    check(
        (r.sum - 0.744).abs() < 1e-12 && r.entangled && (r.margin_db + 4.3).abs() <= 0.1,
        format!("sum {:.3} < {}, margin {:.3} dB", r.sum, r.bound, r.margin_db),
    )
}

fn c8() -> Outcome {
    let r = epr_product(
        NoiseFigure::from_db(-1.0, Reference::SingleSql).unwrap(),
        NoiseFigure::from_db(-0.9, Reference::SingleSql).unwrap(),
    )
    .unwrap();
    check(
        (r.product - 0.646).abs() <= 0.01 && r.paradox,
        format!("inferred-variance product {:.4} < 1", r.product),
    )
}

fn c9() -> Outcome {
    let rates = cavity_rates(&opo_cavity()).unwrap();
    let d = DerivedParams::from_efficiencies(0.62, 1.0, 0.74, 0.74).unwrap();
    let f = entanglement_bandwidth(&d, FRAC_PI_4, rates.gamma).unwrap();
    let exact = 1.62 * rates.fwhm_hz;
    check(
        (f - 13.7e6).abs() <= 0.5e6 && ((f - exact) / exact).abs() < 1e-6,
        format!("entanglement FWHM {:.3} MHz ((1+eps) x cavity = {:.3} MHz)", f / 1e6, exact / 1e6),
    )
}

fn c10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let gm = 10f64.powf(rng.random_range(-1.0..1.0));
        let gp = gm * 10f64.powf(rng.random_range(-1.0..1.0));
        let p = OpoParams {
            gamma_plus: gp,
            gamma_minus: gm,
            kappa_plus: gp * rng.random_range(0.01..1.0),
            kappa_minus: gm * rng.random_range(0.01..1.0),
            epsilon: rng.random_range(0.0..0.98),
            chi: 0.0,
        };
        let psi = rng.random_range(-PI / 2.0..PI / 2.0);
        let delta = rng.random_range(0.0..10.0);
        let d = ndopo_core::derive_params(&p).unwrap();
        let (vp, vm) = combo_spectrum(&d, psi, delta).unwrap();
        let s = spectrum_via_matrices(&p, psi, delta * p.rate_scale()).unwrap();
        worst = worst
            .max(((s.0[0][0].re - vp) / vp).abs())
            .max(((s.0[1][1].re - vm) / vm).abs());
    }
    check(worst < 1e-9, format!("max relative deviation {worst:.2e} over 1000 random sets"))
}

fn c11() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..=99 {
        let eps = 0.99 * i as f64 / 99.0;
        for j in 0..=100 {
            let delta = 0.1 * j as f64;
            let (p, m) = symmetric_spectrum(1.0, eps, delta).unwrap();
            worst = worst.max((p * m - 1.0).abs());
        }
    }
    check(worst < 1e-10, format!("max |v+ v- - 1| = {worst:.2e}"))
}

fn c12() -> Outcome {
    let start = Instant::now();
    let d = DerivedParams::from_eta_sigma(0.62, 1.0, 0.74, 0.98).unwrap();
    let p = d.to_opo_params(1.0);
    let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
    let welch = WelchConfig {
        segment_len: 1 << 17,
        overlap: 0.5,
        window: Window::Hann,
    };
    let cfg = SimConfig::new(&p, 0.002, 376 << 17, 12, 8);
    let t = Thresholds::default();
    let v = validate_against_analytic(&p, &cfg, &welch, psi0, 3.0, &t).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let control_cfg = SimConfig {
        feedthrough: false,
        n_realizations: 1,
        n_steps: cfg.burn_in + (40 << 17),
        ..cfg
    };
    let control = validate_against_analytic(&p, &control_cfg, &welch, psi0, 3.0, &t).map_err(|e| e.to_string())?;
    let r = &v.report;
    check(
        r.pass && v.psd.segments >= 400 && elapsed < Duration::from_secs(300) && !control.report.pass,
        format!(
            "{} segments, {} bins; Q-: {:.1}% within 3 sigma, RMS {:.4}; Q+: {:.1}% within, RMS {:.4}; {:.1} s; no-feedthrough control RMS {:.3} -> {}",
            v.psd.segments,
            v.psd.len(),
            100.0 * r.minus.fraction_within,
            r.minus.rms_relative,
            100.0 * r.plus.fraction_within,
            r.plus.rms_relative,
            elapsed.as_secs_f64(),
            control.report.minus.rms_relative,
            if control.report.pass { "passes (bad)" } else { "fails" }
        ),
    )
}

fn c13() -> Outcome {
    // fringe noise (relative to unit fringe amplitude) at which one audit's
    // shift carries the experiment's ~0.13 rad error
    const NOISE: f64 = 0.32;
    let scan: Vec<f64> = (0..200).map(|i| 2.0 * PI * 3.3 * i as f64 / 199.0).collect();
    let exact = phase_audit(0.4, 0.2, &scan, (0.53, -0.1), 0.0, 0).unwrap();
    let trials: Vec<_> = (0..200)
        .map(|seed| phase_audit(0.4, 0.2, &scan, (0.53, -0.1), NOISE, 1000 + seed).unwrap())
        .collect();
    let n = trials.len() as f64;
    let mean = trials.iter().map(|a| a.shift).sum::<f64>() / n;
    let sd = (trials.iter().map(|a| (a.shift - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sem = sd / n.sqrt();
    let mut errs: Vec<f64> = trials.iter().map(|a| a.shift_stderr).collect();
    errs.sort_by(f64::total_cmp);
    let typical = errs[errs.len() / 2];
    check(
        (exact.shift - PI).abs() < 1e-9
            && (mean - PI).abs() <= 3.0 * sem
            && (PI - 3.05) <= 2.0 * typical
            && (0.05..0.3).contains(&typical),
        format!(
            "noiseless shift - pi = {:.1e}; noisy: mean {mean:.4} +- {sem:.4}, single-fit error ~{typical:.3} rad, so 3.05 is {:.2} sigma from pi",
            exact.shift - PI,
            (PI - 3.05) / typical
        ),
    )
}

fn c14() -> Outcome {
    let grid = linear_grid(0.0, 3.0, 301).unwrap();
    let d = DerivedParams::from_efficiencies(0.62, 3.0, 1.0 / 9.0, 1.0).unwrap();
    let s = sweep(&d, FRAC_PI_4, &grid, 1.0).unwrap();
    let best = db(s.quiet_minimum().unwrap().1).unwrap();

    let psi0 = optimal_psi(0.0, 0.62, 0.98).unwrap();
    let base = combo_spectrum(&DerivedParams::from_eta_sigma(0.62, 1.0, 0.74, 0.98).unwrap(), psi0, 0.0).unwrap().1;
    let spread = [1.5, 3.0, 10.0]
        .iter()
        .map(|&rho| {
            let d = DerivedParams::from_eta_sigma(0.62, rho, 0.74, 0.98).unwrap();
            ((combo_spectrum(&d, psi0, 0.0).unwrap().1 - base) / base).abs()
        })
        .fold(0.0, f64::max);
    check(
        best > -0.5 && spread < 1e-12,
        format!("rho=3 best quiet level {best:.3} dB; v-(0) spread over rho at psi0 {spread:.1e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("degenerate squeezing prediction", c1),
        ("entanglement prediction", c2),
        ("optimal angle", c3),
        ("threshold / calibration loop", c4),
        ("linewidth arithmetic", c5),
        ("electronic-noise correction", c6),
        ("entanglement verdict", c7),
        ("EPR verdict", c8),
        ("entanglement bandwidth", c9),
        ("closed form vs matrix path", c10),
        ("minimum uncertainty", c11),
        ("Monte-Carlo oracle", c12),
        ("phase audit", c13),
        ("loss asymmetry", c14),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {:2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
