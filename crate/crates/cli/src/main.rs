use std::f64::consts::FRAC_PI_4;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ndopo_core::config::Config;
use ndopo_core::io::{write_fringe_csv, write_psd_csv, write_spectrum_csv};
use ndopo_core::lab::{
    dfg_fringes, e_nl_from_threshold, entanglement_bandwidth, epsilon_from_powers, phase_audit, pump_param_from_gain,
    threshold_power, InjectionModel, LockMode,
};
use ndopo_core::langevin::{
    analytic_on_grid, compare_to_analytic, oracle_psd, simulate, write_dump, PsdEstimate,
};
use ndopo_core::metrics::{correct_electronic, epr_product, separability, NoiseFigure, Reference};
use ndopo_core::params::{cavity_rates, db, normalize_frequency, overall_efficiency, DetectionChain};
use ndopo_core::spectra::{combo_spectrum, degenerate_squeezing, mirror_branch, optimal_psi, sweep};

#[derive(Parser, Debug)]
#[command(name = "ndopo", version, about = "Quantum noise spectra and entanglement figures of a non-degenerate OPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value (`section.key=value` or a unique `key=value`).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output file; written atomically. Text reports still go to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw (overrides `simulation.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Normalized-frequency grid `MIN:MAX:N`.
    #[arg(long, global = true, value_name = "MIN:MAX:N")]
    grid: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Q+ and Q- spectra over the grid, as CSV.
    Spectrum,
    /// Optimal mixing angle for unequal efficiencies.
    OptimizePsi,
    /// Squeezing of the degenerate mode at the analysis frequency.
    Squeeze,
    /// Monte-Carlo check of the analytic spectra.
    Validate {
        /// Scale the analytic reference by 1.1 before comparing (negative control).
        #[arg(long, hide = true)]
        corrupt_analytic: bool,
    },
    /// Langevin simulation; writes the calibrated PSD as CSV.
    Simulate {
        /// Also dump realization 0's output quadratures to this binary file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Corrected measurements, entanglement and EPR verdicts, efficiency budget.
    Report,
    /// Threshold power, nonlinearity and pump parameter.
    Threshold,
    /// Full width of the entanglement band.
    Bandwidth,
    /// Synthetic injected-field fringe audit of the local-oscillator phases.
    FringeAudit,
}

fn overrides(cli: &Cli) -> Result<Vec<String>> {
    let mut all = cli.set.clone();
    if let Some(seed) = cli.seed {
        all.push(format!("simulation.seed={seed}"));
    }
    if let Some(grid) = &cli.grid {
        let parts: Vec<&str> = grid.split(':').collect();
        let [min, max, n] = parts.as_slice() else {
            bail!("--grid expects MIN:MAX:N, got `{grid}`");
        };
        let min: f64 = min.parse().with_context(|| format!("--grid minimum `{min}`"))?;
        let max: f64 = max.parse().with_context(|| format!("--grid maximum `{max}`"))?;
        let n: usize = n.parse().with_context(|| format!("--grid point count `{n}`"))?;
        all.push(format!("spectrum.grid_min={min:e}"));
        all.push(format!("spectrum.grid_max={max:e}"));
        all.push(format!("spectrum.grid_n={n}"));
    }
    Ok(all)
}

fn load(cli: &Cli) -> Result<Config> {
    let o = overrides(cli)?;
    Ok(match &cli.config {
        Some(path) => Config::load(path, &o)?,
        None => Config::defaults_with(&o)?,
    })
}

/// Writes via a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(())
}

fn emit(cli: &Cli, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &cli.out {
        Some(path) => write_atomic(path, fill),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)
        }
    }
}

fn meta(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn fmt_db(v: f64) -> String {
    match db(v) {
        Ok(x) => format!("{x:+.2} dB"),
        Err(_) => "n/a".into(),
    }
}

fn cmd_spectrum(cli: &Cli, cfg: &Config) -> Result<bool> {
    let d = cfg.derived()?;
    let psi = cfg.psi()?;
    let rate = cfg.rate_scale()?;
    let s = sweep(&d, psi, &cfg.grid()?, rate)?;
    let m = meta(&[
        ("command", "spectrum".into()),
        ("psi", format!("{psi:e}")),
        ("psi_mirror", format!("{:e}", mirror_branch(psi))),
        ("epsilon", format!("{:e}", d.epsilon)),
        ("eta_plus", format!("{:e}", d.eta_plus)),
        ("eta_minus", format!("{:e}", d.eta_minus)),
        ("rho", format!("{:e}", d.rho)),
        ("rate_scale", format!("{rate:e}")),
    ]);
    emit(cli, |w| Ok(write_spectrum_csv(w, &s, &m)?))?;
    if cli.out.is_some() {
        let (i, v) = s.quiet_minimum().context("empty spectrum")?;
        println!("psi = {psi:.6} rad; quiet-channel minimum {} at Delta = {:.4}", fmt_db(v), s.delta[i]);
    }
    Ok(true)
}

fn cmd_optimize_psi(cfg: &Config) -> Result<bool> {
    let d = cfg.derived()?;
    let delta0 = cfg.spectrum.delta0;
    let psi0 = optimal_psi(delta0, d.epsilon, d.sigma)?;
    let (_, at_opt) = combo_spectrum(&d, psi0, delta0)?;
    let (_, at_balanced) = combo_spectrum(&d, FRAC_PI_4, delta0)?;
    println!("sigma = {:.5}, epsilon = {:.4}, Delta0 = {delta0}", d.sigma, d.epsilon);
    println!("psi0 (quiet Q-) = pi/4 {:+.5} rad = {psi0:.6} rad", psi0 - FRAC_PI_4);
    let mirror = mirror_branch(psi0);
    println!("psi0 (quiet Q+) = -pi/4 {:+.5} rad = {mirror:.6} rad", mirror + FRAC_PI_4);
    println!("quiet level at psi0: {}; at pi/4: {}", fmt_db(at_opt), fmt_db(at_balanced));
    Ok(true)
}

fn analysis_delta(cfg: &Config) -> Result<f64> {
    let p = cfg.opo_params()?;
    Ok(normalize_frequency(cfg.spectrum.analysis_hz, p.gamma_plus, p.gamma_minus))
}

fn cmd_squeeze(cli: &Cli, cfg: &Config) -> Result<bool> {
    let d = cfg.derived()?;
    let delta = analysis_delta(cfg)?;
    let (sq, anti) = degenerate_squeezing(d.eta, d.epsilon, delta)?;
    println!(
        "xi = {:.4}, epsilon = {:.4}, f = {:.4} MHz (Delta = {delta:.4})",
        d.eta,
        d.epsilon,
        cfg.spectrum.analysis_hz / 1e6
    );
    println!("squeezed: {}  anti-squeezed: {}", fmt_db(sq), fmt_db(anti));
    if cli.out.is_some() {
        let grid = cfg.grid()?;
        let mut s = sweep(&d.with_efficiencies(d.eta, d.eta)?, FRAC_PI_4, &grid, cfg.rate_scale()?)?;
        for (i, &x) in grid.iter().enumerate() {
            let (a, b) = degenerate_squeezing(d.eta, d.epsilon, x)?;
            s.v_plus[i] = a;
            s.v_minus[i] = b;
        }
        s.reference = Reference::SingleSql;
        let m = meta(&[("command", "squeeze".into()), ("xi", format!("{:e}", d.eta))]);
        emit(cli, |w| Ok(write_spectrum_csv(w, &s, &m)?))?;
    }
    Ok(true)
}

fn psd_meta(cfg: &Config, psd: &PsdEstimate, command: &str) -> Vec<(String, String)> {
    meta(&[
        ("command", command.into()),
        ("psi", format!("{:e}", psd.psi)),
        ("seed", cfg.simulation.seed.to_string()),
        ("dt", format!("{:e}", cfg.simulation.dt)),
        ("time_unit", "1/gamma_minus".into()),
    ])
}

fn cmd_validate(cli: &Cli, cfg: &Config, corrupt: bool) -> Result<bool> {
    let p = cfg.simulation_params()?;
    let sim = cfg.simulation.sim_config(&p);
    let psi = cfg.psi()?;
    let psd = oracle_psd(&p, &sim, &cfg.simulation.welch(), psi, cfg.simulation.max_delta)?;
    let mut analytic = analytic_on_grid(&p, &psd)?;
    if corrupt {
        analytic.v_plus.iter_mut().chain(analytic.v_minus.iter_mut()).for_each(|v| *v *= 1.1);
    }
    let report = compare_to_analytic(&psd, &analytic, &cfg.simulation.thresholds())?;
    println!(
        "Monte-Carlo oracle: epsilon = {:.4}, psi = {psi:.6} rad, dt = {}, {} realizations, calibration {:.6}",
        p.epsilon, sim.dt, sim.n_realizations, psd.calibration
    );
    println!("{report}");
    if cli.out.is_some() {
        let m = psd_meta(cfg, &psd, "validate");
        emit(cli, |w| Ok(write_psd_csv(w, &psd, &m)?))?;
    }
    Ok(report.pass)
}

fn cmd_simulate(cli: &Cli, cfg: &Config, dump: Option<&Path>) -> Result<bool> {
    let p = cfg.simulation_params()?;
    let sim = cfg.simulation.sim_config(&p);
    if let Some(path) = dump {
        let b = simulate(&p, &sim)?;
        write_dump(path, &p, sim.dt, &b.q_out)?;
        println!("wrote {} samples to {}", b.len(), path.display());
    }
    let psd = oracle_psd(&p, &sim, &cfg.simulation.welch(), cfg.psi()?, cfg.simulation.max_delta)?;
    let m = psd_meta(cfg, &psd, "simulate");
    emit(cli, |w| Ok(write_psd_csv(w, &psd, &m)?))?;
    Ok(true)
}

fn print_budget(name: &str, c: &DetectionChain) -> Result<f64> {
    let xi = overall_efficiency(c)?;
    println!(
        "  {name:<7} escape {:.3}  LO {:.3}  QE {:.3}  prop {:.3}  -> xi = {xi:.3}",
        c.escape, c.lo_overlap, c.qe, c.prop
    );
    Ok(xi)
}

fn cmd_report(cli: &Cli, cfg: &Config) -> Result<bool> {
    let m = &cfg.measured;
    let required = [
        ("measured.squeeze_db", m.squeeze_db),
        ("measured.antisqueeze_db", m.antisqueeze_db),
        ("measured.correlation_db", m.correlation_db),
        ("measured.epr_inferred_1_db", m.epr_inferred_1_db),
        ("measured.epr_inferred_2_db", m.epr_inferred_2_db),
        ("measured.floor_db", m.floor_db),
    ];
    let missing: Vec<&str> = required.iter().filter(|(_, v)| v.is_none()).map(|(k, _)| *k).collect();
    if !missing.is_empty() {
        bail!("missing measured values: {}", missing.join(", "));
    }
    let [sq, anti, corr, epr1, epr2, floor] = required.map(|(_, v)| v.expect("checked above"));
    let conj = m.conjugate_correlation_db.unwrap_or(corr);

    println!("Detection efficiency budget");
    let (plus, minus) = cfg.detection()?;
    let d = cfg.derived()?;
    match (plus, minus) {
        (None, None) => println!("  (no detection chains configured; escape efficiencies only)"),
        (a, b) => {
            if let Some(c) = a {
                print_budget("signal", &c)?;
            }
            if let Some(c) = b {
                print_budget("idler", &c)?;
            }
        }
    }
    println!("  xi = sqrt(xi+ xi-) = {:.3}, sigma = sqrt(xi+/xi-) = {:.3}", d.eta, d.sigma);

    let fix = |v: f64, r| -> Result<NoiseFigure> { Ok(correct_electronic(NoiseFigure::from_db(v, r)?, floor)?) };
    let sq_c = fix(sq, Reference::SingleSql)?;
    let anti_c = fix(anti, Reference::SingleSql)?;
    let corr_c = fix(corr, Reference::TwoSql)?;
    let conj_c = fix(conj, Reference::TwoSql)?;
    println!("Electronic-noise correction (floor {floor} dB below SQL)");
    println!("  squeezing       {sq:+.2} dB -> {:+.2} dB", sq_c.db());
    println!("  anti-squeezing  {anti:+.2} dB -> {:+.2} dB", anti_c.db());
    println!("  correlations    {corr:+.2} dB -> {:+.2} dB (two-beam SQL)", corr_c.db());
    if m.conjugate_correlation_db.is_none() {
        println!("  conjugate correlations taken equal to the measured correlations");
    }

    let sep = separability(corr_c, conj_c)?;
    println!("Inseparability");
    println!(
        "  {:.3} + {:.3} = {:.3} {} {}  -> {}, margin {:+.2} dB",
        corr_c.value,
        conj_c.value,
        sep.sum,
        if sep.entangled { "<" } else { ">=" },
        sep.bound,
        if sep.entangled { "entangled" } else { "not shown entangled" },
        sep.margin_db
    );
    let epr = epr_product(
        NoiseFigure::from_db(epr1, Reference::SingleSql)?,
        NoiseFigure::from_db(epr2, Reference::SingleSql)?,
    )?;
    println!("EPR");
    println!(
        "  {:.3} x {:.3} = {:.3} {} 1 -> {}",
        epr.v_inf_1,
        epr.v_inf_2,
        epr.product,
        if epr.paradox { "<" } else { ">=" },
        if epr.paradox { "paradox demonstrated" } else { "no paradox" }
    );

    let delta = analysis_delta(cfg)?;
    let (pred_sq, _) = degenerate_squeezing(d.eta, d.epsilon, delta)?;
    let psi0 = optimal_psi(0.0, d.epsilon, d.sigma)?;
    let (_, pred_corr) = combo_spectrum(&d, psi0, delta)?;
    println!("Model at {:.3} MHz (Delta = {delta:.4}), epsilon = {:.3}", cfg.spectrum.analysis_hz / 1e6, d.epsilon);
    println!("  degenerate squeezing {}   inter-beam correlations at psi0 {}", fmt_db(pred_sq), fmt_db(pred_corr));
    if let Some(gain) = m.gain {
        println!("  phase-sensitive gain {gain} -> epsilon = {:.4}", pump_param_from_gain(gain)?);
    }

    if cli.out.is_some() {
        let rows = [
            ("squeeze_corrected", sq_c.value, "single_SQL"),
            ("antisqueeze_corrected", anti_c.value, "single_SQL"),
            ("correlation_corrected", corr_c.value, "two_SQL"),
            ("conjugate_correlation_corrected", conj_c.value, "two_SQL"),
            ("separability_sum", sep.sum, "two_SQL"),
            ("epr_product", epr.product, "single_SQL"),
            ("xi", d.eta, ""),
            ("sigma", d.sigma, ""),
            ("predicted_squeeze", pred_sq, "single_SQL"),
            ("predicted_correlation", pred_corr, "two_SQL"),
        ];
        emit(cli, |w| {
            writeln!(w, "# command=report")?;
            writeln!(w, "# floor_db={floor:e}")?;
            writeln!(w, "figure,value,value_db,reference")?;
            for (name, v, r) in rows {
                let v_db = db(v).map(|x| format!("{x:e}")).unwrap_or_default();
                writeln!(w, "{name},{v:e},{v_db},{r}")?;
            }
            Ok(())
        })?;
    }
    Ok(true)
}

fn cmd_threshold(cfg: &Config) -> Result<bool> {
    let c = cfg.cavity.as_ref().context("threshold needs a [cavity] section")?;
    let loss = c.coupler_t + c.residual_l + c.pump_loss_lp;
    println!("round-trip loss T + L + L_P = {loss:.4}");
    if let Ok(r) = cavity_rates(&c.geometry()) {
        println!("cavity FWHM = {:.3} MHz", r.fwhm_hz / 1e6);
    }
    if let Some(e) = c.e_nl_per_watt {
        let p = threshold_power(c.coupler_t, c.residual_l, c.pump_loss_lp, e)?;
        println!("E_NL = {e} /W -> P_th = {:.1} mW", p * 1e3);
    }
    if let Some(p_th) = cfg.opo.threshold_power {
        let e = e_nl_from_threshold(p_th, c.coupler_t, c.residual_l, c.pump_loss_lp)?;
        println!("P_th = {:.1} mW -> E_NL = {e:.5} /W", p_th * 1e3);
        if let Some(p) = cfg.opo.pump_power {
            println!("pump {:.1} mW -> epsilon = {:.4}", p * 1e3, epsilon_from_powers(p, p_th)?);
        }
    }
    if let Some(g) = cfg.measured.gain {
        println!("gain {g} -> epsilon = {:.4}", pump_param_from_gain(g)?);
    }
    Ok(true)
}

fn cmd_bandwidth(cfg: &Config) -> Result<bool> {
    let d = cfg.derived()?;
    let psi = cfg.psi()?;
    let f = entanglement_bandwidth(&d, psi, cfg.rate_scale()?)?;
    println!("entanglement FWHM = {:.3} MHz (psi = {psi:.6} rad, epsilon = {:.3})", f / 1e6, d.epsilon);
    if let Some(c) = &cfg.cavity {
        let r = cavity_rates(&c.geometry())?;
        println!("cavity FWHM = {:.3} MHz, ratio {:.4}", r.fwhm_hz / 1e6, f / r.fwhm_hz);
    }
    Ok(true)
}

fn cmd_fringe_audit(cli: &Cli, cfg: &Config) -> Result<bool> {
    let f = &cfg.fringe;
    if f.samples < 2 || f.trials == 0 {
        bail!("fringe.samples must be at least 2 and fringe.trials at least 1");
    }
    let scan: Vec<f64> = (0..f.samples)
        .map(|i| 2.0 * std::f64::consts::PI * f.periods * i as f64 / (f.samples - 1) as f64)
        .collect();
    let lo = (f.theta_plus, f.theta_minus);
    let chi = cfg.opo.chi;
    let exact = phase_audit(chi, f.theta_prime, &scan, lo, 0.0, 0)?;
    println!("noiseless: phase difference {:.4} (correlations), {:.4} (anticorrelations), shift {:.6} rad",
        exact.difference_correlations, exact.difference_anticorrelations, exact.shift);
    let seed = cfg.simulation.seed;
    let shifts = (0..f.trials as u64)
        .map(|k| phase_audit(chi, f.theta_prime, &scan, lo, f.noise_level, seed.wrapping_mul(1_000_003).wrapping_add(k)))
        .collect::<ndopo_core::Result<Vec<_>>>()?;
    let n = shifts.len() as f64;
    let mean = shifts.iter().map(|a| a.shift).sum::<f64>() / n;
    let sd = if shifts.len() > 1 {
        (shifts.iter().map(|a| (a.shift - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    println!(
        "noise {:.3}: shift {:.3} +- {:.3} rad for one audit (fit error {:.3}); mean of {} audits {mean:.4} +- {:.4}",
        f.noise_level,
        shifts[0].shift,
        sd,
        shifts[0].shift_stderr,
        shifts.len(),
        sd / n.sqrt()
    );
    if cli.out.is_some() {
        let m = InjectionModel {
            chi,
            theta_prime: f.theta_prime,
            lock_mode: LockMode::Correlations,
        };
        let (a, b) = dfg_fringes(&m, &scan, lo, f.noise_level, seed)?;
        let md = meta(&[("command", "fringe-audit".into()), ("noise_level", format!("{:e}", f.noise_level))]);
        emit(cli, |w| Ok(write_fringe_csv(w, &a, &b, &md)?))?;
    }
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Spectrum => cmd_spectrum(cli, &cfg),
        Command::OptimizePsi => cmd_optimize_psi(&cfg),
        Command::Squeeze => cmd_squeeze(cli, &cfg),
        Command::Validate { corrupt_analytic } => cmd_validate(cli, &cfg, *corrupt_analytic),
        Command::Simulate { dump } => cmd_simulate(cli, &cfg, dump.as_deref()),
        Command::Report => cmd_report(cli, &cfg),
        Command::Threshold => cmd_threshold(&cfg),
        Command::Bandwidth => cmd_bandwidth(&cfg),
        Command::FringeAudit => cmd_fringe_audit(cli, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
