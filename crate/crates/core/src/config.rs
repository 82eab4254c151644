//! Run configuration: a TOML file plus `section.key=value` overrides.
//!
//! Precedence is overrides > file > built-in defaults. Unknown sections and
//! keys are rejected; errors from the file carry its line numbers.

use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::langevin::{SimConfig, Thresholds, WelchConfig, Window};
use crate::params::{cavity_rates, derive_params, overall_efficiency, CavityGeometry, DerivedParams, DetectionChain, OpoParams};
use crate::spectra::{linear_grid, optimal_psi};

/// Seed used when neither the file nor the command line sets one.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub opo: OpoSection,
    pub cavity: Option<CavitySection>,
    pub detection_plus: Option<DetectionSection>,
    pub detection_minus: Option<DetectionSection>,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub measured: MeasuredSection,
    #[serde(default)]
    pub fringe: FringeSection,
}

/// Rates in any consistent unit. Missing rates come from `[cavity]` when
/// present, otherwise `gamma = kappa = 1`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpoSection {
    pub gamma_plus: Option<f64>,
    pub gamma_minus: Option<f64>,
    pub kappa_plus: Option<f64>,
    pub kappa_minus: Option<f64>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub chi: f64,
    /// Pump power and threshold (W); when both are set they override `epsilon`.
    pub pump_power: Option<f64>,
    pub threshold_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub fsr_hz: f64,
    #[serde(rename = "coupler_T")]
    pub coupler_t: f64,
    #[serde(rename = "residual_L", default)]
    pub residual_l: f64,
    #[serde(rename = "pump_loss_Lp", default)]
    pub pump_loss_lp: f64,
    #[serde(default)]
    pub e_nl_per_watt: Option<f64>,
}

impl CavitySection {
    pub fn geometry(&self) -> CavityGeometry {
        CavityGeometry {
            fsr_hz: self.fsr_hz,
            coupler_t: self.coupler_t,
            residual_l: self.residual_l,
            pump_loss_lp: self.pump_loss_lp,
            e_nl_per_watt: self.e_nl_per_watt.unwrap_or(0.0),
        }
    }
}

/// Detection factors; `escape` defaults to `kappa / gamma` of the mode.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub escape: Option<f64>,
    #[serde(default = "one")]
    pub prop: f64,
    #[serde(default = "one")]
    pub lo_overlap: f64,
    #[serde(default = "one")]
    pub qe: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PsiValue {
    Radians(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    /// `0`, `"pi/4"`, `"-pi/4"`, `"opt"` or a number of radians.
    #[serde(default = "default_psi")]
    pub psi: PsiValue,
    /// Frequency at which `"opt"` minimizes the `Q_-` noise.
    #[serde(default)]
    pub delta0: f64,
    #[serde(default)]
    pub grid_min: f64,
    #[serde(default = "default_grid_max")]
    pub grid_max: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Analysis frequency (Hz) for single-point figures.
    #[serde(default = "default_analysis_hz")]
    pub analysis_hz: f64,
}

fn default_psi() -> PsiValue {
    PsiValue::Named("pi/4".into())
}
fn default_grid_max() -> f64 {
    3.0
}
fn default_grid_n() -> usize {
    301
}
fn default_analysis_hz() -> f64 {
    1.15e6
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            psi: default_psi(),
            delta0: 0.0,
            grid_min: 0.0,
            grid_max: default_grid_max(),
            grid_n: default_grid_n(),
            analysis_hz: default_analysis_hz(),
        }
    }
}

/// Monte-Carlo settings in normalized time (`gamma_- = 1`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Retained steps per realization, after burn-in.
    #[serde(default = "default_record")]
    pub record_steps: usize,
    /// Defaults to the minimum of ten decay times.
    pub burn_in: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default = "default_segment")]
    pub segment_len: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_grid_max")]
    pub max_delta: f64,
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    #[serde(default = "default_max_rms")]
    pub max_rms: f64,
    #[serde(default = "yes")]
    pub feedthrough: bool,
}

fn default_dt() -> f64 {
    0.002
}
fn default_record() -> usize {
    200 << 17
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_realizations() -> usize {
    16
}
fn default_segment() -> usize {
    1 << 17
}
fn default_overlap() -> f64 {
    0.5
}
fn default_k_sigma() -> f64 {
    3.0
}
fn default_min_fraction() -> f64 {
    0.99
}
fn default_max_rms() -> f64 {
    0.02
}
fn yes() -> bool {
    true
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dt: default_dt(),
            record_steps: default_record(),
            burn_in: None,
            seed: DEFAULT_SEED,
            n_realizations: default_realizations(),
            segment_len: default_segment(),
            overlap: default_overlap(),
            max_delta: default_grid_max(),
            k_sigma: default_k_sigma(),
            min_fraction: default_min_fraction(),
            max_rms: default_max_rms(),
            feedthrough: true,
        }
    }
}

impl SimulationSection {
    pub fn sim_config(&self, p: &OpoParams) -> SimConfig {
        let mut cfg = SimConfig::new(p, self.dt, self.record_steps, self.seed, self.n_realizations);
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
            cfg.n_steps = b + self.record_steps;
        }
        cfg.feedthrough = self.feedthrough;
        cfg
    }

    pub fn welch(&self) -> WelchConfig {
        WelchConfig {
            segment_len: self.segment_len,
            overlap: self.overlap,
            window: Window::Hann,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            k_sigma: self.k_sigma,
            min_fraction: self.min_fraction,
            max_rms: self.max_rms,
        }
    }
}

/// Laboratory readings in dB relative to the SQL.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredSection {
    /// Degenerate-mode squeezed quadrature (single-beam SQL).
    pub squeeze_db: Option<f64>,
    pub antisqueeze_db: Option<f64>,
    /// Inter-beam correlation (two-beam SQL).
    pub correlation_db: Option<f64>,
    /// Conjugate joint quadrature; taken equal to `correlation_db` when absent.
    pub conjugate_correlation_db: Option<f64>,
    /// Inferred variances of the two conjugate idler quadratures (single-beam SQL).
    pub epr_inferred_1_db: Option<f64>,
    pub epr_inferred_2_db: Option<f64>,
    /// Electronic noise floor, dB below the SQL.
    pub floor_db: Option<f64>,
    /// Phase-sensitive gain of an injected seed.
    pub gain: Option<f64>,
}

/// Synthetic fringe scan for the phase audit.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeSection {
    #[serde(default = "default_fringe_samples")]
    pub samples: usize,
    #[serde(default = "default_periods")]
    pub periods: f64,
    #[serde(default)]
    pub theta_plus: f64,
    #[serde(default)]
    pub theta_minus: f64,
    #[serde(default)]
    pub theta_prime: f64,
    #[serde(default = "default_fringe_noise")]
    pub noise_level: f64,
    #[serde(default = "default_fringe_trials")]
    pub trials: usize,
}

fn default_fringe_samples() -> usize {
    200
}
fn default_periods() -> f64 {
    3.3
}
fn default_fringe_noise() -> f64 {
    0.32
}
fn default_fringe_trials() -> usize {
    200
}

impl Default for FringeSection {
    fn default() -> Self {
        FringeSection {
            samples: default_fringe_samples(),
            periods: default_periods(),
            theta_plus: 0.0,
            theta_minus: 0.0,
            theta_prime: 0.0,
            noise_level: default_fringe_noise(),
            trials: default_fringe_trials(),
        }
    }
}

/// Keys accepted per section, for override lookup and error messages.
pub const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("opo", &["gamma_plus", "gamma_minus", "kappa_plus", "kappa_minus", "epsilon", "chi", "pump_power", "threshold_power"]),
    ("cavity", &["fsr_hz", "coupler_T", "residual_L", "pump_loss_Lp", "e_nl_per_watt"]),
    ("detection_plus", &["escape", "prop", "lo_overlap", "qe"]),
    ("detection_minus", &["escape", "prop", "lo_overlap", "qe"]),
    ("spectrum", &["psi", "delta0", "grid_min", "grid_max", "grid_n", "analysis_hz"]),
    (
        "simulation",
        &[
            "dt", "record_steps", "burn_in", "seed", "n_realizations", "segment_len", "overlap", "max_delta", "k_sigma",
            "min_fraction", "max_rms", "feedthrough",
        ],
    ),
    (
        "measured",
        &[
            "squeeze_db", "antisqueeze_db", "correlation_db", "conjugate_correlation_db", "epr_inferred_1_db",
            "epr_inferred_2_db", "floor_db", "gain",
        ],
    ),
    ("fringe", &["samples", "periods", "theta_plus", "theta_minus", "theta_prime", "noise_level", "trials"]),
];

/// Resolves `key` (either `section.key` or a key unique across sections).
fn qualify(key: &str) -> Result<(&'static str, &'static str)> {
    let (section, name) = match key.split_once('.') {
        Some((s, n)) => (Some(s), n),
        None => (None, key),
    };
    let hits: Vec<_> = KNOWN_KEYS
        .iter()
        .filter(|(s, _)| section.is_none_or(|want| want == *s))
        .flat_map(|(s, keys)| keys.iter().filter(|k| **k == name).map(move |k| (*s, *k)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::Config(format!("unknown configuration key `{key}`"))),
        many => Err(Error::Config(format!(
            "ambiguous key `{key}`; use one of {}",
            many.iter().map(|(s, k)| format!("{s}.{k}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let (section, name) = qualify(key.trim())?;
    let entry = table
        .entry(section)
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = entry else {
        return Err(Error::Config(format!("`{section}` is not a table")));
    };
    sec.insert(name.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Parses TOML text and applies `overrides` in order.
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self> {
        // parse the file on its own first so errors point at its lines
        let from_file: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if overrides.is_empty() {
            return Ok(from_file);
        }
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after command-line overrides: {}", e.message())))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults plus overrides, without a file.
    pub fn defaults_with(overrides: &[String]) -> Result<Self> {
        Self::from_str_with("", overrides)
    }

    pub fn epsilon(&self) -> Result<f64> {
        match (self.opo.pump_power, self.opo.threshold_power) {
            (Some(p), Some(th)) => crate::lab::epsilon_from_powers(p, th),
            (None, None) => Ok(self.opo.epsilon),
            _ => Err(Error::Config("opo.pump_power and opo.threshold_power must be given together".into())),
        }
    }

    /// Oscillator rates: explicit values first, then the cavity, then unit rates.
    pub fn opo_params(&self) -> Result<OpoParams> {
        let (gamma, escape) = match &self.cavity {
            Some(c) => {
                let r = cavity_rates(&c.geometry())?;
                (r.gamma, r.kappa / r.gamma)
            }
            None => (1.0, 1.0),
        };
        let gp = self.opo.gamma_plus.unwrap_or(gamma);
        let gm = self.opo.gamma_minus.unwrap_or(gamma);
        let p = OpoParams {
            gamma_plus: gp,
            gamma_minus: gm,
            kappa_plus: self.opo.kappa_plus.unwrap_or(escape * gp),
            kappa_minus: self.opo.kappa_minus.unwrap_or(escape * gm),
            epsilon: self.epsilon()?,
            chi: self.opo.chi,
        };
        p.validate()?;
        Ok(p)
    }

    fn chain(section: &Option<DetectionSection>, escape: f64) -> Option<DetectionChain> {
        section.as_ref().map(|d| DetectionChain {
            escape: d.escape.unwrap_or(escape),
            prop: d.prop,
            lo_overlap: d.lo_overlap,
            qe: d.qe,
        })
    }

    /// Detection chains of both modes, if configured.
    pub fn detection(&self) -> Result<(Option<DetectionChain>, Option<DetectionChain>)> {
        let p = self.opo_params()?;
        Ok((
            Self::chain(&self.detection_plus, p.kappa_plus / p.gamma_plus),
            Self::chain(&self.detection_minus, p.kappa_minus / p.gamma_minus),
        ))
    }

    /// Spectral parameters with overall detection efficiencies folded in.
    pub fn derived(&self) -> Result<DerivedParams> {
        let p = self.opo_params()?;
        let d = derive_params(&p)?;
        let (plus, minus) = self.detection()?;
        let xi_plus = plus.map(|c| overall_efficiency(&c)).transpose()?.unwrap_or(d.eta_plus);
        let xi_minus = minus.map(|c| overall_efficiency(&c)).transpose()?.unwrap_or(d.eta_minus);
        d.with_efficiencies(xi_plus, xi_minus)
    }

    /// Normalized oscillator (`gamma_- = 1`) whose escape efficiencies equal the
    /// overall efficiencies; used by the Monte-Carlo oracle.
    pub fn simulation_params(&self) -> Result<OpoParams> {
        Ok(self.derived()?.to_opo_params(1.0))
    }

    /// Resolved rotation angle.
    pub fn psi(&self) -> Result<f64> {
        match &self.spectrum.psi {
            PsiValue::Radians(v) if v.is_finite() => Ok(*v),
            PsiValue::Radians(v) => Err(Error::Config(format!("spectrum.psi = {v} is not finite"))),
            PsiValue::Named(s) => match s.trim() {
                "0" => Ok(0.0),
                "pi/4" => Ok(FRAC_PI_4),
                "-pi/4" => Ok(-FRAC_PI_4),
                "opt" | "optimal" => {
                    let d = self.derived()?;
                    optimal_psi(self.spectrum.delta0, d.epsilon, d.sigma)
                }
                other => other
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("spectrum.psi: expected 0, pi/4, -pi/4, opt or radians, got `{other}`"))),
            },
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        linear_grid(self.spectrum.grid_min, self.spectrum.grid_max, self.spectrum.grid_n)
    }

    pub fn rate_scale(&self) -> Result<f64> {
        Ok(self.opo_params()?.rate_scale())
    }
}
