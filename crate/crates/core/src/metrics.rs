//! Entanglement and EPR figures of merit, and the measurement corrections
//! applied before evaluating them.
//!
//! Every variance carries the vacuum level it is normalized to. Binary
//! operations check the level instead of converting silently.

use std::fmt;

use crate::error::{Error, Result};
use crate::params::{db, from_db};

/// Vacuum level a variance is normalized to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reference {
    /// One coherent state (one detector) contributes 1.
    SingleSql,
    /// Two independent coherent states contribute 1 together.
    TwoSql,
}

impl Reference {
    pub fn as_str(self) -> &'static str {
        match self {
            Reference::SingleSql => "single_SQL",
            Reference::TwoSql => "two_SQL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single_SQL" => Some(Reference::SingleSql),
            "two_SQL" => Some(Reference::TwoSql),
            _ => None,
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFigure {
    pub value: f64,
    pub reference: Reference,
    pub corrected: bool,
}

impl NoiseFigure {
    pub fn new(value: f64, reference: Reference) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter {
                name: "value",
                value,
                reason: "variance ratio must be positive",
            });
        }
        Ok(NoiseFigure {
            value,
            reference,
            corrected: false,
        })
    }

    pub fn from_db(level_db: f64, reference: Reference) -> Result<Self> {
        Self::new(from_db(level_db), reference)
    }

    pub fn db(&self) -> f64 {
        db(self.value).expect("noise figure values are positive")
    }

    fn expect_reference(&self, expected: Reference) -> Result<()> {
        if self.reference != expected {
            return Err(Error::ReferenceMismatch {
                expected,
                found: self.reference,
            });
        }
        Ok(())
    }
}

/// Removes additive detector noise lying `floor_db_below_sql` below the SQL.
///
/// The floor is present in both the measured trace and the SQL trace, so with
/// `f = 10^(-floor/10)` and `m` the measured ratio the corrected ratio is
/// `(m - f) / (1 - f)`.
pub fn correct_electronic(measured: NoiseFigure, floor_db_below_sql: f64) -> Result<NoiseFigure> {
    if measured.corrected {
        return Err(Error::AlreadyCorrected);
    }
    if floor_db_below_sql.is_nan() || floor_db_below_sql <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "floor_db_below_sql",
            value: floor_db_below_sql,
            reason: "electronic floor must lie below the SQL",
        });
    }
    let floor = from_db(-floor_db_below_sql);
    let m = measured.value;
    if m <= floor {
        return Err(Error::BelowFloor {
            measured_db: measured.db(),
            floor_db: floor_db_below_sql,
        });
    }
    Ok(NoiseFigure {
        value: (m - floor) / (1.0 - floor),
        reference: measured.reference,
        corrected: true,
    })
}

/// Sum of two conjugate joint-quadrature variances against the separable bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityResult {
    pub sum: f64,
    pub bound: f64,
    pub entangled: bool,
    pub margin_db: f64,
}

pub const SEPARABILITY_BOUND: f64 = 2.0;

/// Both inputs must be normalized to the two-beam SQL, so two vacua sum to 2.
pub fn separability(v_diff: NoiseFigure, v_sum_conj: NoiseFigure) -> Result<SeparabilityResult> {
    v_diff.expect_reference(Reference::TwoSql)?;
    v_sum_conj.expect_reference(Reference::TwoSql)?;
    let sum = v_diff.value + v_sum_conj.value;
    Ok(SeparabilityResult {
        sum,
        bound: SEPARABILITY_BOUND,
        entangled: sum < SEPARABILITY_BOUND,
        margin_db: db(sum / SEPARABILITY_BOUND)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EprResult {
    pub v_inf_1: f64,
    pub v_inf_2: f64,
    pub product: f64,
    pub paradox: bool,
}

/// Product of the inferred variances of two conjugate quadratures.
///
/// The inferred variances are the measured conditional variances taken with
/// unit gain, normalized to the single-beam SQL.
pub fn epr_product(v1: NoiseFigure, v2: NoiseFigure) -> Result<EprResult> {
    v1.expect_reference(Reference::SingleSql)?;
    v2.expect_reference(Reference::SingleSql)?;
    let product = v1.value * v2.value;
    Ok(EprResult {
        v_inf_1: v1.value,
        v_inf_2: v2.value,
        product,
        paradox: product < 1.0,
    })
}

/// Re-expresses the same physical variance against another vacuum level.
pub fn reference_convert(fig: NoiseFigure, target: Reference) -> NoiseFigure {
    let value = match (fig.reference, target) {
        (a, b) if a == b => fig.value,
        (Reference::TwoSql, Reference::SingleSql) => 2.0 * fig.value,
        (Reference::SingleSql, Reference::TwoSql) => 0.5 * fig.value,
        _ => unreachable!(),
    };
    NoiseFigure {
        value,
        reference: target,
        corrected: fig.corrected,
    }
}
