//! Minimum sample and pilot sizes from the Hoeffding-style error bounds.
//!
//! All calculators are pure arithmetic over caller-supplied estimates (density
//! `ρ`, attribute range `[a, b]`, `|AVG_S|`, `|ON_D|`); nothing here looks at
//! data.

use serde::{Deserialize, Serialize};

use crate::aggregate::Aggregation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsInput {
    pub alpha: f64,
    /// Neighborhood density `|ON_S| / |S|`.
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    /// Sampling-error tolerance.
    pub omega_s: f64,
    /// Selection-error tolerance.
    pub omega_nn: f64,
    /// Precision–recall gap tolerance.
    pub omega_c: f64,
    /// Tolerance on the pilot-vs-sample F1 difference.
    pub lambda: f64,
    pub population_size: usize,
    /// `|ON_S|`; estimated as `max(1, round(ρ·s))` when unset.
    pub on_s_size: Option<usize>,
    /// Estimate of `|AVG_S|` (SUM only).
    pub avg_s_abs: Option<f64>,
    /// Estimate of `|ON_D|` (SUM only).
    pub on_d_size: Option<usize>,
}

impl Default for BoundsInput {
    fn default() -> Self {
        BoundsInput {
            alpha: 0.05,
            rho: 1.0,
            a: 0.0,
            b: 1.0,
            omega_s: 0.05,
            omega_nn: 0.1,
            omega_c: 0.0001,
            lambda: 0.5,
            population_size: 1,
            on_s_size: None,
            avg_s_abs: None,
            on_d_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsOutput {
    pub s_min: u64,
    pub s_p_min: u64,
    /// Selection error implied by `λ` (value-sensitive aggregates only).
    pub omega_nn_implied: Option<f64>,
    /// Set when `s` was raised to the pilot size.
    pub reconciled: bool,
    /// Unrounded sample size.
    pub s_raw: f64,
    /// Unrounded pilot size.
    pub s_p_raw: f64,
}

/// `⌈x⌉`, tolerant of round-off just above an integer.
fn ceil_size(x: f64) -> u64 {
    let c = (x * (1.0 - 4.0 * f64::EPSILON)).ceil();
    c.max(1.0) as u64
}

fn open_unit(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} is outside (0, 1)")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} must be positive")))
    }
}

fn check_common(inp: &BoundsInput) -> Result<()> {
    open_unit("alpha", inp.alpha)?;
    if !(inp.rho > 0.0 && inp.rho <= 1.0) {
        return Err(Error::invalid("rho", format!("{} is outside (0, 1]", inp.rho)));
    }
    positive("omega_s", inp.omega_s)
}

fn check_range(inp: &BoundsInput) -> Result<f64> {
    if !(inp.a < inp.b) || !inp.a.is_finite() || !inp.b.is_finite() {
        return Err(Error::invalid("a", format!("need a < b, got a = {}, b = {}", inp.a, inp.b)));
    }
    Ok(inp.b - inp.a)
}

fn pilot_gap(omega_nn: f64, inp: &BoundsInput) -> Result<f64> {
    if !(inp.omega_c >= 0.0) {
        return Err(Error::invalid("omega_c", format!("{} must be nonnegative", inp.omega_c)));
    }
    let gap = omega_nn - inp.rho * inp.omega_c;
    if !(gap > 0.0) {
        return Err(Error::NonPositiveSelectionBudget);
    }
    Ok(gap)
}

fn on_s_estimate(inp: &BoundsInput, s: u64) -> usize {
    inp.on_s_size
        .unwrap_or_else(|| ((inp.rho * s as f64).round() as usize).max(1))
}

/// Sizes for AVG and VAR.
///
/// `s = κ1/ω_S²` with `κ1 = (b−a)² ln(2/α)/(2ρ)` for AVG and
/// `(b−a)⁴ ln(2/α)/(2ρ)` for VAR; `s_p = 32 ln(2/α)/λ²`. The implied
/// selection error is `C1·λ + C2·λ²`.
pub fn min_sizes_value(agg: Aggregation, inp: &BoundsInput) -> Result<BoundsOutput> {
    check_common(inp)?;
    let range = check_range(inp)?;
    positive("lambda", inp.lambda)?;
    let ln = (2.0 / inp.alpha).ln();
    let spread = match agg {
        Aggregation::Avg => range * range,
        Aggregation::Var => range.powi(4),
        other => return Err(Error::invalid("agg", format!("{other} is not value-sensitive"))),
    };
    let kappa1 = spread * ln / (2.0 * inp.rho);
    let kappa2 = 32.0 * ln;
    let s_raw = kappa1 / (inp.omega_s * inp.omega_s);
    let s_p_raw = kappa2 / (inp.lambda * inp.lambda);
    let s_min = ceil_size(s_raw);
    let on_s = on_s_estimate(inp, s_min) as f64;
    let (c1, c2) = match agg {
        Aggregation::Avg => (2.0 * range / on_s, 0.0),
        _ => (3.0 * range * range / on_s, range * range / on_s),
    };
    Ok(BoundsOutput {
        s_min,
        s_p_min: ceil_size(s_p_raw),
        omega_nn_implied: Some(c1 * inp.lambda + c2 * inp.lambda * inp.lambda),
        reconciled: false,
        s_raw,
        s_p_raw,
    })
}

/// Sizes for PCT and COUNT.
///
/// `s = κ1/ω_S²` with `κ1 = ½ ln(2/α)` for PCT and `|D|²/2 · ln(2/α)` for
/// COUNT; `s_p = κ2/(ω_NN − ρ·ω_C)²` with `κ2 = 2 ln(2/α)/ρ²`.
pub fn min_sizes_count(agg: Aggregation, inp: &BoundsInput) -> Result<BoundsOutput> {
    check_common(inp)?;
    positive("omega_nn", inp.omega_nn)?;
    let ln = (2.0 / inp.alpha).ln();
    let kappa1 = match agg {
        Aggregation::Pct => 0.5 * ln,
        Aggregation::Count => {
            if inp.population_size == 0 {
                return Err(Error::invalid("population_size", "must be positive"));
            }
            let d = inp.population_size as f64;
            d * d / 2.0 * ln
        }
        other => return Err(Error::invalid("agg", format!("{other} is not count-sensitive"))),
    };
    let gap = pilot_gap(inp.omega_nn, inp)?;
    let s_raw = kappa1 / (inp.omega_s * inp.omega_s);
    let s_p_raw = kappa2_count(inp.alpha, inp.rho) / (gap * gap);
    Ok(BoundsOutput {
        s_min: ceil_size(s_raw),
        s_p_min: ceil_size(s_p_raw),
        omega_nn_implied: None,
        reconciled: false,
        s_raw,
        s_p_raw,
    })
}

fn kappa2_count(alpha: f64, rho: f64) -> f64 {
    2.0 * (2.0 / alpha).ln() / (rho * rho)
}

/// Sizes for SUM.
///
/// `s = max(s^count, s^avg)` with `s^count = 2|D|²|AVG_S|² ln(4/α)/ω_S²` and
/// `s^avg = 2(b−a)²|ON_D|² ln(4/α)/ω_S²`. The pilot takes the larger of the
/// COUNT pilot size at `ω_NN^SUM = ω_NN·s/(2|D||AVG_S|)` and the AVG pilot size
/// `32 ln(2/α)/λ²`.
///
/// `|AVG_S|` is the quantity being estimated, so callers must supply a prior
/// estimate (the harness uses the pilot mean).
pub fn min_sizes_sum(inp: &BoundsInput) -> Result<BoundsOutput> {
    check_common(inp)?;
    check_range(inp)?;
    positive("omega_nn", inp.omega_nn)?;
    positive("lambda", inp.lambda)?;
    let avg = inp
        .avg_s_abs
        .ok_or_else(|| Error::invalid("avg_s_abs", "required for SUM"))?;
    positive("avg_s_abs", avg)?;
    let on_d = inp
        .on_d_size
        .ok_or_else(|| Error::invalid("on_d_size", "required for SUM"))?;
    if on_d == 0 {
        return Err(Error::invalid("on_d_size", "must be at least 1"));
    }
    if inp.population_size == 0 {
        return Err(Error::invalid("population_size", "must be positive"));
    }
    let d = inp.population_size as f64;
    let (s_count, s_avg) = sum_terms(inp, avg, on_d);
    let s_raw = s_count.max(s_avg);
    let s_min = ceil_size(s_raw);

    let omega_nn_sum = inp.omega_nn * s_min as f64 / (2.0 * d * avg);
    let gap = pilot_gap(omega_nn_sum, inp)?;
    let sp_count = kappa2_count(inp.alpha, inp.rho) / (gap * gap);
    let sp_avg = 32.0 * (2.0 / inp.alpha).ln() / (inp.lambda * inp.lambda);
    let s_p_raw = sp_count.max(sp_avg);
    Ok(BoundsOutput {
        s_min,
        s_p_min: ceil_size(s_p_raw),
        omega_nn_implied: Some(omega_nn_sum),
        reconciled: false,
        s_raw,
        s_p_raw,
    })
}

/// The two sample-size terms of the SUM bound, `(s^count, s^avg)`, unrounded.
pub fn sum_terms(inp: &BoundsInput, avg_s_abs: f64, on_d_size: usize) -> (f64, f64) {
    let d = inp.population_size as f64;
    let range = inp.b - inp.a;
    let k = 2.0 * (4.0 / inp.alpha).ln() / (inp.omega_s * inp.omega_s);
    let on_d = on_d_size as f64;
    (k * d * d * avg_s_abs * avg_s_abs, k * range * range * on_d * on_d)
}

/// Dispatches on the aggregate.
pub fn min_sizes(agg: Aggregation, inp: &BoundsInput) -> Result<BoundsOutput> {
    match agg {
        Aggregation::Avg | Aggregation::Var => min_sizes_value(agg, inp),
        Aggregation::Pct | Aggregation::Count => min_sizes_count(agg, inp),
        Aggregation::Sum => min_sizes_sum(inp),
    }
}

/// Raises `s` to the pilot size when the pilot would not fit in the sample.
pub fn reconcile_sizes(out: BoundsOutput) -> BoundsOutput {
    if out.s_p_min > out.s_min {
        BoundsOutput {
            s_min: out.s_p_min,
            reconciled: true,
            ..out
        }
    } else {
        out
    }
}
