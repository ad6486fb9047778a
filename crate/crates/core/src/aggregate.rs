//! Aggregation over neighbor attribute bags and the relative-error metric.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregation {
    Avg,
    Var,
    Pct,
    Count,
    Sum,
}

/// Which kind of neighbor-selection error an aggregate reacts to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Value,
    Count,
    Both,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Avg,
        Aggregation::Var,
        Aggregation::Pct,
        Aggregation::Count,
        Aggregation::Sum,
    ];

    pub fn sensitivity(self) -> Sensitivity {
        match self {
            Aggregation::Avg | Aggregation::Var => Sensitivity::Value,
            Aggregation::Pct | Aggregation::Count => Sensitivity::Count,
            Aggregation::Sum => Sensitivity::Both,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Avg => "AVG",
            Aggregation::Var => "VAR",
            Aggregation::Pct => "PCT",
            Aggregation::Count => "COUNT",
            Aggregation::Sum => "SUM",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AVG" => Ok(Aggregation::Avg),
            "VAR" => Ok(Aggregation::Var),
            "PCT" => Ok(Aggregation::Pct),
            "COUNT" => Ok(Aggregation::Count),
            "SUM" => Ok(Aggregation::Sum),
            _ => Err(Error::invalid("agg", format!("unknown aggregation {s:?}"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggScope {
    /// Scale a sample-level result up to the population.
    SampleEstimate,
    /// The bag is the full population neighborhood.
    PopulationTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregationContext {
    pub sample_size: usize,
    pub population_size: usize,
    pub scope: AggScope,
}

impl AggregationContext {
    pub fn sample(sample_size: usize, population_size: usize) -> Self {
        AggregationContext {
            sample_size,
            population_size,
            scope: AggScope::SampleEstimate,
        }
    }

    pub fn truth(population_size: usize) -> Self {
        AggregationContext {
            sample_size: population_size,
            population_size,
            scope: AggScope::PopulationTruth,
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `n`).
fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Evaluates `agg` over the attribute bag of a neighbor set.
///
/// Sample estimates scale counts by `|D| / s`: PCT is `count / s`, COUNT is
/// `|D| · count / s` and SUM is `(|D| / s) · Σ values`, which equals
/// `|D| · PCT · AVG`.
pub fn aggregate(agg: Aggregation, values: &[f64], ctx: &AggregationContext) -> Result<f64> {
    if ctx.sample_size == 0 || ctx.population_size == 0 {
        return Err(Error::invalid("context", "sizes must be positive"));
    }
    if ctx.sample_size > ctx.population_size {
        return Err(Error::invalid("context", "sample larger than population"));
    }
    let n = values.len() as f64;
    let s = ctx.sample_size as f64;
    let d = ctx.population_size as f64;
    let truth = ctx.scope == AggScope::PopulationTruth;
    Ok(match agg {
        Aggregation::Avg | Aggregation::Var if values.is_empty() => return Err(Error::EmptyNeighborhood),
        Aggregation::Avg => mean(values),
        Aggregation::Var => variance(values),
        Aggregation::Count if truth => n,
        Aggregation::Count => d * n / s,
        Aggregation::Pct if truth => n / d,
        Aggregation::Pct => n / s,
        Aggregation::Sum if truth => values.iter().sum(),
        Aggregation::Sum => d / s * values.iter().sum::<f64>(),
    })
}

/// `|estimate − truth| / |truth| × 100`.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok((estimate - truth).abs() / truth.abs() * 100.0)
}
