//! One-sample hypothesis tests over query results.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::aggregate::Aggregation;
use crate::error::{Error, Result};

/// Comparison in the null hypothesis `agg op c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "!=")]
    Ne,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Ge => ">=",
            Op::Le => "<=",
            Op::Ne => "!=",
        })
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            ">=" | "ge" | "≥" => Ok(Op::Ge),
            "<=" | "le" | "≤" => Ok(Op::Le),
            "!=" | "ne" | "≠" => Ok(Op::Ne),
            other => Err(Error::invalid("op", format!("unknown operator {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub agg: Aggregation,
    pub op: Op,
    pub c: f64,
    pub alpha: f64,
}

/// `reject_null` is false for "fail to reject".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub reject_null: bool,
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(T > t)` for Student's t with `nu` degrees of freedom.
pub fn t_upper_tail(t: f64, nu: f64) -> f64 {
    let half = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + t * t));
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// `P(Z > z)` for the standard normal.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `≥` tests against the left tail, `≤` against the right, `≠` both.
fn p_value(stat: f64, op: Op, upper: impl Fn(f64) -> f64) -> f64 {
    let p = match op {
        Op::Ge => upper(-stat),
        Op::Le => upper(stat),
        Op::Ne => 2.0 * upper(stat.abs()),
    };
    p.clamp(0.0, 1.0)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} is outside (0, 1)")))
    }
}

/// One-sample t-test of the mean with the `n − 1` sample standard deviation.
pub fn t_test_one_sample(values: &[f64], h: &Hypothesis) -> Result<TestDecision> {
    check_alpha(h.alpha)?;
    if values.len() < 2 {
        return Err(Error::invalid("values", format!("need at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::invalid("values", "sample standard deviation is zero"));
    }
    let statistic = (mean - h.c) / (sd / n.sqrt());
    let p = p_value(statistic, h.op, |t| t_upper_tail(t, n - 1.0));
    Ok(TestDecision {
        reject_null: p < h.alpha,
        statistic,
        p_value: p,
    })
}

/// One-sample proportion z-test under the normal approximation.
pub fn z_test_proportion(p_hat: f64, n: usize, h: &Hypothesis) -> Result<TestDecision> {
    check_alpha(h.alpha)?;
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::invalid("p_hat", format!("{p_hat} is outside [0, 1]")));
    }
    if !(h.c > 0.0 && h.c < 1.0) {
        return Err(Error::invalid("c", format!("need 0 < c < 1, got {}", h.c)));
    }
    let nf = n as f64;
    if nf * h.c < 5.0 {
        return Err(Error::invalid("n", format!("n·c = {} is below 5", nf * h.c)));
    }
    if nf * (1.0 - h.c) < 5.0 {
        return Err(Error::invalid("n", format!("n·(1 − c) = {} is below 5", nf * (1.0 - h.c))));
    }
    let statistic = (p_hat - h.c) / (h.c * (1.0 - h.c) / nf).sqrt();
    let p = p_value(statistic, h.op, normal_upper_tail);
    Ok(TestDecision {
        reject_null: p < h.alpha,
        statistic,
        p_value: p,
    })
}

/// Fraction of positions where the two decision lists agree.
pub fn ht_accuracy(decisions_est: &[bool], decisions_true: &[bool]) -> Result<f64> {
    if decisions_est.len() != decisions_true.len() {
        return Err(Error::LengthMismatch {
            left: decisions_est.len(),
            right: decisions_true.len(),
        });
    }
    if decisions_est.is_empty() {
        return Err(Error::invalid("decisions", "empty decision list"));
    }
    let agree = decisions_est.iter().zip(decisions_true).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / decisions_est.len() as f64)
}
