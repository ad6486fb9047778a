//! One-dimensional searches over the precision target `t ∈ [0, 1]`.

use crate::frnn::Prf1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TernaryOutcome {
    /// Midpoint of the final interval.
    pub t_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Ternary search for the maximiser of `f` on `[lo, hi]`.
///
/// Each round probes the two inner third-points and drops the outer third on
/// the side of the worse probe; on a tie the lower third is dropped. Stops once
/// the width is at most `tol` and returns the midpoint.
pub fn ternary_max(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> TernaryOutcome {
    let mut iterations = 0;
    while hi - lo > tol {
        let third = (hi - lo) / 3.0;
        let t1 = lo + third;
        let t2 = hi - third;
        if f(t1) > f(t2) {
            hi = t2;
        } else {
            lo = t1;
        }
        iterations += 1;
    }
    TernaryOutcome {
        t_star: (lo + hi) / 2.0,
        lo,
        hi,
        iterations,
    }
}

/// Number of ternary rounds needed to shrink a unit interval to `tol`.
pub fn ternary_rounds(tol: f64) -> usize {
    (1.0 / tol).log(1.5).ceil() as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceOutcome {
    pub t_star: f64,
    pub gap: f64,
    pub iterations: usize,
    /// True when a probe reached `|R − P| ≤ tol` before the iteration cap.
    pub converged: bool,
}

/// Bisection on `t ∈ [0, 1]` towards equal precision and recall.
///
/// A probe with `P ≤ R` raises the lower end (a higher target trades recall
/// for precision), otherwise the upper end is lowered. Returns the first probe
/// within `tol`; when `max_iters` probes pass without one, returns the probe
/// with the smallest gap seen (earliest on ties).
pub fn balance_search(tol: f64, max_iters: usize, mut eval: impl FnMut(f64) -> Prf1) -> BalanceOutcome {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(f64, f64)> = None;
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        let t = (lo + hi) / 2.0;
        let m = eval(t);
        iterations += 1;
        let gap = m.gap();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, t));
        }
        if gap <= tol {
            return BalanceOutcome {
                t_star: t,
                gap,
                iterations,
                converged: true,
            };
        }
        if m.precision <= m.recall {
            lo = t;
        } else {
            hi = t;
        }
    }
    let (gap, t_star) = best.expect("at least one probe");
    BalanceOutcome {
        t_star,
        gap,
        iterations,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ternary_round_count() {
        for tol in [0.1, 0.05, 0.01, 0.001] {
            let out = ternary_max(0.0, 1.0, tol, |t| -(t - 0.3f64).powi(2));
            assert_eq!(out.iterations, ternary_rounds(tol), "tol {tol}");
            assert!(out.hi - out.lo <= tol);
            assert!((out.hi - out.lo - (2.0f64 / 3.0).powi(out.iterations as i32)).abs() < 1e-12);
            assert!((out.t_star - 0.3).abs() <= tol);
        }
    }

    #[test]
    fn balance_stops_at_tolerance() {
        let mut probes = Vec::new();
        let out = balance_search(0.01, 30, |t| {
            probes.push(t);
            // precision rises with t, recall falls; they cross at t = 0.7.
            Prf1 {
                precision: t,
                recall: 1.4 - t,
                f1: 0.0,
            }
        });
        assert!(out.converged);
        assert!((out.t_star - 0.7).abs() <= 0.005);
        assert_eq!(probes[0], 0.5);
        for w in probes.windows(2) {
            assert!(w[0] != w[1]);
        }
    }

    #[test]
    fn balance_cap_returns_best_gap() {
        let out = balance_search(0.0, 1, |_| Prf1 {
            precision: 0.4,
            recall: 0.6,
            f1: 0.0,
        });
        assert_eq!(out.iterations, 1);
        assert_eq!(out.t_star, 0.5);
        assert!(!out.converged);
    }
}
