//! Distance kernels, exact fixed-radius search, the calibrated
//! precision-target selector, the Top-K baseline and set-quality metrics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::invalid("metric", format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

/// Euclidean distance, or cosine distance `1 − cos(u, v)` in `[0, 2]`.
pub fn dist(metric: Metric, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            context: "distance".into(),
            expected: u.len(),
            found: v.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for (a, b) in u.iter().zip(v) {
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            let cos = (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
            Ok(1.0 - cos)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Oracle,
    Proxy,
    Mixed,
}

/// A set of object ids, tagged with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub members: BTreeSet<usize>,
    pub space: Space,
    pub method: String,
    /// Proxy-distance cutoff, when the set came from thresholding.
    pub threshold: Option<f64>,
}

impl NeighborSet {
    pub fn new(members: impl IntoIterator<Item = usize>, space: Space, method: impl Into<String>) -> Self {
        NeighborSet {
            members: members.into_iter().collect(),
            space,
            method: method.into(),
            threshold: None,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.members.contains(&id)
    }

    pub fn is_subset(&self, other: &NeighborSet) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn overlap(&self, other: &NeighborSet) -> usize {
        self.members.intersection(&other.members).count()
    }
}

/// All objects of `universe` whose embedding lies within `r` of `q`
/// (boundary included).
pub fn exact_frnn<'a, I>(universe: I, q: &[f64], r: f64, metric: Metric, space: Space) -> Result<NeighborSet>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut members = BTreeSet::new();
    for (id, emb) in universe {
        if dist(metric, emb, q)? <= r {
            members.insert(id);
        }
    }
    Ok(NeighborSet {
        members,
        space,
        method: "exact_frnn".into(),
        threshold: None,
    })
}

/// An object and its proxy distance to the query target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub proxy_dist: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionTarget {
    pub t: f64,
    pub delta: f64,
}

impl PrecisionTarget {
    pub fn new(t: f64, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("t", format!("{t} is outside [0, 1]")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", format!("{delta} is outside (0, 1)")));
        }
        Ok(PrecisionTarget { t, delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf1 {
    /// Metrics from set sizes. An empty selection has precision 1 and an
    /// empty truth has recall 1; F1 is 0 when both are 0.
    pub fn from_counts(selected: usize, truth: usize, overlap: usize) -> Self {
        let precision = if selected == 0 { 1.0 } else { overlap as f64 / selected as f64 };
        let recall = if truth == 0 { 1.0 } else { overlap as f64 / truth as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf1 { precision, recall, f1 }
    }

    pub fn gap(&self) -> f64 {
        (self.precision - self.recall).abs()
    }
}

pub fn prf1(selected: &NeighborSet, truth: &NeighborSet) -> Prf1 {
    Prf1::from_counts(selected.len(), truth.len(), selected.overlap(truth))
}

/// One distinct labelled proxy distance with cumulative counts up to it.
#[derive(Clone, Copy, Debug)]
struct Level {
    dist: f64,
    labelled: usize,
    true_pos: usize,
}

/// Outcome of choosing a proxy-distance threshold for a precision target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdChoice {
    /// `None` selects nothing.
    pub threshold: Option<f64>,
    /// Labelled objects at or below the threshold.
    pub labelled: usize,
    /// True neighbors among them.
    pub true_pos: usize,
    /// Whether the precision lower bound met the target; false means the
    /// fallback (highest lower bound) was used.
    pub qualified: bool,
}

/// Proxy-distance calibration against oracle labels (the PQE-PT selector).
///
/// Labelled objects are sorted by proxy distance. A candidate threshold sits at
/// each distinct distance that admits a new true neighbor; thresholds ending on
/// a known false positive never raise recall and are skipped. A threshold
/// qualifies for target `t` when the one-sided Hoeffding lower bound
/// `p̂ − sqrt(ln(1/δ) / 2n)` on its labelled precision is at least `t`. The
/// largest qualifying threshold maximises recall. When none qualifies, the
/// threshold with the highest lower bound is used, so the chosen threshold is
/// non-increasing in `t`.
///
/// Any cutoff between the chosen labelled distance and the next labelled
/// distance has identical calibration statistics; within that gap the cutoff
/// is placed as close to the query radius as possible.
#[derive(Clone, Debug)]
pub struct Calibration {
    levels: Vec<Level>,
    true_ends: Vec<usize>,
    total_true: usize,
    delta: f64,
    radius: f64,
}

impl Calibration {
    /// `labelled` yields `(proxy distance, is oracle neighbor)` pairs.
    pub fn new(labelled: impl IntoIterator<Item = (f64, bool)>, delta: f64, radius: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", format!("{delta} is outside (0, 1)")));
        }
        let mut items: Vec<(f64, bool)> = labelled.into_iter().collect();
        if items.is_empty() {
            return Err(Error::invalid("labelled", "calibration needs at least one labelled object"));
        }
        if items.iter().any(|(d, _)| d.is_nan()) {
            return Err(Error::invalid("proxy_dist", "NaN distance"));
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut levels: Vec<Level> = Vec::new();
        let mut true_ends = Vec::new();
        let (mut n, mut tp) = (0, 0);
        let mut i = 0;
        while i < items.len() {
            let d = items[i].0;
            let mut new_true = false;
            while i < items.len() && items[i].0 == d {
                n += 1;
                if items[i].1 {
                    tp += 1;
                    new_true = true;
                }
                i += 1;
            }
            if new_true {
                true_ends.push(levels.len());
            }
            levels.push(Level {
                dist: d,
                labelled: n,
                true_pos: tp,
            });
        }

        Ok(Calibration {
            levels,
            true_ends,
            total_true: tp,
            delta,
            radius,
        })
    }

    pub fn total_labelled(&self) -> usize {
        self.levels.last().map_or(0, |l| l.labelled)
    }

    pub fn total_true(&self) -> usize {
        self.total_true
    }

    /// One-sided Hoeffding lower confidence bound on precision, clamped at 0.
    pub fn precision_lower_bound(&self, labelled: usize, true_pos: usize) -> f64 {
        precision_lower_bound(labelled, true_pos, self.delta)
    }

    pub fn choose(&self, t: f64) -> ThresholdChoice {
        let lb = |j: usize| {
            let l = &self.levels[j];
            self.precision_lower_bound(l.labelled, l.true_pos)
        };
        if self.true_ends.is_empty() {
            return ThresholdChoice {
                threshold: None,
                labelled: 0,
                true_pos: 0,
                qualified: false,
            };
        }
        let (level, qualified) = match self.true_ends.iter().rev().find(|&&j| lb(j) >= t) {
            Some(&j) => (j, true),
            None => {
                let mut best = self.true_ends[0];
                for &j in &self.true_ends[1..] {
                    if lb(j) >= lb(best) {
                        best = j;
                    }
                }
                (best, false)
            }
        };
        let l = self.levels[level];
        ThresholdChoice {
            threshold: Some(self.place_cutoff(level)),
            labelled: l.labelled,
            true_pos: l.true_pos,
            qualified,
        }
    }

    fn place_cutoff(&self, level: usize) -> f64 {
        let d = self.levels[level].dist;
        let next = self.levels.get(level + 1).map(|l| l.dist);
        if self.radius >= d && next.is_none_or(|n| self.radius < n) {
            self.radius
        } else {
            d
        }
    }

    /// Precision, recall and F1 of the selection at target `t`, measured on
    /// the labelled objects themselves.
    pub fn labelled_metrics(&self, t: f64) -> Prf1 {
        let c = self.choose(t);
        Prf1::from_counts(c.labelled, self.total_true, c.true_pos)
    }

    /// Applies the threshold chosen for `t` to `candidates`.
    pub fn select(&self, candidates: &[Candidate], t: f64) -> NeighborSet {
        apply_threshold(candidates, self.choose(t).threshold, "pqe_pt")
    }
}

pub(crate) fn precision_lower_bound(labelled: usize, true_pos: usize, delta: f64) -> f64 {
    if labelled == 0 {
        return 0.0;
    }
    let n = labelled as f64;
    let slack = ((1.0 / delta).ln() / (2.0 * n)).sqrt();
    (true_pos as f64 / n - slack).max(0.0)
}

pub(crate) fn apply_threshold(candidates: &[Candidate], threshold: Option<f64>, method: &str) -> NeighborSet {
    let members = match threshold {
        Some(tau) => candidates
            .iter()
            .filter(|c| c.proxy_dist <= tau)
            .map(|c| c.id)
            .collect(),
        None => BTreeSet::new(),
    };
    NeighborSet {
        members,
        space: Space::Proxy,
        method: method.into(),
        threshold,
    }
}

/// Precision-target selection over `candidates`, calibrated on the labelled
/// subset `labelled` whose oracle neighbors are `truth`.
pub fn pqe_pt(
    candidates: &[Candidate],
    labelled: &[usize],
    truth: &NeighborSet,
    target: PrecisionTarget,
    r: f64,
) -> Result<NeighborSet> {
    if candidates.is_empty() {
        return Err(Error::invalid("sample", "empty sample"));
    }
    let by_id: HashMap<usize, f64> = candidates.iter().map(|c| (c.id, c.proxy_dist)).collect();
    let pairs = labelled
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|&d| (d, truth.contains(*id)))
                .ok_or_else(|| Error::invalid("labelled", format!("id {id} is not a candidate")))
        })
        .collect::<Result<Vec<_>>>()?;
    let cal = Calibration::new(pairs, target.delta, r)?;
    Ok(cal.select(candidates, target.t))
}

/// The `k` candidates with the smallest proxy distance, ties broken by id.
pub fn top_k_baseline(candidates: &[Candidate], k: usize) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::invalid("k", "must be positive"));
    }
    if k > candidates.len() {
        return Err(Error::SampleTooLarge {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.proxy_dist.total_cmp(&b.proxy_dist).then(a.id.cmp(&b.id)));
    let mut set = NeighborSet::new(sorted[..k].iter().map(|c| c.id), Space::Proxy, "top_k");
    set.threshold = Some(sorted[k - 1].proxy_dist);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_kernels() {
        assert_eq!(dist(Metric::Euclidean, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(dist(Metric::Cosine, &[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]).unwrap().abs() < 1e-15);
        assert!((dist(Metric::Cosine, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((dist(Metric::Cosine, &[1.0, 0.0], &[-2.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(dist(Metric::Euclidean, &[0.0], &[0.0, 1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(dist(Metric::Cosine, &[0.0, 0.0], &[0.0, 1.0]), Err(Error::ZeroVector)));
    }

    fn line(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn exact_frnn_radius_cases() {
        let pts = line(&[0.0, 0.5, 1.0, 1.5, 0.0]);
        let universe = || pts.iter().enumerate().map(|(i, p)| (i, p.as_slice()));
        let at_zero = exact_frnn(universe(), &[0.0], 0.0, Metric::Euclidean, Space::Oracle).unwrap();
        assert_eq!(at_zero.members, [0, 4].into());
        let boundary = exact_frnn(universe(), &[0.0], 1.0, Metric::Euclidean, Space::Oracle).unwrap();
        assert_eq!(boundary.members, [0, 1, 2, 4].into());
        let all = exact_frnn(universe(), &[0.0], 10.0, Metric::Euclidean, Space::Oracle).unwrap();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn prf1_cases() {
        let a = NeighborSet::new([1, 2, 3], Space::Proxy, "x");
        let same = prf1(&a, &a);
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let b = NeighborSet::new([7, 8], Space::Oracle, "y");
        let disjoint = prf1(&a, &b);
        assert_eq!((disjoint.precision, disjoint.recall, disjoint.f1), (0.0, 0.0, 0.0));
        let sel = NeighborSet::new([1, 2, 3, 9], Space::Proxy, "x");
        let truth = NeighborSet::new([1, 2, 3, 4, 5, 6], Space::Oracle, "y");
        let m = prf1(&sel, &truth);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.5);
        assert!((m.f1 - 0.6).abs() < 1e-15);
        let empty = NeighborSet::new([], Space::Proxy, "x");
        assert_eq!(prf1(&empty, &truth).precision, 1.0);
        assert_eq!(prf1(&sel, &empty).recall, 1.0);
    }

    #[test]
    fn top_k_cases() {
        let c: Vec<Candidate> = [(0, 0.4), (1, 0.1), (2, 0.4), (3, 0.9)]
            .into_iter()
            .map(|(id, proxy_dist)| Candidate { id, proxy_dist })
            .collect();
        assert_eq!(top_k_baseline(&c, 1).unwrap().members, [1].into());
        assert_eq!(top_k_baseline(&c, 2).unwrap().members, [0, 1].into());
        assert_eq!(top_k_baseline(&c, 4).unwrap().len(), 4);
        assert!(top_k_baseline(&c, 5).is_err());
    }

    fn cands(d: &[f64]) -> Vec<Candidate> {
        d.iter()
            .enumerate()
            .map(|(id, &proxy_dist)| Candidate { id, proxy_dist })
            .collect()
    }

    #[test]
    fn zero_noise_selection_is_exact_for_every_target() {
        // Proxy distances equal oracle distances; radius 1.0.
        let d: Vec<f64> = (0..60).map(|i| i as f64 * 0.05).collect();
        let candidates = cands(&d);
        let labelled: Vec<usize> = (0..60).step_by(3).collect();
        let truth = NeighborSet::new(labelled.iter().copied().filter(|&i| d[i] <= 1.0), Space::Oracle, "truth");
        let exact: BTreeSet<usize> = (0..60).filter(|&i| d[i] <= 1.0).collect();
        for t in [0.0, 0.3, 0.5, 0.9, 0.99, 1.0] {
            let target = PrecisionTarget::new(t, 0.05).unwrap();
            let sel = pqe_pt(&candidates, &labelled, &truth, target, 1.0).unwrap();
            assert_eq!(sel.members, exact, "t = {t}");
        }
    }

    #[test]
    fn vacuous_target_takes_the_largest_supported_threshold() {
        // labelled truths at distances 0.1, 0.3, 0.8 (the last beyond some
        // false positives); t = 0 must reach 0.8.
        let d = [0.1, 0.2, 0.3, 0.5, 0.6, 0.8, 0.9, 1.5];
        let is_true = [true, false, true, false, false, true, false, false];
        let candidates = cands(&d);
        let labelled: Vec<usize> = (0..d.len()).collect();
        let truth = NeighborSet::new((0..d.len()).filter(|&i| is_true[i]), Space::Oracle, "t");
        let sel = pqe_pt(&candidates, &labelled, &truth, PrecisionTarget::new(0.0, 0.05).unwrap(), 0.0).unwrap();
        assert_eq!(sel.threshold, Some(0.8));
        assert_eq!(sel.members, (0..6).collect());
    }

    #[test]
    fn no_labelled_neighbors_selects_nothing() {
        let candidates = cands(&[0.1, 0.2]);
        let truth = NeighborSet::new([], Space::Oracle, "t");
        let sel = pqe_pt(&candidates, &[0, 1], &truth, PrecisionTarget::new(0.5, 0.05).unwrap(), 1.0).unwrap();
        assert!(sel.is_empty());
        assert_eq!(sel.threshold, None);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let truth = NeighborSet::new([], Space::Oracle, "t");
        assert!(pqe_pt(&[], &[], &truth, PrecisionTarget::new(0.5, 0.05).unwrap(), 1.0).is_err());
    }

    #[test]
    fn target_validation() {
        assert!(PrecisionTarget::new(1.1, 0.05).is_err());
        assert!(PrecisionTarget::new(0.5, 0.0).is_err());
        assert!(PrecisionTarget::new(0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn selection_is_nested_in_target(
            items in prop::collection::vec((0.0f64..3.0, any::<bool>()), 1..40),
            extra in prop::collection::vec(0.0f64..3.0, 0..40),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
            r in 0.0f64..3.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let mut d: Vec<f64> = items.iter().map(|x| x.0).collect();
            d.extend(&extra);
            let candidates = cands(&d);
            let labelled: Vec<usize> = (0..items.len()).collect();
            let truth = NeighborSet::new((0..items.len()).filter(|&i| items[i].1), Space::Oracle, "t");
            let a = pqe_pt(&candidates, &labelled, &truth, PrecisionTarget::new(lo, 0.1).unwrap(), r).unwrap();
            let b = pqe_pt(&candidates, &labelled, &truth, PrecisionTarget::new(hi, 0.1).unwrap(), r).unwrap();
            prop_assert!(b.is_subset(&a));
        }

        #[test]
        fn frnn_is_radius_monotone(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..50),
            r1 in 0.0f64..6.0,
            dr in 0.0f64..3.0,
        ) {
            let q = [0.0, 0.0, 0.0];
            let u = || pts.iter().enumerate().map(|(i, p)| (i, p.as_slice()));
            let a = exact_frnn(u(), &q, r1, Metric::Euclidean, Space::Oracle).unwrap();
            let b = exact_frnn(u(), &q, r1 + dr, Metric::Euclidean, Space::Oracle).unwrap();
            prop_assert!(a.is_subset(&b));
        }

        #[test]
        fn f1_between_precision_and_recall(sel in 0usize..50, truth in 0usize..50, overlap in 0usize..50) {
            let overlap = overlap.min(sel).min(truth);
            let m = Prf1::from_counts(sel, truth, overlap);
            if m.precision + m.recall > 0.0 {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            }
        }
    }
}
