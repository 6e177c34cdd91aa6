//! Edge selection by the median probability criterion, and the accuracy
//! metrics used in the simulation studies.

use serde::Serialize;

use crate::error::{GgmError, Result};
use crate::model::PrecisionMatrix;
use crate::wbb::PosteriorSample;

/// Default threshold below which `|ω_ij|` counts as zero.
pub const DEFAULT_EPS: f64 = 1e-2;

/// Selected edges plus, for every pair `i < j`, the posterior probability
/// that `|ω_ij| < ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSet {
    pub p: usize,
    pub eps: f64,
    /// Pairs `(i, j)` with `i < j`, in column-major lower order.
    pub pairs: Vec<(usize, usize)>,
    pub prob_small: Vec<f64>,
    pub included: Vec<bool>,
}

impl EdgeSet {
    /// Edges of the true graph: nonzero off-diagonals.
    pub fn from_support(omega: &PrecisionMatrix) -> Self {
        let pairs = off_diagonal_pairs(omega.dim());
        let included: Vec<bool> = pairs.iter().map(|&(i, j)| omega.get(i, j) != 0.0).collect();
        let prob_small = included.iter().map(|&inc| if inc { 0.0 } else { 1.0 }).collect();
        Self {
            p: omega.dim(),
            eps: 0.0,
            pairs,
            prob_small,
            included,
        }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .zip(&self.included)
            .filter(|(_, inc)| **inc)
            .map(|(pair, _)| *pair)
            .collect()
    }

    /// `P(|ω_ij| ≥ ε | Y)`.
    pub fn inclusion_prob(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().position(|p| *p == key).map(|k| 1.0 - self.prob_small[k])
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().zip(&self.included).any(|(p, inc)| *p == key && *inc)
    }
}

/// `(i, j)` with `i < j`, ordered by `j` then `i`.
pub fn off_diagonal_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

/// Excludes `(i, j)` when at least half the draws have `|ω_ij| < ε`.
pub fn median_probability_select(sample: &PosteriorSample, eps: f64) -> Result<EdgeSet> {
    if !(eps > 0.0) {
        return Err(GgmError::InvalidParameter(format!("eps = {eps}")));
    }
    let p = sample.dim();
    let m = sample.len() as f64;
    let pairs = off_diagonal_pairs(p);
    let prob_small: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| {
            let small = sample.draws().iter().filter(|d| d.get(i, j).abs() < eps).count();
            small as f64 / m
        })
        .collect();
    let included = prob_small.iter().map(|&q| q < 0.5).collect();
    Ok(EdgeSet {
        p,
        eps,
        pairs,
        prob_small,
        included,
    })
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule: position `(m − 1)·q`).
pub fn quantile_type7(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// Mean length of the central 95% credible intervals.
    pub al: Option<f64>,
    /// Fraction of those intervals covering the truth.
    pub cp: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// False discovery rate `FP / (FP + TP)`; 0 when nothing is selected.
    pub fdr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn tpr(&self) -> f64 {
        ratio_or(self.tp, self.tp + self.fn_, 1.0)
    }

    pub fn fpr(&self) -> f64 {
        ratio_or(self.fp, self.fp + self.tn, 0.0)
    }

    pub fn fdr(&self) -> f64 {
        ratio_or(self.fp, self.fp + self.tp, 0.0)
    }

    pub fn fnr(&self) -> f64 {
        ratio_or(self.fn_, self.tp + self.fn_, 0.0)
    }
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(truth: &PrecisionMatrix, edges: &EdgeSet) -> Result<Confusion> {
    if edges.p != truth.dim() {
        return Err(GgmError::Dimension {
            expected: truth.dim(),
            got: edges.p,
        });
    }
    let mut c = Confusion::default();
    for (&(i, j), &inc) in edges.pairs.iter().zip(&edges.included) {
        match (truth.get(i, j) != 0.0, inc) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// RMSE over the strict lower triangle; interval metrics from the 2.5% and
/// 97.5% type-7 quantiles when a sample is given; rates when edges are given.
pub fn compute_metrics(
    truth: &PrecisionMatrix,
    est: &PrecisionMatrix,
    sample: Option<&PosteriorSample>,
    edges: Option<&EdgeSet>,
) -> Result<MetricsReport> {
    let p = truth.dim();
    if est.dim() != p {
        return Err(GgmError::Dimension {
            expected: p,
            got: est.dim(),
        });
    }
    let pairs = off_diagonal_pairs(p);
    let k = pairs.len().max(1) as f64;
    let sse: f64 = pairs.iter().map(|&(i, j)| (truth.get(i, j) - est.get(i, j)).powi(2)).sum();
    let rmse = (sse / k).sqrt();

    let (al, cp) = match sample {
        None => (None, None),
        Some(s) => {
            if s.dim() != p {
                return Err(GgmError::Dimension {
                    expected: p,
                    got: s.dim(),
                });
            }
            let mut len = 0.0;
            let mut covered = 0usize;
            for &(i, j) in &pairs {
                let mut v = s.entry(i, j);
                v.sort_by(f64::total_cmp);
                let lo = quantile_sorted(&v, 0.025);
                let hi = quantile_sorted(&v, 0.975);
                len += hi - lo;
                let t = truth.get(i, j);
                if lo <= t && t <= hi {
                    covered += 1;
                }
            }
            (Some(len / k), Some(covered as f64 / k))
        }
    };

    let (tpr, fpr, fdr) = match edges {
        None => (None, None, None),
        Some(e) => {
            let c = confusion(truth, e)?;
            (Some(c.tpr()), Some(c.fpr()), Some(c.fdr()))
        }
    };
    Ok(MetricsReport {
        rmse,
        al,
        cp,
        tpr,
        fpr,
        fdr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wbb::{Method, SampleMeta};
    use nalgebra::DMatrix;

    fn sample_of(draws: Vec<DMatrix<f64>>) -> PosteriorSample {
        let m = draws.len();
        let draws = draws.into_iter().map(|d| PrecisionMatrix::new(d).unwrap()).collect();
        PosteriorSample::new(
            draws,
            SampleMeta {
                method: Method::Wbb,
                gamma: Some(0.1),
                nu: None,
                seed: 0,
                lambda: vec![0.1; m],
                converged: vec![true; m],
            },
        )
        .unwrap()
    }

    fn two_by_two(off: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, off, off, 1.0])
    }

    #[test]
    fn selection_extremes_and_boundary() {
        let zero = sample_of(vec![two_by_two(0.0); 4]);
        assert!(median_probability_select(&zero, 1e-2).unwrap().edges().is_empty());
        let big = sample_of(vec![two_by_two(0.5); 4]);
        assert_eq!(median_probability_select(&big, 1e-2).unwrap().edges(), vec![(0, 1)]);
        let half = sample_of(vec![two_by_two(0.0), two_by_two(0.5), two_by_two(0.005), two_by_two(0.3)]);
        let e = median_probability_select(&half, 1e-2).unwrap();
        assert!(e.edges().is_empty());
        assert_eq!(e.inclusion_prob(1, 0), Some(0.5));
    }

    #[test]
    fn selection_ignores_draw_order() {
        let draws: Vec<DMatrix<f64>> = [0.0, 0.2, 0.001, 0.4, 0.02].iter().map(|&v| two_by_two(v)).collect();
        let mut rev = draws.clone();
        rev.reverse();
        let a = median_probability_select(&sample_of(draws), 1e-2).unwrap();
        let b = median_probability_select(&sample_of(rev), 1e-2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn type7_quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert!((quantile_type7(&v, 0.5) - 2.5).abs() < 1e-15);
        // h = 3·0.025 = 0.075
        assert!((quantile_type7(&v, 0.025) - 1.075).abs() < 1e-15);
        assert_eq!(quantile_type7(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn hand_rmse() {
        let truth = PrecisionMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.25, 0.0, 0.25, 2.0])).unwrap();
        let est = PrecisionMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 2.0, 0.25, 0.1, 0.25, 2.0])).unwrap();
        let r = compute_metrics(&truth, &est, None, None).unwrap();
        assert!((r.rmse - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(compute_metrics(&truth, &truth, None, None).unwrap().rmse, 0.0);
        assert!(r.al.is_none() && r.tpr.is_none());
    }

    #[test]
    fn coverage_and_rates() {
        let truth = PrecisionMatrix::new(two_by_two(0.3)).unwrap();
        let s = sample_of((0..11).map(|k| two_by_two(0.2 + 0.02 * k as f64)).collect());
        let e = median_probability_select(&s, 1e-2).unwrap();
        let r = compute_metrics(&truth, &truth, Some(&s), Some(&e)).unwrap();
        assert_eq!(r.cp, Some(1.0));
        assert!((r.al.unwrap() - 0.19).abs() < 1e-12);
        assert_eq!(r.tpr, Some(1.0));
        assert_eq!(r.fdr, Some(0.0));

        // Degenerate interval [0, 0] covers a zero truth only.
        let zero = sample_of(vec![two_by_two(0.0); 3]);
        let ident = PrecisionMatrix::identity(2);
        assert_eq!(compute_metrics(&ident, &ident, Some(&zero), None).unwrap().cp, Some(1.0));
        assert_eq!(compute_metrics(&truth, &ident, Some(&zero), None).unwrap().cp, Some(0.0));
    }

    #[test]
    fn confusion_identities() {
        let truth = PrecisionMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.25, 0.0, 0.25, 2.0])).unwrap();
        let mut e = EdgeSet::from_support(&truth);
        e.included = vec![true, false, false];
        let c = confusion(&truth, &e).unwrap();
        assert!((c.tpr() + c.fnr() - 1.0).abs() < 1e-15);
        assert_eq!(c.fpr(), 0.0);
        assert_eq!(c.fdr(), 0.0);
        e.included = vec![false; 3];
        assert_eq!(confusion(&truth, &e).unwrap().fdr(), 0.0);
    }
}
