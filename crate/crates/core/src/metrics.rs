//! Structure and slope recovery metrics and the paired Wilcoxon signed-rank test.

use crate::model::{MixedGraph, ModelParams, Partition};
use crate::normal;
use crate::{Error, Result};

/// Largest sample size for which the signed-rank null is enumerated exactly.
pub const EXACT_WILCOXON_MAX: usize = 12;

/// Fraction of true edges missing from the learned graph.
pub fn edge_omission(truth: &MixedGraph, learned: &MixedGraph) -> Result<f64> {
    if truth.n_edges() == 0 {
        return Err(Error::Domain("omission is undefined for a truth without edges".into()));
    }
    let missed = truth.edges().difference(learned.edges()).count();
    Ok(missed as f64 / truth.n_edges() as f64)
}

/// Fraction of absent true edges that the learned graph adds.
pub fn edge_commission(truth: &MixedGraph, learned: &MixedGraph, p: usize) -> Result<f64> {
    let slots = p * p.saturating_sub(1) / 2;
    if slots <= truth.n_edges() {
        return Err(Error::Domain("commission is undefined when the truth is complete".into()));
    }
    let extra = learned.edges().difference(truth.edges()).count();
    Ok(extra as f64 / (slots - truth.n_edges()) as f64)
}

/// Root mean squared slope error after flipping each learned group's slopes
/// by whichever sign fits that group's true slopes better.
pub fn slope_rmse(truth: &ModelParams, learned: &ModelParams, partition: &Partition) -> Result<f64> {
    let p = partition.n_vars();
    if truth.slopes.len() != p || learned.slopes.len() != p {
        return Err(Error::Domain("slope vectors do not match the partition".into()));
    }
    let mut sse = 0.0;
    for m in 0..partition.n_groups() {
        let err = |sign: f64| -> f64 {
            partition
                .members(m)
                .iter()
                .map(|&i| (sign * learned.slopes[i] - truth.slopes[i]).powi(2))
                .sum()
        };
        sse += err(1.0).min(err(-1.0));
    }
    Ok((sse / p as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub w: f64,
    pub p_value: f64,
    /// Differences left after dropping zeros.
    pub n: usize,
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test. Zeros are dropped and tied
/// magnitudes share their average rank.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("differences must be finite".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Err(Error::Domain("all differences are zero".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nz[a].abs().partial_cmp(&nz[b].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && nz[order[end]].abs() == nz[order[start]].abs() {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &o in &order[start..end] {
            ranks[o] = avg;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let w: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let mean = n as f64 * (n as f64 + 1.0) / 4.0;
    if n <= EXACT_WILCOXON_MAX {
        let obs = (w - mean).abs();
        let mut extreme = 0u64;
        for mask in 0u32..1 << n {
            let s: f64 = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| ranks[b]).sum();
            if (s - mean).abs() >= obs - 1e-9 {
                extreme += 1;
            }
        }
        return Ok(WilcoxonResult {
            w,
            p_value: extreme as f64 / f64::from(1u32 << n),
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (w - mean).abs() / var.sqrt();
        (2.0 * normal::cdf(-z)).min(1.0)
    };
    Ok(WilcoxonResult {
        w,
        p_value,
        n,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{get_dag, Edge};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn e(a: usize, b: usize) -> Edge {
        Edge::new(a, b).unwrap()
    }

    #[test]
    fn omission_examples() {
        let part = Arc::new(Partition::with_sizes(&[2, 2]).unwrap());
        let truth = MixedGraph::with_edges(part.clone(), [e(0, 2), e(1, 3)]).unwrap();
        let one = MixedGraph::with_edges(part.clone(), [e(0, 2)]).unwrap();
        assert_eq!(edge_omission(&truth, &one).unwrap(), 0.5);
        let sup = truth.with_edge(e(0, 1));
        assert_eq!(edge_omission(&truth, &sup).unwrap(), 0.0);
        assert_eq!(edge_omission(&truth, &get_dag(part.clone())).unwrap(), 1.0);
        assert!(edge_omission(&get_dag(part), &truth).is_err());
    }

    #[test]
    fn commission_examples() {
        let part = Arc::new(Partition::with_sizes(&[2, 2]).unwrap());
        let truth = MixedGraph::with_edges(part.clone(), [e(0, 2), e(1, 3)]).unwrap();
        assert_eq!(edge_commission(&truth, &truth.with_edge(e(0, 1)), 4).unwrap(), 0.25);
        assert_eq!(edge_commission(&truth, &truth.without_edge(e(0, 2)), 4).unwrap(), 0.0);
        let all = MixedGraph::with_edges(part.clone(), crate::model::all_pairs(4).into_iter().map(|(a, b)| e(a, b))).unwrap();
        assert_eq!(edge_commission(&truth, &all, 4).unwrap(), 1.0);
        assert!(edge_commission(&all, &all, 4).is_err());
    }

    fn params(slopes: Vec<f64>) -> ModelParams {
        let p = slopes.len();
        ModelParams {
            slopes,
            intercepts: vec![0.0; p],
            sigma: crate::model::CorrMatrix::constant(1, 50),
            thetas: BTreeMap::new(),
        }
    }

    #[test]
    fn rmse_examples() {
        let part = Partition::with_sizes(&[2]).unwrap();
        let t = params(vec![1.0, 1.0]);
        assert_eq!(slope_rmse(&t, &t, &part).unwrap(), 0.0);
        assert_eq!(slope_rmse(&t, &params(vec![-1.0, -1.0]), &part).unwrap(), 0.0);
        assert!((slope_rmse(&t, &params(vec![1.0, 0.0]), &part).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0]).unwrap();
        assert_eq!((r.w, r.p_value), (1.5, 1.0));
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.w, r.p_value), (6.0, 0.25));
        let d: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(!r.exact && r.p_value < 1e-3);
        assert!(wilcoxon_signed_rank(&[0.0, 0.0]).is_err());
        let scaled: Vec<f64> = [0.3, -1.2, 2.5, 0.7, -0.1, 4.0].iter().map(|v| v * 7.5).collect();
        assert_eq!(
            wilcoxon_signed_rank(&scaled).unwrap().p_value,
            wilcoxon_signed_rank(&[0.3, -1.2, 2.5, 0.7, -0.1, 4.0]).unwrap().p_value
        );
    }

    #[test]
    fn wilcoxon_large_sample_matches_reference() {
        // scipy.stats.wilcoxon(d, correction=False, mode="approx") on 1..15 with 4 negatives.
        let d: Vec<f64> = (1..=15).map(|v| if v % 4 == 0 { -f64::from(v) } else { f64::from(v) }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.w, 96.0);
        assert!((r.p_value - 0.040_888_132_911_855_91).abs() < 1e-12, "{}", r.p_value);
    }
}
