//! Sufficient statistics and the pairwise composite-likelihood scores.
//!
//! Every pair term needs only the pair's 2x2 count table, the two probit
//! links evaluated on the latent grid, and, for bi-directed pairs, the copula
//! parameter. Latent integration uses the cached grid weights, so a pair term
//! costs `K^2` copula evaluations per copula parameter value.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::copula::{self, FrankKernel, FrankPre};
use crate::laplace::{marginal_theta_grid, LaplacePosterior};
use crate::model::{all_pairs, pair_index, CorrMatrix, Dataset, Edge, MixedGraph, ModelParams, Partition};
use crate::quadrature::QuadratureCache;
use crate::{Error, Result};

/// Prior probability of each bi-directed edge.
pub const EDGE_PRIOR: f64 = 0.1;

/// Joint configuration counts of the children of one pair of groups. Bit `k`
/// of a key is the value of `vars[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPairCounts {
    pub vars: Vec<usize>,
    pub counts: Vec<(u64, u64)>,
}

/// Counts that every score in this crate is a function of.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    n_rows: usize,
    n_vars: usize,
    pair_tables: Vec<[[u64; 2]; 2]>,
    zero_counts: Vec<u64>,
    group_pairs: BTreeMap<(usize, usize), GroupPairCounts>,
}

/// Builds all counts in one pass over the rows. Columns are matched to the
/// partition by name.
pub fn sufficient_stats(data: &Dataset, partition: &Partition) -> Result<SufficientStats> {
    let data = data.aligned_to(partition)?;
    let p = partition.n_vars();
    let k = partition.n_groups();
    let mut pair_tables = vec![[[0u64; 2]; 2]; p * p.saturating_sub(1) / 2];
    let mut zero_counts = vec![0u64; p];
    let mut gp: Vec<((usize, usize), Vec<usize>, BTreeMap<u64, u64>)> = Vec::new();
    for m in 0..k {
        for n in m + 1..k {
            let mut vars: Vec<usize> = partition.members(m).iter().chain(partition.members(n)).copied().collect();
            vars.sort_unstable();
            if vars.len() <= 64 {
                gp.push(((m, n), vars, BTreeMap::new()));
            }
        }
    }
    for row in data.rows() {
        for i in 0..p {
            if row[i] == 0 {
                zero_counts[i] += 1;
            }
            for j in i + 1..p {
                pair_tables[pair_index(p, i, j)][row[i] as usize][row[j] as usize] += 1;
            }
        }
        for (_, vars, map) in gp.iter_mut() {
            let key = vars
                .iter()
                .enumerate()
                .fold(0u64, |acc, (b, &v)| acc | (u64::from(row[v]) << b));
            *map.entry(key).or_insert(0) += 1;
        }
    }
    let group_pairs = gp
        .into_iter()
        .map(|(key, vars, map)| {
            (
                key,
                GroupPairCounts {
                    vars,
                    counts: map.into_iter().collect(),
                },
            )
        })
        .collect();
    Ok(SufficientStats {
        n_rows: data.n_rows(),
        n_vars: p,
        pair_tables,
        zero_counts,
        group_pairs,
    })
}

impl SufficientStats {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Counts `N[a][b]` of `(Y_i, Y_j) = (a, b)`.
    pub fn pair_table(&self, i: usize, j: usize) -> [[u64; 2]; 2] {
        let t = self.pair_tables[pair_index(self.n_vars, i.min(j), i.max(j))];
        if i < j {
            t
        } else {
            [[t[0][0], t[1][0]], [t[0][1], t[1][1]]]
        }
    }

    pub fn zero_count(&self, i: usize) -> u64 {
        self.zero_counts[i]
    }

    /// Joint counts for groups `m < n`; `None` when the pair has more than 64 children.
    pub fn group_pair(&self, m: usize, n: usize) -> Option<&GroupPairCounts> {
        self.group_pairs.get(&(m.min(n), m.max(n)))
    }
}

/// Log prior of the bi-directed structure under independent edge inclusion.
pub fn graph_log_prior(g: &MixedGraph) -> f64 {
    let e = g.n_edges() as f64;
    let slots = g.n_slots() as f64;
    e * EDGE_PRIOR.ln() + (slots - e) * (1.0 - EDGE_PRIOR).ln()
}

/// `log sum_t w_t exp(l_t)`, stable under large magnitudes.
pub(crate) fn log_weighted_sum_exp(terms: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let max = terms.clone().map(|(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = terms.map(|(w, l)| w * (l - max).exp()).sum();
    max + s.ln()
}

fn loglik_from_cells(cells: [[f64; 2]; 2], counts: &[[u64; 2]; 2]) -> f64 {
    let mut total = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let n = counts[a][b];
            if n > 0 {
                let p = cells[a][b];
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += n as f64 * p.ln();
            }
        }
    }
    total
}

/// Latent integration scheme of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    Same,
    Cross { sigma_idx: usize },
}

/// Fast evaluator of pair terms for fixed data and grid, with mutable
/// probit links and correlations.
#[derive(Debug, Clone)]
pub(crate) struct PairScorer<'a> {
    stats: &'a SufficientStats,
    cache: &'a QuadratureCache,
    group_of: Vec<usize>,
    /// `P(Y_i = 0 | x_k)` on the latent grid, per variable.
    links: Vec<Vec<f64>>,
    sigma: CorrMatrix,
}

impl<'a> PairScorer<'a> {
    pub fn new(
        partition: &Partition,
        params: &ModelParams,
        stats: &'a SufficientStats,
        cache: &'a QuadratureCache,
    ) -> Self {
        let p = partition.n_vars();
        let mut s = PairScorer {
            stats,
            cache,
            group_of: (0..p).map(|i| partition.group_of(i)).collect(),
            links: vec![Vec::new(); p],
            sigma: params.sigma.clone(),
        };
        for i in 0..p {
            s.set_link(i, params.slopes[i], params.intercepts[i]);
        }
        s
    }

    pub fn set_link(&mut self, i: usize, slope: f64, intercept: f64) {
        self.links[i] = self
            .cache
            .points()
            .iter()
            .map(|&x| copula::prob_zero(x, slope, intercept))
            .collect();
    }

    pub fn set_sigma_index(&mut self, m: usize, n: usize, idx: usize) {
        self.sigma.set_index(m, n, idx);
    }

    fn layout(&self, i: usize, j: usize) -> Layout {
        let (m, n) = (self.group_of[i], self.group_of[j]);
        if m == n {
            Layout::Same
        } else {
            Layout::Cross {
                sigma_idx: self.sigma.index(m, n),
            }
        }
    }

    fn mean_link(&self, i: usize, layout: Layout, first: bool) -> f64 {
        let u = &self.links[i];
        match layout {
            Layout::Same => self.cache.integrate_latent_1d_values(u),
            Layout::Cross { sigma_idx } => {
                let w = self.cache.weights_2d_at(sigma_idx);
                let k = u.len();
                let mut total = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        total += w[a * k + b] * if first { u[a] } else { u[b] };
                    }
                }
                total
            }
        }
    }

    /// Latent-integrated 2x2 cell probabilities of an unlinked pair.
    pub fn independent_cells(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let layout = self.layout(i, j);
        let (ui, uj) = (&self.links[i], &self.links[j]);
        let f00 = match layout {
            Layout::Same => self
                .cache
                .points()
                .iter()
                .enumerate()
                .map(|(k, _)| self.cache.weights_1d()[k] * ui[k] * uj[k])
                .sum(),
            Layout::Cross { sigma_idx } => {
                let w = self.cache.weights_2d_at(sigma_idx);
                let k = ui.len();
                let mut total = 0.0;
                for a in 0..k {
                    let mut row = 0.0;
                    for b in 0..k {
                        row += w[a * k + b] * uj[b];
                    }
                    total += ui[a] * row;
                }
                total
            }
        };
        crate::cdn::cells_from_f00(self.mean_link(i, layout, true), self.mean_link(j, layout, false), f00)
    }

    /// Latent-integrated 2x2 cells of a linked pair, for each copula parameter.
    pub fn edge_cells(&self, i: usize, j: usize, hi: usize, hj: usize, thetas: &[f64]) -> Vec<[[f64; 2]; 2]> {
        let layout = self.layout(i, j);
        let (ui, uj) = (&self.links[i], &self.links[j]);
        let split = |u: &[f64], h: usize| -> (Vec<f64>, Vec<f64>) {
            let inv = 1.0 / h as f64;
            u.iter().map(|&v| (v.powf(inv), v.powf(1.0 - inv))).unzip()
        };
        let (ai, ri) = split(ui, hi);
        let (aj, rj) = split(uj, hj);
        let mi = self.mean_link(i, layout, true);
        let mj = self.mean_link(j, layout, false);
        let k = ui.len();
        let mut eai = vec![FrankPre::default(); k];
        let mut eaj = vec![FrankPre::default(); k];
        thetas
            .iter()
            .map(|&theta| {
                let kern = FrankKernel::new(theta);
                for a in 0..k {
                    eai[a] = kern.pre(ai[a]);
                    eaj[a] = kern.pre(aj[a]);
                }
                let f00 = match layout {
                    Layout::Same => (0..k)
                        .map(|a| self.cache.weights_1d()[a] * kern.eval(ai[a], eai[a], aj[a], eaj[a]) * ri[a] * rj[a])
                        .sum(),
                    Layout::Cross { sigma_idx } => {
                        let w = self.cache.weights_2d_at(sigma_idx);
                        let mut total = 0.0;
                        for a in 0..k {
                            let mut row = 0.0;
                            for b in 0..k {
                                row += w[a * k + b] * kern.eval(ai[a], eai[a], aj[b], eaj[b]) * rj[b];
                            }
                            total += ri[a] * row;
                        }
                        total
                    }
                };
                crate::cdn::cells_from_f00(mi, mj, f00)
            })
            .collect()
    }

    pub fn no_edge_loglik(&self, i: usize, j: usize) -> f64 {
        loglik_from_cells(self.independent_cells(i, j), &self.stats.pair_table(i, j))
    }

    pub fn edge_logliks(&self, i: usize, j: usize, hi: usize, hj: usize, thetas: &[f64]) -> Vec<f64> {
        let counts = self.stats.pair_table(i, j);
        self.edge_cells(i, j, hi, hj, thetas)
            .into_iter()
            .map(|c| loglik_from_cells(c, &counts))
            .collect()
    }

    /// Prior-marginalized score of a linked pair and the posterior mean of
    /// its copula parameter over the prior grid.
    pub fn edge_score(&self, i: usize, j: usize, hi: usize, hj: usize) -> (f64, f64) {
        let grid = self.cache.prior_thetas();
        let thetas: Vec<f64> = grid.iter().map(|&(t, _)| t).collect();
        let ll = self.edge_logliks(i, j, hi, hj, &thetas);
        let terms = grid.iter().zip(&ll).map(|(&(_, w), &l)| (w, l));
        let score = log_weighted_sum_exp(terms);
        (score, posterior_mean(grid, &ll))
    }

    /// Pair term of the composite likelihood under graph `g`.
    pub fn pair_score(&self, g: &MixedGraph, i: usize, j: usize) -> f64 {
        if g.has_edge(i, j) {
            self.edge_score(i, j, g.h(i), g.h(j)).0
        } else {
            self.no_edge_loglik(i, j)
        }
    }

    /// Pair term of the bound objective: expected log-likelihood under the
    /// supplied copula-parameter grids.
    pub fn q_term(&self, g: &MixedGraph, grids: &EdgeThetaGrids, i: usize, j: usize) -> Result<f64> {
        if !g.has_edge(i, j) {
            return Ok(self.no_edge_loglik(i, j));
        }
        let e = Edge::new(i, j)?;
        let parts = grids
            .0
            .get(&e)
            .ok_or_else(|| Error::Domain(format!("no posterior grid for edge {e}")))?;
        let mut total = 0.0;
        for (weight, grid) in parts {
            let thetas: Vec<f64> = grid.iter().map(|&(t, _)| t).collect();
            let ll = self.edge_logliks(i, j, g.h(i), g.h(j), &thetas);
            let expect: f64 = grid.iter().zip(&ll).map(|(&(_, w), &l)| w * l).sum();
            total += weight * expect;
        }
        Ok(total)
    }

    /// Sum of pair scores over `pairs`, reduced in the given order.
    pub fn sum_scores(&self, g: &MixedGraph, pairs: &[(usize, usize)]) -> f64 {
        let terms: Vec<f64> = pairs.par_iter().map(|&(i, j)| self.pair_score(g, i, j)).collect();
        terms.iter().sum()
    }

    pub fn sum_q_terms(&self, g: &MixedGraph, grids: &EdgeThetaGrids, pairs: &[(usize, usize)]) -> Result<f64> {
        let terms: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| self.q_term(g, grids, i, j))
            .collect::<Result<_>>()?;
        Ok(terms.iter().sum())
    }
}

/// Mean of the grid values under weights proportional to `w_t exp(ll_t)`.
/// Falls back to the plain grid mean when every likelihood is zero.
pub(crate) fn posterior_mean(grid: &[(f64, f64)], ll: &[f64]) -> f64 {
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return grid.iter().map(|&(t, w)| t * w).sum::<f64>() / grid.iter().map(|&(_, w)| w).sum::<f64>();
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&(t, w), &l) in grid.iter().zip(ll) {
        let r = w * (l - max).exp();
        num += r * t;
        den += r;
    }
    num / den
}

/// For each edge, the copula-parameter grids it is averaged over in the
/// bound objective, each with its weight: a single posterior for a
/// cross-group edge, and `1/(|S|-1)` times each other group's posterior for
/// a within-group edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeThetaGrids(pub BTreeMap<Edge, Vec<(f64, Vec<(f64, f64)>)>>);

pub type Posteriors = BTreeMap<(usize, usize), LaplacePosterior>;

impl EdgeThetaGrids {
    pub fn from_posteriors(g: &MixedGraph, posteriors: &Posteriors, k_theta: usize) -> Result<Self> {
        let part = g.partition();
        let k = part.n_groups();
        if k < 2 {
            return Err(Error::Unsupported(
                "the bound objective needs at least two latent groups".into(),
            ));
        }
        let post = |m: usize, n: usize| {
            posteriors
                .get(&(m.min(n), m.max(n)))
                .ok_or_else(|| Error::Domain(format!("missing posterior for groups ({m}, {n})")))
        };
        let mut map = BTreeMap::new();
        for &e in g.edges() {
            let (gm, gn) = (part.group_of(e.lo()), part.group_of(e.hi()));
            let parts = if gm != gn {
                vec![(1.0, marginal_theta_grid(post(gm, gn)?, e, k_theta)?)]
            } else {
                let w = 1.0 / (k - 1) as f64;
                (0..k)
                    .filter(|&n| n != gm)
                    .map(|n| Ok((w, marginal_theta_grid(post(gm, n)?, e, k_theta)?)))
                    .collect::<Result<Vec<_>>>()?
            };
            map.insert(e, parts);
        }
        Ok(EdgeThetaGrids(map))
    }
}

fn check_pair(g: &MixedGraph, i: usize, j: usize) -> Result<()> {
    let p = g.n_vars();
    if i >= p || j >= p {
        return Err(Error::UnknownVariable(format!("index {}", i.max(j))));
    }
    if i == j {
        return Err(Error::Domain("a pair needs two distinct variables".into()));
    }
    Ok(())
}

/// `sum_c N_ij[c] log p(c)` with the copula parameter held at `theta`
/// (`None` exactly when the pair is unlinked in `g`).
pub fn pair_loglik_given_theta(
    i: usize,
    j: usize,
    g: &MixedGraph,
    params: &ModelParams,
    theta: Option<f64>,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<f64> {
    check_pair(g, i, j)?;
    let scorer = PairScorer::new(g.partition(), params, stats, cache);
    match (g.has_edge(i, j), theta) {
        (false, None) => Ok(scorer.no_edge_loglik(i, j)),
        (true, Some(t)) => {
            if !(t.abs() < copula::THETA_BOUND) {
                return Err(Error::Domain(format!("copula parameter {t} outside (-25, 25)")));
            }
            Ok(scorer.edge_logliks(i, j, g.h(i), g.h(j), &[t])[0])
        }
        (true, None) => Err(Error::Domain(format!("pair ({i}, {j}) is linked and needs a copula parameter"))),
        (false, Some(_)) => Err(Error::Domain(format!("pair ({i}, {j}) is unlinked and takes no copula parameter"))),
    }
}

/// Pair term of the composite likelihood, with a linked pair's copula
/// parameter integrated against the prior grid.
pub fn pair_score(
    i: usize,
    j: usize,
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<f64> {
    check_pair(g, i, j)?;
    Ok(PairScorer::new(g.partition(), params, stats, cache).pair_score(g, i, j))
}

/// Penalized pairwise composite likelihood.
pub fn pcl(g: &MixedGraph, params: &ModelParams, stats: &SufficientStats, cache: &QuadratureCache) -> Result<f64> {
    if stats.n_vars() != g.n_vars() {
        return Err(Error::Domain("statistics and graph disagree on the number of variables".into()));
    }
    let scorer = PairScorer::new(g.partition(), params, stats, cache);
    Ok(scorer.sum_scores(g, &all_pairs(g.n_vars())) + graph_log_prior(g))
}

/// Bound objective with pairwise copula parameters averaged under the
/// group-pair posteriors. The constant entropy term is omitted.
pub fn q_objective(
    g: &MixedGraph,
    params: &ModelParams,
    posteriors: &Posteriors,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<f64> {
    let grids = EdgeThetaGrids::from_posteriors(g, posteriors, cache.k_theta())?;
    let scorer = PairScorer::new(g.partition(), params, stats, cache);
    scorer.sum_q_terms(g, &grids, &all_pairs(g.n_vars()))
}

/// Per-pair composite-likelihood breakdown: `(i, j, linked, score)`.
pub fn pair_breakdown(
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Vec<(usize, usize, bool, f64)> {
    let scorer = PairScorer::new(g.partition(), params, stats, cache);
    all_pairs(g.n_vars())
        .into_iter()
        .map(|(i, j)| (i, j, g.has_edge(i, j), scorer.pair_score(g, i, j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::get_dag;
    use std::sync::{Arc, OnceLock};

    fn cache() -> &'static QuadratureCache {
        static C: OnceLock<QuadratureCache> = OnceLock::new();
        C.get_or_init(|| QuadratureCache::build(21).unwrap())
    }

    fn balanced() -> (Arc<Partition>, Dataset) {
        let part = Arc::new(Partition::with_sizes(&[2]).unwrap());
        let data = Dataset::new(
            part.names().to_vec(),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]],
        )
        .unwrap();
        (part, data)
    }

    fn zero_params(p: usize, groups: usize) -> ModelParams {
        ModelParams {
            slopes: vec![0.0; p],
            intercepts: vec![0.0; p],
            sigma: CorrMatrix::constant(groups, 50),
            thetas: BTreeMap::new(),
        }
    }

    #[test]
    fn stats_examples() {
        let (part, data) = balanced();
        let s = sufficient_stats(&data, &part).unwrap();
        assert_eq!(s.pair_table(0, 1), [[1, 1], [1, 1]]);
        assert_eq!(s.zero_count(0), 2);
        assert_eq!(s.n_rows(), 4);
    }

    #[test]
    fn stats_are_consistent() {
        let part = Partition::with_sizes(&[2, 2]).unwrap();
        let rows = vec![vec![0, 1, 1, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 1], vec![0, 0, 0, 1], vec![1, 0, 1, 1]];
        let data = Dataset::new(part.names().to_vec(), rows).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let t = s.pair_table(i, j);
                assert_eq!(t.iter().flatten().sum::<u64>(), 5);
                assert_eq!(t[0][0] + t[0][1], s.zero_count(i));
                assert_eq!(t[0][0] + t[1][0], s.zero_count(j));
            }
        }
        let gp = s.group_pair(0, 1).unwrap();
        assert_eq!(gp.vars, vec![0, 1, 2, 3]);
        assert_eq!(gp.counts.iter().map(|c| c.1).sum::<u64>(), 5);
        let key = 0b0110u64;
        assert!(gp.counts.contains(&(key, 1)));
    }

    #[test]
    fn constant_column_counts() {
        let part = Partition::with_sizes(&[2]).unwrap();
        let data = Dataset::new(part.names().to_vec(), vec![vec![1, 0], vec![1, 1], vec![1, 0]]).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        assert_eq!(s.zero_count(0), 0);
    }

    #[test]
    fn log_prior_examples() {
        let p6 = Arc::new(Partition::with_sizes(&[3, 3]).unwrap());
        let g = get_dag(p6.clone());
        assert!((graph_log_prior(&g) + 1.580_407_734_867_39).abs() < 1e-12);
        let g1 = g.with_edge(Edge::new(0, 4).unwrap());
        assert!((graph_log_prior(&g1) - (0.1f64.ln() + 14.0 * 0.9f64.ln())).abs() < 1e-12);
        let p3 = Arc::new(Partition::with_sizes(&[3]).unwrap());
        let full = MixedGraph::with_edges(p3, all_pairs(3).into_iter().map(|(a, b)| Edge::new(a, b).unwrap())).unwrap();
        assert!((graph_log_prior(&full) - 3.0 * 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_pair_loglik() {
        let (part, data) = balanced();
        let s = sufficient_stats(&data, &part).unwrap();
        let g = get_dag(part);
        let params = zero_params(2, 1);
        let ll = pair_loglik_given_theta(0, 1, &g, &params, None, &s, cache()).unwrap();
        assert!((ll - 4.0 * 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(pair_score(0, 1, &g, &params, &s, cache()).unwrap(), ll);
        let total = pcl(&g, &params, &s, cache()).unwrap();
        assert!((total - (4.0 * 0.25f64.ln() + 0.9f64.ln())).abs() < 1e-12);
        assert!(pair_loglik_given_theta(0, 1, &g, &params, Some(1.0), &s, cache()).is_err());
    }

    #[test]
    fn small_theta_matches_no_edge() {
        let part = Arc::new(Partition::with_sizes(&[2, 1]).unwrap());
        let rows = vec![vec![0, 1, 1], vec![1, 1, 0], vec![1, 1, 1], vec![0, 0, 0], vec![1, 0, 1], vec![0, 0, 1]];
        let data = Dataset::new(part.names().to_vec(), rows).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        let mut params = zero_params(3, 2);
        params.slopes = vec![0.8, -1.1, 1.6];
        params.intercepts = vec![0.2, -0.4, 0.1];
        params.sigma.set_index(0, 1, 70);
        let g0 = get_dag(part.clone());
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let g1 = g0.with_edge(Edge::new(i, j).unwrap());
            let base = pair_loglik_given_theta(i, j, &g0, &params, None, &s, cache()).unwrap();
            let lim = pair_loglik_given_theta(i, j, &g1, &params, Some(1e-9), &s, cache()).unwrap();
            assert!((base - lim).abs() < 1e-8);
        }
    }

    #[test]
    fn single_theta_grid_scores_at_zero() {
        let part = Arc::new(Partition::with_sizes(&[1, 1]).unwrap());
        let rows = vec![vec![0, 1], vec![1, 1], vec![1, 1], vec![0, 0]];
        let data = Dataset::new(part.names().to_vec(), rows).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        let c1 = QuadratureCache::with_theta_grid(21, 1).unwrap();
        let g = MixedGraph::with_edges(part, [Edge::new(0, 1).unwrap()]).unwrap();
        let mut params = zero_params(2, 2);
        params.slopes = vec![1.0, 0.5];
        params.thetas.insert(Edge::new(0, 1).unwrap(), 0.0);
        let score = pair_score(0, 1, &g, &params, &s, &c1).unwrap();
        let ll = pair_loglik_given_theta(0, 1, &g, &params, Some(0.0), &s, &c1).unwrap();
        assert_eq!(score, ll);
    }

    #[test]
    fn matches_row_by_row_product() {
        let part = Arc::new(Partition::with_sizes(&[2, 2]).unwrap());
        let rows = vec![vec![0, 1, 1, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 1], vec![0, 0, 0, 1], vec![1, 0, 1, 1]];
        let data = Dataset::new(part.names().to_vec(), rows.clone()).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        let g = MixedGraph::with_edges(part.clone(), [Edge::new(0, 2).unwrap(), Edge::new(2, 3).unwrap()]).unwrap();
        let mut params = zero_params(4, 2);
        params.slopes = vec![0.7, -1.3, 2.1, 0.4];
        params.intercepts = vec![0.3, 0.0, -0.5, 0.9];
        params.sigma.set_index(0, 1, 20);
        params.thetas.insert(Edge::new(0, 2).unwrap(), 9.0);
        params.thetas.insert(Edge::new(2, 3).unwrap(), -4.0);
        let c = cache();
        for (i, j) in all_pairs(4) {
            let theta = params.theta(Edge::new(i, j).unwrap());
            let want: f64 = rows
                .iter()
                .map(|r| {
                    let (gi, gj) = (part.group_of(i), part.group_of(j));
                    let p = if gi == gj {
                        c.integrate_latent_1d(|x| {
                            crate::cdn::bivariate_pmf(i, j, &g, &params, x, x).unwrap()[r[i] as usize][r[j] as usize]
                        })
                    } else {
                        c.integrate_pair_latent(
                            |x, y| crate::cdn::bivariate_pmf(i, j, &g, &params, x, y).unwrap()[r[i] as usize][r[j] as usize],
                            params.sigma.get(gi, gj),
                        )
                        .unwrap()
                    };
                    p.ln()
                })
                .sum();
            let got = pair_loglik_given_theta(i, j, &g, &params, theta, &s, c).unwrap();
            assert!((got - want).abs() < 1e-10, "({i},{j}) {got} vs {want}");
        }
    }

    #[test]
    fn impossible_configuration_gives_negative_infinity() {
        let part = Arc::new(Partition::with_sizes(&[2]).unwrap());
        let data = Dataset::new(part.names().to_vec(), vec![vec![1, 0]]).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        let g = get_dag(part);
        let mut params = zero_params(2, 1);
        // P(Y_1 = 0 | x) = Phi(-60) underflows to exactly 0.
        params.intercepts = vec![0.0, 60.0];
        let ll = pair_loglik_given_theta(0, 1, &g, &params, None, &s, cache()).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn disjoint_edge_leaves_pair_score_unchanged() {
        let part = Arc::new(Partition::with_sizes(&[3, 3]).unwrap());
        let rows: Vec<Vec<u8>> = (0..40u32).map(|r| (0..6).map(|c| ((r * 7 + c * 3 + r / 3) % 2) as u8).collect()).collect();
        let data = Dataset::new(part.names().to_vec(), rows).unwrap();
        let s = sufficient_stats(&data, &part).unwrap();
        let mut params = zero_params(6, 2);
        params.slopes = vec![1.0, 0.5, -0.7, 1.2, 0.9, -1.4];
        let g = MixedGraph::with_edges(part, [Edge::new(0, 3).unwrap()]).unwrap();
        let g2 = g.with_edge(Edge::new(2, 5).unwrap());
        let a = pair_score(0, 3, &g, &params, &s, cache()).unwrap();
        let b = pair_score(0, 3, &g2, &params, &s, cache()).unwrap();
        assert_eq!(a, b);
        let g3 = g.with_edge(Edge::new(0, 4).unwrap());
        let c = pair_score(0, 3, &g3, &params, &s, cache()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn log_weighted_sum_exp_is_stable() {
        let v = log_weighted_sum_exp([(0.5, -1000.0), (0.5, -1000.0)].into_iter());
        assert!((v + 1000.0).abs() < 1e-12);
        assert_eq!(log_weighted_sum_exp([(1.0, f64::NEG_INFINITY)].into_iter()), f64::NEG_INFINITY);
        let v = log_weighted_sum_exp([(0.5, f64::NEG_INFINITY), (0.5, -3.0)].into_iter());
        assert!((v - (-3.0 + 0.5f64.ln())).abs() < 1e-12);
    }
}
