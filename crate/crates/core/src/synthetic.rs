//! Random ground-truth models and exact data sampling for simulation studies.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cdn::sample_config;
use crate::copula::intercept_from_marginal;
use crate::model::{all_pairs, CorrMatrix, Dataset, Edge, MixedGraph, ModelParams, Partition};
use crate::{Error, Result};

/// How "each factor d-separates enough children" is enforced during pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PurityRule {
    /// Some `min_pure_children` children of each group are pairwise unlinked.
    #[default]
    MutuallyUnlinked,
    /// Some `min_pure_children` children of each group have no edges at all.
    NoEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub children_per_group: usize,
    pub edge_prob: f64,
    pub signal_range: (f64, f64),
    pub marginal_range: (f64, f64),
    pub theta_range: (f64, f64),
    pub max_adjacent_edges: usize,
    pub min_pure_children: usize,
    pub purity: PurityRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_groups: 4,
            children_per_group: 4,
            edge_prob: 0.2,
            signal_range: (0.2, 0.6),
            marginal_range: (0.1, 0.9),
            theta_range: (10.0, 15.0),
            max_adjacent_edges: 3,
            min_pure_children: 3,
            purity: PurityRule::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |(a, b): (f64, f64)| 0.0 < a && a <= b && b < 1.0;
        if self.n_groups == 0 || self.children_per_group == 0 {
            return Err(Error::Config("need at least one group with one child".into()));
        }
        if self.children_per_group < self.min_pure_children {
            return Err(Error::Config("fewer children per group than required pure children".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Config("edge probability outside [0, 1]".into()));
        }
        if !unit(self.signal_range) || !unit(self.marginal_range) {
            return Err(Error::Config("signal and marginal ranges must lie inside (0, 1)".into()));
        }
        let (lo, hi) = self.theta_range;
        if !(lo <= hi && lo > -25.0 && hi < 25.0) {
            return Err(Error::Config("copula parameter range must lie inside (-25, 25)".into()));
        }
        Ok(())
    }
}

/// A generated ground truth. `params.sigma` is snapped to the correlation
/// grid; `sigma_raw` is the correlation matrix data are sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub graph: MixedGraph,
    pub params: ModelParams,
    pub sigma_raw: Vec<Vec<f64>>,
}

/// Slope whose signal factor `slope^2 / (slope^2 + 1)` equals `s`.
pub fn slope_for_signal(s: f64) -> f64 {
    (s / (1.0 - s)).sqrt()
}

fn has_unlinked_subset(g: &MixedGraph, members: &[usize], need: usize, rule: PurityRule) -> bool {
    match rule {
        PurityRule::NoEdges => members.iter().filter(|&&v| g.degree(v) == 0).count() >= need,
        PurityRule::MutuallyUnlinked => {
            // Groups are small; enumerate subsets by bitmask.
            let c = members.len();
            if c > 20 {
                return greedy_independent(g, members) >= need;
            }
            (0u32..1 << c).any(|mask| {
                mask.count_ones() as usize >= need && {
                    let chosen: Vec<usize> = (0..c).filter(|b| mask >> b & 1 == 1).map(|b| members[b]).collect();
                    chosen
                        .iter()
                        .enumerate()
                        .all(|(a, &x)| chosen[a + 1..].iter().all(|&y| !g.has_edge(x, y)))
                }
            })
        }
    }
}

fn greedy_independent(g: &MixedGraph, members: &[usize]) -> usize {
    let mut chosen: Vec<usize> = Vec::new();
    let mut order = members.to_vec();
    order.sort_by_key(|&v| g.degree(v));
    for v in order {
        if chosen.iter().all(|&c| !g.has_edge(c, v)) {
            chosen.push(v);
        }
    }
    chosen.len()
}

/// Edges whose removal can help satisfy the degree and purity constraints.
fn violating_edges(g: &MixedGraph, cfg: &SynthConfig) -> Vec<Edge> {
    let part = g.partition();
    let impure: Vec<bool> = (0..part.n_groups())
        .map(|m| !has_unlinked_subset(g, part.members(m), cfg.min_pure_children, cfg.purity))
        .collect();
    g.edges()
        .iter()
        .copied()
        .filter(|e| {
            let (a, b) = (e.lo(), e.hi());
            if g.degree(a) > cfg.max_adjacent_edges || g.degree(b) > cfg.max_adjacent_edges {
                return true;
            }
            let (ga, gb) = (part.group_of(a), part.group_of(b));
            match cfg.purity {
                PurityRule::MutuallyUnlinked => ga == gb && impure[ga],
                PurityRule::NoEdges => impure[ga] || impure[gb],
            }
        })
        .collect()
}

/// Draws a random ground-truth model.
pub fn gen_true_model<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<TrueModel> {
    cfg.validate()?;
    let part = Arc::new(Partition::with_sizes(&vec![cfg.children_per_group; cfg.n_groups])?);
    let p = part.n_vars();
    let mut edges = Vec::new();
    for (i, j) in all_pairs(p) {
        if rng.gen::<f64>() < cfg.edge_prob {
            edges.push(Edge::new(i, j)?);
        }
    }
    let mut g = MixedGraph::with_edges(part.clone(), edges)?;
    loop {
        let bad = violating_edges(&g, cfg);
        let Some(&e) = bad.choose(rng) else { break };
        g = g.without_edge(e);
    }

    let mut slopes = Vec::with_capacity(p);
    let mut intercepts = Vec::with_capacity(p);
    for _ in 0..p {
        let s = rng.gen_range(cfg.signal_range.0..=cfg.signal_range.1);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let slope = sign * slope_for_signal(s);
        let m = rng.gen_range(cfg.marginal_range.0..=cfg.marginal_range.1);
        slopes.push(slope);
        intercepts.push(intercept_from_marginal(slope, m)?);
    }
    let thetas = g
        .edges()
        .iter()
        .map(|&e| (e, rng.gen_range(cfg.theta_range.0..=cfg.theta_range.1)))
        .collect();

    let k = cfg.n_groups;
    let sigma_raw = random_correlation(k, rng)?;
    Ok(TrueModel {
        params: ModelParams {
            slopes,
            intercepts,
            sigma: CorrMatrix::snapped(&sigma_raw),
            thetas,
        },
        graph: g,
        sigma_raw,
    })
}

/// `D^{-1/2} M D^{-1/2}` for `M = sum_k z_k z_k^T` with `k` standard normal
/// vectors; redrawn in the (probability zero) singular case.
fn random_correlation<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    for _ in 0..100 {
        let mut m = DMatrix::<f64>::zeros(k, k);
        for _ in 0..k {
            let z = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
            m += &z * z.transpose();
        }
        let d: Vec<f64> = (0..k).map(|a| m[(a, a)].sqrt()).collect();
        let c = DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 } else { m[(a, b)] / (d[a] * d[b]) });
        if c.clone().cholesky().is_some() {
            return Ok((0..k).map(|a| (0..k).map(|b| c[(a, b)]).collect()).collect());
        }
    }
    Err(Error::Fit("could not draw a positive definite correlation matrix".into()))
}

/// `n` independent rows: latent values from `N(0, sigma_raw)`, then every
/// observed variable by exact conditional sampling.
pub fn gen_dataset<R: Rng + ?Sized>(truth: &TrueModel, n: usize, rng: &mut R) -> Result<Dataset> {
    let k = truth.sigma_raw.len();
    let sigma = DMatrix::from_fn(k, k, |a, b| truth.sigma_raw[a][b]);
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::Domain("latent correlation matrix is not positive definite".into()))?;
    let l = chol.l();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let eps = DVector::<f64>::from_fn(k, |_, _| rng.sample(StandardNormal));
        let x = &l * eps;
        rows.push(sample_config(&truth.graph, &truth.params, x.as_slice(), rng)?);
    }
    Dataset::new(truth.graph.partition().names().to_vec(), rows)
}
