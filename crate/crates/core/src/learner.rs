//! The single-shot, greedy and bound-based structure learners, the
//! parameter optimizer they share, and latent embedding of observations.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdn::bivariate_pmf;
use crate::copula::intercept_from_marginal;
use crate::laplace::fit_all_posteriors;
use crate::model::{
    all_pairs, get_dag, sigma_value, CorrMatrix, Dataset, Edge, MixedGraph, ModelParams, Partition, N_SIGMA,
    SLOPE_CLAMP,
};
use crate::normal;
use crate::optim::{fd_gradient, maximize_bfgs, BfgsOptions};
use crate::quadrature::{QuadratureCache, DEFAULT_LATENT_GRID, DEFAULT_THETA_GRID};
use crate::score::{graph_log_prior, sufficient_stats, EdgeThetaGrids, PairScorer, Posteriors, SufficientStats, EDGE_PRIOR};
use crate::{Error, Result};

/// Finite-difference step for slope gradients.
pub const SLOPE_FD_STEP: f64 = 1e-4;
/// Grid index of the correlation 0.01, the starting value for every factor pair.
pub const SIGMA_START: usize = 50;
/// PCL drops larger than this between outer iterations of the bound-based learner are reported.
pub const REGRESSION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lsc0,
    Lsc1,
    Lsc2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Lsc0, Algorithm::Lsc1, Algorithm::Lsc2];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Lsc0 => "lsc0",
            Algorithm::Lsc1 => "lsc1",
            Algorithm::Lsc2 => "lsc2",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsc0" => Ok(Algorithm::Lsc0),
            "lsc1" => Ok(Algorithm::Lsc1),
            "lsc2" => Ok(Algorithm::Lsc2),
            other => Err(Error::Config(format!("unknown algorithm {other:?} (expected lsc0, lsc1 or lsc2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub algorithm: Algorithm,
    pub max_outer_iters: usize,
    pub max_gradient_iters: usize,
    /// Relative objective change below which slope optimization stops.
    pub tol: f64,
    /// Slope/correlation sweeps per parameter step.
    pub sweeps: usize,
    pub seed: u64,
    pub latent_grid: usize,
    pub theta_grid: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            algorithm: Algorithm::Lsc2,
            max_outer_iters: 50,
            max_gradient_iters: 200,
            tol: 1e-6,
            sweeps: 2,
            seed: 0,
            latent_grid: DEFAULT_LATENT_GRID,
            theta_grid: DEFAULT_THETA_GRID,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.max_gradient_iters == 0 || self.sweeps == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn build_cache(&self) -> Result<QuadratureCache> {
        QuadratureCache::with_theta_grid(self.latent_grid, self.theta_grid)
    }
}

/// One recorded point of a learner's progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub stage: String,
    pub pcl: f64,
    pub added: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub algorithm: Algorithm,
    pub graph: MixedGraph,
    pub params: ModelParams,
    pub trace: Vec<TraceEntry>,
    /// PCL drops above [`REGRESSION_TOL`] between outer iterations (bound-based learner only).
    pub pcl_regressions: usize,
    pub pcl: f64,
}

/// Zero frequency of each column, kept away from 0 and 1.
pub fn clipped_zero_freqs(stats: &SufficientStats) -> Vec<f64> {
    let n = stats.n_rows() as f64;
    let lo = 1.0 / (n + 2.0);
    (0..stats.n_vars())
        .map(|i| {
            let f = if n > 0.0 { stats.zero_count(i) as f64 / n } else { 0.5 };
            f.clamp(lo, 1.0 - lo)
        })
        .collect()
}

/// Unit slopes, marginal-matching intercepts, correlations 0.01 and zero copula parameters.
pub fn init_parameters(g: &MixedGraph, stats: &SufficientStats) -> Result<ModelParams> {
    let p0 = clipped_zero_freqs(stats);
    Ok(ModelParams {
        slopes: vec![1.0; g.n_vars()],
        intercepts: p0.iter().map(|&p| intercept_from_marginal(1.0, p)).collect::<Result<_>>()?,
        sigma: CorrMatrix::constant(g.partition().n_groups(), SIGMA_START),
        thetas: g.edges().iter().map(|&e| (e, 0.0)).collect(),
    })
}

/// Objective maximized by [`optimize_params`].
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Composite likelihood with prior-marginalized copula parameters.
    Pcl,
    /// Bound objective under fixed group-pair posteriors.
    Bound(&'a Posteriors),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFit {
    pub params: ModelParams,
    /// Objective value after every accepted update, starting at the input.
    pub trace: Vec<f64>,
}

impl ParamFit {
    pub fn value(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial value")
    }
}

struct ParamObjective<'s> {
    scorer: PairScorer<'s>,
    g: &'s MixedGraph,
    grids: Option<EdgeThetaGrids>,
    pairs: Vec<(usize, usize)>,
    offset: f64,
}

impl ParamObjective<'_> {
    fn term(&self, i: usize, j: usize) -> f64 {
        match &self.grids {
            None => self.scorer.pair_score(self.g, i, j),
            Some(grids) => self
                .scorer
                .q_term(self.g, grids, i, j)
                .expect("grids cover every edge"),
        }
    }

    fn total(&self) -> f64 {
        let terms: Vec<f64> = self.pairs.par_iter().map(|&(i, j)| self.term(i, j)).collect();
        terms.iter().sum::<f64>() + self.offset
    }

    fn partial(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| self.term(i, j)).sum()
    }
}

/// Alternating slope ascent (intercepts tied to the empirical marginals) and
/// exhaustive per-pair correlation search. Only improving updates are
/// accepted, so the objective never decreases.
pub fn optimize_params(
    objective: Objective<'_>,
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
    cfg: &LearnConfig,
) -> Result<ParamFit> {
    let p = g.n_vars();
    let part = g.partition().clone();
    let p0 = clipped_zero_freqs(stats);
    let grids = match objective {
        Objective::Pcl => None,
        Objective::Bound(post) => Some(EdgeThetaGrids::from_posteriors(g, post, cache.k_theta())?),
    };
    let mut params = params.clone();
    for i in 0..p {
        params.slopes[i] = params.slopes[i].clamp(-SLOPE_CLAMP, SLOPE_CLAMP);
        params.intercepts[i] = intercept_from_marginal(params.slopes[i], p0[i])?;
    }
    let obj = RefCell::new(ParamObjective {
        scorer: PairScorer::new(&part, &params, stats, cache),
        g,
        grids,
        pairs: all_pairs(p),
        offset: match objective {
            Objective::Pcl => graph_log_prior(g),
            Objective::Bound(_) => 0.0,
        },
    });
    let mut current = obj.borrow().total();
    if !current.is_finite() {
        return Err(Error::Fit("objective is not finite at the initial parameters".into()));
    }
    let mut trace = vec![current];
    let pairs_of: Vec<Vec<(usize, usize)>> = (0..p)
        .map(|i| (0..p).filter(|&j| j != i).map(|j| (i.min(j), i.max(j))).collect())
        .collect();
    let intercept = |i: usize, s: f64| intercept_from_marginal(s, p0[i]).expect("clipped marginal");
    let k = part.n_groups();

    for _ in 0..cfg.sweeps {
        // Slopes.
        let mut f = |s: &[f64]| {
            let mut o = obj.borrow_mut();
            for i in 0..p {
                o.scorer.set_link(i, s[i], intercept(i, s[i]));
            }
            o.total()
        };
        let mut grad = |s: &[f64]| {
            let mut o = obj.borrow_mut();
            for i in 0..p {
                o.scorer.set_link(i, s[i], intercept(i, s[i]));
            }
            (0..p)
                .map(|i| {
                    let mut at = |v: f64| {
                        o.scorer.set_link(i, v, intercept(i, v));
                        o.partial(&pairs_of[i])
                    };
                    let d = (at(s[i] + SLOPE_FD_STEP) - at(s[i] - SLOPE_FD_STEP)) / (2.0 * SLOPE_FD_STEP);
                    o.scorer.set_link(i, s[i], intercept(i, s[i]));
                    d
                })
                .collect()
        };
        let res = maximize_bfgs(
            &mut f,
            &mut grad,
            &params.slopes,
            BfgsOptions {
                max_iter: cfg.max_gradient_iters,
                grad_tol: 1e-8,
                rel_tol: cfg.tol,
                bound: Some(SLOPE_CLAMP),
            },
        );
        {
            let mut o = obj.borrow_mut();
            if res.value > current {
                params.slopes = res.x;
                for i in 0..p {
                    params.intercepts[i] = intercept(i, params.slopes[i]);
                }
                current = res.value;
                trace.extend(res.trace.into_iter().skip(1));
            }
            for i in 0..p {
                o.scorer.set_link(i, params.slopes[i], params.intercepts[i]);
            }
        }
        // Correlations, one factor pair at a time.
        let order = sigma_preference_order();
        for m in 0..k {
            for n in m + 1..k {
                let mut o = obj.borrow_mut();
                let block: Vec<(usize, usize)> = part
                    .members(m)
                    .iter()
                    .flat_map(|&i| part.members(n).iter().map(move |&j| (i.min(j), i.max(j))))
                    .collect();
                let old = params.sigma.index(m, n);
                let values: Vec<f64> = (0..N_SIGMA)
                    .map(|idx| {
                        o.scorer.set_sigma_index(m, n, idx);
                        o.partial(&block)
                    })
                    .collect();
                let mut best = old;
                for &idx in &order {
                    if values[idx] > values[best] {
                        best = idx;
                    }
                }
                if best != old && values[best] == values[old] {
                    best = old;
                }
                o.scorer.set_sigma_index(m, n, best);
                if best != old {
                    let total = o.total();
                    if total >= current {
                        params.sigma.set_index(m, n, best);
                        current = total;
                        trace.push(total);
                        continue;
                    }
                }
                o.scorer.set_sigma_index(m, n, old);
            }
        }
    }
    Ok(ParamFit { params, trace })
}

/// Correlation grid indices ordered by tie preference: smaller magnitude
/// first, negative before positive.
fn sigma_preference_order() -> Vec<usize> {
    let mut idx: Vec<usize> = (0..N_SIGMA).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (sigma_value(a), sigma_value(b));
        sa.abs().partial_cmp(&sb.abs()).unwrap().then(sa.partial_cmp(&sb).unwrap())
    });
    idx
}

type MemoKey = (usize, usize, usize, usize);

/// Pair scores of linked pairs, memoized by endpoint factor counts, for one
/// fixed set of slopes, intercepts and correlations.
struct StructureScorer<'s> {
    scorer: PairScorer<'s>,
    no_edge: Vec<f64>,
    linked: RefCell<HashMap<MemoKey, (f64, f64)>>,
}

impl<'s> StructureScorer<'s> {
    fn new(part: &Partition, params: &ModelParams, stats: &'s SufficientStats, cache: &'s QuadratureCache) -> Self {
        let scorer = PairScorer::new(part, params, stats, cache);
        let pairs = all_pairs(part.n_vars());
        let no_edge = pairs.par_iter().map(|&(i, j)| scorer.no_edge_loglik(i, j)).collect();
        StructureScorer {
            scorer,
            no_edge,
            linked: RefCell::new(HashMap::new()),
        }
    }

    /// Computes any missing linked-pair entries for `keys` in parallel.
    fn prefetch(&self, keys: &BTreeSet<MemoKey>) {
        let missing: Vec<MemoKey> = {
            let memo = self.linked.borrow();
            keys.iter().filter(|k| !memo.contains_key(k)).copied().collect()
        };
        let scorer = &self.scorer;
        let values: Vec<(f64, f64)> = missing
            .par_iter()
            .map(|&(i, j, hi, hj)| scorer.edge_score(i, j, hi, hj))
            .collect();
        self.linked.borrow_mut().extend(missing.into_iter().zip(values));
    }

    fn linked(&self, i: usize, j: usize, hi: usize, hj: usize) -> (f64, f64) {
        if let Some(&v) = self.linked.borrow().get(&(i, j, hi, hj)) {
            return v;
        }
        let v = self.scorer.edge_score(i, j, hi, hj);
        self.linked.borrow_mut().insert((i, j, hi, hj), v);
        v
    }

    fn keys_for(g: &MixedGraph) -> impl Iterator<Item = MemoKey> + '_ {
        g.edges().iter().map(|e| (e.lo(), e.hi(), g.h(e.lo()), g.h(e.hi())))
    }

    /// PCL of `g`, summed in pair order exactly like [`crate::score::pcl`].
    fn pcl(&self, g: &MixedGraph) -> f64 {
        let p = g.n_vars();
        let mut total = 0.0;
        for (k, (i, j)) in all_pairs(p).into_iter().enumerate() {
            total += if g.has_edge(i, j) {
                self.linked(i, j, g.h(i), g.h(j)).0
            } else {
                self.no_edge[k]
            };
        }
        total + graph_log_prior(g)
    }

    fn theta_mean(&self, g: &MixedGraph, e: Edge) -> f64 {
        self.linked(e.lo(), e.hi(), g.h(e.lo()), g.h(e.hi())).1
    }
}

fn edge_list(g: &MixedGraph) -> Vec<(usize, usize)> {
    g.edges().iter().map(|e| (e.lo(), e.hi())).collect()
}

/// Prefers higher score, then fewer edges, then the lexicographically
/// smaller edge list.
fn better(a: (f64, &MixedGraph), b: (f64, &MixedGraph)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.n_edges() != b.1.n_edges() {
        return a.1.n_edges() < b.1.n_edges();
    }
    edge_list(a.1) < edge_list(b.1)
}

/// Best graph among `g` and its single-edge toggles under PCL with slopes,
/// intercepts and correlations fixed. Added edges get the prior-grid
/// posterior mean of their copula parameter; removed edges drop theirs.
pub fn greedy_structure_step(
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<(MixedGraph, ModelParams)> {
    let ss = StructureScorer::new(g.partition(), params, stats, cache);
    let (best, _) = greedy_with(&ss, g);
    let mut out = params.clone();
    out.thetas.retain(|e, _| best.edges().contains(e));
    for &e in best.edges() {
        if !g.edges().contains(&e) {
            out.thetas.insert(e, ss.theta_mean(&best, e));
        }
    }
    Ok((best, out))
}

fn greedy_with(ss: &StructureScorer<'_>, g: &MixedGraph) -> (MixedGraph, f64) {
    let candidates = g.edge_neighborhood();
    let keys: BTreeSet<MemoKey> = candidates.iter().flat_map(StructureScorer::keys_for).collect();
    ss.prefetch(&keys);
    let mut best: Option<(f64, &MixedGraph)> = None;
    for c in &candidates {
        let s = ss.pcl(c);
        if best.map_or(true, |b| better((s, c), b)) {
            best = Some((s, c));
        }
    }
    let (s, b) = best.expect("neighborhood contains the graph itself");
    (b.clone(), s)
}

fn finalize_thetas(ss: &StructureScorer<'_>, g: &MixedGraph, params: &mut ModelParams) {
    params.thetas = g.edges().iter().map(|&e| (e, ss.theta_mean(g, e))).collect();
}

fn diff(old: &MixedGraph, new: &MixedGraph) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let added = new.edges().difference(old.edges()).map(|e| (e.lo(), e.hi())).collect();
    let removed = old.edges().difference(new.edges()).map(|e| (e.lo(), e.hi())).collect();
    (added, removed)
}

fn entry(iteration: usize, stage: &str, pcl: f64, old: &MixedGraph, new: &MixedGraph) -> TraceEntry {
    let (added, removed) = diff(old, new);
    TraceEntry {
        iteration,
        stage: stage.to_string(),
        pcl,
        added,
        removed,
    }
}

fn prepare(partition: &Partition, data: &Dataset, cfg: &LearnConfig) -> Result<(Arc<Partition>, SufficientStats, QuadratureCache)> {
    cfg.validate()?;
    let part = Arc::new(partition.clone());
    let stats = sufficient_stats(data, &part)?;
    if stats.n_rows() == 0 {
        return Err(Error::InvalidData("dataset has no rows".into()));
    }
    Ok((part, stats, cfg.build_cache()?))
}

/// Runs the configured algorithm.
pub fn learn(partition: &Partition, data: &Dataset, cfg: &LearnConfig) -> Result<FittedModel> {
    let (part, stats, cache) = prepare(partition, data, cfg)?;
    learn_from_stats(part, &stats, &cache, cfg)
}

/// Runs the configured algorithm on precomputed statistics and grids.
pub fn learn_from_stats(
    part: Arc<Partition>,
    stats: &SufficientStats,
    cache: &QuadratureCache,
    cfg: &LearnConfig,
) -> Result<FittedModel> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::Lsc0 => lsc0(part, stats, cache, cfg),
        Algorithm::Lsc1 => lsc1(part, stats, cache, cfg),
        Algorithm::Lsc2 => lsc2(part, stats, cache, cfg),
    }
}

pub fn learn_lsc0(partition: &Partition, data: &Dataset, cfg: &LearnConfig) -> Result<FittedModel> {
    let (part, stats, cache) = prepare(partition, data, cfg)?;
    lsc0(part, &stats, &cache, cfg)
}

pub fn learn_lsc1(partition: &Partition, data: &Dataset, cfg: &LearnConfig) -> Result<FittedModel> {
    let (part, stats, cache) = prepare(partition, data, cfg)?;
    lsc1(part, &stats, &cache, cfg)
}

pub fn learn_lsc2(partition: &Partition, data: &Dataset, cfg: &LearnConfig) -> Result<FittedModel> {
    let (part, stats, cache) = prepare(partition, data, cfg)?;
    lsc2(part, &stats, &cache, cfg)
}

fn lsc0(part: Arc<Partition>, stats: &SufficientStats, cache: &QuadratureCache, cfg: &LearnConfig) -> Result<FittedModel> {
    let empty = get_dag(part.clone());
    let init = init_parameters(&empty, stats)?;
    let fit = optimize_params(Objective::Pcl, &empty, &init, stats, cache, cfg)?;
    let mut params = fit.params;
    let ss = StructureScorer::new(&part, &params, stats, cache);
    let pairs = all_pairs(part.n_vars());
    let keys: BTreeSet<MemoKey> = pairs.iter().map(|&(i, j)| (i, j, 1, 1)).collect();
    ss.prefetch(&keys);
    let (ln_in, ln_out) = (EDGE_PRIOR.ln(), (1.0 - EDGE_PRIOR).ln());
    let selected: Vec<Edge> = pairs
        .iter()
        .enumerate()
        .filter(|&(k, &(i, j))| ss.linked(i, j, 1, 1).0 + ln_in > ss.no_edge[k] + ln_out)
        .map(|(_, &(i, j))| Edge::new(i, j))
        .collect::<Result<_>>()?;
    let g = MixedGraph::with_edges(part, selected)?;
    finalize_thetas(&ss, &g, &mut params);
    let start = ss.pcl(&empty);
    let pcl = ss.pcl(&g);
    Ok(FittedModel {
        algorithm: Algorithm::Lsc0,
        trace: vec![entry(0, "params", start, &empty, &empty), entry(0, "structure", pcl, &empty, &g)],
        graph: g,
        params,
        pcl_regressions: 0,
        pcl,
    })
}

fn lsc1(part: Arc<Partition>, stats: &SufficientStats, cache: &QuadratureCache, cfg: &LearnConfig) -> Result<FittedModel> {
    let mut g = get_dag(part.clone());
    let mut params = init_parameters(&g, stats)?;
    let mut trace = Vec::new();
    let mut seen = BTreeSet::from([edge_list(&g)]);
    for it in 0..cfg.max_outer_iters {
        let fit = optimize_params(Objective::Pcl, &g, &params, stats, cache, cfg)?;
        params = fit.params;
        let ss = StructureScorer::new(&part, &params, stats, cache);
        trace.push(entry(it, "params", ss.pcl(&g), &g, &g));
        let (next, score) = greedy_with(&ss, &g);
        trace.push(entry(it, "structure", score, &g, &next));
        let changed = next != g;
        params.thetas.retain(|e, _| next.edges().contains(e));
        for &e in next.edges() {
            params.thetas.entry(e).or_insert_with(|| ss.theta_mean(&next, e));
        }
        g = next;
        log::info!("lsc1 iteration {it}: pcl {score:.4}, {} edges", g.n_edges());
        if !changed {
            break;
        }
        if !seen.insert(edge_list(&g)) {
            log::warn!("lsc1 revisited a previous structure; stopping");
            break;
        }
    }
    let ss = StructureScorer::new(&part, &params, stats, cache);
    finalize_thetas(&ss, &g, &mut params);
    let pcl = ss.pcl(&g);
    Ok(FittedModel {
        algorithm: Algorithm::Lsc1,
        graph: g,
        params,
        trace,
        pcl_regressions: 0,
        pcl,
    })
}

fn lsc2(part: Arc<Partition>, stats: &SufficientStats, cache: &QuadratureCache, cfg: &LearnConfig) -> Result<FittedModel> {
    if part.n_groups() < 2 {
        log::warn!("a single latent group has no group pairs; falling back to lsc1");
        return lsc1(part, stats, cache, cfg);
    }
    let mut g = get_dag(part.clone());
    let mut params = init_parameters(&g, stats)?;
    let mut trace = Vec::new();
    let mut seen = BTreeSet::from([edge_list(&g)]);
    let mut regressions = 0;
    let mut last: Option<f64> = None;
    for it in 0..cfg.max_outer_iters {
        let posteriors = fit_all_posteriors(&g, &params, stats, cache)?;
        let fit = optimize_params(Objective::Bound(&posteriors), &g, &params, stats, cache, cfg)?;
        params = fit.params;
        let ss = StructureScorer::new(&part, &params, stats, cache);
        trace.push(entry(it, "params", ss.pcl(&g), &g, &g));
        let (next, score) = greedy_with(&ss, &g);
        trace.push(entry(it, "structure", score, &g, &next));
        if let Some(prev) = last {
            if score < prev - REGRESSION_TOL {
                regressions += 1;
                log::warn!("lsc2 iteration {it}: pcl fell from {prev:.6} to {score:.6}");
            }
        }
        last = Some(score);
        let changed = next != g;
        params.thetas.retain(|e, _| next.edges().contains(e));
        for &e in next.edges() {
            params.thetas.entry(e).or_insert_with(|| ss.theta_mean(&next, e));
        }
        g = next;
        log::info!("lsc2 iteration {it}: pcl {score:.4}, {} edges", g.n_edges());
        if !changed {
            break;
        }
        if !seen.insert(edge_list(&g)) {
            log::warn!("lsc2 revisited a previous structure; stopping");
            break;
        }
    }
    let ss = StructureScorer::new(&part, &params, stats, cache);
    finalize_thetas(&ss, &g, &mut params);
    let pcl = ss.pcl(&g);
    Ok(FittedModel {
        algorithm: Algorithm::Lsc2,
        graph: g,
        params,
        trace,
        pcl_regressions: regressions,
        pcl,
    })
}

/// Latent point estimate for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub x: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

pub const EMBED_MAX_ITER: usize = 500;
/// Gradient tolerance per unit of objective magnitude.
pub const EMBED_TOL: f64 = 1e-6;

/// Sum over variable pairs of the joint log density of the pair's
/// observations and their factors' latent values.
pub fn embedding_objective(g: &MixedGraph, params: &ModelParams, row: &[u8], x: &[f64]) -> Result<f64> {
    let part = g.partition();
    let p = g.n_vars();
    let mut total = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            let (gi, gj) = (part.group_of(i), part.group_of(j));
            let t = bivariate_pmf(i, j, g, params, x[gi], x[gj])?;
            let prob = t[row[i] as usize][row[j] as usize];
            if prob <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += prob.ln();
            total += if gi == gj {
                normal::ln_pdf(x[gi])
            } else {
                normal::ln_pdf2(x[gi], x[gj], params.sigma.get(gi, gj))
            };
        }
    }
    Ok(total)
}

/// Maximizes [`embedding_objective`] over the latent vector from 0. When the
/// optimizer stops without converging, the best iterate is returned with
/// `converged = false`.
pub fn embed(model: &FittedModel, row: &[u8]) -> Result<Embedding> {
    embed_with(&model.graph, &model.params, row)
}

pub fn embed_with(g: &MixedGraph, params: &ModelParams, row: &[u8]) -> Result<Embedding> {
    if row.len() != g.n_vars() {
        return Err(Error::InvalidData(format!("row has {} values, expected {}", row.len(), g.n_vars())));
    }
    if row.iter().any(|&v| v > 1) {
        return Err(Error::InvalidData("row values must be binary".into()));
    }
    let k = g.partition().n_groups();
    let f0 = embedding_objective(g, params, row, &vec![0.0; k])?;
    let mut f = |x: &[f64]| embedding_objective(g, params, row, x).unwrap_or(f64::NEG_INFINITY);
    let mut grad = |x: &[f64]| {
        fd_gradient(&mut |y: &[f64]| embedding_objective(g, params, row, y).unwrap_or(f64::NEG_INFINITY), x, 1e-5)
    };
    let res = maximize_bfgs(
        &mut f,
        &mut grad,
        &vec![0.0; k],
        BfgsOptions {
            max_iter: EMBED_MAX_ITER,
            grad_tol: EMBED_TOL * (1.0 + f0.abs().min(1e6)),
            rel_tol: 0.0,
            bound: None,
        },
    );
    Ok(Embedding {
        x: res.x,
        objective: res.value,
        converged: res.converged,
    })
}
