//! Laplace approximations to the posterior of the copula parameters of all
//! bi-directed edges among the children of a pair of groups.
//!
//! The posterior lives in the unconstrained coordinates `z` with
//! `theta = squash(z)`, where the prior is exactly standard normal.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::cdn::SubsetModel;
use crate::copula::{self, squash};
use crate::model::{Edge, MixedGraph, ModelParams};
use crate::optim::{fd_gradient, fd_hessian, maximize_bfgs, BfgsOptions};
use crate::quadrature::{theta_grid, QuadratureCache, ThetaDist};
use crate::score::{Posteriors, SufficientStats};
use crate::{Error, Result};

/// Finite-difference step in `z`.
pub const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-5;
const MAX_ITER: usize = 200;
const EIGEN_FLOOR: f64 = 1e-8;

/// Gaussian approximation in `z` space over the edges among one group pair's children.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacePosterior {
    pub edge_ids: Vec<Edge>,
    pub mode_z: Vec<f64>,
    pub cov_z: Vec<Vec<f64>>,
}

impl LaplacePosterior {
    pub fn empty() -> Self {
        LaplacePosterior {
            edge_ids: Vec::new(),
            mode_z: Vec::new(),
            cov_z: Vec::new(),
        }
    }

    /// The prior itself: zero mean, identity covariance.
    pub fn prior(edge_ids: Vec<Edge>) -> Self {
        let d = edge_ids.len();
        LaplacePosterior {
            edge_ids,
            mode_z: vec![0.0; d],
            cov_z: (0..d).map(|a| (0..d).map(|b| f64::from(u8::from(a == b))).collect()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.edge_ids.len()
    }
}

/// Equal-weight quantile grid of the posterior marginal of edge `e`, mapped to copula parameters.
pub fn marginal_theta_grid(post: &LaplacePosterior, e: Edge, k_theta: usize) -> Result<Vec<(f64, f64)>> {
    let t = post
        .edge_ids
        .iter()
        .position(|&x| x == e)
        .ok_or_else(|| Error::Domain(format!("edge {e} is not covered by this posterior")))?;
    theta_grid(
        ThetaDist::Gaussian {
            mean: post.mode_z[t],
            var: post.cov_z[t][t].max(0.0),
        },
        k_theta,
    )
}

/// Unnormalized log posterior of the group-pair copula parameters in `z`
/// space: joint log-likelihood of the children's configurations plus the
/// standard normal log prior (without constants).
pub struct GroupPairObjective<'a> {
    model: SubsetModel,
    /// Group-`m` membership per subset position.
    in_first: Vec<bool>,
    /// `P(Y = 0 | x_k)` per subset position and grid point.
    links: Vec<Vec<f64>>,
    weights: &'a [f64],
    k: usize,
    counts: Vec<(u64, f64)>,
    encoded: Option<Vec<Vec<usize>>>,
}

impl<'a> GroupPairObjective<'a> {
    pub fn new(
        m: usize,
        n: usize,
        g: &MixedGraph,
        params: &ModelParams,
        stats: &SufficientStats,
        cache: &'a QuadratureCache,
    ) -> Result<Self> {
        let part = g.partition();
        if part.n_groups() < 2 {
            return Err(Error::Unsupported("group-pair posteriors need at least two groups".into()));
        }
        let (m, n) = (m.min(n), m.max(n));
        let vars = g.joint_children(m, n)?;
        let gp = stats.group_pair(m, n).ok_or_else(|| {
            Error::Capacity(format!("groups {m} and {n} have more than 64 children between them"))
        })?;
        debug_assert_eq!(gp.vars, vars);
        let model = SubsetModel::new(g, &vars)?;
        let links = vars
            .iter()
            .map(|&v| {
                cache
                    .points()
                    .iter()
                    .map(|&x| copula::prob_zero(x, params.slopes[v], params.intercepts[v]))
                    .collect()
            })
            .collect();
        let encoded = model
            .all_tabulated()
            .then(|| gp.counts.iter().map(|&(key, _)| model.encode(key)).collect());
        Ok(GroupPairObjective {
            in_first: vars.iter().map(|&v| part.group_of(v) == m).collect(),
            model,
            links,
            weights: cache.weights_2d_at(params.sigma.index(m, n)),
            k: cache.k(),
            counts: gp.counts.iter().map(|&(key, c)| (key, c as f64)).collect(),
            encoded,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        self.model.edges()
    }

    /// Log-likelihood of the counts at copula parameters `squash(z)`.
    pub fn loglik(&self, z: &[f64]) -> Result<f64> {
        let thetas: Vec<f64> = z.iter().map(|&v| squash(v)).collect();
        let mut tables = self.model.new_tables();
        let mut acc = vec![0.0; self.counts.len()];
        let mut u0 = vec![0.0; self.links.len()];
        for a in 0..self.k {
            for b in 0..self.k {
                let w = self.weights[a * self.k + b];
                for (pos, u) in u0.iter_mut().enumerate() {
                    *u = self.links[pos][if self.in_first[pos] { a } else { b }];
                }
                self.model.fill(&u0, &thetas, &mut tables)?;
                match &self.encoded {
                    Some(enc) => {
                        for (s, e) in acc.iter_mut().zip(enc) {
                            *s += w * self.model.prob_encoded(&tables, e);
                        }
                    }
                    None => {
                        for (s, &(key, _)) in acc.iter_mut().zip(&self.counts) {
                            *s += w * self.model.prob(&tables, key)?;
                        }
                    }
                }
            }
        }
        let mut total = 0.0;
        for (p, &(_, c)) in acc.iter().zip(&self.counts) {
            if *p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += c * p.ln();
        }
        Ok(total)
    }

    /// Log posterior up to a constant; numerical failures map to `-inf`.
    pub fn log_posterior(&self, z: &[f64]) -> f64 {
        let prior: f64 = z.iter().map(|v| -0.5 * v * v).sum();
        match self.loglik(z) {
            Ok(l) => l + prior,
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Laplace posterior for the copula parameters of the edges among the
/// children of groups `m` and `n`, with slopes, intercepts and correlations fixed.
pub fn fit_group_pair_posterior(
    m: usize,
    n: usize,
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<LaplacePosterior> {
    let obj = GroupPairObjective::new(m, n, g, params, stats, cache)?;
    let edge_ids = obj.edges().to_vec();
    let d = edge_ids.len();
    if d == 0 {
        return Ok(LaplacePosterior::empty());
    }
    // Surface capacity or negativity failures instead of hiding them as -inf.
    obj.loglik(&vec![0.0; d])?;
    let mut f = |z: &[f64]| obj.log_posterior(z);
    let mut grad = |z: &[f64]| fd_gradient(&mut |y: &[f64]| obj.log_posterior(y), z, FD_STEP);
    let res = maximize_bfgs(
        &mut f,
        &mut grad,
        &vec![0.0; d],
        BfgsOptions {
            max_iter: MAX_ITER,
            grad_tol: GRAD_TOL,
            rel_tol: 0.0,
            bound: None,
        },
    );
    log::debug!(
        "posterior ({m}, {n}): {} edges, {} iterations, converged {}",
        d,
        res.iterations,
        res.converged
    );
    if !res.value.is_finite() {
        return Err(Error::Fit(format!(
            "log posterior for groups ({m}, {n}) is not finite at the mode"
        )));
    }
    let hess = fd_hessian(&mut f, &res.x, FD_STEP);
    let neg = -0.5 * (&hess + hess.transpose());
    let eig = SymmetricEigen::new(neg);
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR)));
    let cov = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
    Ok(LaplacePosterior {
        edge_ids,
        mode_z: res.x,
        cov_z: (0..d).map(|a| (0..d).map(|b| cov[(a, b)]).collect()).collect(),
    })
}

/// Posteriors for every group pair, fitted independently.
pub fn fit_all_posteriors(
    g: &MixedGraph,
    params: &ModelParams,
    stats: &SufficientStats,
    cache: &QuadratureCache,
) -> Result<Posteriors> {
    let k = g.partition().n_groups();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|m| (m + 1..k).map(move |n| (m, n))).collect();
    let fitted: Vec<LaplacePosterior> = pairs
        .par_iter()
        .map(|&(m, n)| fit_group_pair_posterior(m, n, g, params, stats, cache))
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().zip(fitted).collect::<BTreeMap<_, _>>())
}

/// Prior stand-ins for every group pair, for ablations.
pub fn prior_posteriors(g: &MixedGraph) -> Result<Posteriors> {
    let k = g.partition().n_groups();
    let mut out = BTreeMap::new();
    for m in 0..k {
        for n in m + 1..k {
            let sm = SubsetModel::new(g, &g.joint_children(m, n)?)?;
            out.insert((m, n), LaplacePosterior::prior(sm.edges().to_vec()));
        }
    }
    Ok(out)
}
