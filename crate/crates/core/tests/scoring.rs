use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scca::copula::intercept_from_marginal;
use scca::laplace::{fit_group_pair_posterior, GroupPairObjective, LaplacePosterior};
use scca::model::{get_dag, CorrMatrix, Dataset, Edge, Group, MixedGraph, ModelParams, Partition, N_SIGMA};
use scca::quadrature::QuadratureCache;
use scca::score::{graph_log_prior, pcl, q_objective, sufficient_stats, Posteriors};
use scca::synthetic::{gen_dataset, TrueModel};

fn two_by_two() -> Arc<Partition> {
    Arc::new(Partition::with_sizes(&[2, 2]).unwrap())
}

fn truth_with(part: Arc<Partition>, edges: &[(usize, usize, f64)], sigma_idx: usize) -> TrueModel {
    let graph = MixedGraph::with_edges(part.clone(), edges.iter().map(|&(a, b, _)| Edge::new(a, b).unwrap()).collect::<Vec<_>>())
        .unwrap();
    let p = part.n_vars();
    let slopes: Vec<f64> = (0..p).map(|i| [1.1, -0.8, 0.9, 1.4, 0.7, -1.2][i % 6]).collect();
    let intercepts = slopes
        .iter()
        .enumerate()
        .map(|(i, &a)| intercept_from_marginal(a, 0.3 + 0.1 * (i % 4) as f64).unwrap())
        .collect();
    let mut sigma = CorrMatrix::constant(part.n_groups(), N_SIGMA / 2);
    for m in 0..part.n_groups() {
        for n in m + 1..part.n_groups() {
            sigma.set_index(m, n, sigma_idx);
        }
    }
    let params = ModelParams {
        slopes,
        intercepts,
        sigma: sigma.clone(),
        thetas: edges.iter().map(|&(a, b, t)| (Edge::new(a, b).unwrap(), t)).collect(),
    };
    TrueModel {
        graph,
        params,
        sigma_raw: sigma.to_rows(),
    }
}

fn sample(truth: &TrueModel, n: usize, seed: u64) -> Dataset {
    gen_dataset(truth, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn pcl_ignores_row_order_and_doubles_with_duplicated_data() {
    let truth = truth_with(two_by_two(), &[(0, 2, 11.0)], 70);
    let data = sample(&truth, 400, 1);
    let part = truth.graph.partition();
    let cache = QuadratureCache::build(21).unwrap();
    let score = |d: &Dataset, g: &MixedGraph| pcl(g, &truth.params, &sufficient_stats(d, part).unwrap(), &cache).unwrap();

    let reversed = data.slice(200, 400).concat(&data.slice(0, 200)).unwrap();
    assert_eq!(score(&data, &truth.graph), score(&reversed, &truth.graph));

    let empty = get_dag(part.clone());
    let no_edge_params = ModelParams {
        thetas: BTreeMap::new(),
        ..truth.params.clone()
    };
    let doubled = data.concat(&data).unwrap();
    let stats1 = sufficient_stats(&data, part).unwrap();
    let stats2 = sufficient_stats(&doubled, part).unwrap();
    let one = pcl(&empty, &no_edge_params, &stats1, &cache).unwrap();
    let two = pcl(&empty, &no_edge_params, &stats2, &cache).unwrap();
    let prior = graph_log_prior(&empty);
    assert!((two - (2.0 * (one - prior) + prior)).abs() < 1e-9 * two.abs());
}

/// Posterior of a single edge's `z`, summarized by the moments of a dense grid.
fn dense_posterior(obj: &GroupPairObjective, edge: Edge) -> LaplacePosterior {
    let zs: Vec<f64> = (0..2001).map(|t| -8.0 + 16.0 * t as f64 / 2000.0).collect();
    let lp: Vec<f64> = zs.iter().map(|&z| obj.log_posterior(&[z])).collect();
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lp.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = zs.iter().zip(&w).map(|(z, w)| z * w).sum::<f64>() / total;
    let var = zs.iter().zip(&w).map(|(z, w)| (z - mean).powi(2) * w).sum::<f64>() / total;
    LaplacePosterior {
        edge_ids: vec![edge],
        mode_z: vec![mean],
        cov_z: vec![vec![var]],
    }
}

#[test]
fn composite_likelihood_bounds_the_expected_objective() {
    let edge = Edge::new(1, 3).unwrap();
    let truth = truth_with(two_by_two(), &[(1, 3, 12.0)], 75);
    let data = sample(&truth, 300, 2);
    let part = truth.graph.partition();
    let stats = sufficient_stats(&data, part).unwrap();
    let cache = QuadratureCache::with_theta_grid(21, 400).unwrap();
    let obj = GroupPairObjective::new(0, 1, &truth.graph, &truth.params, &stats, &cache).unwrap();
    let q = dense_posterior(&obj, edge);
    let (m, v) = (q.mode_z[0], q.cov_z[0][0]);
    let kl = 0.5 * (v + m * m - 1.0 - v.ln());
    let posteriors: Posteriors = BTreeMap::from([((0, 1), q)]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prior = graph_log_prior(&truth.graph);
    for trial in 0..12 {
        let mut params = truth.params.clone();
        if trial > 0 {
            for s in &mut params.slopes {
                *s += rng.gen_range(-0.4..0.4);
            }
            params.sigma.set_index(0, 1, rng.gen_range(40..N_SIGMA));
        }
        let lhs = pcl(&truth.graph, &params, &stats, &cache).unwrap();
        let rhs = q_objective(&truth.graph, &params, &posteriors, &stats, &cache).unwrap() + prior - kl;
        assert!(lhs >= rhs - 1e-3, "trial {trial}: pcl {lhs} < bound {rhs}");
    }
}

#[test]
fn laplace_mode_is_stationary_and_no_worse_than_the_start() {
    let truth = truth_with(two_by_two(), &[(0, 2, 10.0), (1, 3, -13.0)], 60);
    let data = sample(&truth, 600, 4);
    let stats = sufficient_stats(&data, truth.graph.partition()).unwrap();
    let cache = QuadratureCache::build(21).unwrap();
    let post = fit_group_pair_posterior(0, 1, &truth.graph, &truth.params, &stats, &cache).unwrap();
    let obj = GroupPairObjective::new(0, 1, &truth.graph, &truth.params, &stats, &cache).unwrap();
    assert!(obj.log_posterior(&post.mode_z) >= obj.log_posterior(&[0.0, 0.0]));
    for d in 0..2 {
        let h = 1e-4;
        let mut a = post.mode_z.clone();
        let mut b = post.mode_z.clone();
        a[d] += h;
        b[d] -= h;
        let g = (obj.log_posterior(&a) - obj.log_posterior(&b)) / (2.0 * h);
        assert!(g.abs() < 1e-4, "gradient {g} in direction {d}");
    }
}

#[test]
fn posterior_follows_variable_relabeling() {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let plain = Arc::new(
        Partition::new(vec![
            Group { name: "X1".into(), items: names(&["Y1", "Y2"]) },
            Group { name: "X2".into(), items: names(&["Y3", "Y4"]) },
        ])
        .unwrap(),
    );
    let swapped = Arc::new(
        Partition::new(vec![
            Group { name: "X1".into(), items: names(&["Y2", "Y1"]) },
            Group { name: "X2".into(), items: names(&["Y4", "Y3"]) },
        ])
        .unwrap(),
    );
    let truth = truth_with(plain.clone(), &[(0, 2, 12.0), (1, 2, 9.0)], 65);
    let data = sample(&truth, 500, 5);
    let cache = QuadratureCache::build(21).unwrap();

    let by_name = |part: &Arc<Partition>| {
        let idx = |n: &str| part.index_of(n).unwrap();
        let edges: Vec<Edge> = [("Y1", "Y3"), ("Y2", "Y3")]
            .iter()
            .map(|&(a, b)| Edge::new(idx(a), idx(b)).unwrap())
            .collect();
        let g = MixedGraph::with_edges(part.clone(), edges).unwrap();
        let mut params = truth.params.clone();
        for name in ["Y1", "Y2", "Y3", "Y4"] {
            params.slopes[idx(name)] = truth.params.slopes[plain.index_of(name).unwrap()];
            params.intercepts[idx(name)] = truth.params.intercepts[plain.index_of(name).unwrap()];
        }
        params.thetas = g.edges().iter().map(|&e| (e, 10.0)).collect();
        let stats = sufficient_stats(&data, part).unwrap();
        let post = fit_group_pair_posterior(0, 1, &g, &params, &stats, &cache).unwrap();
        post.edge_ids
            .iter()
            .enumerate()
            .map(|(t, e)| {
                let key = (part.name(e.lo()).to_string(), part.name(e.hi()).to_string());
                let key = if key.0 < key.1 { key } else { (key.1, key.0) };
                (key, (post.mode_z[t], post.cov_z[t][t]))
            })
            .collect::<BTreeMap<_, _>>()
    };
    let a = by_name(&plain);
    let b = by_name(&swapped);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, &(ma, va)) in &a {
        let (mb, vb) = b[k];
        assert!((ma - mb).abs() < 1e-4, "{k:?}: mode {ma} vs {mb}");
        assert!((va / vb - 1.0).abs() < 1e-3, "{k:?}: variance {va} vs {vb}");
    }
}
