use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scca::cdn::{conditional_cdf, pmf};
use scca::copula::{frank_cdf, CdfArg};
use scca::metrics::{edge_commission, edge_omission, slope_rmse, wilcoxon_signed_rank};
use scca::model::{sigma_value, CorrMatrix, Edge, MixedGraph, ModelParams, Partition, N_SIGMA};
use scca::quadrature::QuadratureCache;
use scca::synthetic::{gen_true_model, SynthConfig};

fn sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=3)
}

/// A random graph over a random partition, with parameters and latent values.
fn instance(max_vars: usize) -> impl Strategy<Value = (MixedGraph, ModelParams, Vec<f64>)> {
    sizes()
        .prop_filter("size", move |s| s.iter().sum::<usize>() <= max_vars)
        .prop_flat_map(|sizes| {
            let p: usize = sizes.iter().sum();
            let k = sizes.len();
            (
                Just(sizes),
                prop::collection::vec(any::<bool>(), p * (p - 1) / 2),
                prop::collection::vec(-3.0f64..3.0, p),
                prop::collection::vec(-2.0f64..2.0, p),
                prop::collection::vec(-24.0f64..24.0, p * (p - 1) / 2),
                prop::collection::vec(-2.5f64..2.5, k),
            )
        })
        .prop_map(|(sizes, mask, slopes, intercepts, thetas, x)| {
            let part = Arc::new(Partition::with_sizes(&sizes).unwrap());
            let p = part.n_vars();
            let pairs: Vec<Edge> = (0..p)
                .flat_map(|i| (i + 1..p).map(move |j| Edge::new(i, j).unwrap()))
                .collect();
            let edges: Vec<Edge> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(&e, _)| e).collect();
            let g = MixedGraph::with_edges(part.clone(), edges.clone()).unwrap();
            let params = ModelParams {
                slopes,
                intercepts,
                sigma: CorrMatrix::constant(part.n_groups(), N_SIGMA / 2),
                thetas: pairs
                    .iter()
                    .zip(&thetas)
                    .filter(|(e, _)| edges.contains(e))
                    .map(|(&e, &t)| (e, t))
                    .collect(),
            };
            (g, params, x)
        })
}

fn all_configs(p: usize) -> impl Iterator<Item = Vec<u8>> {
    (0u32..(1 << p)).map(move |c| (0..p).map(|i| (c >> i & 1) as u8).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighborhood_has_every_single_edge_change((g, _, _) in instance(7)) {
        let p = g.n_vars();
        let hood = g.edge_neighborhood();
        prop_assert_eq!(hood.len(), 1 + p * (p - 1) / 2);
        prop_assert_eq!(&hood[0], &g);
        for h in &hood[1..] {
            prop_assert_eq!(h.edges().symmetric_difference(g.edges()).count(), 1);
        }
    }

    #[test]
    fn factor_count_is_degree_or_one((g, _, _) in instance(7)) {
        for i in 0..g.n_vars() {
            prop_assert_eq!(g.factor_count(i).unwrap(), g.degree(i).max(1));
        }
    }

    #[test]
    fn components_partition_the_subset((g, _, _) in instance(8), pick in prop::collection::vec(any::<bool>(), 8)) {
        let subset: Vec<usize> = (0..g.n_vars()).filter(|&i| pick[i]).collect();
        let mut seen: Vec<usize> = g.bidirected_components(&subset).concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, subset);
    }

    #[test]
    fn pmf_marginalizes_consistently((g, params, x) in instance(7), k in 0usize..7) {
        let p = g.n_vars();
        prop_assume!(p > 1);
        let k = k % p;
        let rest: Vec<usize> = (0..p).filter(|&i| i != k).collect();
        for y in all_configs(rest.len()) {
            let direct = pmf(&g, &params, &x, &rest, &y).unwrap();
            let mut vars = rest.clone();
            vars.push(k);
            let summed: f64 = (0..2u8)
                .map(|yk| {
                    let mut v = y.clone();
                    v.push(yk);
                    pmf(&g, &params, &x, &vars, &v).unwrap()
                })
                .sum();
            prop_assert!((direct - summed).abs() <= 1e-10, "{direct} vs {summed}");
        }
    }

    #[test]
    fn pmf_factorizes_across_components((g, params, x) in instance(7)) {
        let p = g.n_vars();
        let all: Vec<usize> = (0..p).collect();
        let comps = g.bidirected_components(&all);
        for y in all_configs(p) {
            let joint = pmf(&g, &params, &x, &all, &y).unwrap();
            let product: f64 = comps
                .iter()
                .map(|c| pmf(&g, &params, &x, c, &c.iter().map(|&i| y[i]).collect::<Vec<_>>()).unwrap())
                .product();
            prop_assert!((joint - product).abs() <= 1e-12);
        }
    }

    #[test]
    fn conditional_cdf_is_monotone((g, params, x) in instance(7), levels in prop::collection::vec(0usize..4, 7), at in 0usize..7) {
        const ORDER: [CdfArg; 4] = [CdfArg::Below, CdfArg::Zero, CdfArg::One, CdfArg::Infinity];
        let p = g.n_vars();
        let at = at % p;
        let mut y: Vec<CdfArg> = (0..p).map(|i| ORDER[levels[i]]).collect();
        let mut prev = f64::NEG_INFINITY;
        for level in ORDER {
            y[at] = level;
            let f = conditional_cdf(&g, &params, &x, &y).unwrap();
            prop_assert!(f >= prev - 1e-15);
            prev = f;
        }
    }

    #[test]
    fn frank_is_two_increasing(t in -24.0f64..24.0, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, d in 0.0f64..1.0) {
        let (u1, u2) = (a.min(b), a.max(b));
        let (v1, v2) = (c.min(d), c.max(d));
        let f = |u, v| frank_cdf(u, v, t).unwrap();
        prop_assert!(f(u2, v2) - f(u1, v2) - f(u2, v1) + f(u1, v1) >= -1e-12);
    }

    #[test]
    fn relabeling_preserves_structure_metrics(
        perm_seed in any::<u64>(),
        (truth, _, _) in instance(8),
        toggles in prop::collection::vec((0usize..8, 0usize..8), 0..6),
    ) {
        prop_assume!(truth.n_edges() > 0 && truth.n_edges() < truth.n_slots());
        use rand::seq::SliceRandom;
        let p = truth.n_vars();
        let mut learned = truth.clone();
        for (a, b) in toggles {
            let (a, b) = (a % p, b % p);
            if a != b {
                learned = learned.toggled(Edge::new(a, b).unwrap());
            }
        }
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let relabel = |g: &MixedGraph| {
            let edges: Vec<Edge> = g.edges().iter().map(|e| Edge::new(perm[e.lo()], perm[e.hi()]).unwrap()).collect();
            MixedGraph::with_edges(g.partition().clone(), edges).unwrap()
        };
        let (rt, rl) = (relabel(&truth), relabel(&learned));
        prop_assert_eq!(edge_omission(&truth, &learned).unwrap(), edge_omission(&rt, &rl).unwrap());
        prop_assert_eq!(edge_commission(&truth, &learned, p).unwrap(), edge_commission(&rt, &rl, p).unwrap());
    }

    #[test]
    fn slope_rmse_is_sign_symmetric(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
        flips in prop::collection::vec(any::<bool>(), 2),
    ) {
        let part = Partition::with_sizes(&[3, 3]).unwrap();
        let params = |slopes: Vec<f64>| ModelParams {
            intercepts: vec![0.0; slopes.len()],
            slopes,
            sigma: CorrMatrix::constant(2, N_SIGMA / 2),
            thetas: Default::default(),
        };
        let (a, b) = (params(a), params(b));
        prop_assert_eq!(slope_rmse(&a, &a, &part).unwrap(), 0.0);
        let flip = |m: &ModelParams| {
            let mut m = m.clone();
            for (g, &f) in flips.iter().enumerate() {
                if f {
                    for &i in part.members(g) {
                        m.slopes[i] = -m.slopes[i];
                    }
                }
            }
            m
        };
        let before = slope_rmse(&a, &b, &part).unwrap();
        let after = slope_rmse(&flip(&a), &flip(&b), &part).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_ignores_positive_scale(diffs in prop::collection::vec(-5.0f64..5.0, 1..30), scale in 0.01f64..100.0) {
        prop_assume!(diffs.iter().any(|&d| d != 0.0));
        let a = wilcoxon_signed_rank(&diffs).unwrap();
        let scaled: Vec<f64> = diffs.iter().map(|d| d * scale).collect();
        let b = wilcoxon_signed_rank(&scaled).unwrap();
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert_eq!(a.w, b.w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pmf_sums_to_one((g, params, x) in instance(9)) {
        let p = g.n_vars();
        let all: Vec<usize> = (0..p).collect();
        let mut total = 0.0;
        for y in all_configs(p) {
            let v = pmf(&g, &params, &x, &all, &y).unwrap();
            prop_assert!(v >= 0.0);
            total += v;
        }
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn generated_correlations_are_valid(seed in any::<u64>()) {
        let truth = gen_true_model(&SynthConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let raw = nalgebra::DMatrix::from_fn(truth.sigma_raw.len(), truth.sigma_raw.len(), |a, b| truth.sigma_raw[a][b]);
        prop_assert!((&raw - raw.transpose()).amax() < 1e-12);
        prop_assert!(raw.diagonal().iter().all(|&d| (d - 1.0).abs() < 1e-12));
        prop_assert!(raw.clone().cholesky().is_some());
        let k = raw.nrows();
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    prop_assert!(truth.params.sigma.get(a, b).abs() <= 0.99);
                }
            }
        }
    }
}

#[test]
fn pair_integration_is_linear_and_exact_for_constants() {
    let cache = QuadratureCache::build(21).unwrap();
    let f = |x: f64, y: f64| (x - 0.3 * y).sin() + x * x;
    let g = |x: f64, y: f64| (x * y).exp().min(50.0);
    for idx in [0, 17, 49, 50, 80, 99] {
        let s = sigma_value(idx);
        let lhs = cache.integrate_pair_latent(|x, y| 2.5 * f(x, y) - 0.75 * g(x, y), s).unwrap();
        let rhs = 2.5 * cache.integrate_pair_latent(f, s).unwrap() - 0.75 * cache.integrate_pair_latent(g, s).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((cache.integrate_pair_latent(|_, _| 3.0, s).unwrap() - 3.0).abs() < 1e-14);
    }
}

#[test]
fn correlation_concentrates_mass_near_the_diagonal() {
    let cache = QuadratureCache::build(21).unwrap();
    let k = cache.k();
    let band = |sigma: f64| {
        let w = cache.weights_2d(sigma).unwrap();
        (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .filter(|&(a, b)| a.abs_diff(b) > k / 4)
            .map(|(a, b)| w[a * k + b])
            .sum::<f64>()
    };
    assert!(band(0.99) < band(0.01));
    let mut prev = f64::INFINITY;
    for idx in 50..N_SIGMA {
        let b = band(sigma_value(idx));
        assert!(b <= prev + 1e-15, "band mass rose at sigma {}", sigma_value(idx));
        prev = b;
    }
}
