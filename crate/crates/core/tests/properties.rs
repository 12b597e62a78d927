mod common;

use common::*;
use mnap::mcmc::{ChainDraws, DrawsStore};
use mnap::model::{build_b, classify, loglik_z, marginal_q, simulate, ModelParams};
use mnap::netmat::{
    build_cohesion, build_mixture, build_structural_equivalence, scan_validity_region, AdjacencyGraph, NetworkKind,
    NetworkMatrix, Normalization, RegionBounds,
};
use mnap::rng::{stream, Purpose};
use mnap::validate::{posterior_quantile, uniformity_test};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn graph(n: usize, p: f64, seed: u64) -> AdjacencyGraph {
    random_graph(n, p, &mut rng(seed))
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn structural_equivalence_is_symmetric_and_bounded(n in 2usize..16, p in 0.0f64..1.0, seed in any::<u64>()) {
        let s = build_structural_equivalence(&graph(n, p, seed)).unwrap();
        let v = s.values();
        for i in 0..n {
            prop_assert_eq!(v[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(v[(i, j)], v[(j, i)]);
                if i != j {
                    prop_assert!(v[(i, j)] > 0.0 && v[(i, j)] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn row_normalized_cohesion_is_invertible_inside_the_unit_interval(
        n in 2usize..14, p in 0.05f64..1.0, seed in any::<u64>(), rho in -0.999f64..0.999,
    ) {
        let w = build_cohesion(&graph(n, p, seed), Normalization::RowSum).unwrap();
        // The induced infinity norm bounds the spectral radius.
        let norm = w.values().row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        prop_assert!(norm <= 1.0 + 1e-12);
        // Unbounded Schur iteration can stall on these matrices; cap it.
        if let Some(schur) = nalgebra::Schur::try_new(w.values().clone(), f64::EPSILON, 10_000) {
            let radius = schur.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
            prop_assert!(radius <= 1.0 + 1e-9);
        }
        let b = build_b(&[rho], &[w.clone()]).unwrap();
        prop_assert!(b.is_principal());
        let x = DMatrix::from_element(n, 1, 1.0);
        let z = normal_vector(n, &mut rng(seed ^ 1));
        let p = ModelParams::new(vec![0.2], vec![rho], 1.0).unwrap();
        prop_assert!(loglik_z(&z, &p, &x, &[w]).unwrap().is_finite());
    }

    #[test]
    fn mixture_keeps_the_network_invariants(
        n in 2usize..10, weights in prop::collection::vec(0.0f64..5.0, 1..4), seed in any::<u64>(),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let mut r = rng(seed);
        let comps: Vec<NetworkMatrix> = weights.iter().map(|_| row_stochastic(n, &mut r)).collect();
        let mix = build_mixture(&comps, &weights).unwrap();
        let total: f64 = weights.iter().sum();
        for i in 0..n {
            prop_assert_eq!(mix.values()[(i, i)], 0.0);
            for j in 0..n {
                let expect: f64 = comps.iter().zip(&weights).map(|(c, w)| c.values()[(i, j)] * w / total).sum();
                prop_assert!(mix.values()[(i, j)] >= 0.0);
                prop_assert!((mix.values()[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn region_scan_is_symmetric_under_relabeling(n in 2usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (w1, w2) = (row_stochastic(n, &mut r), row_stochastic(n, &mut r));
        let bounds = RegionBounds { rho1: (-1.5, 1.5), rho2: (-1.2, 1.4) };
        let swapped = RegionBounds { rho1: bounds.rho2, rho2: bounds.rho1 };
        let a = scan_validity_region(&w1, &w2, bounds, (13, 11)).unwrap();
        let b = scan_validity_region(&w2, &w1, swapped, (11, 13)).unwrap();
        for i in 0..13 {
            for j in 0..11 {
                prop_assert_eq!(a.is_invertible(i, j), b.is_invertible(j, i));
            }
        }
    }

    #[test]
    fn q_is_symmetric_with_unit_floor(n in 2usize..12, seed in any::<u64>(), sigma2 in 0.0f64..5.0) {
        let mut r = rng(seed);
        let networks = vec![row_stochastic(n, &mut r), row_stochastic(n, &mut r)];
        let rho = vec![r.random_range(-0.45..0.45), r.random_range(-0.45..0.45)];
        let q = marginal_q(&ModelParams::new(vec![0.0], rho, sigma2).unwrap(), &networks).unwrap();
        prop_assert!(max_abs_diff(&q, &q.transpose()) < 1e-12);
        for i in 0..n {
            prop_assert!(q[(i, i)] >= 1.0 - 1e-12);
        }
        prop_assert!(q.cholesky().is_some());
    }

    #[test]
    fn simulated_outcomes_are_the_latent_signs(n in 2usize..30, seed in any::<u64>(), sigma2 in 0.0f64..4.0) {
        let mut r = rng(seed);
        let networks = vec![row_stochastic(n, &mut r)];
        let x = normal_matrix(n, 2, &mut r);
        let p = ModelParams::new(vec![0.3, -0.4], vec![0.5], sigma2).unwrap();
        let (data, latent) = simulate(&p, &x, &networks, &mut stream(seed, Purpose::Simulate, 0)).unwrap();
        prop_assert_eq!(&data.y, &classify(&latent.z));
        prop_assert_eq!(data.y, latent.outcomes());
    }

    #[test]
    fn loglik_is_invariant_under_node_relabeling(n in 2usize..10, seed in any::<u64>()) {
        let mut r = rng(seed);
        let networks = vec![row_stochastic(n, &mut r), row_stochastic(n, &mut r)];
        let x = normal_matrix(n, 2, &mut r);
        let z = normal_vector(n, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let p = ModelParams::new(vec![0.5, 0.1], vec![0.3, -0.2], 1.2).unwrap();
        let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
        let zp = nalgebra::DVector::from_fn(n, |i, _| z[perm[i]]);
        let np: Vec<NetworkMatrix> = networks
            .iter()
            .map(|w| NetworkMatrix::new(DMatrix::from_fn(n, n, |i, j| w.values()[(perm[i], perm[j])]), NetworkKind::Raw).unwrap())
            .collect();
        let a = loglik_z(&z, &p, &x, &networks).unwrap();
        let b = loglik_z(&zp, &p, &xp, &np).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn quantiles_lie_in_the_unit_interval(draws in prop::collection::vec(-5.0f64..5.0, 1..200), truth in -6.0f64..6.0) {
        let q = posterior_quantile(&draws, truth);
        prop_assert!((0.0..=1.0).contains(&q));
    }

    #[test]
    fn merging_is_order_independent(lens in prop::collection::vec(1usize..20, 1..5), seed in any::<u64>()) {
        let mut r = rng(seed);
        let stores: Vec<DrawsStore> = lens
            .iter()
            .enumerate()
            .map(|(c, &len)| {
                let chain = ChainDraws {
                    chain: c,
                    iterations: (1..=len).collect(),
                    columns: vec![(0..len).map(|_| r.random()).collect()],
                    loglike: vec![0.0; len],
                    acceptance_rates: vec![],
                    proposal_sd: vec![],
                };
                DrawsStore::new(vec!["x".into()], vec![chain]).unwrap()
            })
            .collect();
        let forward = DrawsStore::merge(stores.clone()).unwrap();
        let backward = DrawsStore::merge(stores.into_iter().rev().collect()).unwrap();
        prop_assert_eq!(forward, backward);
    }
}

#[test]
fn uniform_samples_are_rejected_at_the_nominal_rate() {
    // Under uniformity P(p <= 0.01) = 0.01 exactly, so the pass rate sits at
    // 99% and the check is that the rejection count is binomial(seeds, 0.01).
    let seeds = 5000;
    let mut rejected = 0;
    for seed in 0..seeds {
        let mut r = stream(seed, Purpose::Replication, 7);
        let v: Vec<f64> = (0..1000).map(|_| r.random()).collect();
        rejected += (uniformity_test(&v).unwrap().p_value <= 0.01) as usize;
    }
    let expected = 0.01 * seeds as f64;
    let se = (expected * 0.99).sqrt();
    assert!((rejected as f64 - expected).abs() < 3.0 * se, "{rejected}/{seeds} rejected");
}

#[test]
fn thinning_moves_quantiles_only_by_binomial_error() {
    let mut r = rng(77);
    // AR(1) draws stand in for a correlated chain.
    let mut x = vec![0.0f64; 20_000];
    for t in 1..x.len() {
        x[t] = 0.5 * x[t - 1] + r.sample::<f64, _>(rand_distr::StandardNormal);
    }
    for truth in [-1.0, 0.0, 0.7] {
        let full = posterior_quantile(&x, truth);
        for thin in [2usize, 5, 10] {
            let kept: Vec<f64> = x.iter().step_by(thin).copied().collect();
            let q = posterior_quantile(&kept, truth);
            // Binomial SE at the thinned size, inflated for the residual autocorrelation.
            let se = (full * (1.0 - full) / kept.len() as f64).sqrt() * 2.0;
            assert!((q - full).abs() < 4.0 * se, "thin {thin}: {q} vs {full}");
        }
    }
}

#[test]
fn cohesion_normalization_modes() {
    let g = AdjacencyGraph::from_edges(4, false, [(0, 1), (1, 2), (1, 3)]).unwrap();
    let y = [true, false, false, true];
    let w = build_cohesion(&g, Normalization::PositiveOutcomes(&y)).unwrap();
    // Node 1 has three neighbours, two of whom adopted.
    assert_eq!(w.values()[(1, 0)], 0.5);
    assert_eq!(w.values()[(1, 2)], 0.5);
    // Node 0's only neighbour did not adopt: raw ties are kept.
    assert_eq!(w.values()[(0, 1)], 1.0);
}
