mod common;

use common::*;
use mnap::em::{e_step, expected_loglik, initial_latent, m_step_beta, m_step_rho_sigma2, run_em, EmConfig, EmObjective, Moments};
use mnap::model::{simulate, Dataset, ModelParams};
use mnap::netmat::{build_cohesion, AdjacencyGraph, NetworkKind, NetworkMatrix, Normalization};
use mnap::rng::{stream, Purpose};
use nalgebra::{DMatrix, DVector};

fn ring(n: usize) -> NetworkMatrix {
    let g = AdjacencyGraph::from_edges(n, false, (0..n).map(|i| (i, (i + 1) % n))).unwrap();
    build_cohesion(&g, Normalization::RowSum).unwrap()
}

fn er_network(n: usize, p: f64, seed: u64) -> NetworkMatrix {
    build_cohesion(&random_graph(n, p, &mut rng(seed)), Normalization::RowSum).unwrap()
}

/// Moments with a given mean and second moment; no samples attached.
fn moments(mean: DVector<f64>, second: DMatrix<f64>) -> Moments {
    let n = mean.len();
    Moments {
        mean,
        second,
        mean_se: DVector::zeros(n),
        samples: DMatrix::zeros(n, 0),
    }
}

#[test]
fn two_node_moments_match_truncated_normal_formulas() {
    let x = DMatrix::from_element(2, 1, 1.0);
    let data = Dataset::new(vec![true, false], x, vec![NetworkMatrix::empty(2)]).unwrap();
    let p = ModelParams::new(vec![0.3], vec![0.0], 0.0).unwrap();
    let samples = 8000;
    let mut z = initial_latent(&data);
    let mom = e_step(&p, &data, &mut z, samples, 100, &mut stream(5, Purpose::Em, 0)).unwrap();
    for (i, positive) in [(0, true), (1, false)] {
        let (m, v) = truncated_moments(0.3, positive);
        let se = (v / samples as f64).sqrt();
        assert!((mom.mean[i] - m).abs() < 3.0 * se, "mean {i}: {} vs {m}", mom.mean[i]);
        let second = v + m * m;
        let row: Vec<f64> = mom.samples.row(i).iter().map(|z| z * z).collect();
        let se2 = (variance(&row) / samples as f64).sqrt();
        assert!((mom.second[(i, i)] - second).abs() < 3.0 * se2, "second {i}");
    }
    // Independent coordinates.
    let cross_se = (mom.second[(0, 0)] * mom.second[(1, 1)] / samples as f64).sqrt();
    assert!((mom.second[(0, 1)] - mom.mean[0] * mom.mean[1]).abs() < 3.0 * cross_se);
}

#[test]
fn inactive_truncation_returns_the_linear_predictor() {
    let n = 5;
    let data = Dataset::new(vec![true; n], DMatrix::from_element(n, 1, 1.0), vec![ring(n)]).unwrap();
    let p = ModelParams::new(vec![10.0], vec![0.0], 0.0).unwrap();
    let mut z = initial_latent(&data);
    let mom = e_step(&p, &data, &mut z, 4000, 50, &mut stream(6, Purpose::Em, 0)).unwrap();
    for i in 0..n {
        let se = mom.mean_se[i].max(1.0 / 4000f64.sqrt());
        assert!((mom.mean[i] - 10.0).abs() < 3.0 * se);
    }
}

#[test]
fn relabeling_nodes_relabels_the_mean() {
    let n = 6;
    let mut r = rng(11);
    let w = ring(n);
    let x = normal_matrix(n, 2, &mut r);
    let y = vec![true, false, true, true, false, false];
    let perm = [3, 0, 5, 1, 4, 2];
    let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
    let wp = DMatrix::from_fn(n, n, |i, j| w.values()[(perm[i], perm[j])]);
    let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
    let data = Dataset::new(y, x, vec![w]).unwrap();
    let permuted = Dataset::new(yp, xp, vec![NetworkMatrix::new(wp, NetworkKind::Raw).unwrap()]).unwrap();
    let p = ModelParams::new(vec![0.4, -0.3], vec![0.35], 0.7).unwrap();
    let run = |d: &Dataset, seed| {
        let mut z = initial_latent(d);
        e_step(&p, d, &mut z, 8000, 200, &mut stream(seed, Purpose::Em, 0)).unwrap()
    };
    let a = run(&data, 1);
    let b = run(&permuted, 2);
    for i in 0..n {
        let se = (a.mean_se[perm[i]].powi(2) + b.mean_se[i].powi(2)).sqrt();
        assert!((a.mean[perm[i]] - b.mean[i]).abs() < 3.5 * se, "node {i}");
    }
}

#[test]
fn gls_matches_explicit_inverse() {
    let n = 7;
    let mut r = rng(21);
    let networks = vec![row_stochastic(n, &mut r), row_stochastic(n, &mut r)];
    let x = normal_matrix(n, 3, &mut r);
    let data = Dataset::new(vec![true; n], x.clone(), networks.clone()).unwrap();
    let p = ModelParams::new(vec![0.0; 3], vec![0.3, -0.2], 1.3).unwrap();
    let rv = normal_vector(n, &mut r);
    let beta = m_step_beta(&moments(rv.clone(), DMatrix::identity(n, n)), &data, &p).unwrap();
    let qi = gauss_inverse(&q_explicit(&p.rho, p.sigma2, &networks));
    let xt_qi = x.transpose() * &qi;
    let oracle = gauss_inverse(&(&xt_qi * &x)) * (xt_qi * &rv);
    for (a, b) in beta.iter().zip(oracle.iter()) {
        assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn gls_reduces_to_ols_and_to_the_mean() {
    let n = 9;
    let mut r = rng(22);
    let x = normal_matrix(n, 2, &mut r);
    let rv = normal_vector(n, &mut r);
    let data = Dataset::new(vec![false; n], x.clone(), vec![ring(n)]).unwrap();
    let p = ModelParams::new(vec![0.0; 2], vec![0.5], 0.0).unwrap();
    let beta = m_step_beta(&moments(rv.clone(), DMatrix::identity(n, n)), &data, &p).unwrap();
    let ols = gauss_inverse(&(x.transpose() * &x)) * (x.transpose() * &rv);
    assert!((beta[0] - ols[0]).abs() < 1e-10 && (beta[1] - ols[1]).abs() < 1e-10);

    let ones = Dataset::new(vec![false; n], DMatrix::from_element(n, 1, 1.0), vec![ring(n)]).unwrap();
    let p = ModelParams::new(vec![0.0], vec![0.5], 0.0).unwrap();
    let beta = m_step_beta(&moments(rv.clone(), DMatrix::identity(n, n)), &ones, &p).unwrap();
    assert!((beta[0] - rv.mean()).abs() < 1e-12);
}

fn simulated(n: usize, rho: f64, sigma2: f64, seed: u64) -> (Dataset, ModelParams) {
    let mut r = rng(seed);
    let mut x = normal_matrix(n, 2, &mut r);
    x.column_mut(0).fill(1.0);
    let truth = ModelParams::new(vec![0.2, 0.8], vec![rho], sigma2).unwrap();
    let (data, _) = simulate(&truth, &x, &[er_network(n, 0.1, seed)], &mut stream(seed, Purpose::Simulate, 0)).unwrap();
    (data, truth)
}

#[test]
fn m_step_does_not_decrease_the_objective() {
    for seed in 0..4 {
        let (data, truth) = simulated(30, 0.3, 1.0, seed);
        let start = ModelParams::new(truth.beta.clone(), vec![-0.1], 0.4).unwrap();
        let mut z = initial_latent(&data);
        let mom = e_step(&start, &data, &mut z, 1000, 100, &mut stream(seed, Purpose::Em, 0)).unwrap();
        let (rho, sigma2) = m_step_rho_sigma2(&mom, &data, &start, 1e3, 1e-6, EmObjective::Exact).unwrap();
        let next = ModelParams::new(start.beta.clone(), rho, sigma2).unwrap();
        assert!(sigma2 >= 0.0);
        let before = expected_loglik(&start, &mom, &data).unwrap();
        let after = expected_loglik(&next, &mom, &data).unwrap();
        assert!(after >= before, "seed {seed}: {after} < {before}");
    }
}

/// `G` on an explicit lattice using dense inverses and determinants.
fn lattice_objective(data: &Dataset, mom: &Moments, beta: &[f64], rho: f64, sigma2: f64) -> f64 {
    let n = data.n();
    let q = q_explicit(&[rho], sigma2, &data.networks);
    let mu = &data.x * DVector::from_column_slice(beta);
    let rm = &mom.mean * mu.transpose();
    let s = &mom.second - &rm - rm.transpose() + &mu * mu.transpose();
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * gauss_det(&q).ln() - 0.5 * (gauss_inverse(&q) * s).trace()
}

#[test]
fn m_step_lands_in_the_grid_argmax_cell() {
    let (data, truth) = simulated(30, 0.4, 1.5, 31);
    let mut z = initial_latent(&data);
    let mom = e_step(&truth, &data, &mut z, 2000, 200, &mut stream(31, Purpose::Em, 0)).unwrap();
    let rhos: Vec<f64> = (0..20).map(|i| -0.95 + 1.9 * i as f64 / 19.0).collect();
    let sigmas: Vec<f64> = (0..10).map(|i| 0.1 + 0.4 * i as f64).collect();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &r in &rhos {
        for &s in &sigmas {
            let g = lattice_objective(&data, &mom, &truth.beta, r, s);
            if g > best.0 {
                best = (g, r, s);
            }
        }
    }
    let (rho, sigma2) = m_step_rho_sigma2(&mom, &data, &truth, 1e3, 1e-6, EmObjective::Exact).unwrap();
    let (dr, ds) = (rhos[1] - rhos[0], sigmas[1] - sigmas[0]);
    assert!((rho[0] - best.1).abs() <= dr, "rho {} vs grid {}", rho[0], best.1);
    assert!((sigma2 - best.2).abs() <= ds, "sigma2 {sigma2} vs grid {}", best.2);
    let at = lattice_objective(&data, &mom, &truth.beta, rho[0], sigma2);
    assert!(at >= best.0 - 1e-9, "returned point is below the lattice maximum");
}

#[test]
fn white_data_pins_sigma2_to_the_boundary() {
    let (data, truth) = simulated(50, 0.3, 0.0, 41);
    let mut z = initial_latent(&data);
    let mom = e_step(&truth, &data, &mut z, 2000, 200, &mut stream(41, Purpose::Em, 0)).unwrap();
    let (_, sigma2) = m_step_rho_sigma2(&mom, &data, &truth, 1e3, 1e-6, EmObjective::Exact).unwrap();
    assert!(sigma2 < 1e-4, "sigma2 = {sigma2}");
}

#[test]
fn iteration_cap_returns_the_state() {
    let (data, truth) = simulated(20, 0.3, 0.5, 51);
    let config = EmConfig {
        max_iterations: 3,
        tolerance: 1e-12,
        mc_samples: 200,
        ..EmConfig::default()
    };
    let state = run_em(&data, &truth, &config).unwrap();
    assert_eq!(state.iterations, 3);
    assert_eq!(state.sigma2_trajectory.len(), 3);
    assert!(!state.converged);
    assert!(state.sigma2_trajectory.iter().all(|&s| s >= 0.0));
    assert!(state.report().contains("iteration cap"));
}

#[test]
fn objective_ascends_within_monte_carlo_error() {
    let (data, truth) = simulated(30, 0.3, 0.8, 61);
    let config = EmConfig {
        max_iterations: 15,
        mc_samples: 400,
        seed: 61,
        ..EmConfig::default()
    };
    let state = run_em(&data, &truth, &config).unwrap();
    for t in 0..state.iterations {
        assert!(state.objective_after[t] >= state.objective_before[t] - 1e-9, "M-step at {t}");
        if t > 0 {
            let drop = state.objective_after[t - 1] - state.objective_before[t];
            assert!(drop <= 3.0 * (state.objective_se[t - 1] + state.objective_se[t]), "iteration {t}: drop {drop}");
        }
    }
}

/// Probit maximum likelihood by Newton's method with its Fisher-information standard errors.
fn probit_mle(x: &DMatrix<f64>, y: &[bool]) -> (DVector<f64>, DVector<f64>) {
    let m = x.ncols();
    let mut beta = DVector::zeros(m);
    let mut info = DMatrix::zeros(m, m);
    for _ in 0..100 {
        let mut grad = DVector::zeros(m);
        info = DMatrix::zeros(m, m);
        for i in 0..x.nrows() {
            let xi = x.row(i).transpose();
            let eta = xi.dot(&beta);
            let (p, d) = (phi_cdf(eta), phi_pdf(eta));
            let g = if y[i] { d / p } else { -d / (1.0 - p) };
            grad += &xi * g;
            info += &xi * xi.transpose() * (d * d / (p * (1.0 - p)));
        }
        let step = gauss_inverse(&info) * grad;
        beta += &step;
        if step.amax() < 1e-12 {
            break;
        }
    }
    let se = gauss_inverse(&info).diagonal().map(f64::sqrt);
    (beta, se)
}

#[test]
fn beta_matches_plain_probit_when_there_is_no_network_effect() {
    let (data, truth) = simulated(80, 0.0, 0.0, 71);
    let config = EmConfig {
        max_iterations: 60,
        seed: 71,
        ..EmConfig::default()
    };
    let state = run_em(&data, &truth, &config).unwrap();
    let (mle, se) = probit_mle(&data.x, &data.y);
    for i in 0..2 {
        assert!(
            (state.params.beta[i] - mle[i]).abs() < 3.0 * se[i],
            "beta{i}: EM {} vs probit {} (se {})",
            state.params.beta[i],
            mle[i],
            se[i]
        );
    }
}
