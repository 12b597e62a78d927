//! Independent oracles shared by the integration tests.
//!
//! Everything here is written from the defining formulas with plain loops so
//! that it shares no code path with the library.

#![allow(dead_code)]

use mnap::netmat::{AdjacencyGraph, NetworkKind, NetworkMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected Erdos-Renyi graph.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> AdjacencyGraph {
    let mut g = AdjacencyGraph::new(n, false);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                g.add_edge(i, j, 1.0).unwrap();
            }
        }
    }
    g
}

/// Dense random row-stochastic matrix with zero diagonal.
pub fn row_stochastic(n: usize, rng: &mut impl Rng) -> NetworkMatrix {
    let mut w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
    for i in 0..n {
        let s: f64 = w.row(i).sum();
        for j in 0..n {
            w[(i, j)] /= s;
        }
    }
    NetworkMatrix::new(w, NetworkKind::Raw).unwrap()
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// `I - sum rho_i W_i`, entry by entry.
pub fn b_explicit(rho: &[f64], networks: &[NetworkMatrix]) -> DMatrix<f64> {
    let n = networks[0].n();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = if i == j { 1.0 } else { 0.0 };
        for (r, w) in rho.iter().zip(networks) {
            v -= r * w.values()[(i, j)];
        }
        v
    })
}

/// Determinant by Laplace expansion along the first row.
pub fn cofactor_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 1 {
        return m[(0, 0)];
    }
    let mut det = 0.0;
    for c in 0..n {
        let minor = m.clone().remove_row(0).remove_column(c);
        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[(0, c)] * cofactor_det(&minor);
    }
    det
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn gauss_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    det
}

/// Explicit matrix inverse by Gauss-Jordan elimination.
pub fn gauss_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
            .unwrap();
        a.swap_rows(pivot, col);
        inv.swap_rows(pivot, col);
        let p = a[(col, col)];
        for c in 0..n {
            a[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                for c in 0..n {
                    a[(r, c)] -= f * a[(col, c)];
                    inv[(r, c)] -= f * inv[(col, c)];
                }
            }
        }
    }
    inv
}

/// `I + sigma2 B^-1 B^-T` from an explicit inverse.
pub fn q_explicit(rho: &[f64], sigma2: f64, networks: &[NetworkMatrix]) -> DMatrix<f64> {
    let bi = gauss_inverse(&b_explicit(rho, networks));
    let n = bi.nrows();
    DMatrix::<f64>::identity(n, n) + &bi * bi.transpose() * sigma2
}

/// `log Normal(z; mu, Q)` with explicit inverse and determinant.
pub fn mvn_logpdf(z: &DVector<f64>, mu: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    let n = z.len() as f64;
    let r = z - mu;
    let quad = (r.transpose() * gauss_inverse(q) * &r)[(0, 0)];
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * gauss_det(q).ln() - 0.5 * quad
}

/// `s_ij = 1 / (d_ij + 1)`, `d_ij^2 = sum_{k != i, j} (A_ik - A_jk)^2`.
pub fn brute_force_se(g: &AdjacencyGraph) -> DMatrix<f64> {
    let n = g.n();
    let a = |i: usize, k: usize| if g.has_edge(i, k) { 1.0 } else { 0.0 };
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let mut d2 = 0.0;
        for k in 0..n {
            if k != i && k != j {
                let diff: f64 = a(i, k) - a(j, k);
                d2 += diff * diff;
            }
        }
        1.0 / (d2.sqrt() + 1.0)
    })
}

/// Standard normal CDF from the complementary error function.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean and variance of `Normal(mu, 1)` truncated to `(0, inf)` or `(-inf, 0]`.
pub fn truncated_moments(mu: f64, positive: bool) -> (f64, f64) {
    if positive {
        let lambda = phi_pdf(mu) / phi_cdf(mu);
        (mu + lambda, 1.0 - lambda * (lambda + mu))
    } else {
        let lambda = phi_pdf(mu) / phi_cdf(-mu);
        (mu - lambda, 1.0 - lambda * (lambda - mu))
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
