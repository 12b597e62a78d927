//! Monte-Carlo EM for the auto-probit model.
//!
//! The E-step estimates the first two moments of `z | y, phi`, a normal with
//! covariance `Q` truncated to the orthant picked out by `y`, by coordinatewise
//! Gibbs sampling. The M-step maximizes the expected complete-data
//! log-likelihood
//!
//! ```text
//! G(phi) = -n/2 log(2 pi) - 1/2 log|Q| - 1/2 tr(Q^-1 S)
//! S      = E[(z - X beta)(z - X beta)^T]
//! ```
//!
//! first in `beta` (generalized least squares) and then jointly in
//! `(rho, sigma2)`. Writing `B B^T = V diag(lambda) V^T`,
//!
//! ```text
//! log|Q|       = sum_j log(1 + sigma2 / lambda_j)
//! tr(Q^-1 S)   = sum_j s_j / (lambda_j + sigma2),   s = diag(V^T B S B^T V)
//! ```
//!
//! so for fixed `rho` the objective is a cheap function of `sigma2` and can be
//! profiled exactly on `[0, sigma2_max]`.
//!
//! [`EmObjective::InflatedLogDet`] weights `log|Q|` by `n/2` instead of `1/2`.
//! That version penalizes any `sigma2 > 0` so heavily that the M-step returns
//! `sigma2 = 0` almost at once; it exists for comparison only.
//!
//! The estimator is kept to document its failure: with binary outcomes the
//! iterates drift to `sigma2 = 0`, where `Q = I` no longer depends on `rho`
//! and the curvature of `G` is singular. [`run_em`] labels that outcome.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::model::{build_b, BMatrix, Dataset, ModelParams};
use crate::netmat::NetworkMatrix;
use crate::rng::{stream, Purpose};
use crate::truncnorm;

/// Final `sigma2` below this is reported as the degenerate solution.
pub const DEGENERATE_SIGMA2: f64 = 1e-3;
/// `lambda_min / lambda_max` of the negated Hessian below this counts as singular.
pub const NEAR_SINGULAR_RATIO: f64 = 1e-6;

const BATCHES: usize = 20;
const RHO_GRID: usize = 41;
const SIGMA2_GRID: usize = 121;
const MAX_EVALUATIONS: usize = 4000;

/// Weight of `log|Q|` in the M-step objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmObjective {
    /// `-1/2 log|Q|`, the expected complete-data log-likelihood.
    #[default]
    Exact,
    /// `-n/2 log|Q|`.
    InflatedLogDet,
}

impl EmObjective {
    fn log_det_weight(self, n: usize) -> f64 {
        match self {
            EmObjective::Exact => 0.5,
            EmObjective::InflatedLogDet => 0.5 * n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when no coordinate of `phi` moves by more than this.
    pub tolerance: f64,
    /// Retained Gibbs sweeps per E-step.
    pub mc_samples: usize,
    /// Discarded sweeps at the start of each E-step.
    pub mc_burn_in: usize,
    /// Upper end of the `sigma2` search interval.
    pub sigma2_max: f64,
    pub objective: EmObjective,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            mc_samples: 500,
            mc_burn_in: 100,
            sigma2_max: 1e3,
            objective: EmObjective::Exact,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 2 * BATCHES {
            return Err(Error::InvalidInput(format!(
                "E-step needs at least {} Monte-Carlo samples",
                2 * BATCHES
            )));
        }
        if !(self.tolerance > 0.0) || !(self.sigma2_max > 0.0) {
            return Err(Error::InvalidInput("tolerance and sigma2_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo estimates of the moments of `z | y, phi`.
#[derive(Debug, Clone)]
pub struct Moments {
    /// `R = E[z]`.
    pub mean: DVector<f64>,
    /// `E[z z^T]`.
    pub second: DMatrix<f64>,
    /// Batch-means standard error of each entry of `mean`.
    pub mean_se: DVector<f64>,
    /// Retained draws, one per column.
    pub samples: DMatrix<f64>,
}

impl Moments {
    /// `E[(z - mu)(z - mu)^T]` for a fixed mean vector `mu`.
    pub fn scatter(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let rm = &self.mean * mu.transpose();
        &self.second - &rm - rm.transpose() + mu * mu.transpose()
    }
}

/// `Q^-1 = B^T (B B^T + sigma2 I)^-1 B`, formed without inverting `B`.
fn precision(b: &BMatrix, sigma2: f64) -> Result<DMatrix<f64>> {
    let bm = b.matrix();
    let n = bm.nrows();
    if sigma2 == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let mut c = bm * bm.transpose();
    for i in 0..n {
        c[(i, i)] += sigma2;
    }
    let l = cholesky(c, "B B^T + sigma2 I")?.l();
    let y = l
        .solve_lower_triangular(bm)
        .expect("positive Cholesky diagonal");
    Ok(y.transpose() * y)
}

fn check(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.beta.len() != data.m() || params.rho.len() != data.k() {
        return Err(Error::Dimension(format!(
            "parameters have {} beta and {} rho entries for m = {}, k = {}",
            params.beta.len(),
            params.rho.len(),
            data.m(),
            data.k()
        )));
    }
    Ok(())
}

/// Starting values for `z`: `+-1` on the side given by `y`.
pub fn initial_latent(data: &Dataset) -> DVector<f64> {
    DVector::from_iterator(data.n(), data.y.iter().map(|&v| if v { 1.0 } else { -1.0 }))
}

/// Gibbs estimate of `E[z | y, phi]` and `E[z z^T | y, phi]`.
///
/// `z` is the chain's starting point and holds its final state on return, so
/// successive E-steps can be warm-started.
pub fn e_step<R: Rng + ?Sized>(
    params: &ModelParams,
    data: &Dataset,
    z: &mut DVector<f64>,
    samples: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Moments> {
    check(params, data)?;
    let n = data.n();
    if z.len() != n {
        return Err(Error::Dimension(format!("z has {} entries for n = {n}", z.len())));
    }
    if samples < 2 * BATCHES {
        return Err(Error::InvalidInput(format!("need at least {} samples", 2 * BATCHES)));
    }
    let b = build_b(&params.rho, &data.networks)?;
    let p = precision(&b, params.sigma2)?;
    let mu = &data.x * params.beta_vector();
    let sd: Vec<f64> = (0..n).map(|i| p[(i, i)].sqrt().recip()).collect();
    // z_i | z_-i ~ Normal(mu_i - sum_{j != i} P_ij (z_j - mu_j) / P_ii, 1 / P_ii).
    for (i, zi) in z.iter_mut().enumerate() {
        if (*zi > 0.0) != data.y[i] {
            *zi = if data.y[i] { 1.0 } else { -1.0 };
        }
    }
    let mut r = &*z - &mu;
    let mut out = DMatrix::zeros(n, samples);
    for t in 0..burn_in + samples {
        for i in 0..n {
            let dot = p.column(i).dot(&r) - p[(i, i)] * r[i];
            let m = mu[i] - dot / p[(i, i)];
            let s = sd[i];
            let zi = s * truncnorm::given_outcome(m / s, data.y[i], rng);
            z[i] = zi;
            r[i] = zi - mu[i];
        }
        if t >= burn_in {
            out.set_column(t - burn_in, z);
        }
    }
    let mean = out.column_mean();
    let second = &out * out.transpose() / samples as f64;
    let per = samples / BATCHES;
    let mut mean_se = DVector::zeros(n);
    for i in 0..n {
        let row = out.row(i);
        let batch_means: Vec<f64> = (0..BATCHES)
            .map(|bt| row.columns(bt * per, per).mean())
            .collect();
        let bm = batch_means.iter().sum::<f64>() / BATCHES as f64;
        let var = batch_means.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        mean_se[i] = (var / BATCHES as f64).sqrt();
    }
    Ok(Moments {
        mean,
        second,
        mean_se,
        samples: out,
    })
}

/// `log(2 pi)`-free part of `G` in the eigenbasis of `B B^T` at fixed `rho`.
#[derive(Debug, Clone)]
struct Profile {
    lambda: Vec<f64>,
    s: Vec<f64>,
    weight: f64,
}

impl Profile {
    fn new(b: &BMatrix, scatter: &DMatrix<f64>, objective: EmObjective) -> Self {
        let bm = b.matrix();
        let eig = SymmetricEigen::new(bm * bm.transpose());
        let u = eig.eigenvectors.transpose() * bm;
        let t = &u * scatter;
        let s = (0..u.nrows()).map(|j| t.row(j).dot(&u.row(j))).collect();
        Self {
            lambda: eig.eigenvalues.iter().copied().collect(),
            s,
            weight: objective.log_det_weight(scatter.nrows()),
        }
    }

    fn value(&self, sigma2: f64) -> f64 {
        self.lambda
            .iter()
            .zip(&self.s)
            .map(|(&l, &s)| -self.weight * (sigma2 / l).ln_1p() - 0.5 * s / (l + sigma2))
            .sum()
    }

    /// `d value / d sigma2`.
    fn slope(&self, sigma2: f64) -> f64 {
        self.lambda
            .iter()
            .zip(&self.s)
            .map(|(&l, &s)| {
                let d = l + sigma2;
                -self.weight / d + 0.5 * s / (d * d)
            })
            .sum()
    }

    /// Maximizer of [`Profile::value`] over `[0, max]`.
    fn best_sigma2(&self, max: f64, tol: f64) -> (f64, f64) {
        let mut grid = vec![0.0];
        let lo = (max * 1e-12).ln();
        let step = (max.ln() - lo) / (SIGMA2_GRID - 2) as f64;
        grid.extend((0..SIGMA2_GRID - 1).map(|i| (lo + step * i as f64).exp()));
        let vals: Vec<f64> = grid.iter().map(|&s| self.value(s)).collect();
        let best = argmax(&vals);
        if best == 0 && self.slope(0.0) <= 0.0 {
            return (0.0, vals[0]);
        }
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(grid.len() - 1)];
        let (x, fx) = golden_section(|s| self.value(s), a, b, tol * max.max(1.0) * 1e-3);
        if fx >= vals[best] {
            (x, fx)
        } else {
            (grid[best], vals[best])
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || (v[best].is_nan() && !x.is_nan()) {
            best = i;
        }
    }
    best
}

/// Golden-section maximization on `[a, b]`.
pub(crate) fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    [(a, fa), (c, fc), (d, fd), (b, fb)]
        .into_iter()
        .fold((a, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc })
}

/// Nelder-Mead maximization. Returns the best vertex, its value and whether the
/// simplex shrank below `tol` within the evaluation budget.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, bool) {
    let k = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..k {
        let mut p = start.to_vec();
        p[i] += step;
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut evals = k + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    loop {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < tol {
            let (p, v) = simplex.swap_remove(0);
            return (p, v, true);
        }
        if evals >= max_evals {
            let (p, v) = simplex.swap_remove(0);
            return (p, v, false);
        }
        let mut centroid = vec![0.0; k];
        for (p, _) in &simplex[..k] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / k as f64;
            }
        }
        let worst = simplex[k].clone();
        let reflected = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr > simplex[0].1 {
            let expanded = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            evals += 1;
            simplex[k] = if fe > fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr > simplex[k - 1].1 {
            simplex[k] = (reflected, fr);
        } else {
            let contracted = if fr > worst.1 {
                lerp(&centroid, &reflected, 0.5)
            } else {
                lerp(&centroid, &worst.0, 0.5)
            };
            let fc = f(&contracted);
            evals += 1;
            if fc > worst.1.max(fr) {
                simplex[k] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best, &v.0, 0.5);
                    v.1 = f(&v.0);
                    evals += 1;
                }
            }
        }
    }
}

/// Expected complete-data log-likelihood `G(phi)` under `moments`.
pub fn expected_loglik(params: &ModelParams, moments: &Moments, data: &Dataset) -> Result<f64> {
    objective_value(params, moments, data, EmObjective::Exact)
}

/// The M-step objective; equals [`expected_loglik`] for [`EmObjective::Exact`].
pub fn objective_value(
    params: &ModelParams,
    moments: &Moments,
    data: &Dataset,
    objective: EmObjective,
) -> Result<f64> {
    check(params, data)?;
    let n = data.n() as f64;
    let mu = &data.x * params.beta_vector();
    let scatter = moments.scatter(&mu);
    let constant = -0.5 * n * (2.0 * std::f64::consts::PI).ln();
    if params.sigma2 == 0.0 {
        return Ok(constant - 0.5 * scatter.trace());
    }
    let b = build_b(&params.rho, &data.networks)?;
    Ok(constant + Profile::new(&b, &scatter, objective).value(params.sigma2))
}

/// Generalized least squares `beta = (X^T Q^-1 X)^-1 X^T Q^-1 R` at the current `Q`.
pub fn m_step_beta(moments: &Moments, data: &Dataset, params: &ModelParams) -> Result<Vec<f64>> {
    check(params, data)?;
    let b = build_b(&params.rho, &data.networks)?;
    let p = precision(&b, params.sigma2)?;
    let px = &p * &data.x;
    let xtpx = data.x.transpose() * &px;
    let rhs = px.transpose() * &moments.mean;
    let chol = cholesky(xtpx, "X^T Q^-1 X").map_err(|_| Error::RankDeficient("X^T Q^-1 X is singular".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Principal-region profile objective at `rho`, or `None` outside it.
fn profile_at(
    rho: &[f64],
    networks: &[NetworkMatrix],
    scatter: &DMatrix<f64>,
    objective: EmObjective,
) -> Option<Profile> {
    let b = build_b(rho, networks).ok()?;
    b.is_principal().then(|| Profile::new(&b, scatter, objective))
}

fn feasible(rho: &[f64], networks: &[NetworkMatrix]) -> bool {
    build_b(rho, networks).is_ok_and(|b| b.is_principal())
}

/// End of the feasible segment starting at the feasible `rho` in direction `dir`.
fn feasible_end(rho: f64, dir: f64, networks: &[NetworkMatrix]) -> f64 {
    let mut inside = rho;
    let mut step = 0.01;
    let mut outside = None;
    while step <= 16.0 {
        let t = rho + dir * step;
        if feasible(&[t], networks) {
            inside = t;
            step *= 2.0;
        } else {
            outside = Some(t);
            break;
        }
    }
    let Some(mut out) = outside else { return inside };
    for _ in 0..60 {
        let mid = 0.5 * (inside + out);
        if feasible(&[mid], networks) {
            inside = mid;
        } else {
            out = mid;
        }
    }
    inside
}

/// Maximizes `G` over `(rho, sigma2)` at fixed `beta`, keeping `rho` in the
/// region `det B > 0` and `0 <= sigma2 <= sigma2_max`.
pub fn m_step_rho_sigma2(
    moments: &Moments,
    data: &Dataset,
    params: &ModelParams,
    sigma2_max: f64,
    tol: f64,
    objective: EmObjective,
) -> Result<(Vec<f64>, f64)> {
    check(params, data)?;
    let mu = &data.x * params.beta_vector();
    let scatter = moments.scatter(&mu);
    let networks = &data.networks;
    let mut trajectory: Vec<Vec<f64>> = Vec::new();
    let objective = |rho: &[f64], trajectory: &mut Vec<Vec<f64>>| -> (f64, f64) {
        let out = match profile_at(rho, networks, &scatter, objective) {
            Some(p) => p.best_sigma2(sigma2_max, tol),
            None => (f64::NAN, f64::NEG_INFINITY),
        };
        let mut point = rho.to_vec();
        point.push(out.0);
        trajectory.push(point);
        out
    };
    let (s_in, g_in) = objective(&params.rho, &mut trajectory);
    if !g_in.is_finite() {
        return Err(Error::MaximizerFailure {
            reason: format!("objective not finite at the incoming rho = {:?}", params.rho),
            trajectory,
        });
    }
    let (rho, (sigma2, g)) = if params.rho.len() == 1 {
        let r0 = params.rho[0];
        let lo = feasible_end(r0, -1.0, networks);
        let hi = feasible_end(r0, 1.0, networks);
        let margin = 1e-9 * (hi - lo);
        let (lo, hi) = (lo + margin, hi - margin);
        let grid: Vec<f64> = (0..RHO_GRID)
            .map(|i| lo + (hi - lo) * i as f64 / (RHO_GRID - 1) as f64)
            .collect();
        let vals: Vec<f64> = grid.iter().map(|&r| objective(&[r], &mut trajectory).1).collect();
        let best = argmax(&vals);
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(grid.len() - 1)];
        let (r, _) = golden_section(|r| objective(&[r], &mut trajectory).1, a, b, tol);
        let at = objective(&[r], &mut trajectory);
        (vec![r], at)
    } else {
        let mut traj = Vec::new();
        let (r, _, converged) = nelder_mead(
            |r| objective(r, &mut traj).1,
            &params.rho,
            0.05,
            tol,
            MAX_EVALUATIONS,
        );
        trajectory.extend(traj);
        if !converged {
            return Err(Error::MaximizerFailure {
                reason: format!("Nelder-Mead did not converge in {MAX_EVALUATIONS} evaluations"),
                trajectory,
            });
        }
        let at = objective(&r, &mut trajectory);
        (r, at)
    };
    if g >= g_in {
        Ok((rho, sigma2))
    } else {
        Ok((params.rho.clone(), s_in))
    }
}

/// Finite-difference curvature of `G` at the EM solution.
#[derive(Debug, Clone, Serialize)]
pub struct Curvature {
    /// Parameters in the order `beta, rho, sigma2`.
    pub hessian: Vec<Vec<f64>>,
    /// Eigenvalues of `-H`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `lambda_min / lambda_max` of `-H`; non-positive when `-H` is not positive definite.
    pub condition_ratio: f64,
    pub near_singular: bool,
}

/// Hessian of `G` over `(beta, rho, sigma2)` by finite differences.
///
/// Central differences are used except for `sigma2` close to zero, where the
/// stencil is shifted to `sigma2, sigma2 + h, sigma2 + 2h`.
pub fn curvature(
    params: &ModelParams,
    moments: &Moments,
    data: &Dataset,
    objective: EmObjective,
) -> Result<Curvature> {
    let (m, k) = (data.m(), data.k());
    let d = m + k + 1;
    let mut x: Vec<f64> = params.beta.iter().chain(&params.rho).copied().collect();
    x.push(params.sigma2);
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let rho_feasible = |j: usize, o: f64| {
        let mut r = params.rho.clone();
        r[j - m] += o;
        feasible(&r, &data.networks)
    };
    // Stencil offsets (minus, centre, plus) per coordinate, shifted one-sided
    // at sigma2 = 0 and next to the edge of the rho region.
    let offs: Vec<[f64; 3]> = (0..d)
        .map(|j| {
            let hj = h[j];
            if j == d - 1 && x[j] < hj {
                [0.0, hj, 2.0 * hj]
            } else if (m..m + k).contains(&j) && !rho_feasible(j, hj) {
                [-2.0 * hj, -hj, 0.0]
            } else if (m..m + k).contains(&j) && !rho_feasible(j, -hj) {
                [0.0, hj, 2.0 * hj]
            } else {
                [-hj, 0.0, hj]
            }
        })
        .collect();
    let eval = |dx: &[(usize, f64)]| -> Result<f64> {
        let mut v = x.clone();
        for &(j, o) in dx {
            v[j] += o;
        }
        let p = ModelParams {
            beta: v[..m].to_vec(),
            rho: v[m..m + k].to_vec(),
            sigma2: v[d - 1].max(0.0),
        };
        objective_value(&p, moments, data, objective)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let [a, c, b] = offs[i];
        let f_lo = eval(&[(i, a)])?;
        let f_c = eval(&[(i, c)])?;
        let f_hi = eval(&[(i, b)])?;
        hess[(i, i)] = (f_lo - 2.0 * f_c + f_hi) / (h[i] * h[i]);
        for j in 0..i {
            let [aj, _, bj] = offs[j];
            let pp = eval(&[(i, b), (j, bj)])?;
            let pm = eval(&[(i, b), (j, aj)])?;
            let mp = eval(&[(i, a), (j, bj)])?;
            let mm = eval(&[(i, a), (j, aj)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(-&hess).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let max = eigenvalues[d - 1];
    let condition_ratio = if max > 0.0 { eigenvalues[0] / max } else { f64::NEG_INFINITY };
    Ok(Curvature {
        hessian: (0..d).map(|i| hess.row(i).iter().copied().collect()).collect(),
        eigenvalues,
        condition_ratio,
        near_singular: !(condition_ratio >= NEAR_SINGULAR_RATIO),
    })
}

/// Outcome of [`run_em`].
#[derive(Debug, Clone)]
pub struct EmState {
    pub params: ModelParams,
    pub iterations: usize,
    /// `sigma2` after each iteration.
    pub sigma2_trajectory: Vec<f64>,
    /// `G` at the incoming parameters of each iteration.
    pub objective_before: Vec<f64>,
    /// `G` at the parameters the M-step returned, same moments.
    pub objective_after: Vec<f64>,
    /// Batch-means standard error of the E-step estimate of `G` per iteration.
    pub objective_se: Vec<f64>,
    pub moments: Moments,
    pub converged: bool,
    pub curvature: Curvature,
}

impl EmState {
    /// The iterates collapsed onto `sigma2 = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.params.sigma2 < DEGENERATE_SIGMA2
    }

    pub fn report(&self) -> String {
        let mut s = format!(
            "EM: {} iterations ({}), sigma2 = {:.3e}, rho = {:?}, beta = {:?}\n",
            self.iterations,
            if self.converged { "converged" } else { "iteration cap reached" },
            self.params.sigma2,
            self.params.rho,
            self.params.beta
        );
        if self.is_degenerate() {
            s.push_str("DEGENERATE: sigma2 collapsed to the boundary; the network terms are not identified here\n");
        }
        s.push_str(&format!(
            "curvature: lambda_min/lambda_max of -H = {:.3e}{}\n",
            self.curvature.condition_ratio,
            if self.curvature.near_singular { " (near-singular)" } else { "" }
        ));
        s
    }
}

/// Batch-means standard error of `mean_s l_s` where `l_s` is the complete-data
/// log-density of retained draw `s` at `params`.
fn objective_se(params: &ModelParams, moments: &Moments, data: &Dataset) -> Result<f64> {
    let b = build_b(&params.rho, &data.networks)?;
    let p = precision(&b, params.sigma2)?;
    let mu = &data.x * params.beta_vector();
    let n_s = moments.samples.ncols();
    let per = n_s / BATCHES;
    let quad: Vec<f64> = (0..n_s)
        .map(|s| {
            let r = moments.samples.column(s) - &mu;
            -0.5 * (&p * &r).dot(&r)
        })
        .collect();
    let means: Vec<f64> = (0..BATCHES)
        .map(|bt| quad[bt * per..(bt + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let m = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((var / BATCHES as f64).sqrt())
}

/// Random EM starting point: `beta ~ Normal(0, 1)`, `rho ~ Normal(0, 0.1^2)`
/// inside `det B > 0`, `sigma2 ~ Gamma(2, 0.5)`.
pub fn em_start<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<ModelParams> {
    let beta: Vec<f64> = (0..data.m()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let normal = Normal::new(0.0, 0.1).expect("valid");
    let rho = (0..1000)
        .map(|_| (0..data.k()).map(|_| normal.sample(rng)).collect::<Vec<f64>>())
        .find(|r| feasible(r, &data.networks))
        .ok_or_else(|| Error::InvalidInput("no feasible rho near 0".into()))?;
    let sigma2 = Gamma::new(2.0, 0.5).expect("valid").sample(rng);
    ModelParams::new(beta, rho, sigma2)
}

/// Alternates E- and M-steps until `phi` stops moving or the iteration cap.
pub fn run_em(data: &Dataset, init: &ModelParams, config: &EmConfig) -> Result<EmState> {
    config.validate()?;
    check(init, data)?;
    let mut rng = stream(config.seed, Purpose::Em, 0);
    let mut params = init.clone();
    let mut z = initial_latent(data);
    let mut sigma2_trajectory = Vec::new();
    let mut objective_before = Vec::new();
    let mut objective_after = Vec::new();
    let mut objective_ses = Vec::new();
    let mut converged = false;
    let mut moments = None;
    for _ in 0..config.max_iterations {
        let mom = e_step(&params, data, &mut z, config.mc_samples, config.mc_burn_in, &mut rng)?;
        objective_before.push(objective_value(&params, &mom, data, config.objective)?);
        objective_ses.push(objective_se(&params, &mom, data)?);
        let beta = m_step_beta(&mom, data, &params)?;
        let with_beta = ModelParams {
            beta,
            ..params.clone()
        };
        let (rho, sigma2) = m_step_rho_sigma2(
            &mom,
            data,
            &with_beta,
            config.sigma2_max,
            config.tolerance,
            config.objective,
        )?;
        let next = ModelParams {
            rho,
            sigma2,
            ..with_beta
        };
        objective_after.push(objective_value(&next, &mom, data, config.objective)?);
        let change = params
            .beta
            .iter()
            .zip(&next.beta)
            .chain(params.rho.iter().zip(&next.rho))
            .chain(std::iter::once((&params.sigma2, &next.sigma2)))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        params = next;
        sigma2_trajectory.push(params.sigma2);
        moments = Some(mom);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let moments = moments.ok_or_else(|| Error::InvalidInput("max_iterations must be >= 1".into()))?;
    let curvature = curvature(&params, &moments, data, config.objective)?;
    Ok(EmState {
        iterations: sigma2_trajectory.len(),
        params,
        sigma2_trajectory,
        objective_before,
        objective_after,
        objective_se: objective_ses,
        moments,
        converged,
        curvature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmat::{build_cohesion, AdjacencyGraph, Normalization};

    fn ring(n: usize) -> NetworkMatrix {
        let g = AdjacencyGraph::from_edges(n, false, (0..n).map(|i| (i, (i + 1) % n))).unwrap();
        build_cohesion(&g, Normalization::RowSum).unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, _) = golden_section(|x| -(x - 0.3).powi(2), -1.0, 2.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-7);
    }

    #[test]
    fn nelder_mead_finds_quadratic_peak() {
        let (x, _, ok) = nelder_mead(
            |v| -(v[0] - 0.2).powi(2) - 2.0 * (v[1] + 0.1).powi(2),
            &[0.0, 0.0],
            0.1,
            1e-8,
            5000,
        );
        assert!(ok);
        assert!((x[0] - 0.2).abs() < 1e-6 && (x[1] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn inactive_truncation_gives_the_mean() {
        let n = 6;
        let x = DMatrix::from_element(n, 1, 1.0);
        let data = Dataset::new(vec![true; n], x, vec![ring(n)]).unwrap();
        let p = ModelParams::new(vec![10.0], vec![0.0], 0.0).unwrap();
        let mut z = initial_latent(&data);
        let mut rng = stream(1, Purpose::Em, 0);
        let mom = e_step(&p, &data, &mut z, 2000, 50, &mut rng).unwrap();
        for i in 0..n {
            assert!((mom.mean[i] - 10.0).abs() < 3.0 * mom.mean_se[i].max(1.0 / 2000f64.sqrt()));
        }
    }

    #[test]
    fn sigma2_boundary_when_scatter_is_white() {
        let n = 8;
        let b = build_b(&[0.3], &[ring(n)]).unwrap();
        let prof = Profile::new(&b, &DMatrix::identity(n, n), EmObjective::Exact);
        assert_eq!(prof.best_sigma2(100.0, 1e-9).0, 0.0);
    }

    #[test]
    fn profile_matches_direct_formula() {
        let n = 6;
        let w = [ring(n)];
        let p = ModelParams::new(vec![0.0], vec![0.4], 0.7).unwrap();
        let q = crate::model::marginal_q(&p, &w).unwrap();
        let s = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        let direct = -0.5 * q.determinant().ln() - 0.5 * (q.clone().try_inverse().unwrap() * &s).trace();
        let b = build_b(&p.rho, &w).unwrap();
        let via = Profile::new(&b, &s, EmObjective::Exact).value(p.sigma2);
        assert!((direct - via).abs() < 1e-10, "{direct} vs {via}");
    }
}
