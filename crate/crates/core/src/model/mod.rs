//! The multiple-network auto-probit generative model.
//!
//! ```text
//! y = 1(z > 0)
//! z = X beta + theta + eps,          eps ~ Normal(0, I)
//! theta = sum_i rho_i W_i theta + u, u   ~ Normal(0, sigma2 I)
//! ```
//!
//! Integrating out `theta` gives `z ~ Normal(X beta, Q)` with
//! `Q = I + sigma2 B^-1 B^-T` and `B = I - sum_i rho_i W_i`.

mod qad;

pub use qad::{fit_logistic, fit_qad, LogisticFit, QadFit};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, cholesky, lu_log_abs_det, singular_log_threshold, standard_normal_vector};
use crate::netmat::NetworkMatrix;

/// Parameter set `phi = {beta, rho, sigma2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, rho: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidInput(format!("sigma2 = {sigma2} must be >= 0")));
        }
        if beta.iter().chain(&rho).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite beta or rho".into()));
        }
        Ok(Self { beta, rho, sigma2 })
    }

    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}

/// Observed outcomes, covariates and networks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<bool>,
    pub x: DMatrix<f64>,
    pub networks: Vec<NetworkMatrix>,
}

impl Dataset {
    pub fn new(y: Vec<bool>, x: DMatrix<f64>, networks: Vec<NetworkMatrix>) -> Result<Self> {
        check_design(&x, &networks)?;
        if y.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} outcomes but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        Ok(Self { y, x, networks })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates `m`.
    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Number of networks `k`.
    pub fn k(&self) -> usize {
        self.networks.len()
    }

    pub fn positive_count(&self) -> usize {
        self.y.iter().filter(|&&v| v).count()
    }
}

pub(crate) fn check_design(x: &DMatrix<f64>, networks: &[NetworkMatrix]) -> Result<()> {
    if networks.is_empty() {
        return Err(Error::InvalidInput("at least one network is required".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("X has non-finite entries".into()));
    }
    let n = x.nrows();
    if let Some(w) = networks.iter().find(|w| w.n() != n) {
        return Err(Error::Dimension(format!(
            "network is {0}x{0} but X has {n} rows",
            w.n()
        )));
    }
    Ok(())
}

/// Latent preferences `z` and network effects `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: DVector<f64>,
    pub theta: DVector<f64>,
}

impl LatentState {
    /// `y = 1(z > 0)`; `z = 0` maps to `false`.
    pub fn outcomes(&self) -> Vec<bool> {
        classify(&self.z)
    }
}

pub fn classify(z: &DVector<f64>) -> Vec<bool> {
    z.iter().map(|&v| v > 0.0).collect()
}

/// `B = I - sum_i rho_i W_i` together with its LU factorization and `log|det B|`.
#[derive(Debug, Clone)]
pub struct BMatrix {
    rho: Vec<f64>,
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    log_abs_det: f64,
    det_sign: f64,
}

impl BMatrix {
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    pub fn det_sign(&self) -> f64 {
        self.det_sign
    }

    /// `det B > 0`, i.e. on the side of the singular set that contains `rho = 0`.
    pub fn is_principal(&self) -> bool {
        self.det_sign > 0.0
    }

    /// `B^-1 v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(v).expect("B was checked to be non-singular")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.lu
            .try_inverse()
            .expect("B was checked to be non-singular")
    }

    /// `B v` computed as `v - sum_i rho_i (W_i v)` from precomputed `W_i v`.
    pub fn apply_with(rho: &[f64], v: &DVector<f64>, wv: &[DVector<f64>]) -> DVector<f64> {
        let mut out = v.clone();
        for (r, w) in rho.iter().zip(wv) {
            out.axpy(-r, w, 1.0);
        }
        out
    }
}

/// Plain `I - sum_i rho_i W_i`, no checks.
pub fn b_matrix_raw(rho: &[f64], networks: &[NetworkMatrix]) -> DMatrix<f64> {
    let n = networks.first().map_or(0, NetworkMatrix::n);
    let mut b = DMatrix::identity(n, n);
    for (r, w) in rho.iter().zip(networks) {
        add_scaled(&mut b, -r, w.values());
    }
    b
}

/// Builds `B`, failing with [`Error::SingularB`] when `|det B| < 1e-10 n`.
pub fn build_b(rho: &[f64], networks: &[NetworkMatrix]) -> Result<BMatrix> {
    if rho.len() != networks.len() {
        return Err(Error::Dimension(format!(
            "{} autocorrelations for {} networks",
            rho.len(),
            networks.len()
        )));
    }
    if networks.is_empty() {
        return Err(Error::InvalidInput("at least one network is required".into()));
    }
    let n = networks[0].n();
    if networks.iter().any(|w| w.n() != n) {
        return Err(Error::Dimension("networks differ in size".into()));
    }
    let matrix = b_matrix_raw(rho, networks);
    let lu = matrix.clone().lu();
    let (log_abs_det, det_sign) = lu_log_abs_det(&lu);
    if !(log_abs_det >= singular_log_threshold(n)) {
        return Err(Error::SingularB {
            rho: rho.to_vec(),
            log_abs_det,
        });
    }
    Ok(BMatrix {
        rho: rho.to_vec(),
        matrix,
        lu,
        log_abs_det,
        det_sign,
    })
}

fn check_params(params: &ModelParams, x: &DMatrix<f64>, networks: &[NetworkMatrix]) -> Result<()> {
    check_design(x, networks)?;
    if params.beta.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "beta has {} entries but X has {} columns",
            params.beta.len(),
            x.ncols()
        )));
    }
    if params.rho.len() != networks.len() {
        return Err(Error::Dimension(format!(
            "rho has {} entries for {} networks",
            params.rho.len(),
            networks.len()
        )));
    }
    Ok(())
}

/// Marginal covariance of the latent preferences, `Q = I + sigma2 B^-1 B^-T`.
pub fn marginal_q(params: &ModelParams, networks: &[NetworkMatrix]) -> Result<DMatrix<f64>> {
    let b = build_b(&params.rho, networks)?;
    let n = b.matrix().nrows();
    let b_inv = b.inverse();
    let mut q = &b_inv * b_inv.transpose() * params.sigma2;
    q += DMatrix::<f64>::identity(n, n);
    Ok((&q + q.transpose()) * 0.5)
}

/// Explicit `Q^-1` (the matrix of elements `q_ij` of the E-M objective).
///
/// Forms the inverse densely; meant for inspection and cross-checks, the
/// estimators work with factorizations instead.
pub fn explicit_precision(params: &ModelParams, networks: &[NetworkMatrix]) -> Result<DMatrix<f64>> {
    marginal_q(params, networks)?
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("Q is not invertible".into()))
}

/// Draws `(y, z, theta)` from the model at `params` for the fixed design `(X, W)`.
///
/// Draw order: `u` (n normals), then `eps` (n normals).
pub fn simulate<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &DMatrix<f64>,
    networks: &[NetworkMatrix],
    rng: &mut R,
) -> Result<(Dataset, LatentState)> {
    check_params(params, x, networks)?;
    let b = build_b(&params.rho, networks)?;
    let n = x.nrows();
    let u = standard_normal_vector(n, rng) * params.sigma2.sqrt();
    let theta = b.solve(&u);
    let eps = standard_normal_vector(n, rng);
    let z = x * params.beta_vector() + &theta + eps;
    let latent = LatentState { z, theta };
    let data = Dataset::new(latent.outcomes(), x.clone(), networks.to_vec())?;
    Ok((data, latent))
}

/// `log Normal(z; X beta, Q)`.
pub fn loglik_z(
    z: &DVector<f64>,
    params: &ModelParams,
    x: &DMatrix<f64>,
    networks: &[NetworkMatrix],
) -> Result<f64> {
    check_params(params, x, networks)?;
    if z.len() != x.nrows() {
        return Err(Error::Dimension(format!("z has {} entries, X has {} rows", z.len(), x.nrows())));
    }
    let b = build_b(&params.rho, networks)?;
    let resid = z - x * params.beta_vector();
    loglik_residual(&resid, params.sigma2, &b)
}

/// `log Normal(r; 0, Q)` for a residual `r = z - X beta` with `B` already factored.
///
/// Uses `Q = B^-1 (B B^T + sigma2 I) B^-T`, so
/// `log|Q| = log|B B^T + sigma2 I| - 2 log|det B|` and
/// `r^T Q^-1 r = |L^-1 B r|^2` with `L L^T = B B^T + sigma2 I`.
pub(crate) fn loglik_residual(resid: &DVector<f64>, sigma2: f64, b: &BMatrix) -> Result<f64> {
    let n = resid.len();
    let bm = b.matrix();
    let mut c = bm * bm.transpose();
    for i in 0..n {
        c[(i, i)] += sigma2;
    }
    let chol = cholesky(c, "B B^T + sigma2 I")?;
    let l = chol.l_dirty();
    let log_det_c: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_q = log_det_c - 2.0 * b.log_abs_det();
    let w = l
        .solve_lower_triangular(&(bm * resid))
        .expect("positive Cholesky diagonal");
    Ok(-0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_q - 0.5 * w.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmat::{build_cohesion, AdjacencyGraph, Normalization};
    use crate::rng::{stream, Purpose};

    fn ring(n: usize) -> NetworkMatrix {
        let g = AdjacencyGraph::from_edges(n, false, (0..n).map(|i| (i, (i + 1) % n))).unwrap();
        build_cohesion(&g, Normalization::RowSum).unwrap()
    }

    #[test]
    fn b_at_zero_is_identity() {
        let b = build_b(&[0.0], &[ring(5)]).unwrap();
        assert_eq!(*b.matrix(), DMatrix::<f64>::identity(5, 5));
        assert_eq!(b.log_abs_det(), 0.0);
        assert!(b.is_principal());
    }

    #[test]
    fn b_singular_for_unit_rho_on_row_stochastic() {
        let err = build_b(&[1.0], &[ring(5)]).unwrap_err();
        assert!(matches!(err, Error::SingularB { .. }));
    }

    #[test]
    fn b_rejects_mismatched_lengths() {
        assert!(matches!(build_b(&[0.1, 0.2], &[ring(4)]), Err(Error::Dimension(_))));
    }

    #[test]
    fn q_special_cases() {
        let w = [ring(6)];
        let p = ModelParams::new(vec![0.0], vec![0.4], 0.0).unwrap();
        assert_eq!(marginal_q(&p, &w).unwrap(), DMatrix::<f64>::identity(6, 6));
        let p = ModelParams::new(vec![0.0], vec![0.0], 2.0).unwrap();
        let q = marginal_q(&p, &w).unwrap();
        assert!((q - DMatrix::<f64>::identity(6, 6) * 3.0).abs().max() < 1e-15);
    }

    #[test]
    fn q_symmetric_with_unit_floor() {
        let p = ModelParams::new(vec![0.0], vec![0.7], 1.3).unwrap();
        let q = marginal_q(&p, &[ring(9)]).unwrap();
        assert!(crate::linalg::asymmetry(&q) < 1e-12);
        assert!(q.diagonal().iter().all(|&d| d >= 1.0));
        assert!(q.cholesky().is_some());
    }

    #[test]
    fn simulate_is_seeded_and_consistent() {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 12.0 });
        let p = ModelParams::new(vec![0.2, -0.5], vec![0.3], 0.8).unwrap();
        let (d1, l1) = simulate(&p, &x, &[ring(12)], &mut stream(3, Purpose::Simulate, 0)).unwrap();
        let (d2, l2) = simulate(&p, &x, &[ring(12)], &mut stream(3, Purpose::Simulate, 0)).unwrap();
        assert_eq!(d1.y, d2.y);
        assert_eq!(l1, l2);
        assert_eq!(d1.y, classify(&l1.z));
    }

    #[test]
    fn loglik_standard_normal_at_mode() {
        let n = 7;
        let x = DMatrix::from_element(n, 1, 1.0);
        let p = ModelParams::new(vec![0.0], vec![0.0], 0.0).unwrap();
        let ll = loglik_z(&DVector::zeros(n), &p, &x, &[ring(n)]).unwrap();
        assert!((ll + n as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_is_a_location_family() {
        let n = 8;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
        let z = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
        let p = ModelParams::new(vec![0.3, -1.1], vec![0.5], 0.9).unwrap();
        let p0 = ModelParams::new(vec![0.0, 0.0], vec![0.5], 0.9).unwrap();
        let shifted = &z - &x * p.beta_vector();
        let a = loglik_z(&z, &p, &x, &[ring(n)]).unwrap();
        let b = loglik_z(&shifted, &p0, &x, &[ring(n)]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
