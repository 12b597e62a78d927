//! "Quick and dirty" baseline: logistic regression of `y` on `[X | W y]`.
//!
//! The observations are not conditionally independent, so the estimates are
//! biased. Kept as a point of comparison, never for inference.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

/// Maximum-likelihood logistic fit.
#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// QAD estimates; `rho` is `None` when `W y` is identically zero and the column was dropped.
#[derive(Debug, Clone, Serialize)]
pub struct QadFit {
    pub beta: Vec<f64>,
    pub beta_std_errors: Vec<f64>,
    pub rho: Option<f64>,
    pub rho_std_error: Option<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn log_likelihood(eta: &DVector<f64>, y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log sigma(e) = -log(1 + exp(-e)), written to avoid overflow.
            let s = if yi { e } else { -e };
            -(if s > 0.0 { (-s).exp().ln_1p() } else { -s + s.exp().ln_1p() })
        })
        .sum()
}

fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let t = e.exp();
        t / (1.0 + t)
    }
}

/// Logistic regression by iteratively reweighted least squares with step halving.
///
/// Converges when no coefficient moves by more than `1e-8`. Perfectly separated
/// data drive the likelihood to its supremum of zero without a maximizer and
/// are reported as [`Error::NonConvergence`].
pub fn fit_logistic(design: &DMatrix<f64>, y: &[bool]) -> Result<LogisticFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} rows", y.len())));
    }
    let gram = design.transpose() * design;
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(Error::RankDeficient(format!(
            "design matrix with {p} columns does not have full column rank"
        )));
    }
    let yv = DVector::from_iterator(n, y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(p);
    let mut eta = design * &beta;
    let mut ll = log_likelihood(&eta, y);
    for iteration in 1..=MAX_ITERATIONS {
        let prob = eta.map(sigmoid);
        let weights = prob.map(|q| q * (1.0 - q));
        let mut info = DMatrix::zeros(p, p);
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let row = design.row(i);
            info += row.transpose() * row * weights[i];
            score += row.transpose() * (yv[i] - prob[i]);
        }
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or_else(|| Error::NonConvergence("logistic information matrix collapsed (separation)".into()))?;

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_eta = design * &candidate;
        let mut cand_ll = log_likelihood(&cand_eta, y);
        let mut halvings = 0;
        while !(cand_ll >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < MAX_HALVINGS {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_eta = design * &candidate;
            cand_ll = log_likelihood(&cand_eta, y);
            halvings += 1;
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        eta = cand_eta;
        ll = cand_ll;
        if ll > -1e-6 || eta.amax() > 35.0 {
            return Err(Error::NonConvergence(format!(
                "logistic fit diverges (separated data): log-likelihood {ll:.3e} at iteration {iteration}"
            )));
        }
        if change < TOLERANCE {
            let prob = eta.map(sigmoid);
            let mut info = DMatrix::zeros(p, p);
            for i in 0..n {
                let row = design.row(i);
                info += row.transpose() * row * (prob[i] * (1.0 - prob[i]));
            }
            let cov = info
                .try_inverse()
                .ok_or_else(|| Error::RankDeficient("singular information matrix".into()))?;
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                std_errors: cov.diagonal().iter().map(|v| v.sqrt()).collect(),
                log_likelihood: ll,
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "logistic IRLS did not converge in {MAX_ITERATIONS} iterations"
    )))
}

/// QAD fit using network `network` of `data` for the `W y` regressor.
pub fn fit_qad(data: &Dataset, network: usize) -> Result<QadFit> {
    let w = data.networks.get(network).ok_or_else(|| {
        Error::InvalidInput(format!("network index {network} out of range (k = {})", data.k()))
    })?;
    let yv = DVector::from_iterator(data.n(), data.y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    let wy = w.values() * yv;
    let m = data.m();
    if wy.iter().all(|&v| v == 0.0) {
        let fit = fit_logistic(&data.x, &data.y)?;
        return Ok(QadFit {
            beta: fit.coefficients,
            beta_std_errors: fit.std_errors,
            rho: None,
            rho_std_error: None,
            log_likelihood: fit.log_likelihood,
            iterations: fit.iterations,
        });
    }
    let design = DMatrix::from_fn(data.n(), m + 1, |i, j| if j < m { data.x[(i, j)] } else { wy[i] });
    let fit = fit_logistic(&design, &data.y)?;
    Ok(QadFit {
        beta: fit.coefficients[..m].to_vec(),
        beta_std_errors: fit.std_errors[..m].to_vec(),
        rho: Some(fit.coefficients[m]),
        rho_std_error: Some(fit.std_errors[m]),
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
    })
}
