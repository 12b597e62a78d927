use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_b, ModelParams};
use crate::netmat::NetworkMatrix;

const MAX_RHO_PRIOR_TRIES: usize = 100_000;

/// Hyperparameters of the hierarchical model.
///
/// * `beta ~ Normal(beta_mean, beta_variance * I)`
/// * `1 / sigma2 ~ Gamma(shape = sigma2_shape, scale = sigma2_scale)`, written
///   `sigma2 ~ InvGamma(s0, q0)` elsewhere in the crate
/// * `rho_i ~ Normal(rho_mean[i], rho_variance[i])`, restricted to `det B > 0`
///
/// `proposal_variance[i]` is the variance of the random-walk increment for `rho_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub beta_mean: Vec<f64>,
    pub beta_variance: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    pub rho_mean: Vec<f64>,
    pub rho_variance: Vec<f64>,
    pub proposal_variance: Vec<f64>,
}

impl Priors {
    /// Diffuse defaults for `m` covariates and `k` networks.
    pub fn diffuse(m: usize, k: usize) -> Self {
        Self {
            beta_mean: vec![0.0; m],
            beta_variance: 400.0,
            sigma2_shape: 2.0,
            sigma2_scale: 1.0,
            rho_mean: vec![0.0; k],
            rho_variance: vec![1.0; k],
            proposal_variance: vec![0.05 * 0.05; k],
        }
    }

    /// Like [`Priors::diffuse`] but with `beta ~ Normal(0, 10 I)` and
    /// `sigma2 ~ InvGamma(3, 0.5)` (prior mean 1), which keeps the latent scale
    /// from drifting when the outcomes carry little information about it.
    pub fn weakly_informative(m: usize, k: usize) -> Self {
        Self {
            beta_variance: 10.0,
            sigma2_shape: 3.0,
            sigma2_scale: 0.5,
            ..Self::diffuse(m, k)
        }
    }

    /// `beta ~ Normal(0, 1)`, `sigma2 ~ InvGamma(5, 10)`, `rho ~ Normal(0.05, 0.05^2)`.
    pub fn calibration(m: usize, k: usize) -> Self {
        Self {
            beta_mean: vec![0.0; m],
            beta_variance: 1.0,
            sigma2_shape: 5.0,
            sigma2_scale: 10.0,
            rho_mean: vec![0.05; k],
            rho_variance: vec![0.05 * 0.05; k],
            proposal_variance: vec![0.05 * 0.05; k],
        }
    }

    pub fn m(&self) -> usize {
        self.beta_mean.len()
    }

    pub fn k(&self) -> usize {
        self.rho_mean.len()
    }

    pub fn validate(&self, m: usize, k: usize) -> Result<()> {
        if self.beta_mean.len() != m {
            return Err(Error::Dimension(format!(
                "prior beta mean has {} entries, X has {m} columns",
                self.beta_mean.len()
            )));
        }
        if self.rho_mean.len() != k || self.rho_variance.len() != k || self.proposal_variance.len() != k {
            return Err(Error::Dimension(format!("rho priors must have {k} entries")));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.beta_variance) {
            return Err(Error::InvalidInput("beta prior variance must be > 0".into()));
        }
        if !positive(self.sigma2_shape) || !positive(self.sigma2_scale) {
            return Err(Error::InvalidInput("sigma2 prior parameters must be > 0".into()));
        }
        if !self.rho_variance.iter().chain(&self.proposal_variance).all(|&v| positive(v)) {
            return Err(Error::InvalidInput("rho prior and proposal variances must be > 0".into()));
        }
        if self.beta_mean.iter().chain(&self.rho_mean).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prior means must be finite".into()));
        }
        Ok(())
    }

    /// `sigma2 ~ InvGamma(s0, q0)`.
    pub fn draw_sigma2<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        inv_gamma(self.sigma2_shape, self.sigma2_scale, rng)
    }

    pub fn draw_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.beta_variance.sqrt();
        self.beta_mean
            .iter()
            .map(|&mu| Normal::new(mu, sd).expect("validated prior").sample(rng))
            .collect()
    }

    /// Rejection draw of `rho` from its prior restricted to `det B > 0`.
    pub fn draw_rho<R: Rng + ?Sized>(&self, networks: &[NetworkMatrix], rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_RHO_PRIOR_TRIES {
            let rho: Vec<f64> = self
                .rho_mean
                .iter()
                .zip(&self.rho_variance)
                .map(|(&mu, &var)| Normal::new(mu, var.sqrt()).expect("validated prior").sample(rng))
                .collect();
            if let Ok(b) = build_b(&rho, networks) {
                if b.is_principal() {
                    return Ok(rho);
                }
            }
        }
        Err(Error::InvalidInput(format!(
            "rho prior puts almost no mass on the invertible region ({MAX_RHO_PRIOR_TRIES} rejected draws)"
        )))
    }

    /// A full parameter draw in the order beta, rho, sigma2.
    pub fn draw_params<R: Rng + ?Sized>(&self, networks: &[NetworkMatrix], rng: &mut R) -> Result<ModelParams> {
        let beta = self.draw_beta(rng);
        let rho = self.draw_rho(networks, rng)?;
        let sigma2 = self.draw_sigma2(rng);
        ModelParams::new(beta, rho, sigma2)
    }

    /// Log prior density of `rho_i` up to a constant.
    pub fn rho_log_density(&self, i: usize, rho: f64) -> f64 {
        let d = rho - self.rho_mean[i];
        -0.5 * d * d / self.rho_variance[i]
    }
}

/// `1 / Gamma(shape, scale)`.
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / Gamma::new(shape, scale).expect("positive gamma parameters").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_hyperparameters() {
        let mut p = Priors::diffuse(2, 1);
        assert!(p.validate(2, 1).is_ok());
        assert!(p.validate(3, 1).is_err());
        p.sigma2_scale = 0.0;
        assert!(p.validate(2, 1).is_err());
        let mut p = Priors::diffuse(2, 1);
        p.proposal_variance[0] = -1.0;
        assert!(p.validate(2, 1).is_err());
    }
}
