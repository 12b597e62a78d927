//! Hierarchical Bayesian estimation by cyclical conditional sampling.
//!
//! | unknown  | conditional                                   | update          |
//! |----------|-----------------------------------------------|-----------------|
//! | `z`      | `TruncNormal(X beta + theta, I)`              | vectorized      |
//! | `beta`   | `Normal(nu_beta, Omega_beta)`                 | block           |
//! | `theta`  | `Normal(nu_theta, Omega_theta)`               | block           |
//! | `sigma2` | `InvGamma(a, b)`                              | scalar          |
//! | `rho_i`  | random-walk Metropolis, one `i` at a time     | sequential      |
//!
//! The Metropolis ratio for `rho` uses the density of `theta`,
//! `|det B| exp(-|B theta|^2 / (2 sigma2))`, times the normal prior ratio.
//! [`AlphaForm::LikelihoodOnly`] drops the prior ratio. Moves that leave the
//! region `det B > 0` around `rho = 0` are rejected.

mod draws;
mod priors;
mod sampler;

pub use draws::{parameter_names, ChainDraws, DrawsStore};
pub use priors::{inv_gamma, Priors};
pub use sampler::{ChainState, GibbsSampler, StepOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{stream, Purpose};

/// Target Metropolis acceptance rate of the burn-in adaptation (inside 20-40%).
pub const ADAPT_TARGET: f64 = 0.3;

/// Which Metropolis ratio to use for `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaForm {
    /// Likelihood ratio times the prior ratio.
    #[default]
    Corrected,
    /// Likelihood ratio only.
    LikelihoodOnly,
}

/// Deliberate sampler defects used to check that calibration catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    #[default]
    None,
    /// `sigma2` drawn from `Gamma(a, b)` instead of `InvGamma(a, b)`.
    GammaSigma2,
    /// Metropolis ratio without the determinant and prior terms.
    BareAlpha,
    /// `z` drawn without truncation.
    UntruncatedZ,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [Mutation::GammaSigma2, Mutation::BareAlpha, Mutation::UntruncatedZ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total sweeps per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Robbins-Monro tuning of the `rho` proposal scale during burn-in.
    pub adapt: bool,
    pub alpha: AlphaForm,
    pub mutation: Mutation,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            burn_in: 10_000,
            thin: 20,
            chains: 1,
            seed: 0,
            adapt: false,
            alpha: AlphaForm::Corrected,
            mutation: Mutation::None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidInput("thinning interval must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.chains == 0 {
            return Err(Error::InvalidInput("at least one chain is required".into()));
        }
        Ok(())
    }

    /// `(iterations - burn_in) / thin`.
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            alpha: self.alpha,
            mutation: self.mutation,
        }
    }
}

/// Runs `config.chains` independent chains (in parallel) and collects the thinned draws.
pub fn run_chain(data: &Dataset, priors: &Priors, config: &SamplerConfig) -> Result<DrawsStore> {
    config.validate()?;
    let sampler = GibbsSampler::new(data, priors, config.step_options())?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_single_chain(&sampler, config, c))
        .collect::<Result<Vec<_>>>()?;
    DrawsStore::new(parameter_names(data.m(), data.k()), chains)
}

/// One chain on stream `chain` of `config.seed`.
pub fn run_single_chain(sampler: &GibbsSampler<'_>, config: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    config.validate()?;
    let data = sampler.data();
    let (m, k) = (data.m(), data.k());
    let mut rng = stream(config.seed, Purpose::Chain, chain as u32);
    let mut state = sampler.initial_state(&mut rng)?;
    let keep = config.retained_per_chain();
    let mut draws = ChainDraws {
        chain,
        iterations: Vec::with_capacity(keep),
        columns: vec![Vec::with_capacity(keep); m + k + 1],
        loglike: Vec::with_capacity(keep),
        acceptance_rates: vec![0.0; k],
        proposal_sd: Vec::new(),
    };
    let mut log_sd: Vec<f64> = state.proposal_sd.iter().map(|s| s.ln()).collect();
    for t in 1..=config.iterations {
        let accepted = sampler.sweep(&mut state, &mut rng).map_err(|e| Error::Diverged {
            chain,
            iteration: t,
            reason: e.to_string(),
        })?;
        if !state.is_finite() {
            return Err(Error::Diverged {
                chain,
                iteration: t,
                reason: format!(
                    "non-finite state (sigma2 = {}, rho = {:?}, beta = {:?})",
                    state.sigma2,
                    state.rho,
                    state.beta.as_slice()
                ),
            });
        }
        if t <= config.burn_in {
            if config.adapt {
                let gain = (t as f64).powf(-0.6);
                for (i, &acc) in accepted.iter().enumerate() {
                    let hit = if acc { 1.0 } else { 0.0 };
                    log_sd[i] = (log_sd[i] + gain * (hit - ADAPT_TARGET)).clamp(1e-4f64.ln(), 10f64.ln());
                    state.proposal_sd[i] = log_sd[i].exp();
                }
            }
            if t == config.burn_in {
                state.reset_counters();
            }
            continue;
        }
        if (t - config.burn_in) % config.thin == 0 {
            draws.iterations.push(t);
            for (p, &v) in state.beta.iter().enumerate() {
                draws.columns[p].push(v);
            }
            for (i, &v) in state.rho.iter().enumerate() {
                draws.columns[m + i].push(v);
            }
            draws.columns[m + k].push(state.sigma2);
            draws.loglike.push(sampler.loglik(&state).unwrap_or(f64::NAN));
        }
    }
    draws.acceptance_rates = state
        .accepted
        .iter()
        .zip(&state.proposed)
        .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
        .collect();
    draws.proposal_sd = state.proposal_sd.clone();
    Ok(draws)
}
