//! The five conditional updates, in sweep order `z, beta, theta, sigma2, rho`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, cholesky, sample_from_precision};
use crate::mcmc::priors::{inv_gamma, Priors};
use crate::mcmc::{AlphaForm, Mutation};
use crate::model::{build_b, loglik_residual, BMatrix, Dataset};
use crate::truncnorm;

/// Current values of every unknown plus the cached `B` for the current `rho`.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub z: DVector<f64>,
    pub theta: DVector<f64>,
    pub beta: DVector<f64>,
    pub rho: Vec<f64>,
    pub sigma2: f64,
    b: BMatrix,
    /// Random-walk standard deviation per `rho_i`.
    pub proposal_sd: Vec<f64>,
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
}

impl ChainState {
    pub fn new(
        data: &Dataset,
        z: DVector<f64>,
        theta: DVector<f64>,
        beta: DVector<f64>,
        rho: Vec<f64>,
        sigma2: f64,
        proposal_sd: Vec<f64>,
    ) -> Result<Self> {
        let n = data.n();
        if z.len() != n || theta.len() != n || beta.len() != data.m() {
            return Err(Error::Dimension("chain state does not match the data".into()));
        }
        if proposal_sd.len() != data.k() {
            return Err(Error::Dimension("one proposal scale per network is required".into()));
        }
        let b = build_b(&rho, &data.networks)?;
        let k = rho.len();
        Ok(Self {
            z,
            theta,
            beta,
            rho,
            sigma2,
            b,
            proposal_sd,
            accepted: vec![0; k],
            proposed: vec![0; k],
        })
    }

    pub fn b(&self) -> &BMatrix {
        &self.b
    }

    pub fn log_abs_det_b(&self) -> f64 {
        self.b.log_abs_det()
    }

    pub fn is_finite(&self) -> bool {
        self.sigma2.is_finite()
            && self.rho.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.theta.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite())
    }

    pub fn reset_counters(&mut self) {
        self.accepted.iter_mut().for_each(|a| *a = 0);
        self.proposed.iter_mut().for_each(|p| *p = 0);
    }
}

/// Behaviour switches of the conditional updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOptions {
    pub alpha: AlphaForm,
    pub mutation: Mutation,
}

/// Data-dependent precomputations shared by every sweep.
struct Cache {
    /// Cholesky factor of `D^-1 + X^T X`.
    beta_precision: Cholesky<f64, Dyn>,
    /// `D^-1 nu_beta^0`.
    beta_prior_linear: DVector<f64>,
    xt: DMatrix<f64>,
    /// `W_i + W_i^T`.
    sym: Vec<DMatrix<f64>>,
    /// `W_i^T W_j + W_j^T W_i` for `i < j`, `W_i^T W_i` on the diagonal; row-major upper triangle.
    cross: Vec<DMatrix<f64>>,
}

/// Gibbs/Metropolis sampler for one dataset and prior.
pub struct GibbsSampler<'a> {
    data: &'a Dataset,
    priors: &'a Priors,
    options: StepOptions,
    cache: Cache,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &'a Dataset, priors: &'a Priors, options: StepOptions) -> Result<Self> {
        priors.validate(data.m(), data.k())?;
        let xt = data.x.transpose();
        let mut precision = &xt * &data.x;
        let inv_h = 1.0 / priors.beta_variance;
        for i in 0..data.m() {
            precision[(i, i)] += inv_h;
        }
        let beta_precision = cholesky(precision, "D^-1 + X^T X")?;
        let beta_prior_linear = DVector::from_column_slice(&priors.beta_mean) * inv_h;
        let k = data.k();
        let sym = data
            .networks
            .iter()
            .map(|w| w.values() + w.values().transpose())
            .collect();
        let mut cross = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            let wi_t = data.networks[i].values().transpose();
            for j in i..k {
                let p = &wi_t * data.networks[j].values();
                cross.push(if i == j { p } else { &p + p.transpose() });
            }
        }
        Ok(Self {
            data,
            priors,
            options,
            cache: Cache {
                beta_precision,
                beta_prior_linear,
                xt,
                sym,
                cross,
            },
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn priors(&self) -> &Priors {
        self.priors
    }

    /// Initial state: `beta`, `rho`, `sigma2` from the priors, `theta = 0`, `z` from its conditional.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChainState> {
        let n = self.data.n();
        let beta = DVector::from_vec(self.priors.draw_beta(rng));
        let rho = self.priors.draw_rho(&self.data.networks, rng)?;
        let sigma2 = self.priors.draw_sigma2(rng);
        let sd = self.priors.proposal_variance.iter().map(|v| v.sqrt()).collect();
        let mut state = ChainState::new(self.data, DVector::zeros(n), DVector::zeros(n), beta, rho, sigma2, sd)?;
        self.draw_z(&mut state, rng);
        Ok(state)
    }

    /// `z_i ~ Normal(x_i beta + theta_i, 1)` truncated to the side given by `y_i`.
    pub fn draw_z<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let mean = &self.data.x * &state.beta + &state.theta;
        for (i, (&mu, &y)) in mean.iter().zip(&self.data.y).enumerate() {
            state.z[i] = match self.options.mutation {
                Mutation::UntruncatedZ => mu + rng.sample::<f64, _>(StandardNormal),
                _ => truncnorm::given_outcome(mu, y, rng),
            };
        }
    }

    fn beta_linear(&self, state: &ChainState) -> DVector<f64> {
        &self.cache.xt * (&state.z - &state.theta) + &self.cache.beta_prior_linear
    }

    /// Mean and covariance of `beta | z, theta`: `Omega = (D^-1 + X^T X)^-1`,
    /// `nu = Omega (X^T (z - theta) + D^-1 nu0)`.
    pub fn beta_conditional(&self, state: &ChainState) -> (DVector<f64>, DMatrix<f64>) {
        let linear = self.beta_linear(state);
        (
            self.cache.beta_precision.solve(&linear),
            self.cache.beta_precision.inverse(),
        )
    }

    /// `beta ~ Normal(nu_beta, Omega_beta)`.
    pub fn draw_beta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let linear = self.beta_linear(state);
        state.beta = sample_from_precision(&self.cache.beta_precision, &linear, rng);
    }

    /// `B^T B` assembled from the cached network products.
    pub fn btb(&self, rho: &[f64]) -> DMatrix<f64> {
        let n = self.data.n();
        let k = rho.len();
        let mut m = DMatrix::identity(n, n);
        for (r, s) in rho.iter().zip(&self.cache.sym) {
            add_scaled(&mut m, -r, s);
        }
        let mut idx = 0;
        for i in 0..k {
            for j in i..k {
                add_scaled(&mut m, rho[i] * rho[j], &self.cache.cross[idx]);
                idx += 1;
            }
        }
        m
    }

    /// Precision `I + B^T B / sigma2` and linear term `z - X beta` of `theta | z, beta, rho, sigma2`.
    pub fn theta_conditional(&self, state: &ChainState) -> (DMatrix<f64>, DVector<f64>) {
        let mut precision = self.btb(&state.rho) / state.sigma2;
        for i in 0..precision.nrows() {
            precision[(i, i)] += 1.0;
        }
        (precision, &state.z - &self.data.x * &state.beta)
    }

    /// `theta ~ Normal(Omega (z - X beta), Omega)`, `Omega = (I + B^T B / sigma2)^-1`.
    pub fn draw_theta<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        if !(state.sigma2 > 0.0) {
            state.theta.fill(0.0);
            return Ok(());
        }
        let (precision, linear) = self.theta_conditional(state);
        let chol = cholesky(precision, "I + B^T B / sigma2")?;
        state.theta = sample_from_precision(&chol, &linear, rng);
        Ok(())
    }

    fn network_products(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        self.data.networks.iter().map(|w| w.values() * v).collect()
    }

    /// `(a, b)` of `sigma2 | theta, rho ~ InvGamma(a, b)`:
    /// `a = s0 + n / 2`, `b = 2 / (theta^T B^T B theta + 2 / q0)`.
    pub fn sigma2_conditional(&self, state: &ChainState) -> (f64, f64) {
        let wt = self.network_products(&state.theta);
        let ss = BMatrix::apply_with(&state.rho, &state.theta, &wt).norm_squared();
        let a = self.priors.sigma2_shape + 0.5 * self.data.n() as f64;
        let b = 2.0 / (ss + 2.0 / self.priors.sigma2_scale);
        (a, b)
    }

    /// `sigma2 ~ InvGamma(a, b)`.
    pub fn draw_sigma2<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let (a, b) = self.sigma2_conditional(state);
        state.sigma2 = match self.options.mutation {
            Mutation::GammaSigma2 => Gamma::new(a, b).expect("positive parameters").sample(rng),
            _ => inv_gamma(a, b, rng),
        };
    }

    fn log_ratio_parts(
        &self,
        state: &ChainState,
        proposal: &[f64],
        b_new: &BMatrix,
        wt: &[DVector<f64>],
    ) -> f64 {
        let ss_old = BMatrix::apply_with(&state.rho, &state.theta, wt).norm_squared();
        let ss_new = BMatrix::apply_with(proposal, &state.theta, wt).norm_squared();
        let mut log_alpha = -(ss_new - ss_old) / (2.0 * state.sigma2);
        if self.options.mutation != Mutation::BareAlpha {
            log_alpha += b_new.log_abs_det() - state.b.log_abs_det();
        }
        let with_prior = self.options.alpha == AlphaForm::Corrected && self.options.mutation != Mutation::BareAlpha;
        if with_prior {
            for i in 0..proposal.len() {
                log_alpha += self.priors.rho_log_density(i, proposal[i]) - self.priors.rho_log_density(i, state.rho[i]);
            }
        }
        log_alpha
    }

    /// Log Metropolis ratio for moving `rho` to `proposal` with everything else held.
    ///
    /// `None` when the proposal leaves the region `det B > 0` (such moves are rejected).
    pub fn log_acceptance_ratio(&self, state: &ChainState, proposal: &[f64]) -> Option<f64> {
        let b_new = build_b(proposal, &self.data.networks).ok()?;
        if !b_new.is_principal() {
            return None;
        }
        let wt = self.network_products(&state.theta);
        Some(self.log_ratio_parts(state, proposal, &b_new, &wt))
    }

    /// One random-walk Metropolis update per `rho_i`, in order. Returns acceptances.
    pub fn draw_rho<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Vec<bool> {
        let k = state.rho.len();
        let wt = self.network_products(&state.theta);
        let mut accepted = vec![false; k];
        for i in 0..k {
            let sd = state.proposal_sd[i];
            let delta = if sd > 0.0 {
                Normal::new(0.0, sd).expect("finite scale").sample(rng)
            } else {
                0.0
            };
            let mut proposal = state.rho.clone();
            proposal[i] += delta;
            // Draw the uniform unconditionally so the stream does not depend on the region test.
            let u: f64 = rng.random();
            state.proposed[i] += 1;
            let Ok(b_new) = build_b(&proposal, &self.data.networks) else {
                continue;
            };
            if !b_new.is_principal() {
                continue;
            }
            let log_alpha = self.log_ratio_parts(state, &proposal, &b_new, &wt);
            if log_alpha >= 0.0 || u.ln() < log_alpha {
                state.rho = proposal;
                state.b = b_new;
                state.accepted[i] += 1;
                accepted[i] = true;
            }
        }
        accepted
    }

    /// One full sweep in the order `z, beta, theta, sigma2, rho`.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<Vec<bool>> {
        self.draw_z(state, rng);
        self.draw_beta(state, rng);
        self.draw_theta(state, rng)?;
        self.draw_sigma2(state, rng);
        Ok(self.draw_rho(state, rng))
    }

    /// `log Normal(z; X beta, Q)` at the current state.
    pub fn loglik(&self, state: &ChainState) -> Result<f64> {
        let resid = &state.z - &self.data.x * &state.beta;
        loglik_residual(&resid, state.sigma2, &state.b)
    }
}
