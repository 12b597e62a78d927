//! Multiple-network auto-probit model.
//!
//! Binary outcomes `y = 1(z > 0)` whose latent preferences carry several
//! simultaneous network autocorrelation terms:
//!
//! ```text
//! z     = X beta + theta + eps
//! theta = sum_i rho_i W_i theta + u
//! ```
//!
//! The crate covers building the network matrices ([`netmat`]), simulating and
//! evaluating the model ([`model`]), Bayesian estimation by Gibbs/Metropolis
//! sampling ([`mcmc`]), a Monte-Carlo EM estimator that exhibits the degenerate
//! `sigma2 = 0` solution ([`em`]), posterior-quantile calibration of the sampler
//! ([`validate`]), chain diagnostics ([`diagnostics`]) and the text formats used
//! by the command-line tool ([`io`]).

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod netmat;
pub mod rng;
pub mod truncnorm;
pub mod validate;

pub use error::{Error, Result};
pub use mcmc::{run_chain, DrawsStore, Priors, SamplerConfig};
pub use model::{build_b, loglik_z, marginal_q, simulate, BMatrix, Dataset, LatentState, ModelParams};
pub use netmat::{AdjacencyGraph, NetworkKind, NetworkMatrix};
