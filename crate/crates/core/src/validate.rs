//! Posterior-quantile calibration of a sampler.
//!
//! Each replication draws `phi0` from the prior, simulates outcomes on a fixed
//! design, runs the sampler on them and records the posterior quantile
//! `q = #{draws < truth} / N` of every parameter. For a correct sampler the
//! quantiles are Uniform(0, 1); a Kolmogorov-Smirnov test checks this.
//!
//! A parameter-only check cannot see a sampler that ignores the outcomes: its
//! draws follow the prior, which is calibrated by construction. Each
//! replication therefore also scores the data-dependent quantity
//! `fit = mean_i (2 y_i - 1) x_i^T beta`, whose truth is correlated with `y`.
//!
//! The verdict fails when the pooled parameter test or any per-quantity test
//! (Bonferroni-adjusted) rejects at level `alpha`, or when a replication failed.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::{parameter_names, run_chain, ChainDraws, DrawsStore, Priors, SamplerConfig};
use crate::model::{simulate, Dataset, ModelParams};
use crate::netmat::{build_cohesion, AdjacencyGraph, NetworkMatrix, Normalization};
use crate::rng::{derive_seed, stream, Purpose};

/// Name of the data-dependent calibration quantity.
pub const FIT_SCORE: &str = "fit";
/// Fewer replications than this get a caveat in the report.
pub const RECOMMENDED_REPLICATIONS: usize = 10;

/// Fixed covariates and networks shared by all replications.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub networks: Vec<NetworkMatrix>,
}

impl Design {
    /// `n` nodes, `k` row-normalized Erdos-Renyi graphs with edge probability
    /// `edge_prob`, and `m` standard-normal covariate columns.
    pub fn random(n: usize, k: usize, m: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&edge_prob) {
            return Err(Error::InvalidInput(format!("edge probability {edge_prob} outside [0, 1]")));
        }
        let mut rng = stream(seed, Purpose::Design, 0);
        let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let networks = (0..k)
            .map(|_| {
                let mut g = AdjacencyGraph::new(n, false);
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < edge_prob {
                            g.add_edge(i, j, 1.0)?;
                        }
                    }
                }
                build_cohesion(&g, Normalization::RowSum)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { x, networks })
    }

    /// 50 nodes, two networks, two covariates: five parameters.
    pub fn standard(seed: u64) -> Result<Self> {
        Self::random(50, 2, 2, 0.1, seed)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Something that turns a dataset into posterior draws.
pub trait PosteriorSampler: Sync {
    fn sample(&self, data: &Dataset, priors: &Priors, seed: u64) -> Result<DrawsStore>;
}

/// The Gibbs/Metropolis sampler of [`crate::mcmc`].
#[derive(Debug, Clone)]
pub struct McmcSampler {
    pub config: SamplerConfig,
}

impl PosteriorSampler for McmcSampler {
    fn sample(&self, data: &Dataset, priors: &Priors, seed: u64) -> Result<DrawsStore> {
        let config = SamplerConfig {
            seed,
            ..self.config.clone()
        };
        run_chain(data, priors, &config)
    }
}

/// Ignores the data and returns independent prior draws.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    pub draws: usize,
}

impl PosteriorSampler for PriorSampler {
    fn sample(&self, data: &Dataset, priors: &Priors, seed: u64) -> Result<DrawsStore> {
        let (m, k) = (data.m(), data.k());
        let mut rng = stream(seed, Purpose::Chain, 0);
        let mut columns = vec![Vec::with_capacity(self.draws); m + k + 1];
        for _ in 0..self.draws {
            let p = priors.draw_params(&data.networks, &mut rng)?;
            for (c, v) in columns.iter_mut().zip(p.beta.iter().chain(&p.rho).chain([&p.sigma2])) {
                c.push(*v);
            }
        }
        let chain = ChainDraws {
            chain: 0,
            iterations: (1..=self.draws).collect(),
            columns,
            loglike: vec![f64::NAN; self.draws],
            acceptance_rates: Vec::new(),
            proposal_sd: Vec::new(),
        };
        DrawsStore::new(parameter_names(m, k), vec![chain])
    }
}

/// `#{draws < truth} / N`.
pub fn posterior_quantile(draws: &[f64], truth: f64) -> f64 {
    draws.iter().filter(|&&d| d < truth).count() as f64 / draws.len() as f64
}

/// `(#{draws < truth} + U #{draws == truth}) / N` with `U ~ Uniform(0, 1)`.
pub fn randomized_quantile(draws: &[f64], truth: f64, u: f64) -> f64 {
    let less = draws.iter().filter(|&&d| d < truth).count() as f64;
    let equal = draws.iter().filter(|&&d| d == truth).count() as f64;
    (less + u * equal) / draws.len() as f64
}

/// `mean_i (2 y_i - 1) x_i^T beta`.
pub fn fit_score(data: &Dataset, beta: &[f64]) -> f64 {
    let n = data.n();
    (0..n)
        .map(|i| {
            let s = if data.y[i] { 1.0 } else { -1.0 };
            s * data.x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationResult {
    pub index: usize,
    /// Prior draw per quantity, parameters first and [`FIT_SCORE`] last.
    pub truth: Vec<f64>,
    /// Strict-inequality quantiles, same order as `truth`.
    pub quantiles: Vec<f64>,
    /// Tie-randomized quantiles, same order as `truth`.
    pub randomized: Vec<f64>,
    pub retained: usize,
}

/// One replication under master seed `seed`.
pub fn run_replication(
    priors: &Priors,
    design: &Design,
    sampler: &dyn PosteriorSampler,
    seed: u64,
    index: usize,
) -> Result<ReplicationResult> {
    let mut rng = stream(seed, Purpose::Simulate, 0);
    let truth: ModelParams = priors.draw_params(&design.networks, &mut rng)?;
    let (data, _) = simulate(&truth, &design.x, &design.networks, &mut rng)?;
    let store = sampler.sample(&data, priors, seed)?;
    let n_draws = store.total_draws();
    if n_draws == 0 {
        return Err(Error::InsufficientData("sampler returned no draws".into()));
    }
    let m = data.m();
    let mut truths: Vec<f64> = truth.beta.iter().chain(&truth.rho).copied().collect();
    truths.push(truth.sigma2);
    let mut columns: Vec<Vec<f64>> = (0..truths.len()).map(|p| store.pooled(p)).collect();
    let fit_draws: Vec<f64> = (0..n_draws)
        .map(|t| {
            let beta: Vec<f64> = columns[..m].iter().map(|c| c[t]).collect();
            fit_score(&data, &beta)
        })
        .collect();
    truths.push(fit_score(&data, &truth.beta));
    columns.push(fit_draws);
    let mut tie_rng = stream(seed, Purpose::Replication, 0);
    let quantiles = columns.iter().zip(&truths).map(|(c, &t)| posterior_quantile(c, t)).collect();
    let randomized = columns
        .iter()
        .zip(&truths)
        .map(|(c, &t)| randomized_quantile(c, t, tie_rng.random()))
        .collect();
    Ok(ReplicationResult {
        index,
        truth: truths,
        quantiles,
        randomized,
        retained: n_draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, 1).
pub fn ks_statistic(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// `P(D_n < d)` for the one-sample KS statistic (Marsaglia, Tsang and Wang, 2003).
pub fn ks_cdf(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    if d >= 1.0 {
        return 1.0;
    }
    let nf = n as f64;
    let s = d * d * nf;
    if s > 7.24 || (s > 3.76 && n > 99) {
        return 1.0 - 2.0 * (-(2.000071 + 0.331 / nf.sqrt() + 1.409 / nf) * s).exp();
    }
    let k = (nf * d) as usize + 1;
    let m = 2 * k - 1;
    let h = k as f64 - nf * d;
    let mut hm = DMatrix::<f64>::from_fn(m, m, |i, j| if i + 1 >= j { 1.0 } else { 0.0 });
    for i in 0..m {
        hm[(i, 0)] -= h.powi(i as i32 + 1);
        hm[(m - 1, i)] -= h.powi((m - i) as i32);
    }
    if 2.0 * h - 1.0 > 0.0 {
        hm[(m - 1, 0)] += (2.0 * h - 1.0).powi(m as i32);
    }
    for i in 0..m {
        for j in 0..m {
            if i + 1 > j {
                for g in 1..=(i + 1 - j) {
                    hm[(i, j)] /= g as f64;
                }
            }
        }
    }
    let (q, mut exp10) = matrix_power(&hm, n);
    let mut s = q[(k - 1, k - 1)];
    for i in 1..=n {
        s *= i as f64 / nf;
        if s < 1e-140 {
            s *= 1e140;
            exp10 -= 140;
        }
    }
    (s * 10f64.powi(exp10)).clamp(0.0, 1.0)
}

/// `a^n` as `(mantissa matrix, power of ten)`.
fn matrix_power(a: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, i32) {
    if n == 1 {
        return (a.clone(), 0);
    }
    let (half, e) = matrix_power(a, n / 2);
    let mut out = &half * &half;
    let mut exp = 2 * e;
    if n % 2 == 1 {
        out = a * out;
    }
    let centre = out.nrows() / 2;
    if out[(centre, centre)] > 1e140 {
        out *= 1e-140;
        exp += 140;
    }
    (out, exp)
}

/// KS test of `values` against Uniform(0, 1) with the exact small-sample p-value.
pub fn uniformity_test(values: &[f64]) -> Result<KsTest> {
    if values.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} values, the uniformity test needs at least 10",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite quantile".into()));
    }
    let statistic = ks_statistic(values);
    let p_value = (1.0 - ks_cdf(values.len(), statistic)).clamp(0.0, 1.0);
    Ok(KsTest {
        n: values.len(),
        statistic,
        p_value,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationConfig {
    pub replications: usize,
    pub seed: u64,
    /// Rejection level of the verdict.
    pub alpha: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            replications: 10,
            seed: 0,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityTest {
    pub name: String,
    pub test: KsTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    /// Model parameters followed by [`FIT_SCORE`].
    pub quantities: Vec<String>,
    pub replications: Vec<ReplicationResult>,
    /// `(replication, error)` for every replication that did not finish.
    pub failures: Vec<(usize, String)>,
    /// Parameter quantiles of all replications, sorted.
    pub pooled: Vec<f64>,
    pub pooled_test: KsTest,
    /// Tests on the tie-randomized quantiles of each quantity.
    pub per_quantity: Vec<QuantityTest>,
    pub alpha: f64,
    pub verdict: Verdict,
    pub caveat: Option<String>,
}

/// Runs the replications in parallel and tests the quantiles.
pub fn run_calibration(
    priors: &Priors,
    design: &Design,
    sampler: &dyn PosteriorSampler,
    config: &CalibrationConfig,
) -> Result<CalibrationReport> {
    if config.replications < 2 {
        return Err(Error::InvalidInput("calibration needs at least 2 replications".into()));
    }
    let (m, k) = (design.x.ncols(), design.networks.len());
    priors.validate(m, k)?;
    let outcomes: Vec<(usize, Result<ReplicationResult>)> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, Purpose::Replication, r as u32);
            (r, run_replication(priors, design, sampler, seed, r))
        })
        .collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok(res) => replications.push(res),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let mut quantities = parameter_names(m, k);
    quantities.push(FIT_SCORE.to_string());
    let n_params = m + k + 1;
    let mut pooled: Vec<f64> = replications
        .iter()
        .flat_map(|r| r.quantiles[..n_params].iter().copied())
        .collect();
    pooled.sort_by(f64::total_cmp);
    if pooled.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "only {} of {} replications finished: {:?}",
            replications.len(),
            config.replications,
            failures
        )));
    }
    let pooled_test = uniformity_test(&pooled)?;
    let per_quantity = if replications.len() >= 10 {
        (0..quantities.len())
            .map(|q| {
                let v: Vec<f64> = replications.iter().map(|r| r.randomized[q]).collect();
                Ok(QuantityTest {
                    name: quantities[q].clone(),
                    test: uniformity_test(&v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let bonferroni = per_quantity.len().max(1) as f64;
    let rejected = pooled_test.p_value < config.alpha
        || per_quantity.iter().any(|t| t.test.p_value * bonferroni < config.alpha)
        || !failures.is_empty();
    let caveat = (replications.len() < RECOMMENDED_REPLICATIONS).then(|| {
        format!(
            "only {} replications: per-quantity tests skipped and the pooled test has little power",
            replications.len()
        )
    });
    Ok(CalibrationReport {
        quantities,
        replications,
        failures,
        pooled,
        pooled_test,
        per_quantity,
        alpha: config.alpha,
        verdict: if rejected { Verdict::Fail } else { Verdict::Pass },
        caveat,
    })
}

/// Sampler settings of the reference protocol: 22,000 sweeps, 2,000 burn-in,
/// thinning 20, giving 1,000 retained draws.
pub fn reference_sampler_config() -> SamplerConfig {
    SamplerConfig {
        iterations: 22_000,
        burn_in: 2_000,
        thin: 20,
        ..SamplerConfig::default()
    }
}
