//! Chain diagnostics: autocorrelation, effective sample size, summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::DrawsStore;

/// Lags reported by [`summarize`].
pub const SUMMARY_LAGS: usize = 20;
const MIN_DRAWS: usize = 10;

/// Sample autocorrelation function; `values[0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Acf {
    pub values: Vec<f64>,
    /// Constant chain: only lag 0 is defined.
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn autocovariance(centered: &[f64], lag: usize) -> f64 {
    let n = centered.len();
    centered[..n - lag]
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n as f64
}

/// Autocorrelations at lags `0..=max_lag`, normalized by the lag-0 autocovariance.
pub fn autocorrelation(draws: &[f64], max_lag: usize) -> Result<Acf> {
    let n = draws.len();
    if n < MIN_DRAWS {
        return Err(Error::InsufficientData(format!("{n} draws, need at least {MIN_DRAWS}")));
    }
    if 2 * max_lag >= n {
        return Err(Error::InvalidInput(format!("max lag {max_lag} must be below N/2 = {}", n / 2)));
    }
    let mu = mean(draws);
    let centered: Vec<f64> = draws.iter().map(|x| x - mu).collect();
    let c0 = autocovariance(&centered, 0);
    if !(c0 > 0.0) {
        return Ok(Acf {
            values: vec![1.0],
            degenerate: true,
        });
    }
    let values = (0..=max_lag).map(|l| autocovariance(&centered, l) / c0).collect();
    Ok(Acf {
        values,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub value: f64,
    /// Constant chain; `value` is 1.
    pub degenerate: bool,
}

/// `N / (1 + 2 sum_t rho_t)` with Geyer's initial positive sequence truncation.
///
/// Autocorrelations are summed in adjacent pairs `rho_{2m} + rho_{2m+1}` until
/// the first non-positive pair. The result is capped at `N`.
pub fn effective_sample_size(draws: &[f64]) -> Result<Ess> {
    let n = draws.len();
    if n < MIN_DRAWS {
        return Err(Error::InsufficientData(format!("{n} draws, need at least {MIN_DRAWS}")));
    }
    let mu = mean(draws);
    let centered: Vec<f64> = draws.iter().map(|x| x - mu).collect();
    let c0 = autocovariance(&centered, 0);
    if !(c0 > 0.0) {
        return Ok(Ess {
            value: 1.0,
            degenerate: true,
        });
    }
    let mut pair_sum = 0.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocovariance(&centered, lag) + autocovariance(&centered, lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        pair_sum += pair;
        lag += 2;
    }
    let tau = (2.0 * pair_sum - 1.0).max(1e-12);
    Ok(Ess {
        value: (n as f64 / tau).min(n as f64),
        degenerate: false,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub draws: usize,
    pub mean: f64,
    /// `None` for a single draw.
    pub sd: Option<f64>,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Lags `1..`; empty when the chain is too short or constant.
    pub acf: Vec<f64>,
    pub ess: Option<f64>,
    pub degenerate: bool,
    /// Mean Metropolis acceptance across chains, for `rho` parameters.
    pub acceptance_rate: Option<f64>,
}

/// Per-parameter summary of the draws pooled over chains.
pub fn summarize(store: &DrawsStore) -> Result<Vec<ParameterSummary>> {
    if store.total_draws() == 0 {
        return Err(Error::InsufficientData("no draws to summarize".into()));
    }
    let rho_offset = store.parameter_names.iter().position(|p| p.starts_with("rho"));
    let mut out = Vec::with_capacity(store.parameter_names.len());
    for (p, name) in store.parameter_names.iter().enumerate() {
        let draws = store.pooled(p);
        let n = draws.len();
        let mu = mean(&draws);
        let sd = (n > 1).then(|| {
            (draws.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let (acf, ess, degenerate) = if n >= MIN_DRAWS {
            let lags = SUMMARY_LAGS.min((n - 1) / 2);
            let acf = autocorrelation(&draws, lags)?;
            let ess = effective_sample_size(&draws)?;
            (acf.values[1..].to_vec(), Some(ess.value), acf.degenerate)
        } else {
            (Vec::new(), None, sd.is_none_or(|s| s == 0.0))
        };
        let acceptance_rate = rho_offset.and_then(|off| {
            let i = p.checked_sub(off)?;
            if !name.starts_with("rho") {
                return None;
            }
            let rates: Vec<f64> = store
                .chains
                .iter()
                .filter_map(|c| c.acceptance_rates.get(i).copied())
                .collect();
            (!rates.is_empty()).then(|| mean(&rates))
        });
        out.push(ParameterSummary {
            name: name.clone(),
            draws: n,
            mean: mu,
            sd,
            q025: quantile_sorted(&sorted, 0.025),
            q50: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
            acf,
            ess,
            degenerate,
            acceptance_rate,
        });
    }
    Ok(out)
}

/// `(chain, iteration, value)` rows of parameter `p` for trace plots.
pub fn trace(store: &DrawsStore, p: usize) -> Vec<(usize, usize, f64)> {
    store
        .chains
        .iter()
        .flat_map(|c| {
            c.iterations
                .iter()
                .zip(&c.columns[p])
                .map(move |(&t, &v)| (c.chain, t, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::ChainDraws;
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Design, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Design, 1);
        let mut x = vec![0.0; n];
        x[0] = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        for t in 1..n {
            x[t] = phi * x[t - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        x
    }

    fn store(chains: Vec<Vec<f64>>) -> DrawsStore {
        let chains = chains
            .into_iter()
            .enumerate()
            .map(|(c, v)| ChainDraws {
                chain: c,
                iterations: (1..=v.len()).collect(),
                loglike: vec![0.0; v.len()],
                columns: vec![v],
                acceptance_rates: vec![],
                proposal_sd: vec![],
            })
            .collect();
        DrawsStore::new(vec!["x".into()], chains).unwrap()
    }

    #[test]
    fn white_noise_acf_and_ess() {
        let n = 10_000;
        let x = white(n, 11);
        let acf = autocorrelation(&x, 5).unwrap();
        assert_eq!(acf.values[0], 1.0);
        assert!(acf.values[1].abs() < 3.0 / (n as f64).sqrt());
        let ess = effective_sample_size(&x).unwrap().value;
        assert!((ess - n as f64).abs() <= 0.2 * n as f64, "ess {ess}");
    }

    #[test]
    fn ar1_acf_and_ess() {
        let n = 10_000;
        let x = ar1(n, 0.9, 5);
        let acf = autocorrelation(&x, 3).unwrap();
        assert!((acf.values[1] - 0.9).abs() < 0.05, "lag1 {}", acf.values[1]);
        let expected = n as f64 * 0.1 / 1.9;
        let ess = effective_sample_size(&x).unwrap().value;
        assert!((ess - expected).abs() <= 0.3 * expected, "ess {ess} vs {expected}");
    }

    #[test]
    fn constant_chain_is_degenerate() {
        let x = vec![2.5; 50];
        let acf = autocorrelation(&x, 5).unwrap();
        assert!(acf.degenerate);
        assert_eq!(acf.values, vec![1.0]);
        let ess = effective_sample_size(&x).unwrap();
        assert!(ess.degenerate);
        assert_eq!(ess.value, 1.0);
    }

    #[test]
    fn short_or_overlong_inputs_are_errors() {
        assert!(autocorrelation(&[1.0; 5], 1).is_err());
        assert!(autocorrelation(&white(20, 1), 10).is_err());
        assert!(effective_sample_size(&[0.0; 3]).is_err());
    }

    #[test]
    fn single_draw_summary() {
        let s = summarize(&store(vec![vec![1.5]])).unwrap();
        assert_eq!(s[0].mean, 1.5);
        assert!(s[0].sd.is_none());
        assert_eq!(s[0].q50, 1.5);
    }

    #[test]
    fn normal_summary_quantiles() {
        let n = 20_000;
        let s = summarize(&store(vec![white(n, 3)])).unwrap();
        assert!(s[0].mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((s[0].q025 + 1.96).abs() < 0.06, "{}", s[0].q025);
        assert!((s[0].q975 - 1.96).abs() < 0.06);
    }

    #[test]
    fn merged_chains_summarize_as_concatenation() {
        let a = white(500, 1);
        let b = white(700, 2);
        let merged = summarize(&store(vec![a.clone(), b.clone()])).unwrap();
        let concat = summarize(&store(vec![[a, b].concat()])).unwrap();
        assert_eq!(merged[0].mean, concat[0].mean);
        assert_eq!(merged[0].sd, concat[0].sd);
        assert_eq!(merged[0].q025, concat[0].q025);
        assert_eq!(merged[0].ess, concat[0].ess);
    }

    #[test]
    fn thinning_keeps_most_of_the_information() {
        let x = ar1(20_000, 0.9, 8);
        let full = effective_sample_size(&x).unwrap().value;
        for t in [2usize, 5, 10] {
            let thinned: Vec<f64> = x.iter().step_by(t).copied().collect();
            let ess = effective_sample_size(&thinned).unwrap().value;
            assert!(ess >= 0.5 * full / t as f64, "thin {t}: {ess} vs {full}");
        }
    }
}
