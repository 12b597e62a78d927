use serde::Serialize;

use crate::error::{Error, Result};

/// Retained draws of one chain, one column per parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDraws {
    pub chain: usize,
    /// 1-based sweep number of each retained draw.
    pub iterations: Vec<usize>,
    /// `columns[p][t]` is draw `t` of parameter `p`.
    pub columns: Vec<Vec<f64>>,
    /// `log Normal(z; X beta, Q)` at each retained draw.
    pub loglike: Vec<f64>,
    /// Post-burn-in Metropolis acceptance rate per `rho_i`.
    pub acceptance_rates: Vec<f64>,
    /// Random-walk scale per `rho_i` after any adaptation.
    pub proposal_sd: Vec<f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// Posterior draws of several chains that share parameter names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawsStore {
    pub parameter_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

/// `beta0..beta{m-1}, rho1..rho{k}, sigma2`.
pub fn parameter_names(m: usize, k: usize) -> Vec<String> {
    (0..m)
        .map(|i| format!("beta{i}"))
        .chain((1..=k).map(|i| format!("rho{i}")))
        .chain(std::iter::once("sigma2".to_string()))
        .collect()
}

impl DrawsStore {
    pub fn new(parameter_names: Vec<String>, mut chains: Vec<ChainDraws>) -> Result<Self> {
        for c in &chains {
            if c.columns.len() != parameter_names.len() {
                return Err(Error::Dimension(format!(
                    "chain {} has {} columns for {} parameters",
                    c.chain,
                    c.columns.len(),
                    parameter_names.len()
                )));
            }
            if c.columns.iter().any(|col| col.len() != c.iterations.len()) || c.loglike.len() != c.iterations.len() {
                return Err(Error::Dimension(format!("chain {} has ragged columns", c.chain)));
            }
        }
        chains.sort_by_key(|c| c.chain);
        Ok(Self { parameter_names, chains })
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|p| p == name)
    }

    /// Draws of parameter `p` from every chain, concatenated in chain order.
    pub fn pooled(&self, p: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.columns[p].iter().copied()).collect()
    }

    pub fn pooled_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.parameter_index(name).map(|p| self.pooled(p))
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Union of stores over disjoint chain ids; the result does not depend on argument order.
    pub fn merge(stores: Vec<DrawsStore>) -> Result<DrawsStore> {
        let mut iter = stores.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InsufficientData("nothing to merge".into()))?;
        let names = first.parameter_names;
        let mut chains = first.chains;
        for s in iter {
            if s.parameter_names != names {
                return Err(Error::Dimension("stores have different parameters".into()));
            }
            chains.extend(s.chains);
        }
        chains.sort_by_key(|c| c.chain);
        if chains.windows(2).any(|w| w[0].chain == w[1].chain) {
            return Err(Error::InvalidInput("duplicate chain id in merge".into()));
        }
        DrawsStore::new(names, chains)
    }
}
