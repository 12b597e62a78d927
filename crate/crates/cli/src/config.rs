//! Run configuration: one TOML file, every field overridable from the command line.
//!
//! ```toml
//! seed = 7
//! out = "runs/fit"
//! jobs = 4
//!
//! [data]
//! x = "x.csv"                     # header row, one column per covariate
//! y = "y.txt"                     # one 0/1 per line
//! networks = [
//!   { path = "friends.txt" },     # edge list, cohesion, row-sum scaling
//!   { path = "w2.txt", format = "matrix", kind = "raw" },
//! ]
//!
//! [design]                        # random design used when no files are given
//! n = 50
//! networks = 2
//! covariates = 2
//! edge_prob = 0.1
//! intercept = false
//!
//! [params]                        # generating parameters for `simulate`
//! beta = [0.5, -0.5]
//! rho = [0.3, 0.2]
//! sigma2 = 1.0
//!
//! [priors]
//! preset = "diffuse"              # diffuse | weakly-informative | calibration
//! beta_variance = 100.0
//!
//! [sampler]
//! iterations = 30000
//! burn_in = 10000
//! thin = 20
//! chains = 2
//! adapt = true
//!
//! [em]
//! objective = "exact"             # exact | inflated-log-det
//!
//! [validate]
//! replications = 10
//!
//! [region]
//! rho1 = [-1.0, 1.0]
//! rho2 = [-1.0, 1.0]
//! resolution = [50, 50]
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use mnap::em::{EmConfig, EmObjective};
use mnap::io;
use mnap::mcmc::{AlphaForm, Mutation, Priors, SamplerConfig};
use mnap::netmat::{build_cohesion, build_structural_equivalence, NetworkKind, NetworkMatrix, Normalization, RowScaling};
use mnap::validate::{reference_sampler_config, Design};
use mnap::Dataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub data: DataConfig,
    pub design: DesignSpec,
    pub params: ParamsConfig,
    pub priors: PriorConfig,
    pub sampler: SamplerSettings,
    pub em: EmSettings,
    pub validate: ValidateSettings,
    pub region: RegionSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .with_context(|| format!("`{command}` needs a seed (--seed or `seed = ...` in the config)"))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("no output directory (--out or `out = ...` in the config)")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub networks: Vec<NetworkSpec>,
}

impl DataConfig {
    pub fn has_design_files(&self) -> bool {
        self.x.is_some() || !self.networks.is_empty()
    }

    /// Fails on the first referenced input that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let paths = self.x.iter().chain(&self.y).chain(self.networks.iter().map(|n| &n.path));
        for p in paths {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn read_x(&self) -> Result<DMatrix<f64>> {
        let path = self.x.as_ref().context("no covariate file (--x or [data] x)")?;
        Ok(io::read_covariates(path)?.1)
    }

    pub fn read_y(&self) -> Result<Vec<bool>> {
        let path = self.y.as_ref().context("no outcome file (--y or [data] y)")?;
        Ok(io::read_outcomes(path)?)
    }

    /// Builds every network, checking the node count when `n` is known.
    /// `y` is needed only for positive-outcome scaling.
    pub fn read_networks(&self, n: Option<usize>, y: Option<&[bool]>) -> Result<Vec<NetworkMatrix>> {
        if self.networks.is_empty() {
            bail!("no networks (--network or [data] networks)");
        }
        self.networks.iter().map(|s| s.build(n, y)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkFormat {
    /// `i j [weight]` per line.
    #[default]
    Edges,
    /// Dense matrix, one row per line.
    Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    #[default]
    Cohesion,
    StructuralEquivalence,
    /// Use the matrix as given.
    Raw,
}

fn default_scaling() -> RowScaling {
    RowScaling::RowSum
}

/// One network input. On the command line: `PATH[,key=value...]`, e.g.
/// `w.txt,kind=structural-equivalence` or `w.csv,format=matrix,kind=raw,normalize=none`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: NetworkFormat,
    #[serde(default)]
    pub kind: Construction,
    #[serde(default = "default_scaling")]
    pub normalize: RowScaling,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub one_based: bool,
}

impl NetworkSpec {
    pub fn new(path: PathBuf) -> Self {
        Self {
            path,
            format: NetworkFormat::Edges,
            kind: Construction::Cohesion,
            normalize: RowScaling::RowSum,
            directed: false,
            one_based: false,
        }
    }

    pub fn build(&self, n: Option<usize>, y: Option<&[bool]>) -> Result<NetworkMatrix> {
        let ctx = || format!("network {}", self.path.display());
        let w = match self.format {
            NetworkFormat::Edges => {
                let g = io::read_edge_list(&self.path, n, self.directed, self.one_based).with_context(ctx)?;
                match self.kind {
                    Construction::Cohesion => {
                        let norm = match self.normalize {
                            RowScaling::None => Normalization::None,
                            RowScaling::RowSum => Normalization::RowSum,
                            RowScaling::PositiveOutcomes => Normalization::PositiveOutcomes(
                                y.context("positive-outcome scaling needs the outcomes y")?,
                            ),
                        };
                        build_cohesion(&g, norm).with_context(ctx)?
                    }
                    Construction::StructuralEquivalence => build_structural_equivalence(&g).with_context(ctx)?,
                    Construction::Raw => NetworkMatrix::new(g.adjacency(), NetworkKind::Raw).with_context(ctx)?,
                }
            }
            NetworkFormat::Matrix => {
                if self.kind == Construction::StructuralEquivalence {
                    bail!("{}: structural equivalence is built from an edge list", self.path.display());
                }
                let m = io::read_matrix(&self.path).with_context(ctx)?;
                let w = NetworkMatrix::new(m, NetworkKind::Raw).with_context(ctx)?;
                match self.normalize {
                    RowScaling::RowSum => w.row_normalized(),
                    RowScaling::None => w,
                    RowScaling::PositiveOutcomes => {
                        bail!("{}: positive-outcome scaling applies to edge lists", self.path.display())
                    }
                }
            }
        };
        if let Some(n) = n.filter(|&n| n != w.n()) {
            bail!("network {} has {} nodes, expected {n}", self.path.display(), w.n());
        }
        Ok(w)
    }
}

impl FromStr for NetworkSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.split(',');
        let path = parts.next().filter(|p| !p.is_empty()).ok_or("empty network path")?;
        let mut spec = NetworkSpec::new(PathBuf::from(path));
        for opt in parts {
            let (key, value) = opt.split_once('=').unwrap_or((opt, "true"));
            let bad = || format!("bad value `{value}` for network option `{key}`");
            match key {
                "format" => spec.format = parse_kebab(value).ok_or_else(bad)?,
                "kind" => spec.kind = parse_kebab(value).ok_or_else(bad)?,
                "normalize" => spec.normalize = parse_kebab(value).ok_or_else(bad)?,
                "directed" => spec.directed = value.parse().map_err(|_| bad())?,
                "one-based" => spec.one_based = value.parse().map_err(|_| bad())?,
                _ => return Err(format!("unknown network option `{key}`")),
            }
        }
        Ok(spec)
    }
}

fn parse_kebab<T: for<'de> Deserialize<'de>>(s: &str) -> Option<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).ok()
}

/// Parses an enum from its kebab-case name (for clap).
pub fn kebab<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    parse_kebab(s).ok_or_else(|| format!("unknown value `{s}`"))
}

/// Random design: `n` nodes, row-normalized Erdos-Renyi networks and standard-normal covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSpec {
    pub n: usize,
    pub networks: usize,
    pub covariates: usize,
    pub edge_prob: f64,
    /// Replace the first covariate by a constant column.
    pub intercept: bool,
    /// Defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            n: 50,
            networks: 2,
            covariates: 2,
            edge_prob: 0.1,
            intercept: false,
            seed: None,
        }
    }
}

impl DesignSpec {
    pub fn build(&self, master_seed: u64) -> Result<Design> {
        if self.n < 2 || self.networks == 0 || self.covariates == 0 {
            bail!("design needs n >= 2, at least one network and one covariate");
        }
        let mut d = Design::random(self.n, self.networks, self.covariates, self.edge_prob, self.seed.unwrap_or(master_seed))?;
        if self.intercept {
            d.x.column_mut(0).fill(1.0);
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub beta: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorPreset {
    #[default]
    Diffuse,
    WeaklyInformative,
    Calibration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Defaults to `calibration` for `validate` and `diffuse` elsewhere.
    pub preset: Option<PriorPreset>,
    pub beta_mean: Option<Vec<f64>>,
    pub beta_variance: Option<f64>,
    pub sigma2_shape: Option<f64>,
    pub sigma2_scale: Option<f64>,
    pub rho_mean: Option<Vec<f64>>,
    pub rho_variance: Option<Vec<f64>>,
    pub proposal_variance: Option<Vec<f64>>,
}

impl PriorConfig {
    pub fn build(&self, m: usize, k: usize, fallback: PriorPreset) -> Result<Priors> {
        let mut p = match self.preset.unwrap_or(fallback) {
            PriorPreset::Diffuse => Priors::diffuse(m, k),
            PriorPreset::WeaklyInformative => Priors::weakly_informative(m, k),
            PriorPreset::Calibration => Priors::calibration(m, k),
        };
        if let Some(v) = &self.beta_mean {
            p.beta_mean = v.clone();
        }
        if let Some(v) = self.beta_variance {
            p.beta_variance = v;
        }
        if let Some(v) = self.sigma2_shape {
            p.sigma2_shape = v;
        }
        if let Some(v) = self.sigma2_scale {
            p.sigma2_scale = v;
        }
        if let Some(v) = &self.rho_mean {
            p.rho_mean = v.clone();
        }
        if let Some(v) = &self.rho_variance {
            p.rho_variance = v.clone();
        }
        if let Some(v) = &self.proposal_variance {
            p.proposal_variance = v.clone();
        }
        p.validate(m, k).context("priors")?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub adapt: bool,
    pub paper_literal_alpha: bool,
}

impl SamplerSettings {
    /// Fills unset fields from `base`.
    pub fn build(&self, base: SamplerConfig, seed: u64) -> Result<SamplerConfig> {
        let c = SamplerConfig {
            iterations: self.iterations.unwrap_or(base.iterations),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            thin: self.thin.unwrap_or(base.thin),
            chains: self.chains.unwrap_or(base.chains),
            seed,
            adapt: self.adapt || base.adapt,
            alpha: if self.paper_literal_alpha { AlphaForm::LikelihoodOnly } else { base.alpha },
            mutation: base.mutation,
        };
        c.validate().context("sampler settings")?;
        Ok(c)
    }

    pub fn fit_defaults(&self, seed: u64) -> Result<SamplerConfig> {
        self.build(SamplerConfig::default(), seed)
    }

    pub fn validation_defaults(&self, seed: u64, mutation: Mutation) -> Result<SamplerConfig> {
        let base = SamplerConfig {
            mutation,
            ..reference_sampler_config()
        };
        self.build(base, seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSettings {
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub mc_samples: Option<usize>,
    pub mc_burn_in: Option<usize>,
    pub sigma2_max: Option<f64>,
    pub objective: Option<EmObjective>,
}

impl EmSettings {
    pub fn build(&self, seed: u64) -> Result<EmConfig> {
        let d = EmConfig::default();
        let c = EmConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            mc_burn_in: self.mc_burn_in.unwrap_or(d.mc_burn_in),
            sigma2_max: self.sigma2_max.unwrap_or(d.sigma2_max),
            objective: self.objective.unwrap_or(d.objective),
            seed,
        };
        c.validate().context("EM settings")?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    pub replications: usize,
    pub alpha: f64,
    /// Deliberately broken sampler, for checking that the harness rejects it.
    pub mutation: Mutation,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            replications: 10,
            alpha: 0.01,
            mutation: Mutation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSettings {
    pub rho1: (f64, f64),
    pub rho2: (f64, f64),
    pub resolution: (usize, usize),
}

impl Default for RegionSettings {
    fn default() -> Self {
        Self {
            rho1: (-1.0, 1.0),
            rho2: (-1.0, 1.0),
            resolution: (50, 50),
        }
    }
}

/// Covariates, outcomes and networks named by `data`.
pub fn load_dataset(data: &DataConfig) -> Result<Dataset> {
    data.check_paths()?;
    let x = data.read_x()?;
    let y = data.read_y()?;
    let networks = data.read_networks(Some(x.nrows()), Some(&y))?;
    Ok(Dataset::new(y, x, networks)?)
}

/// Parses `a,b,c` into numbers.
pub fn number_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

/// Parses `lo,hi`.
pub fn range(s: &str) -> std::result::Result<(f64, f64), String> {
    match number_list::<f64>(s)?.as_slice() {
        [lo, hi] if lo < hi => Ok((*lo, *hi)),
        _ => Err(format!("`{s}` is not an increasing pair lo,hi")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_spec_options() {
        let s: NetworkSpec = "w.txt,kind=structural-equivalence,one-based".parse().unwrap();
        assert_eq!(s.kind, Construction::StructuralEquivalence);
        assert!(s.one_based);
        assert_eq!(s.normalize, RowScaling::RowSum);
        assert!("w.txt,colour=red".parse::<NetworkSpec>().is_err());
        assert!("w.txt,kind=nope".parse::<NetworkSpec>().is_err());
    }

    #[test]
    fn unknown_config_fields_are_named() {
        let err = toml::from_str::<RunConfig>("[sampler]\niters = 5\n").unwrap_err().to_string();
        assert!(err.contains("iters"), "{err}");
    }

    #[test]
    fn example_config_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let c: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(c.sampler.chains, Some(2));
        assert_eq!(c.data.networks[1].format, NetworkFormat::Matrix);
    }
}
