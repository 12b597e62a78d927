//! `mnap`: simulate, fit and validate multiple-network auto-probit models.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 calibration verdict FAIL.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mnap::em::EmObjective;
use mnap::mcmc::Mutation;

use config::{kebab, number_list, range, NetworkSpec, PriorPreset, RunConfig};

/// Comma-separated numbers as one flag value.
#[derive(Debug, Clone)]
struct Numbers(Vec<f64>);

fn numbers(s: &str) -> Result<Numbers, String> {
    number_list(s).map(Numbers)
}

#[derive(Debug, Parser)]
#[command(name = "mnap", version, about = "Multiple-network auto-probit models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw outcomes from the model on a given or random design.
    Simulate(SimulateArgs),
    /// Estimate the model by MCMC, Monte-Carlo EM or QAD logistic regression.
    Fit(FitArgs),
    /// Posterior-quantile calibration of the sampler.
    Validate(ValidateArgs),
    /// Map where I - rho1 W1 - rho2 W2 is invertible.
    RegionScan(RegionArgs),
    /// Summaries and trace files from saved chain draws.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Covariate CSV with a header row.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Outcomes, one 0/1 per line.
    #[arg(long)]
    y: Option<PathBuf>,
    /// Network file, repeatable: PATH[,format=edges|matrix][,kind=cohesion|structural-equivalence|raw]
    /// [,normalize=row-sum|none|positive-outcomes][,directed][,one-based]
    #[arg(long = "network")]
    networks: Vec<NetworkSpec>,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Nodes of the random design.
    #[arg(long)]
    n: Option<usize>,
    /// Networks of the random design.
    #[arg(long = "networks")]
    network_count: Option<usize>,
    /// Covariates of the random design.
    #[arg(long)]
    covariates: Option<usize>,
    #[arg(long)]
    edge_prob: Option<f64>,
    /// Make the first covariate a constant.
    #[arg(long)]
    intercept: bool,
    /// Seed of the random design (default: the master seed).
    #[arg(long)]
    design_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PriorArgs {
    #[arg(long, value_parser = kebab::<PriorPreset>)]
    priors: Option<PriorPreset>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Sweeps per chain, burn-in included.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Tune the rho proposal scale during burn-in.
    #[arg(long)]
    adapt_mh: bool,
    /// Metropolis ratio for rho without the prior term.
    #[arg(long)]
    paper_literal_alpha: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    priors: PriorArgs,
    /// Comma-separated coefficients (default: drawn from the priors).
    #[arg(long, value_parser = numbers, allow_hyphen_values = true)]
    beta: Option<Numbers>,
    /// Comma-separated autocorrelations, one per network.
    #[arg(long, value_parser = numbers, allow_hyphen_values = true)]
    rho: Option<Numbers>,
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Mcmc,
    Em,
    Qad,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory of `simulate`; its design and outcomes are fitted.
    #[arg(long = "data")]
    sim_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mcmc")]
    method: Method,
    #[command(flatten)]
    priors: PriorArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_parser = kebab::<EmObjective>)]
    em_objective: Option<EmObjective>,
    #[arg(long)]
    em_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    priors: PriorArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Significance level of the uniformity tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// Run a deliberately broken sampler (harness self-test).
    #[arg(long, value_parser = kebab::<Mutation>)]
    mutation: Option<Mutation>,
}

#[derive(Debug, Args)]
struct RegionArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    design: DesignArgs,
    /// Range lo,hi of rho1.
    #[arg(long, value_parser = range, allow_hyphen_values = true)]
    rho1: Option<(f64, f64)>,
    /// Range lo,hi of rho2.
    #[arg(long, value_parser = range, allow_hyphen_values = true)]
    rho2: Option<(f64, f64)>,
    /// Grid points per axis.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Chain draw files; the chains are numbered in this order.
    draws: Vec<PathBuf>,
    /// Directory holding `draws_chain*.csv` (e.g. a `fit` output).
    #[arg(long)]
    input: Option<PathBuf>,
}

impl CommonArgs {
    fn apply(&self, c: &mut RunConfig) -> anyhow::Result<()> {
        if let Some(path) = &self.config {
            *c = RunConfig::load(path)?;
        }
        set(&mut c.seed, self.seed);
        set(&mut c.out, self.out.clone());
        set(&mut c.jobs, self.jobs);
        Ok(())
    }
}

impl DataArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.data.x, self.x.clone());
        set(&mut c.data.y, self.y.clone());
        if !self.networks.is_empty() {
            c.data.networks = self.networks.clone();
        }
    }
}

impl DesignArgs {
    fn apply(&self, c: &mut RunConfig) {
        let d = &mut c.design;
        d.n = self.n.unwrap_or(d.n);
        d.networks = self.network_count.unwrap_or(d.networks);
        d.covariates = self.covariates.unwrap_or(d.covariates);
        d.edge_prob = self.edge_prob.unwrap_or(d.edge_prob);
        d.intercept |= self.intercept;
        set(&mut d.seed, self.design_seed);
    }
}

impl PriorArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.priors.preset, self.priors);
    }
}

impl SamplerArgs {
    fn apply(&self, c: &mut RunConfig) {
        let s = &mut c.sampler;
        set(&mut s.iterations, self.iters);
        set(&mut s.burn_in, self.burnin);
        set(&mut s.thin, self.thin);
        set(&mut s.chains, self.chains);
        s.adapt |= self.adapt_mh;
        s.paper_literal_alpha |= self.paper_literal_alpha;
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Resolves the configuration of a subcommand: file first, then flags.
fn resolve(command: &Command) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig::default();
    match command {
        Command::Simulate(a) => {
            a.common.apply(&mut c)?;
            a.data.apply(&mut c);
            a.design.apply(&mut c);
            a.priors.apply(&mut c);
            set(&mut c.params.beta, a.beta.clone().map(|v| v.0));
            set(&mut c.params.rho, a.rho.clone().map(|v| v.0));
            set(&mut c.params.sigma2, a.sigma2);
        }
        Command::Fit(a) => {
            a.common.apply(&mut c)?;
            a.data.apply(&mut c);
            a.priors.apply(&mut c);
            a.sampler.apply(&mut c);
            set(&mut c.em.objective, a.em_objective);
            set(&mut c.em.max_iterations, a.em_iters);
        }
        Command::Validate(a) => {
            a.common.apply(&mut c)?;
            a.design.apply(&mut c);
            a.priors.apply(&mut c);
            a.sampler.apply(&mut c);
            c.validate.replications = a.replications.unwrap_or(c.validate.replications);
            c.validate.alpha = a.alpha.unwrap_or(c.validate.alpha);
            c.validate.mutation = a.mutation.unwrap_or(c.validate.mutation);
        }
        Command::RegionScan(a) => {
            a.common.apply(&mut c)?;
            a.data.apply(&mut c);
            a.design.apply(&mut c);
            c.region.rho1 = a.rho1.unwrap_or(c.region.rho1);
            c.region.rho2 = a.rho2.unwrap_or(c.region.rho2);
            if let Some(r) = a.resolution {
                c.region.resolution = (r, r);
            }
        }
        Command::Summarize(a) => a.common.apply(&mut c)?,
    }
    Ok(c)
}

fn run(cli: Cli) -> anyhow::Result<commands::Status> {
    let config = resolve(&cli.command)?;
    if let Some(jobs) = config.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    match cli.command {
        Command::Simulate(_) => commands::simulate(&config),
        Command::Fit(a) => commands::fit(&config, a.sim_dir.as_deref(), a.method),
        Command::Validate(_) => commands::validate(&config),
        Command::RegionScan(_) => commands::region_scan(&config),
        Command::Summarize(a) => commands::summarize(&config, &a.draws, a.input.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<mnap::Error>().is_some_and(mnap::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::ValidationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
