//! Subcommand bodies. Each writes its files plus a `run.json` reproducibility record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mnap::diagnostics::{summarize as summarize_store, trace, ParameterSummary};
use mnap::em::{em_start, run_em};
use mnap::io;
use mnap::mcmc::run_chain;
use mnap::model::fit_qad;
use mnap::netmat::{scan_validity_region, RegionBounds};
use mnap::rng::{stream, Purpose};
use mnap::validate::{run_calibration, CalibrationConfig, McmcSampler, Verdict};
use mnap::{build_b, simulate as simulate_model, Dataset, DrawsStore, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{load_dataset, DataConfig, DesignSpec, NetworkSpec, PriorPreset, RunConfig};
use crate::Method;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub enum Status {
    Done,
    ValidationFailed,
}

/// Where a simulated design came from; enough to rebuild it exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DesignSource {
    Random { spec: DesignSpec },
    Files { x: PathBuf, networks: Vec<NetworkSpec> },
}

/// Contents of `params.json` written by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub version: String,
    pub seed: u64,
    pub params: ModelParams,
    pub design: DesignSource,
    pub config: RunConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_text(path, &text).with_context(|| format!("writing {}", path.display()))
}

fn write_run_record(out: &Path, command: &str, seed: Option<u64>, config: &RunConfig, resolved: serde_json::Value) -> Result<()> {
    let record = json!({
        "command": command,
        "version": VERSION,
        "seed": seed,
        "config": config,
        "resolved": resolved,
    });
    write_json(&out.join("run.json"), &record)
}

fn prepare_out(config: &RunConfig) -> Result<PathBuf> {
    let out = config.out_dir()?.to_path_buf();
    io::ensure_dir(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

pub fn simulate(config: &RunConfig) -> Result<Status> {
    let seed = config.require_seed("simulate")?;
    let (x, networks, design) = if config.data.has_design_files() {
        config.data.check_paths()?;
        let x = config.data.read_x()?;
        let networks = config
            .data
            .read_networks(Some(x.nrows()), None)
            .context("simulated outcomes cannot drive positive-outcome scaling")?;
        let absolute = |p: &Path| std::path::absolute(p).with_context(|| p.display().to_string());
        let specs = config
            .data
            .networks
            .iter()
            .map(|s| Ok(NetworkSpec { path: absolute(&s.path)?, ..s.clone() }))
            .collect::<Result<Vec<_>>>()?;
        let x_path = absolute(config.data.x.as_deref().expect("checked by read_x"))?;
        (x, networks, DesignSource::Files { x: x_path, networks: specs })
    } else {
        let spec = DesignSpec {
            seed: Some(config.design.seed.unwrap_or(seed)),
            ..config.design.clone()
        };
        let d = spec.build(seed)?;
        (d.x, d.networks, DesignSource::Random { spec })
    };
    let (m, k) = (x.ncols(), networks.len());

    let p = &config.params;
    let drawn = if p.beta.is_none() || p.rho.is_none() || p.sigma2.is_none() {
        let priors = config.priors.build(m, k, PriorPreset::WeaklyInformative)?;
        Some(priors.draw_params(&networks, &mut stream(seed, Purpose::Simulate, 1))?)
    } else {
        None
    };
    let pick = |given: &Option<Vec<f64>>, f: fn(&ModelParams) -> Vec<f64>| {
        given.clone().unwrap_or_else(|| f(drawn.as_ref().expect("drawn when missing")))
    };
    let beta = pick(&p.beta, |d| d.beta.clone());
    let rho = pick(&p.rho, |d| d.rho.clone());
    let sigma2 = p.sigma2.unwrap_or_else(|| drawn.as_ref().expect("drawn when missing").sigma2);
    ensure!(beta.len() == m, "beta has {} entries but the design has {m} covariates", beta.len());
    ensure!(rho.len() == k, "rho has {} entries but there are {k} networks", rho.len());
    let params = ModelParams::new(beta, rho, sigma2)?;

    let inside = match build_b(&params.rho, &networks) {
        Ok(b) => b.is_principal(),
        Err(mnap::Error::SingularB { .. }) => false,
        Err(e) => return Err(e.into()),
    };
    if !inside {
        bail!(
            "rho = {:?} is outside the region where det(I - sum rho_i W_i) > 0; run `mnap region-scan` to map the valid region",
            params.rho
        );
    }

    let (data, latent) = simulate_model(&params, &x, &networks, &mut stream(seed, Purpose::Simulate, 0))?;
    let out = prepare_out(config)?;
    io::write_outcomes(&out.join("y.txt"), &data.y)?;
    io::write_columns(
        &out.join("latent.csv"),
        &["z", "theta"],
        &[latent.z.as_slice(), latent.theta.as_slice()],
    )?;
    let record = SimulationRecord {
        version: VERSION.into(),
        seed,
        params,
        design,
        // Where the files land and how many threads ran does not change them.
        config: RunConfig {
            out: None,
            jobs: None,
            ..config.clone()
        },
    };
    write_json(&out.join("params.json"), &record)?;
    println!(
        "simulated {} nodes, {} positive outcomes -> {}",
        data.n(),
        data.positive_count(),
        out.display()
    );
    Ok(Status::Done)
}

/// Rebuilds the dataset of a `simulate` output directory.
pub fn load_simulation(dir: &Path) -> Result<Dataset> {
    let path = dir.join("params.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let record: SimulationRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let y = io::read_outcomes(&dir.join("y.txt"))?;
    let (x, networks) = match &record.design {
        DesignSource::Random { spec } => {
            let d = spec.build(record.seed)?;
            (d.x, d.networks)
        }
        DesignSource::Files { x, networks } => {
            let files = DataConfig {
                x: Some(x.clone()),
                y: None,
                networks: networks.clone(),
            };
            files.check_paths()?;
            let x = files.read_x()?;
            let networks = files.read_networks(Some(x.nrows()), Some(&y))?;
            (x, networks)
        }
    };
    Ok(Dataset::new(y, x, networks)?)
}

pub fn fit(config: &RunConfig, sim_dir: Option<&Path>, method: Method) -> Result<Status> {
    let seed = config.seed.unwrap_or(0);
    let data = match sim_dir {
        Some(dir) => {
            ensure!(
                config.data.x.is_none() && config.data.y.is_none() && config.data.networks.is_empty(),
                "give either --data or --x/--y/--network, not both"
            );
            load_simulation(dir)?
        }
        None => load_dataset(&config.data)?,
    };
    match method {
        Method::Mcmc => fit_mcmc(config, &data, seed),
        Method::Em => fit_em(config, &data, seed),
        Method::Qad => fit_qad_all(config, &data, seed),
    }
}

fn fit_mcmc(config: &RunConfig, data: &Dataset, seed: u64) -> Result<Status> {
    let priors = config.priors.build(data.m(), data.k(), PriorPreset::Diffuse)?;
    let sampler = config.sampler.fit_defaults(seed)?;
    let store = run_chain(data, &priors, &sampler)?;
    let out = prepare_out(config)?;
    for chain in &store.chains {
        io::write_chain_draws(&out.join(format!("draws_chain{}.csv", chain.chain)), &store.parameter_names, chain)?;
    }

    let rho_names = &store.parameter_names[data.m()..data.m() + data.k()];
    let mut acceptance = String::from("chain,parameter,acceptance_rate,proposal_sd\n");
    let mut loglike = String::from("chain,iteration,loglike\n");
    for chain in &store.chains {
        for (i, name) in rho_names.iter().enumerate() {
            let rate = chain.acceptance_rates.get(i).copied().unwrap_or(f64::NAN);
            let sd = chain.proposal_sd.get(i).copied().unwrap_or(f64::NAN);
            writeln!(acceptance, "{},{name},{rate:?},{sd:?}", chain.chain)?;
        }
        for (t, l) in chain.iterations.iter().zip(&chain.loglike) {
            writeln!(loglike, "{},{t},{l:?}", chain.chain)?;
        }
    }
    io::write_text(&out.join("acceptance.csv"), &acceptance)?;
    io::write_text(&out.join("loglike.csv"), &loglike)?;

    let summary = write_summary(&out, &store)?;
    print!("{}", summary_table(&summary));
    write_run_record(&out, "fit", Some(seed), config, json!({ "method": "mcmc", "priors": priors, "sampler": sampler }))?;
    Ok(Status::Done)
}

fn fit_em(config: &RunConfig, data: &Dataset, seed: u64) -> Result<Status> {
    let em = config.em.build(seed)?;
    let init = em_start(data, &mut stream(seed, Purpose::Em, 1))?;
    let state = run_em(data, &init, &em)?;
    let out = prepare_out(config)?;

    let mut csv = String::from("iteration,sigma2,objective_before,objective_after,objective_se\n");
    let cell = |v: &[f64], t: usize| v.get(t).map_or(String::new(), |x| format!("{x:?}"));
    let rows = state.sigma2_trajectory.len().max(state.objective_before.len());
    for t in 0..rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            t + 1,
            cell(&state.sigma2_trajectory, t),
            cell(&state.objective_before, t),
            cell(&state.objective_after, t),
            cell(&state.objective_se, t)
        )?;
    }
    io::write_text(&out.join("sigma2_trajectory.csv"), &csv)?;
    let report = state.report();
    io::write_text(&out.join("em_report.txt"), &report)?;
    write_json(
        &out.join("em.json"),
        &json!({
            "params": state.params,
            "start": init,
            "iterations": state.iterations,
            "converged": state.converged,
            "degenerate": state.is_degenerate(),
            "curvature": state.curvature,
        }),
    )?;
    print!("{report}");
    write_run_record(&out, "fit", Some(seed), config, json!({ "method": "em", "em": em }))?;
    Ok(Status::Done)
}

fn fit_qad_all(config: &RunConfig, data: &Dataset, seed: u64) -> Result<Status> {
    let fits = (0..data.k())
        .map(|i| fit_qad(data, i).with_context(|| format!("QAD fit on network {}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let out = prepare_out(config)?;
    let records: Vec<_> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| json!({ "network": i + 1, "fit": f }))
        .collect();
    write_json(&out.join("qad.json"), &records)?;
    for (i, f) in fits.iter().enumerate() {
        println!(
            "network {}: beta = {:?}, rho = {:?} (se {:?}), log-likelihood {:.3}",
            i + 1,
            f.beta,
            f.rho,
            f.rho_std_error,
            f.log_likelihood
        );
    }
    write_run_record(&out, "fit", Some(seed), config, json!({ "method": "qad" }))?;
    Ok(Status::Done)
}

pub fn validate(config: &RunConfig) -> Result<Status> {
    let seed = config.require_seed("validate")?;
    let design = config.design.build(seed)?;
    let priors = config
        .priors
        .build(design.x.ncols(), design.networks.len(), PriorPreset::Calibration)?;
    let sampler = McmcSampler {
        config: config.sampler.validation_defaults(seed, config.validate.mutation)?,
    };
    let calibration = CalibrationConfig {
        replications: config.validate.replications,
        seed,
        alpha: config.validate.alpha,
    };
    let report = run_calibration(&priors, &design, &sampler, &calibration)?;
    let out = prepare_out(config)?;

    let mut sorted = report.pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    let mut table = String::from("rank,uniform,quantile\n");
    for (i, q) in sorted.iter().enumerate() {
        writeln!(table, "{},{:?},{q:?}", i + 1, (i as f64 + 0.5) / total)?;
    }
    io::write_text(&out.join("quantiles.csv"), &table)?;

    let mut per = format!("replication,{}\n", report.quantities.join(","));
    for r in &report.replications {
        let cells: Vec<String> = r.quantiles.iter().map(|q| format!("{q:?}")).collect();
        writeln!(per, "{},{}", r.index, cells.join(","))?;
    }
    io::write_text(&out.join("quantiles_by_parameter.csv"), &per)?;
    write_json(&out.join("verdict.json"), &report)?;

    let verdict = match report.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
    };
    println!(
        "verdict: {verdict} ({} replications, pooled KS p = {:.3e})",
        report.replications.len(),
        report.pooled_test.p_value
    );
    for q in &report.per_quantity {
        println!("  {:<8} p = {:.3e}", q.name, q.test.p_value);
    }
    for (r, reason) in &report.failures {
        println!("  replication {r} failed: {reason}");
    }
    if let Some(c) = &report.caveat {
        println!("  note: {c}");
    }
    write_run_record(&out, "validate", Some(seed), config, json!({ "priors": priors, "sampler": sampler.config }))?;
    Ok(match report.verdict {
        Verdict::Pass => Status::Done,
        Verdict::Fail => Status::ValidationFailed,
    })
}

pub fn region_scan(config: &RunConfig) -> Result<Status> {
    let networks = if config.data.networks.is_empty() {
        let seed = config.seed.unwrap_or(0);
        config.design.build(seed)?.networks
    } else {
        config.data.check_paths()?;
        config.data.read_networks(None, None)?
    };
    ensure!(networks.len() == 2, "region-scan needs exactly two networks, got {}", networks.len());
    let bounds = RegionBounds {
        rho1: config.region.rho1,
        rho2: config.region.rho2,
    };
    let region = scan_validity_region(&networks[0], &networks[1], bounds, config.region.resolution)?;
    let out = prepare_out(config)?;
    let mut csv = String::from("rho1,rho2,invertible\n");
    for (r1, r2, ok) in region.points() {
        writeln!(csv, "{r1:?},{r2:?},{}", u8::from(ok))?;
    }
    io::write_text(&out.join("region.csv"), &csv)?;
    println!(
        "{:.1}% of the {}x{} grid is invertible -> {}",
        100.0 * region.invertible_fraction(),
        config.region.resolution.0,
        config.region.resolution.1,
        out.join("region.csv").display()
    );
    write_run_record(&out, "region-scan", config.seed, config, json!({ "tolerance": region.tolerance }))?;
    Ok(Status::Done)
}

/// `draws_chain<c>.csv` files of `dir`, ordered by chain number.
fn chain_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let c = name.strip_prefix("draws_chain")?.strip_suffix(".csv")?.parse().ok()?;
            Some((c, p))
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn summarize(config: &RunConfig, draws: &[PathBuf], input: Option<&Path>) -> Result<Status> {
    let mut paths = draws.to_vec();
    if let Some(dir) = input {
        paths.extend(chain_files(dir)?);
    }
    ensure!(!paths.is_empty(), "no draw files (give paths or --input DIR)");
    for p in &paths {
        ensure!(p.exists(), "draw file {} does not exist", p.display());
    }
    let out = match (&config.out, input) {
        (Some(o), _) => o.clone(),
        (None, Some(dir)) => dir.to_path_buf(),
        (None, None) => bail!("no output directory (--out or --input)"),
    };
    io::ensure_dir(&out)?;
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let store = io::read_draws(&refs)?;
    let summary = write_summary(&out, &store)?;
    for (p, name) in store.parameter_names.iter().enumerate() {
        let mut csv = String::from("chain,iteration,value\n");
        for (c, t, v) in trace(&store, p) {
            writeln!(csv, "{c},{t},{v:?}")?;
        }
        io::write_text(&out.join(format!("trace_{name}.csv")), &csv)?;
    }
    print!("{}", summary_table(&summary));
    let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let config = RunConfig {
        out: Some(out.clone()),
        ..config.clone()
    };
    write_run_record(&out, "summarize", config.seed, &config, json!({ "draws": files }))?;
    Ok(Status::Done)
}

fn write_summary(out: &Path, store: &DrawsStore) -> Result<Vec<ParameterSummary>> {
    let summary = summarize_store(store)?;
    write_json(&out.join("summary.json"), &summary)?;
    io::write_text(&out.join("summary.txt"), &summary_table(&summary))?;
    Ok(summary)
}

fn summary_table(summary: &[ParameterSummary]) -> String {
    let mut s = format!(
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>7}\n",
        "parameter", "mean", "sd", "2.5%", "50%", "97.5%", "ess", "accept"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for p in summary {
        let _ = writeln!(
            s,
            "{:<10} {:>10.4} {:>10} {:>10.4} {:>10.4} {:>10.4} {:>8} {:>7}{}",
            p.name,
            p.mean,
            opt(p.sd, 4),
            p.q025,
            p.q50,
            p.q975,
            opt(p.ess, 0),
            opt(p.acceptance_rate, 3),
            if p.degenerate { "  (degenerate)" } else { "" }
        );
    }
    s
}
