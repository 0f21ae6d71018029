//! `disagg` command line: simulate aggregated datasets, fit the conjugate or
//! latent samplers, draw posterior predictives, and export plot-ready
//! summaries.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disagg::conjugate::{self, ConjugateChainConfig};
use disagg::diagnostics::compute_diagnostics;
use disagg::engine::{
    posterior_predictive, run_latent_gibbs, AdaptMode, ChainOutput, DeltaSpec, LatentInit,
    SamplerConfig, TauInit,
};
use disagg::error::Error;
use disagg::latent::LikelihoodKind;
use disagg::model::{NormalGammaPrior, NormalParams, RngStream};
use disagg::simdata::{naive_estimate, naive_estimate_raw, simulate_lognormal, BucketSizes, SimConfig};

#[derive(Parser)]
#[command(name = "disagg", version, about = "Bayesian inference from aggregated (bucket-sum) measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a log-normal population grouped into buckets.
    Simulate(SimulateArgs),
    /// Fit the exact conjugate Gibbs sampler (normal likelihood on bucket averages).
    FitConjugate(FitArgs),
    /// Fit the latent-variable sampler with the sum-preserving Dirichlet kernel.
    FitLatent(FitArgs),
    /// Sample the posterior predictive distribution from a draws file.
    Predict(PredictArgs),
    /// Summaries, diagnostics, histograms and traces from a draws file.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of buckets.
    #[arg(long)]
    k: usize,
    /// Individuals per bucket.
    #[arg(long)]
    n: u32,
    /// Population mean on the gram scale (the log-scale mean is its log).
    #[arg(long = "mu-grams")]
    mu_grams: f64,
    /// Log-scale standard deviation.
    #[arg(long = "sigma-log")]
    sigma_log: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV with header bucket_id,n,y.
    #[arg(long)]
    data: PathBuf,
    /// JSON run configuration (a previous manifest is also accepted).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    /// Overrides applied on top of the config file.
    #[arg(long)]
    chains: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long = "burn-in")]
    burn_in: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_parser = parse_adapt)]
    adapt: Option<AdaptMode>,
    #[arg(long, value_parser = parse_likelihood)]
    likelihood: Option<LikelihoodKind>,
    /// Propose all buckets at once with a single accept/reject.
    #[arg(long = "joint-proposal")]
    joint_proposal: bool,
    /// Latent coordinates to trace, as bucket:index pairs.
    #[arg(long = "track", value_parser = parse_coord)]
    track: Vec<(usize, usize)>,
}

#[derive(Args)]
struct PredictArgs {
    /// Draws CSV produced by a fit command.
    #[arg(long)]
    draws: PathBuf,
    /// Number of predictive draws.
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_likelihood, default_value = "lognormal")]
    likelihood: LikelihoodKind,
    #[arg(long, default_value = "predictive.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

fn parse_likelihood(s: &str) -> Result<LikelihoodKind, String> {
    match s {
        "lognormal" => Ok(LikelihoodKind::LogNormal),
        "normal" => Ok(LikelihoodKind::Normal),
        _ => Err(format!("unknown likelihood {s:?} (expected lognormal or normal)")),
    }
}

fn parse_adapt(s: &str) -> Result<AdaptMode, String> {
    match s {
        "off" => Ok(AdaptMode::Off),
        "burnin" | "burn-in" => Ok(AdaptMode::BurnIn),
        _ => Err(format!("unknown adapt mode {s:?} (expected off or burnin)")),
    }
}

fn parse_coord(s: &str) -> Result<(usize, usize), String> {
    let (b, j) = s.split_once(':').ok_or_else(|| format!("expected bucket:index, got {s:?}"))?;
    Ok((
        b.parse().map_err(|e| format!("bad bucket in {s:?}: {e}"))?,
        j.parse().map_err(|e| format!("bad index in {s:?}: {e}"))?,
    ))
}

fn default_config() -> SamplerConfig {
    SamplerConfig {
        n_iter: 10_000,
        burn_in: 1_000,
        thin: 1,
        n_chains: 1,
        seed: 0,
        delta: DeltaSpec::Scalar(1.0),
        adapt: AdaptMode::Off,
        adapt_target: 0.23,
        init: LatentInit::EqualSplit,
        tau_init: TauInit::AggregatedEstimate,
        likelihood: LikelihoodKind::LogNormal,
        prior: NormalGammaPrior::vague(),
        track_latent: vec![],
        joint_proposal: false,
    }
}

fn resolve_config(args: &FitArgs) -> Result<SamplerConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => io::read_config(path)?,
        None => default_config(),
    };
    if let Some(v) = args.chains {
        cfg.n_chains = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.iters {
        cfg.n_iter = v;
    }
    if let Some(v) = args.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = args.thin {
        cfg.thin = v;
    }
    if let Some(v) = args.delta {
        cfg.delta = DeltaSpec::Scalar(v);
    }
    if let Some(v) = args.adapt {
        cfg.adapt = v;
    }
    if let Some(v) = args.likelihood {
        cfg.likelihood = v;
    }
    if args.joint_proposal {
        cfg.joint_proposal = true;
    }
    if !args.track.is_empty() {
        cfg.track_latent = args.track.clone();
    }
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let cfg = SimConfig {
        k: args.k,
        n: BucketSizes::Uniform(args.n),
        mu: args.mu_grams.ln(),
        sigma: args.sigma_log,
        seed: args.seed,
    };
    if !(args.mu_grams > 0.0) {
        return Err(Error::Config("--mu-grams must be positive".into()));
    }
    let (truth, data) = simulate_lognormal(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", args.out_dir.display())))?;
    io::write_dataset(&args.out_dir.join("buckets.csv"), &data)?;
    io::write_individuals(&args.out_dir.join("individuals.csv"), &truth, &data)?;
    eprintln!(
        "wrote {} buckets ({} individuals) to {}",
        data.k(),
        data.total_n(),
        args.out_dir.display()
    );
    Ok(())
}

fn finish_fit(
    args: &FitArgs,
    cfg: &SamplerConfig,
    command: &str,
    chains: Vec<ChainOutput>,
) -> Result<(), Error> {
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", args.out_dir.display())))?;
    io::write_draws(&args.out_dir.join("draws.csv"), &chains, cfg.burn_in, cfg.thin)?;
    let manifest = io::RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        dataset_digest: io::file_digest(&args.data)?,
        config: cfg.clone(),
        chain_streams: chains.iter().map(|c| c.stream).collect(),
        chain_seconds: chains.iter().map(|c| c.duration.as_secs_f64()).collect(),
    };
    io::write_manifest(&args.out_dir.join("manifest.json"), &manifest)?;
    let report = compute_diagnostics(&chains)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("diagnostics serialization: {e}")))?;
    std::fs::write(args.out_dir.join("diagnostics.json"), json)
        .map_err(|e| Error::Data(format!("{}: {e}", args.out_dir.display())))?;
    for p in &report.params {
        eprintln!(
            "{:>10}: mean {:.6} sd {:.6} [{:.6}, {:.6}] ess {:.0} rhat {:.3}",
            p.name, p.mean, p.sd, p.q025, p.q975, p.ess, p.r_hat
        );
    }
    Ok(())
}

fn cmd_fit_latent(args: &FitArgs) -> Result<(), Error> {
    let data = io::read_dataset(&args.data)?;
    let cfg = resolve_config(args)?;
    let chains = run_latent_gibbs(&data, &cfg)?;
    finish_fit(args, &cfg, "fit-latent", chains)
}

fn cmd_fit_conjugate(args: &FitArgs) -> Result<(), Error> {
    let data = io::read_dataset(&args.data)?;
    let cfg = resolve_config(args)?;
    let (init_mu, init_tau) = conjugate::default_init(&data);
    let mut chains = Vec::new();
    for chain in 0..cfg.n_chains {
        let ccfg = ConjugateChainConfig {
            n_iter: cfg.n_iter,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            init_mu,
            init_tau,
            rng: RngStream::new(cfg.seed, chain),
        };
        chains.push(conjugate::run_conjugate_gibbs(&data, &cfg.prior, &ccfg)?);
    }
    // The naive contrast the conjugate model is usually compared against.
    if data.k() >= 2 {
        if let (Ok((lm, ls)), Ok((rm, rs))) = (naive_estimate(&data), naive_estimate_raw(&data)) {
            eprintln!("naive bucket-average estimate: log-scale ({lm:.6}, {ls:.6}), raw ({rm:.6}, {rs:.6})");
        }
    }
    finish_fit(args, &cfg, "fit-conjugate", chains)
}

fn cmd_predict(args: &PredictArgs) -> Result<(), Error> {
    let chains = io::read_draws(&args.draws)?;
    let theta: Vec<NormalParams> = chains
        .iter()
        .flat_map(|c| c.mu.iter().zip(&c.tau).map(|(&mu, &tau)| NormalParams { mu, tau }))
        .collect();
    let mut rng = RngStream::new(args.seed, 0);
    let draws = posterior_predictive(&theta, args.likelihood, args.m, &mut rng)?;
    io::write_predictive(&args.out, &draws)?;
    eprintln!("wrote {} predictive draws to {}", draws.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Error> {
    let chains = io::read_draws(&args.draws)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", args.out_dir.display())))?;
    let report = compute_diagnostics(&chains)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("summary serialization: {e}")))?;
    std::fs::write(args.out_dir.join("summary.json"), &json)
        .map_err(|e| Error::Data(format!("{}: {e}", args.out_dir.display())))?;

    type Extract = (String, Box<dyn Fn(&ChainOutput) -> Vec<f64>>);
    let mut params: Vec<Extract> = vec![
        ("mu".into(), Box::new(|c: &ChainOutput| c.mu.clone())),
        ("tau".into(), Box::new(|c: &ChainOutput| c.tau.clone())),
        ("sigma".into(), Box::new(|c: &ChainOutput| c.sigma())),
    ];
    for (t, tc) in chains[0].traced.iter().enumerate() {
        let name = format!("x_{}_{}", tc.bucket, tc.index);
        params.push((name, Box::new(move |c: &ChainOutput| c.traced[t].values.clone())));
    }
    for (name, extract) in &params {
        let pooled: Vec<f64> = chains.iter().flat_map(|c| extract(c)).collect();
        io::write_histogram(&args.out_dir.join(format!("histogram_{name}.csv")), &pooled, args.bins)?;
        io::write_trace(&args.out_dir.join(format!("trace_{name}.csv")), &chains, extract)?;
    }
    eprintln!("wrote summary.json and {} histogram/trace pairs to {}", params.len(), args.out_dir.display());
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Domain(_) => 2,
        Error::Numerical { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version output are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::FitConjugate(args) => cmd_fit_conjugate(args),
        Command::FitLatent(args) => cmd_fit_latent(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
