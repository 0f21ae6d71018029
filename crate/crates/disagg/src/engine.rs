//! Chain orchestration for the latent-variable sampler: alternate (i) one
//! Metropolis-Hastings sweep over the buckets with (ii) a conjugate update of
//! (mu, tau) treating every imputed value as an individual observation
//! (log-transformed under the log-normal likelihood).

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{mu_conditional_from_stats, tau_conditional_from_stats};
use crate::error::{Error, Result};
use crate::latent::{
    log_accept_ratio, mh_update_bucket, propose_bucket, LikelihoodKind, LikelihoodSpec,
    ProposalConfig, MIN_CONCENTRATION,
};
use crate::model::{AggregatedDataset, LatentState, NormalGammaPrior, NormalParams, RngStream};

/// Relative tolerance for the always-on latent sum audit inside a running
/// chain (checked every sweep in debug builds, every 1000 iterations in
/// release builds).
const AUDIT_TOL: f64 = 1e-9;
const AUDIT_STRIDE: u64 = 1000;
const ADAPT_STRIDE: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    #[default]
    Off,
    /// Stochastic-approximation tuning of delta during burn-in only.
    BurnIn,
}

/// Initial delta: one scalar broadcast to every bucket, or one value per
/// bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Scalar(f64),
    PerBucket(Vec<f64>),
}

impl DeltaSpec {
    fn build(&self, k: usize) -> Result<ProposalConfig> {
        match self {
            DeltaSpec::Scalar(d) => ProposalConfig::uniform(*d, k),
            DeltaSpec::PerBucket(v) => {
                if v.len() != k {
                    return Err(Error::Config(format!(
                        "delta list has {} entries for {} buckets",
                        v.len(),
                        k
                    )));
                }
                ProposalConfig::new(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LatentInit {
    #[default]
    EqualSplit,
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TauInit {
    /// Plug-in precision of the (log) bucket means scaled by the mean bucket
    /// size, i.e. the naive-aggregation estimate.
    #[default]
    AggregatedEstimate,
    Value(f64),
}

fn default_adapt_target() -> f64 {
    0.23
}

fn default_n_chains() -> u64 {
    1
}

fn default_thin() -> u64 {
    1
}

fn default_delta() -> DeltaSpec {
    DeltaSpec::Scalar(1.0)
}

fn default_prior() -> NormalGammaPrior {
    NormalGammaPrior::vague()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iter: u64,
    pub burn_in: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default = "default_n_chains")]
    pub n_chains: u64,
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: DeltaSpec,
    #[serde(default)]
    pub adapt: AdaptMode,
    #[serde(default = "default_adapt_target")]
    pub adapt_target: f64,
    #[serde(default)]
    pub init: LatentInit,
    #[serde(default)]
    pub tau_init: TauInit,
    pub likelihood: LikelihoodKind,
    #[serde(default = "default_prior")]
    pub prior: NormalGammaPrior,
    /// (bucket index, within-bucket index) coordinates whose trace is kept.
    #[serde(default)]
    pub track_latent: Vec<(usize, usize)>,
    /// Propose all buckets at once and accept or reject jointly, matching
    /// the all-at-once behavior described alongside the method. Default is
    /// per-bucket accept/reject, which factorizes exactly and mixes better.
    #[serde(default)]
    pub joint_proposal: bool,
}

impl SamplerConfig {
    pub fn validate(&self, data: &AggregatedDataset) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in {} must be < n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.n_chains < 1 {
            return Err(Error::Config("n_chains must be >= 1".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::Config("adapt_target must lie in (0, 1)".into()));
        }
        self.delta.build(data.k())?;
        for &(b, j) in &self.track_latent {
            if b >= data.k() || j >= data.buckets()[b].n as usize {
                return Err(Error::Config(format!(
                    "tracked latent coordinate ({b}, {j}) is out of range"
                )));
            }
        }
        if let TauInit::Value(t) = self.tau_init {
            if !(t > 0.0) {
                return Err(Error::Config("tau_init value must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Trace of one tracked latent coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedCoord {
    pub bucket: usize,
    pub index: usize,
    pub values: Vec<f64>,
}

/// Thinned post-burn-in draws of one chain, plus acceptance statistics and
/// provenance.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain_id: u64,
    pub seed: u64,
    pub stream: u64,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub traced: Vec<TracedCoord>,
    /// Per-bucket acceptance rate over the whole run; empty for the
    /// conjugate sampler, which has no MH step.
    pub acceptance: Vec<f64>,
    pub final_delta: Vec<f64>,
    pub duration: Duration,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.mu.len()
    }

    /// Derived standard deviation tau^(-1/2), for reporting.
    pub fn sigma(&self) -> Vec<f64> {
        self.tau.iter().map(|t| t.sqrt().recip()).collect()
    }
}

/// Per-bucket acceptance counters for one adaptation epoch. Frozen once
/// burn-in ends; calls after that are contract errors (diminishing
/// adaptation requires a fixed kernel post burn-in).
#[derive(Debug, Clone)]
pub struct AdaptationState {
    accepts: Vec<u64>,
    attempts: u64,
    epoch: u64,
    frozen: bool,
}

impl AdaptationState {
    pub fn new(n_buckets: usize) -> Self {
        Self { accepts: vec![0; n_buckets], attempts: 0, epoch: 0, frozen: false }
    }

    pub fn record_sweep(&mut self, accepted: &[bool]) {
        self.attempts += 1;
        for (c, &a) in self.accepts.iter_mut().zip(accepted) {
            if a {
                *c += 1;
            }
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// One stochastic-approximation step on log delta:
/// log delta_i += t^-0.6 * (target - observed_i), clamped to [1e-4, 1e8].
/// An observed rate below target means steps are too large, so delta grows
/// and the proposal variance shrinks.
pub fn adapt_delta(
    state: &mut AdaptationState,
    delta: &ProposalConfig,
    target: f64,
) -> Result<ProposalConfig> {
    if state.frozen {
        return Err(Error::Config(
            "adapt_delta called after burn-in; the kernel is frozen".into(),
        ));
    }
    state.epoch += 1;
    let gamma = (state.epoch as f64).powf(-0.6);
    let attempts = state.attempts.max(1) as f64;
    let mut new = delta.deltas().to_vec();
    for (d, &acc) in new.iter_mut().zip(&state.accepts) {
        let observed = acc as f64 / attempts;
        *d = (d.ln() + gamma * (target - observed)).exp().clamp(1e-4, 1e8);
    }
    state.accepts.iter_mut().for_each(|c| *c = 0);
    state.attempts = 0;
    ProposalConfig::new(new)
}

/// Equal-split initialization x_ij = y_i / n_i.
pub fn init_latent(data: &AggregatedDataset) -> Result<LatentState> {
    data.require_positive()?;
    let values = data
        .buckets()
        .iter()
        .map(|b| vec![b.y / f64::from(b.n); b.n as usize])
        .collect();
    Ok(LatentState::from_raw(values))
}

/// Naive-aggregation plug-in for the initial precision: the sample precision
/// of the (log) bucket means times the mean bucket size.
pub fn aggregated_tau_estimate(data: &AggregatedDataset, kind: LikelihoodKind) -> f64 {
    let k = data.k();
    if k < 2 {
        return 1.0;
    }
    let means: Vec<f64> = data
        .buckets()
        .iter()
        .map(|b| match kind {
            LikelihoodKind::LogNormal => b.mean().ln(),
            LikelihoodKind::Normal => b.mean(),
        })
        .collect();
    let m = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k as f64 - 1.0);
    let mean_n = data.total_n() as f64 / k as f64;
    if var > 0.0 {
        mean_n / var
    } else {
        1.0
    }
}

fn transform(kind: LikelihoodKind, x: f64) -> f64 {
    match kind {
        LikelihoodKind::LogNormal => x.ln(),
        LikelihoodKind::Normal => x,
    }
}

fn audit_sums(state: &LatentState, data: &AggregatedDataset, iteration: u64) -> Result<()> {
    for (xs, b) in state.buckets().iter().zip(data.buckets()) {
        let s: f64 = xs.iter().sum();
        if (s - b.y).abs() > AUDIT_TOL * b.y.abs().max(1.0) {
            return Err(Error::Numerical {
                iteration,
                bucket: b.id,
                message: format!("latent sum drifted to {s}, observed {}", b.y),
            });
        }
    }
    Ok(())
}

/// Wall-clock timer that degrades to a zero reading on targets without a
/// monotonic clock (wasm), where `Instant::now` would panic.
pub(crate) struct Timer {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Timer {
    pub(crate) fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn elapsed(&self) -> std::time::Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed();
        #[cfg(target_arch = "wasm32")]
        std::time::Duration::ZERO
    }
}

fn run_chain(
    data: &AggregatedDataset,
    cfg: &SamplerConfig,
    chain_id: u64,
) -> Result<ChainOutput> {
    let start = Timer::start();
    let mut rng = RngStream::new(cfg.seed, chain_id);
    let k = data.k();
    let n_total = data.total_n() as f64;

    let mut state = match &cfg.init {
        LatentInit::EqualSplit => init_latent(data)?,
        LatentInit::Given(values) => LatentState::new(values.clone(), data, true)?,
    };

    let tau0 = match cfg.tau_init {
        TauInit::AggregatedEstimate => aggregated_tau_estimate(data, cfg.likelihood),
        TauInit::Value(t) => t,
    };
    let mu0: f64 = state
        .buckets()
        .iter()
        .flatten()
        .map(|&x| transform(cfg.likelihood, x))
        .sum::<f64>()
        / n_total;
    let mut theta = NormalParams::new(mu0, tau0)?;

    let mut deltas = cfg.delta.build(k)?;
    let mut adapt_state = AdaptationState::new(k);
    let mut accept_total = vec![0u64; k];
    let mut sweep_accepted = vec![false; k];

    let n_rec = ((cfg.n_iter - cfg.burn_in) / cfg.thin) as usize;
    let mut mu_draws = Vec::with_capacity(n_rec);
    let mut tau_draws = Vec::with_capacity(n_rec);
    let mut traced: Vec<TracedCoord> = cfg
        .track_latent
        .iter()
        .map(|&(bucket, index)| TracedCoord { bucket, index, values: Vec::with_capacity(n_rec) })
        .collect();

    for it in 1..=cfg.n_iter {
        let like = LikelihoodSpec { kind: cfg.likelihood, params: theta };

        // (i) MH sweep over the buckets.
        if cfg.joint_proposal {
            joint_sweep(data, &mut state, &like, &deltas, &mut rng, &mut sweep_accepted, it)?;
        } else {
            for (i, b) in data.buckets().iter().enumerate() {
                let out = mh_update_bucket(
                    state.bucket(i),
                    b.y,
                    &like,
                    deltas.deltas()[i],
                    &mut rng,
                )
                .map_err(|e| locate(e, it, b.id))?;
                sweep_accepted[i] = out.accepted;
                if out.accepted {
                    state.buckets_mut()[i] = out.state;
                }
            }
        }
        for (t, &a) in accept_total.iter_mut().zip(&sweep_accepted) {
            if a {
                *t += 1;
            }
        }

        // (ii) conjugate theta update with every imputed value as one
        // observation (group sizes all 1).
        let mut sum_t = 0.0;
        for xs in state.buckets() {
            for &x in xs {
                sum_t += transform(cfg.likelihood, x);
            }
        }
        let mu = mu_conditional_from_stats(n_total, sum_t, theta.tau, &cfg.prior).sample(&mut rng);
        let mut ssr = 0.0;
        for xs in state.buckets() {
            for &x in xs {
                ssr += (transform(cfg.likelihood, x) - mu).powi(2);
            }
        }
        let tau = tau_conditional_from_stats(n_total, ssr, &cfg.prior).sample(&mut rng);
        if !(mu.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(Error::Numerical {
                iteration: it,
                bucket: 0,
                message: format!("theta update produced mu={mu}, tau={tau}"),
            });
        }
        theta = NormalParams { mu, tau };

        // Burn-in delta adaptation.
        if cfg.adapt == AdaptMode::BurnIn && it <= cfg.burn_in {
            adapt_state.record_sweep(&sweep_accepted);
            if it % ADAPT_STRIDE == 0 {
                deltas = adapt_delta(&mut adapt_state, &deltas, cfg.adapt_target)?;
            }
            if it == cfg.burn_in {
                adapt_state.freeze();
            }
        }

        if cfg!(debug_assertions) || it % AUDIT_STRIDE == 0 {
            audit_sums(&state, data, it)?;
        }

        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            mu_draws.push(theta.mu);
            tau_draws.push(theta.tau);
            for tc in &mut traced {
                tc.values.push(state.bucket(tc.bucket)[tc.index]);
            }
        }
    }

    Ok(ChainOutput {
        chain_id,
        seed: cfg.seed,
        stream: chain_id,
        mu: mu_draws,
        tau: tau_draws,
        traced,
        acceptance: accept_total.iter().map(|&a| a as f64 / cfg.n_iter as f64).collect(),
        final_delta: deltas.deltas().to_vec(),
        duration: start.elapsed(),
    })
}

fn locate(e: Error, iteration: u64, bucket: u64) -> Error {
    match e {
        Error::Numerical { message, .. } | Error::Domain(message) => {
            Error::Numerical { iteration, bucket, message }
        }
        other => other,
    }
}

/// All-buckets-at-once proposal with a single accept/reject, kept for
/// comparison runs. Acceptance degrades quickly with the number of latent
/// values, which is why per-bucket updates are the default.
fn joint_sweep<R: Rng + ?Sized>(
    data: &AggregatedDataset,
    state: &mut LatentState,
    like: &LikelihoodSpec,
    deltas: &ProposalConfig,
    rng: &mut R,
    sweep_accepted: &mut [bool],
    iteration: u64,
) -> Result<()> {
    let degenerate = state
        .buckets()
        .iter()
        .zip(deltas.deltas())
        .any(|(xs, &d)| xs.iter().any(|&x| d * x < MIN_CONCENTRATION));
    if degenerate {
        log::warn!("joint proposal rejected deterministically: concentration underflow");
        sweep_accepted.iter_mut().for_each(|a| *a = false);
        return Ok(());
    }

    let mut proposals = Vec::with_capacity(data.k());
    let mut total_log_ratio = 0.0;
    for (i, b) in data.buckets().iter().enumerate() {
        let d = deltas.deltas()[i];
        let prop =
            propose_bucket(state.bucket(i), b.y, d, rng).map_err(|e| locate(e, iteration, b.id))?;
        total_log_ratio += log_accept_ratio(state.bucket(i), &prop, b.y, like, d)
            .map_err(|e| locate(e, iteration, b.id))?;
        proposals.push(prop);
    }
    let u: f64 = rng.sample(rand_distr::Open01);
    let accepted = u.ln() < total_log_ratio;
    if accepted {
        for (dst, src) in state.buckets_mut().iter_mut().zip(proposals) {
            *dst = src;
        }
    }
    sweep_accepted.iter_mut().for_each(|a| *a = accepted);
    Ok(())
}

fn worker_cap() -> usize {
    std::env::var("DISAGG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(usize::MAX)
}

/// Runs `cfg.n_chains` chains; chain c uses stream id c of the base seed.
/// Chains run concurrently, capped by the `DISAGG_THREADS` environment
/// variable; outputs are ordered by chain id regardless of scheduling.
pub fn run_latent_gibbs(
    data: &AggregatedDataset,
    cfg: &SamplerConfig,
) -> Result<Vec<ChainOutput>> {
    cfg.validate(data)?;
    data.require_positive()?;

    let n_chains = cfg.n_chains as usize;
    if n_chains == 1 {
        // Inline path: no worker thread, which also keeps single-chain runs
        // usable on targets without thread support.
        return Ok(vec![run_chain(data, cfg, 0)?]);
    }
    let cap = worker_cap().min(n_chains).max(1);
    let mut outputs: Vec<Option<Result<ChainOutput>>> = Vec::new();
    outputs.resize_with(n_chains, || None);

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (slot_chunk, id_chunk) in outputs
            .chunks_mut(cap.max(1))
            .zip((0..n_chains as u64).collect::<Vec<_>>().chunks(cap.max(1)))
        {
            // Batches of `cap` chains run at a time, one thread per chain.
            for (slot, &chain_id) in slot_chunk.iter_mut().zip(id_chunk) {
                handles.push(scope.spawn(move || {
                    *slot = Some(run_chain(data, cfg, chain_id));
                }));
            }
            for h in handles.drain(..) {
                h.join().expect("chain worker panicked");
            }
        }
    });

    outputs.into_iter().map(|o| o.expect("chain slot filled")).collect()
}

/// Draws `m` posterior predictive individuals: each picks one theta draw
/// uniformly and samples a single observation from g(. | theta).
pub fn posterior_predictive<R: Rng + ?Sized>(
    theta_draws: &[NormalParams],
    kind: LikelihoodKind,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if theta_draws.is_empty() {
        return Err(Error::Domain("posterior predictive needs at least one theta draw".into()));
    }
    if m < 1 {
        return Err(Error::Domain("posterior predictive needs m >= 1".into()));
    }
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let theta = theta_draws[rng.random_range(0..theta_draws.len())];
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let v = theta.mu + theta.sigma() * z;
        out.push(match kind {
            LikelihoodKind::LogNormal => v.exp(),
            LikelihoodKind::Normal => v,
        });
    }
    Ok(out)
}
