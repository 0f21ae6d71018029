//! Browser bindings for the samplers. Each export takes plain numbers from
//! the page and returns a JSON string, so the front end needs no generated
//! type glue beyond the wasm-bindgen loader.

use wasm_bindgen::prelude::*;

use disagg::diagnostics::quantile_type7;
use disagg::engine::{
    run_latent_gibbs, AdaptMode, DeltaSpec, LatentInit, SamplerConfig, TauInit,
};
use disagg::latent::{mh_update_bucket, propose_bucket, proposal_moments, LikelihoodKind,
    LikelihoodSpec};
use disagg::model::{NormalGammaPrior, NormalParams, RngStream};
use disagg::simdata::{naive_estimate, simulate_lognormal, BucketSizes, SimConfig};
use serde_json::json;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn histogram(values: &[f64], bins: usize) -> serde_json::Value {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u32; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    json!({
        "lo": lo,
        "width": width,
        "density": counts.iter().map(|&c| c as f64 / (n * width)).collect::<Vec<f64>>(),
    })
}

/// Simulates a bucket-sum dataset from a log-normal population, then contrasts
/// the naive bucket-mean variance estimate with the posterior over sigma from
/// the latent sampler.
#[wasm_bindgen]
pub fn fit_demo(
    k: u32,
    n: u32,
    sigma_log: f64,
    iters: u32,
    seed: u32,
) -> Result<String, String> {
    let sim = SimConfig {
        k: k as usize,
        n: BucketSizes::Uniform(n),
        mu: 250.0f64.ln(),
        sigma: sigma_log,
        seed: seed as u64,
    };
    let (_, data) = simulate_lognormal(&sim).map_err(err)?;
    let (_, naive_sigma) = naive_estimate(&data).map_err(err)?;

    let iters = iters as u64;
    let burn_in = iters / 5;
    let thin = ((iters - burn_in) / 2000).max(1);
    let cfg = SamplerConfig {
        n_iter: iters,
        burn_in,
        thin,
        n_chains: 1,
        seed: seed as u64 + 1,
        delta: DeltaSpec::Scalar(1.0),
        adapt: AdaptMode::BurnIn,
        adapt_target: 0.23,
        init: LatentInit::EqualSplit,
        tau_init: TauInit::AggregatedEstimate,
        likelihood: LikelihoodKind::LogNormal,
        prior: NormalGammaPrior::vague(),
        track_latent: vec![],
        joint_proposal: false,
    };
    let chains = run_latent_gibbs(&data, &cfg).map_err(err)?;
    let chain = &chains[0];
    let mut sigma = chain.sigma();
    let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
    sigma.sort_by(f64::total_cmp);
    let accept =
        chain.acceptance.iter().sum::<f64>() / chain.acceptance.len().max(1) as f64;

    Ok(json!({
        "true_sigma": sigma_log,
        "naive_sigma": naive_sigma,
        "posterior_mean": mean,
        "q025": quantile_type7(&sigma, 0.025),
        "q500": quantile_type7(&sigma, 0.5),
        "q975": quantile_type7(&sigma, 0.975),
        "acceptance": accept,
        "draws": sigma.len(),
        "hist": histogram(&sigma, 40),
    })
    .to_string())
}

/// Draws from the sum-preserving Dirichlet proposal around a 3-element bucket
/// state. Returns the scatter of the first two coordinates (the third is
/// determined by the sum) plus closed-form and empirical SDs per coordinate.
#[wasm_bindgen]
pub fn proposal_cloud(
    x1: f64,
    x2: f64,
    x3: f64,
    delta: f64,
    draws: u32,
    seed: u32,
) -> Result<String, String> {
    let x = [x1, x2, x3];
    if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err("all three components must be positive and finite".into());
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err("delta must be positive".into());
    }
    let draws = draws.clamp(1, 20_000) as usize;
    let y: f64 = x.iter().sum();
    let mut rng = RngStream::new(seed as u64, 0);
    let mut pts = Vec::with_capacity(draws);
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    for _ in 0..draws {
        let p = propose_bucket(&x, y, delta, &mut rng).map_err(err)?;
        for j in 0..3 {
            sum[j] += p[j];
            sumsq[j] += p[j] * p[j];
        }
        pts.push([p[0], p[1]]);
    }
    let (_, var) = proposal_moments(&x, y, delta);
    let empirical_sd: Vec<f64> = (0..3)
        .map(|j| {
            let m = sum[j] / draws as f64;
            (sumsq[j] / draws as f64 - m * m).max(0.0).sqrt()
        })
        .collect();
    Ok(json!({
        "y": y,
        "current": x,
        "points": pts,
        "theory_sd": var.iter().map(|v| v.sqrt()).collect::<Vec<f64>>(),
        "empirical_sd": empirical_sd,
    })
    .to_string())
}

/// Runs the two-element Metropolis kernel on a single bucket with y = 2 under
/// a fixed log-normal(0, tau), and compares the sampled marginal of the first
/// component against the grid-normalized exact conditional.
#[wasm_bindgen]
pub fn kernel_demo(tau: f64, delta: f64, iters: u32, seed: u32) -> Result<String, String> {
    let like = LikelihoodSpec {
        kind: LikelihoodKind::LogNormal,
        params: NormalParams::new(0.0, tau).map_err(err)?,
    };
    let y = 2.0;
    let bins = 100usize;

    let mut exact = vec![0.0f64; bins];
    for (b, g) in exact.iter_mut().enumerate() {
        let x1 = (b as f64 + 0.5) / bins as f64 * y;
        *g = (like.logpdf(x1).map_err(err)? + like.logpdf(y - x1).map_err(err)?).exp();
    }
    let z: f64 = exact.iter().sum();
    exact.iter_mut().for_each(|g| *g /= z);

    let iters = iters.clamp(1_000, 2_000_000) as usize;
    let mut rng = RngStream::new(seed as u64, 0);
    let mut x = vec![1.0, 1.0];
    let mut hist = vec![0.0f64; bins];
    let mut accepted = 0u64;
    for _ in 0..iters / 10 {
        x = mh_update_bucket(&x, y, &like, delta, &mut rng).map_err(err)?.state;
    }
    for _ in 0..iters {
        let out = mh_update_bucket(&x, y, &like, delta, &mut rng).map_err(err)?;
        accepted += out.accepted as u64;
        x = out.state;
        let b = ((x[0] / y) * bins as f64) as usize;
        hist[b.min(bins - 1)] += 1.0;
    }
    hist.iter_mut().for_each(|h| *h /= iters as f64);
    let tv: f64 =
        0.5 * exact.iter().zip(&hist).map(|(g, h)| (g - h).abs()).sum::<f64>();
    Ok(json!({
        "bins": bins,
        "y": y,
        "exact": exact,
        "sampled": hist,
        "tv": tv,
        "acceptance": accepted as f64 / iters as f64,
    })
    .to_string())
}
