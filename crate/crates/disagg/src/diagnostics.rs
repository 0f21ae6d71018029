//! Posterior summary and convergence diagnostics: quantiles, effective
//! sample size via initial-positive-sequence autocorrelation truncation, and
//! rank-normalized split R-hat.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::ChainOutput;
use crate::error::{Error, Result};

/// Minimum draws per chain before diagnostics are meaningful.
pub const MIN_DRAWS: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// NaN when the parameter is degenerate (zero variance).
    pub ess: f64,
    /// NaN when degenerate.
    pub r_hat: f64,
    /// True when all draws are identical; ESS and R-hat are then undefined
    /// and reported as NaN rather than silently dropped.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub n_draws_per_chain: usize,
    pub params: Vec<ParamDiagnostics>,
    /// Per-bucket MH acceptance pooled over chains; absent for conjugate
    /// runs.
    pub acceptance: Option<AcceptanceSummary>,
}

/// Type-7 (linear interpolation) quantile of an unsorted sample.
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Splits every chain in half, dropping one leading draw from odd-length
/// chains.
fn split_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len() / 2 * 2;
        let tail = &c[c.len() - n..];
        out.push(tail[..n / 2].to_vec());
        out.push(tail[n / 2..].to_vec());
    }
    out
}

/// Pooled rank-normalization with tie-averaged ranks mapped through the
/// standard normal quantile function at the rank midpoints (r - 1/2) / S.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut ranks_flat = vec![0.0f64; total];
    let mut offsets = Vec::with_capacity(chains.len());
    let mut off = 0usize;
    for c in chains {
        offsets.push(off);
        off += c.len();
    }
    let mut triplets: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (ci, c) in chains.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            triplets.push((v, ci, i));
        }
    }
    triplets.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut pos = 0usize;
    while pos < total {
        let mut end = pos + 1;
        while end < total && triplets[end].0 == triplets[pos].0 {
            end += 1;
        }
        let avg = (pos + end + 1) as f64 / 2.0;
        for t in &triplets[pos..end] {
            ranks_flat[offsets[t.1] + t.2] = avg;
        }
        pos = end;
    }
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    for (ci, c) in out.iter_mut().enumerate() {
        for (i, z) in c.iter_mut().enumerate() {
            let p = (ranks_flat[offsets[ci] + i] - 0.5) / total as f64;
            *z = std_normal.inverse_cdf(p);
        }
    }
    out
}

/// Classic between/within variance ratio on already-transformed half-chains.
/// The between-chain variance uses the population (divide by m) convention,
/// which makes the statistic exactly invariant under chain duplication.
fn r_hat_from(half_chains: &[Vec<f64>]) -> f64 {
    let m = half_chains.len() as f64;
    let n = half_chains[0].len() as f64;
    let means: Vec<f64> =
        half_chains.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|&x| (x - grand).powi(2)).sum::<f64>() / m;
    let w = half_chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|&x| (x - mu).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    // Sampling noise can push the raw ratio a hair under 1; floor it so the
    // reported statistic keeps its R-hat >= 1 contract.
    (var_plus / w).sqrt().max(1.0)
}

/// Multi-chain ESS with Geyer's initial positive sequence truncation.
fn ess_from(half_chains: &[Vec<f64>]) -> f64 {
    let m = half_chains.len() as f64;
    let n = half_chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> =
        half_chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = half_chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|&x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b = nf * means.iter().map(|&x| (x - grand).powi(2)).sum::<f64>() / m;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }

    let acov = |c: &[f64], mu: f64, t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..(n - t) {
            s += (c[i] - mu) * (c[i + t] - mu);
        }
        s / nf
    };

    let rho = |t: usize| -> f64 {
        let mean_acov = half_chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| acov(c, mu, t))
            .sum::<f64>()
            / m;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = 0.0;
    let mut t = 0usize;
    let mut prev_pair = f64::INFINITY;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        // Enforce monotone decrease of the paired sums.
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += pair;
        t += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1e-12);
    let total = m * nf;
    (total / tau).min(total)
}

fn diagnose_param(name: &str, chains: &[Vec<f64>]) -> ParamDiagnostics {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();

    let mut sorted = pooled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q025 = quantile_sorted(&sorted, 0.025);
    let q500 = quantile_sorted(&sorted, 0.5);
    let q975 = quantile_sorted(&sorted, 0.975);

    if sd == 0.0 {
        return ParamDiagnostics {
            name: name.into(),
            mean,
            sd,
            q025,
            q500,
            q975,
            ess: f64::NAN,
            r_hat: f64::NAN,
            degenerate: true,
        };
    }

    let halves = split_halves(chains);
    let r_hat = r_hat_from(&rank_normalize(&halves));
    let ess = ess_from(&halves);
    ParamDiagnostics { name: name.into(), mean, sd, q025, q500, q975, ess, r_hat, degenerate: false }
}

/// Computes posterior summaries and convergence diagnostics for mu, tau,
/// sigma, and every traced latent coordinate, across all chains.
pub fn compute_diagnostics(chains: &[ChainOutput]) -> Result<DiagnosticsReport> {
    if chains.is_empty() {
        return Err(Error::Config("diagnostics need at least one chain".into()));
    }
    let n_draws = chains.iter().map(|c| c.n_draws()).min().unwrap();
    if n_draws < MIN_DRAWS {
        return Err(Error::Config(format!(
            "diagnostics need at least {MIN_DRAWS} draws per chain, got {n_draws}"
        )));
    }

    let collect = |f: &dyn Fn(&ChainOutput) -> Vec<f64>| -> Vec<Vec<f64>> {
        chains.iter().map(|c| f(c)).collect()
    };

    let mut params = vec![
        diagnose_param("mu", &collect(&|c| c.mu.clone())),
        diagnose_param("tau", &collect(&|c| c.tau.clone())),
        diagnose_param("sigma", &collect(&|c| c.sigma())),
    ];
    for (ti, tc) in chains[0].traced.iter().enumerate() {
        let name = format!("x_{}_{}", tc.bucket, tc.index);
        params.push(diagnose_param(
            &name,
            &collect(&|c| c.traced[ti].values.clone()),
        ));
    }

    let acceptance = if chains[0].acceptance.is_empty() {
        None
    } else {
        let all: Vec<f64> =
            chains.iter().flat_map(|c| c.acceptance.iter().copied()).collect();
        Some(AcceptanceSummary {
            mean: all.iter().sum::<f64>() / all.len() as f64,
            min: all.iter().cloned().fold(f64::INFINITY, f64::min),
            max: all.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    };

    Ok(DiagnosticsReport { n_chains: chains.len(), n_draws_per_chain: n_draws, params, acceptance })
}
