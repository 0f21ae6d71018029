//! Exact Gibbs sampler for the aggregated-normal model, where bucket
//! averages are sufficient statistics and both conditionals are available in
//! closed form. This is the analytically tractable baseline; the latent
//! sampler reuses its conditionals for the theta update.

use crate::engine::ChainOutput;
use crate::error::{Error, Result};
use crate::model::{AggregatedDataset, GammaSpec, GaussianSpec, NormalGammaPrior, RngStream};

/// Compensated (Kahan) accumulator, so bucket-order permutations change sums
/// by no more than ~1e-12 relative.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone)]
pub struct ConjugateChainConfig {
    pub n_iter: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub init_mu: f64,
    pub init_tau: f64,
    pub rng: RngStream,
}

impl ConjugateChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in {} must be < n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if !(self.init_tau > 0.0 && self.init_tau.is_finite() && self.init_mu.is_finite()) {
            return Err(Error::Config(format!(
                "initial state must be finite with tau > 0, got mu={}, tau={}",
                self.init_mu, self.init_tau
            )));
        }
        Ok(())
    }
}

/// Default initialization: grand weighted mean of the bucket averages for mu,
/// and the method-of-moments precision of the bucket means scaled by the mean
/// bucket size for tau (the naive-aggregation plug-in).
pub fn default_init(data: &AggregatedDataset) -> (f64, f64) {
    let sum_n: f64 = data.total_n() as f64;
    let mut sum_y = KahanSum::default();
    for b in data.buckets() {
        sum_y.add(b.y);
    }
    let grand_mean = sum_y.value() / sum_n;

    let k = data.k();
    let tau = if k >= 2 {
        let mean_of_means: f64 =
            data.buckets().iter().map(|b| b.mean()).sum::<f64>() / k as f64;
        let var: f64 = data
            .buckets()
            .iter()
            .map(|b| (b.mean() - mean_of_means).powi(2))
            .sum::<f64>()
            / (k as f64 - 1.0);
        let mean_n = sum_n / k as f64;
        if var > 0.0 {
            mean_n / var
        } else {
            1.0
        }
    } else {
        1.0
    };
    (grand_mean, tau)
}

/// Conditional posterior of mu given tau:
/// N((tau * sum n_k xbar_k + tau0 mu0) / (tau * sum n_k + tau0), tau * sum n_k + tau0).
pub fn mu_conditional(
    data: &AggregatedDataset,
    tau: f64,
    prior: &NormalGammaPrior,
) -> GaussianSpec {
    let mut sum_nx = KahanSum::default();
    let mut sum_n = KahanSum::default();
    for b in data.buckets() {
        // n_k * xbar_k is just the observed sum y_k.
        sum_nx.add(b.y);
        sum_n.add(f64::from(b.n));
    }
    mu_conditional_from_stats(sum_n.value(), sum_nx.value(), tau, prior)
}

/// Same conditional from precomputed sufficient statistics
/// (sum of counts, sum of all observations).
pub fn mu_conditional_from_stats(
    sum_n: f64,
    sum_x: f64,
    tau: f64,
    prior: &NormalGammaPrior,
) -> GaussianSpec {
    let precision = tau * sum_n + prior.tau0;
    let mean = (tau * sum_x + prior.tau0 * prior.mu0) / precision;
    GaussianSpec { mean, precision }
}

/// Conditional posterior of tau given mu:
/// Gamma(a + 0.5 K, b + 0.5 * sum n_k (xbar_k - mu)^2).
pub fn tau_conditional(data: &AggregatedDataset, mu: f64, prior: &NormalGammaPrior) -> GammaSpec {
    let mut ssr = KahanSum::default();
    for b in data.buckets() {
        ssr.add(f64::from(b.n) * (b.mean() - mu).powi(2));
    }
    tau_conditional_from_stats(data.k() as f64, ssr.value(), prior)
}

/// Same conditional from precomputed statistics (number of groups, weighted
/// sum of squared residuals).
pub fn tau_conditional_from_stats(k: f64, weighted_ssr: f64, prior: &NormalGammaPrior) -> GammaSpec {
    GammaSpec { shape: prior.a + 0.5 * k, rate: prior.b + 0.5 * weighted_ssr }
}

/// Runs the Gibbs chain, alternating the mu and tau conditionals. The
/// recorded draw is the state after both updates of an iteration.
pub fn run_conjugate_gibbs(
    data: &AggregatedDataset,
    prior: &NormalGammaPrior,
    cfg: &ConjugateChainConfig,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let start = crate::engine::Timer::start();
    let mut rng = cfg.rng.clone();

    let mut mu;
    let mut tau = cfg.init_tau;
    let n_rec = ((cfg.n_iter - cfg.burn_in) / cfg.thin) as usize;
    let mut mu_draws = Vec::with_capacity(n_rec);
    let mut tau_draws = Vec::with_capacity(n_rec);

    for it in 1..=cfg.n_iter {
        mu = mu_conditional(data, tau, prior).sample(&mut rng);
        tau = tau_conditional(data, mu, prior).sample(&mut rng);
        if tau <= 0.0 || !mu.is_finite() {
            return Err(Error::Numerical {
                iteration: it,
                bucket: 0,
                message: format!("conjugate update produced mu={mu}, tau={tau}"),
            });
        }
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            mu_draws.push(mu);
            tau_draws.push(tau);
        }
    }

    Ok(ChainOutput {
        chain_id: cfg.rng.stream(),
        seed: cfg.rng.seed(),
        stream: cfg.rng.stream(),
        mu: mu_draws,
        tau: tau_draws,
        traced: Vec::new(),
        acceptance: Vec::new(),
        final_delta: Vec::new(),
        duration: start.elapsed(),
    })
}
