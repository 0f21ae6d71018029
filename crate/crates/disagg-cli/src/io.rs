//! File formats: the `bucket_id,n,y` dataset CSV, the draws CSV, the run
//! manifest, and plot-ready exports. Floats are serialized with Rust's
//! shortest round-trip formatting, so a parse-and-rewrite cycle is lossless
//! and reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use disagg::engine::{ChainOutput, SamplerConfig, TracedCoord};
use disagg::error::{Error, Result};
use disagg::model::{AggregatedDataset, BucketRecord, LatentState};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// SHA-256 hex digest of a file's bytes, recorded in the manifest so a rerun
/// can prove it saw the same dataset.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

pub fn read_dataset(path: &Path) -> Result<AggregatedDataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.iter().take(3).collect::<Vec<_>>() != ["bucket_id", "n", "y"] {
        return Err(Error::Data(format!(
            "{}: expected header bucket_id,n,y, got {:?}",
            path.display(),
            headers
        )));
    }
    let mut buckets = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let parse = |i: usize, what: &str| -> Result<&str> {
            rec.get(i).ok_or_else(|| {
                Error::Data(format!("{}: missing {what} column", path.display()))
            })
        };
        let id: u64 = parse(0, "bucket_id")?
            .parse()
            .map_err(|e| Error::Data(format!("{}: bad bucket_id: {e}", path.display())))?;
        let n: u32 = parse(1, "n")?
            .parse()
            .map_err(|e| Error::Data(format!("{}: bucket {id}: bad count: {e}", path.display())))?;
        let y: f64 = parse(2, "y")?
            .parse()
            .map_err(|e| Error::Data(format!("{}: bucket {id}: bad sum: {e}", path.display())))?;
        buckets.push(BucketRecord::new(id, n, y)?);
    }
    AggregatedDataset::new(buckets)
}

pub fn write_dataset(path: &Path, data: &AggregatedDataset) -> Result<()> {
    let mut out = String::from("bucket_id,n,y\n");
    for b in data.buckets() {
        out.push_str(&format!("{},{},{}\n", b.id, b.n, b.y));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Ground-truth individuals as `bucket_id,index,x`.
pub fn write_individuals(
    path: &Path,
    truth: &LatentState,
    data: &AggregatedDataset,
) -> Result<()> {
    let mut out = String::from("bucket_id,index,x\n");
    for (xs, b) in truth.buckets().iter().zip(data.buckets()) {
        for (j, x) in xs.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", b.id, j, x));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Draws CSV: `chain,iter,mu,tau,sigma[,x_<bucket>_<index>...]`.
pub fn write_draws(path: &Path, chains: &[ChainOutput], burn_in: u64, thin: u64) -> Result<()> {
    let mut header = String::from("chain,iter,mu,tau,sigma");
    for tc in chains.first().map(|c| c.traced.as_slice()).unwrap_or(&[]) {
        header.push_str(&format!(",x_{}_{}", tc.bucket, tc.index));
    }
    header.push('\n');

    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for c in chains {
        let sigma = c.sigma();
        for d in 0..c.n_draws() {
            let iter = burn_in + (d as u64 + 1) * thin;
            let mut line =
                format!("{},{},{},{},{}", c.chain_id, iter, c.mu[d], c.tau[d], sigma[d]);
            for tc in &c.traced {
                line.push_str(&format!(",{}", tc.values[d]));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Parsed-back draws, one entry per chain, as pseudo chain outputs (no
/// acceptance data).
pub fn read_draws(path: &Path) -> Result<Vec<ChainOutput>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if headers.iter().take(5).collect::<Vec<_>>() != ["chain", "iter", "mu", "tau", "sigma"] {
        return Err(Error::Data(format!(
            "{}: expected draws header chain,iter,mu,tau,sigma,...",
            path.display()
        )));
    }
    let latent_cols: Vec<(usize, usize)> = headers
        .iter()
        .skip(5)
        .map(|h| {
            let parts: Vec<&str> = h.splitn(3, '_').collect();
            match parts.as_slice() {
                ["x", b, j] => Ok((
                    b.parse::<usize>().map_err(|e| Error::Data(format!("bad column {h}: {e}")))?,
                    j.parse::<usize>().map_err(|e| Error::Data(format!("bad column {h}: {e}")))?,
                )),
                _ => Err(Error::Data(format!("{}: unexpected column {h}", path.display()))),
            }
        })
        .collect::<Result<_>>()?;

    let mut chains: Vec<ChainOutput> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Data(format!("{}: short row", path.display())))?
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("{}: bad number: {e}", path.display())))
        };
        let chain_id = field(0)? as u64;
        if chains.last().map(|c| c.chain_id) != Some(chain_id) {
            chains.push(ChainOutput {
                chain_id,
                seed: 0,
                stream: chain_id,
                mu: vec![],
                tau: vec![],
                traced: latent_cols
                    .iter()
                    .map(|&(bucket, index)| TracedCoord { bucket, index, values: vec![] })
                    .collect(),
                acceptance: vec![],
                final_delta: vec![],
                duration: std::time::Duration::ZERO,
            });
        }
        let c = chains.last_mut().unwrap();
        c.mu.push(field(2)?);
        c.tau.push(field(3)?);
        for (t, tc) in c.traced.iter_mut().enumerate() {
            tc.values.push(field(5 + t)?);
        }
    }
    if chains.is_empty() {
        return Err(Error::Data(format!("{}: no draws", path.display())));
    }
    Ok(chains)
}

/// Everything needed to reproduce a fit bit-for-bit, plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub dataset_digest: String,
    pub config: SamplerConfig,
    pub chain_streams: Vec<u64>,
    pub chain_seconds: Vec<f64>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

/// Accepts either a bare `SamplerConfig` document or a full manifest (whose
/// `config` field is then used), so a manifest can be replayed directly.
pub fn read_config(path: &Path) -> Result<SamplerConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg_value = value.get("config").cloned().unwrap_or(value);
    serde_json::from_value(cfg_value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Histogram export: `bin_left,bin_right,count,density`.
pub fn write_histogram(path: &Path, values: &[f64], bins: usize) -> Result<()> {
    if values.is_empty() || bins == 0 {
        return Err(Error::Data("histogram needs values and bins".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    let mut out = String::from("bin_left,bin_right,count,density\n");
    for (b, &c) in counts.iter().enumerate() {
        let left = lo + b as f64 * width;
        out.push_str(&format!("{},{},{},{}\n", left, left + width, c, c as f64 / (n * width)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Trace export for one parameter: `chain,iter,value`.
pub fn write_trace(
    path: &Path,
    chains: &[ChainOutput],
    extract: impl Fn(&ChainOutput) -> Vec<f64>,
) -> Result<()> {
    let mut out = String::from("chain,iter,value\n");
    for c in chains {
        for (i, v) in extract(c).iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", c.chain_id, i, v));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_predictive(path: &Path, draws: &[f64]) -> Result<()> {
    let mut out = String::from("x\n");
    for d in draws {
        out.push_str(&format!("{d}\n"));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
