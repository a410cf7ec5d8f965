//! Config-driven experiments: paired clean and attacked runs, parameter
//! sweeps and CSV output.

mod config;
mod output;
mod run;

use rand::Rng;

use crate::{Error, FrequencyEstimate, Result};

pub use config::{
    CacheConfig, DatasetConfig, DatasetKind, ErrorMetric, ExperimentConfig, GridConfig, MetricConfig, NetworkConfig,
    ProtocolConfig, ShuffleConfig, SCHEMA_VERSION,
};
pub use output::{
    emit_csv, read_results, sort_rows, summarize, write_manifest, write_results, CellSummary, ResultRow, CSV_HEADER,
};
pub use run::{run_experiment, sweep, RunResult, SweepResult};

/// `n` items drawn uniformly from `0..k`.
pub fn gen_uniform_dataset<R: Rng + ?Sized>(k: u32, n: u64, rng: &mut R) -> Result<Vec<u32>> {
    if k < 2 {
        return Err(Error::param(format!("domain size {k} below 2")));
    }
    if n == 0 {
        return Err(Error::param("dataset needs at least one user"));
    }
    Ok((0..n).map(|_| rng.random_range(0..k)).collect())
}

/// `n` items drawn with probability proportional to `weights`.
pub fn gen_weighted_dataset<R: Rng + ?Sized>(weights: &[f64], n: u64, rng: &mut R) -> Result<Vec<u32>> {
    let total: f64 = weights.iter().sum();
    if weights.len() < 2 || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::param("weights must cover at least two items with a positive sum"));
    }
    if n == 0 {
        return Err(Error::param("dataset needs at least one user"));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32;
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (cdf.partition_point(|&c| c <= u) as u32).min(last)
        })
        .collect())
}

/// Empirical item frequencies of a dataset.
pub fn true_frequencies(items: &[u32], k: u32) -> Vec<f64> {
    let mut f = vec![0.0; k as usize];
    for &v in items {
        f[v as usize] += 1.0;
    }
    let n = items.len().max(1) as f64;
    f.iter_mut().for_each(|x| *x /= n);
    f
}

fn check_lengths(estimate: &FrequencyEstimate, truth: &[f64]) -> Result<()> {
    if estimate.freq.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "estimate has {} entries, truth has {}",
            estimate.freq.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// `(1/k) * sum_v |f_hat_v - f_v|`.
pub fn mean_abs_error(estimate: &FrequencyEstimate, truth: &[f64]) -> Result<f64> {
    check_lengths(estimate, truth)?;
    let s: f64 = estimate.freq.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / truth.len() as f64)
}

/// Euclidean distance between estimate and truth.
pub fn l2_error(estimate: &FrequencyEstimate, truth: &[f64]) -> Result<f64> {
    check_lengths(estimate, truth)?;
    Ok(estimate.freq.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// An error value tagged with the seed of the honest randomness behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub error: f64,
    pub pairing: u64,
}

/// `|err_attack - err_clean|`, optionally divided by `err_clean`. Both runs
/// must share their honest randomness.
pub fn attack_gain(clean: Measurement, attacked: Measurement, normalize: bool) -> Result<f64> {
    if clean.pairing != attacked.pairing {
        return Err(Error::Protocol(format!(
            "unpaired runs: seeds {} and {}",
            clean.pairing, attacked.pairing
        )));
    }
    let gain = (attacked.error - clean.error).abs();
    if normalize {
        if clean.error <= 0.0 {
            return Err(Error::param("cannot normalize by a zero clean error"));
        }
        Ok(gain / clean.error)
    } else {
        Ok(gain)
    }
}
