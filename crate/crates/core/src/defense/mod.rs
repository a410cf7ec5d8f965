//! Server- and shuffler-side defenses against network adversaries.

mod detect;

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ldp::{estimate_real, ClientReport, FrequencyEstimate, ProtocolSpec};
use crate::netsim::ArrivalFilter;
use crate::{Error, Result, SeedTree};

pub use detect::{arrivals_per_client, loss_anomaly_detect, AnomalyReport, DetectorConfig};

/// Client id carried by shuffler-injected dummies.
pub const DUMMY_CLIENT: u64 = u64::MAX - 1;
/// First report id handed to injected dummies.
pub const DUMMY_ID_BASE: u64 = 1 << 62;

/// Keeps the first arrival of every report id. Input must already be in
/// arrival order (time, then report id), as produced by the simulator.
pub fn dedup_reports(reports: Vec<Arc<ClientReport>>) -> Vec<Arc<ClientReport>> {
    let mut seen = HashSet::with_capacity(reports.len());
    reports.into_iter().filter(|r| seen.insert(r.report_id)).collect()
}

/// Keeps each report independently with probability `keep`.
pub fn sample_reports<T, R: Rng + ?Sized>(reports: Vec<T>, keep: f64, rng: &mut R) -> Result<Vec<T>> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::param(format!("keep fraction {keep} outside (0, 1]")));
    }
    if keep == 1.0 {
        return Ok(reports);
    }
    Ok(reports.into_iter().filter(|_| rng.random::<f64>() < keep).collect())
}

/// Appends `m` dummies drawn uniformly from the mechanism's output space.
pub fn inject_dummies<R: Rng + ?Sized>(
    mut batch: Vec<Arc<ClientReport>>,
    m: u32,
    spec: &ProtocolSpec,
    rng: &mut R,
) -> Vec<Arc<ClientReport>> {
    batch.reserve(m as usize);
    for i in 0..m as u64 {
        let payload = spec.random_output(rng);
        batch.push(Arc::new(ClientReport::new(DUMMY_CLIENT, DUMMY_ID_BASE + i, payload, 0)));
    }
    batch
}

/// Removes the expected support contribution of `m` uniform dummies.
pub fn debias(counts: &[u64], m: u32, spec: &ProtocolSpec) -> Vec<f64> {
    let offset = m as f64 * spec.uniform_support();
    counts.iter().map(|&c| c as f64 - offset).collect()
}

/// Estimate from counts that include `m` dummies among `n_total` reports.
pub fn debiased_estimate(spec: &ProtocolSpec, counts: &[u64], n_total: u64, m: u32) -> Result<FrequencyEstimate> {
    let n = n_total
        .checked_sub(m as u64)
        .ok_or_else(|| Error::param(format!("{m} dummies among only {n_total} reports")))?;
    estimate_real(spec, &debias(counts, m, spec), n)
}

/// Defense knobs; one section of the experiment config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub dedup: bool,
    /// Keep fraction for random sampling; `None` disables sampling.
    pub sample_fraction: Option<f64>,
    /// Dummies injected before aggregation.
    pub dummies: u32,
    pub detector: Option<DetectorConfig>,
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sample_fraction {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::config(format!("sample fraction {s} outside (0, 1]")));
            }
        }
        if let Some(d) = &self.detector {
            d.validate()?;
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.dedup || self.sample_fraction.is_some() || self.dummies > 0 || self.detector.is_some()
    }

    /// Short label for result tables, `none` when nothing is enabled.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.dedup {
            parts.push("dedup".to_string());
        }
        if let Some(s) = self.sample_fraction {
            parts.push(format!("sample{s}"));
        }
        if self.dummies > 0 {
            parts.push(format!("dummies{}", self.dummies));
        }
        if self.detector.is_some() {
            parts.push("detect".to_string());
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Arrival filter applying deduplication and then sampling.
#[derive(Debug, Clone)]
pub struct ArrivalDefense {
    pub config: DefenseConfig,
}

impl ArrivalFilter for ArrivalDefense {
    fn filter(&self, arrived: Vec<Arc<ClientReport>>, seeds: &SeedTree) -> Result<Vec<Arc<ClientReport>>> {
        let mut out = if self.config.dedup { dedup_reports(arrived) } else { arrived };
        if let Some(s) = self.config.sample_fraction {
            out = sample_reports(out, s, &mut seeds.stream("defense-sample", &[]))?;
        }
        Ok(out)
    }
}
