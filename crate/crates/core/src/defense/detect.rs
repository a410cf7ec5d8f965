use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::netsim::{AggregationWindow, EventKind, EventLog};
use crate::stats::binomial_lower_tail;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Loss rate of an adversary-free network.
    pub baseline_plr: f64,
    pub alpha: f64,
    /// An attack is suspected once more than `global_factor * alpha` of
    /// clients are flagged.
    pub global_factor: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            baseline_plr: 0.0,
            alpha: 0.01,
            global_factor: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.baseline_plr) {
            return Err(Error::param(format!("baseline PLR {} outside [0, 1)", self.baseline_plr)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.global_factor > 0.0) {
            return Err(Error::param("global factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub flagged: BTreeSet<u64>,
    pub flagged_fraction: f64,
    pub attack_suspected: bool,
}

/// Flags clients whose arrivals fall significantly short of what baseline
/// loss explains, using a one-sided binomial test per client.
pub fn loss_anomaly_detect(
    expected_per_client: u64,
    observed: &BTreeMap<u64, u64>,
    config: &DetectorConfig,
) -> Result<AnomalyReport> {
    config.validate()?;
    if expected_per_client == 0 {
        return Err(Error::param("expected reports per client must be positive"));
    }
    let rate = 1.0 - config.baseline_plr;
    let mut flagged = BTreeSet::new();
    for (&client, &got) in observed {
        if binomial_lower_tail(expected_per_client, rate, got)? < config.alpha {
            flagged.insert(client);
        }
    }
    let flagged_fraction = if observed.is_empty() {
        0.0
    } else {
        flagged.len() as f64 / observed.len() as f64
    };
    Ok(AnomalyReport {
        attack_suspected: flagged_fraction > config.global_factor * config.alpha,
        flagged,
        flagged_fraction,
    })
}

/// Distinct in-window report ids received from each of `clients`.
pub fn arrivals_per_client(
    log: &EventLog,
    window: &AggregationWindow,
    clients: impl IntoIterator<Item = u64>,
) -> BTreeMap<u64, u64> {
    let mut counts: BTreeMap<u64, u64> = clients.into_iter().map(|c| (c, 0)).collect();
    let mut seen = HashSet::new();
    for e in log.events() {
        if e.kind == EventKind::Arrived && window.contains(e.time) && seen.insert(e.report_id) {
            if let Some(c) = counts.get_mut(&e.report.client_id) {
                *c += 1;
            }
        }
    }
    counts
}
