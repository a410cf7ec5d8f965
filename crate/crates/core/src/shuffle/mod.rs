//! Shuffler routing.
//!
//! A shuffler collects a batch of reports, forgets who sent what, and passes
//! them on in a uniformly random order. This module provides the central and
//! concurrent variants, a multi-hop random-walk variant with bounded per-node
//! buffers, beacon-based discovery with cost-driven anycast selection, and
//! trip-wire verification of dropping shufflers.

mod anycast;
mod multihop;
mod tripwire;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ldp::ClientReport;
use crate::netsim::{NodeId, Packet};
use crate::{Error, Result};

pub use anycast::{anycast_select, discover_shufflers, AffinityState, Beacon};
pub use multihop::{multihop_shuffle, MultihopOutcome, MultihopParams};
pub use tripwire::{tripwire_verify, TripwireConfig, TripwireOutcome, TripwireVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Addressing {
    Unicast,
    Multicast,
    Broadcast,
    Anycast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub latency: f64,
    pub bandwidth: f64,
    pub affinity: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            latency: 1.0,
            bandwidth: 1.0,
            affinity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteSpec {
    pub addressing: Addressing,
    /// Number of concurrent shufflers for multicast.
    pub k_shufflers: u32,
    pub hops_t: u32,
    pub cost_weights: CostWeights,
}

impl Default for RouteSpec {
    fn default() -> Self {
        RouteSpec {
            addressing: Addressing::Unicast,
            k_shufflers: 1,
            hops_t: 1,
            cost_weights: CostWeights::default(),
        }
    }
}

impl RouteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_shufflers < 1 {
            return Err(Error::config("k_shufflers must be at least 1"));
        }
        if self.hops_t < 1 {
            return Err(Error::config("hops_t must be at least 1"));
        }
        let w = &self.cost_weights;
        if [w.latency, w.bandwidth, w.affinity].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("cost weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// How many shufflers receive each message, given `available` of them.
    pub fn fanout(&self, available: u32) -> u32 {
        match self.addressing {
            Addressing::Unicast | Addressing::Anycast => 1,
            Addressing::Multicast => self.k_shufflers.min(available),
            Addressing::Broadcast => available,
        }
    }

    /// Default walk length for `m` relaying nodes: `ceil(4 log2 m)`.
    pub fn default_hops(m: usize) -> u32 {
        ((4.0 * (m.max(2) as f64).log2()).ceil() as u32).max(1)
    }
}

/// Which reports a shuffler agrees to handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShufflerPolicy {
    #[default]
    Open,
    /// Only reports from devices of the same vendor.
    SameVendor(u32),
}

impl ShufflerPolicy {
    pub fn admits(&self, vendor: u32) -> bool {
        match self {
            ShufflerPolicy::Open => true,
            ShufflerPolicy::SameVendor(v) => *v == vendor,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShufflerNode {
    pub node_id: NodeId,
    pub buffer_capacity: usize,
    pub policy: ShufflerPolicy,
    affinity_counts: BTreeMap<u64, u64>,
    shuffled: u64,
    pub honest: bool,
    /// Fraction of messages silently discarded when dishonest.
    pub drop_fraction: f64,
}

impl ShufflerNode {
    pub fn new(node_id: NodeId, buffer_capacity: usize) -> Self {
        ShufflerNode {
            node_id,
            buffer_capacity,
            policy: ShufflerPolicy::Open,
            affinity_counts: BTreeMap::new(),
            shuffled: 0,
            honest: true,
            drop_fraction: 0.0,
        }
    }

    pub fn dishonest(node_id: NodeId, buffer_capacity: usize, drop_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_fraction) {
            return Err(Error::param(format!("drop fraction {drop_fraction} outside [0, 1]")));
        }
        Ok(ShufflerNode {
            honest: false,
            drop_fraction,
            ..ShufflerNode::new(node_id, buffer_capacity)
        })
    }

    pub fn affinity_counts(&self) -> &BTreeMap<u64, u64> {
        &self.affinity_counts
    }

    pub fn affinity_count(&self, client: u64) -> u64 {
        self.affinity_counts.get(&client).copied().unwrap_or(0)
    }

    /// Total messages this shuffler has accepted.
    pub fn total_shuffled(&self) -> u64 {
        self.shuffled
    }

    /// Accepts one batch, records per-client affinity, discards messages if
    /// dishonest and emits the survivors in a uniformly random order.
    pub fn process<R: Rng + ?Sized>(
        &mut self,
        batch: Vec<Arc<ClientReport>>,
        rng: &mut R,
    ) -> Result<Vec<Arc<ClientReport>>> {
        if batch.len() > self.buffer_capacity {
            return Err(Error::Backpressure {
                batch: batch.len(),
                capacity: self.buffer_capacity,
            });
        }
        for r in &batch {
            *self.affinity_counts.entry(r.client_id).or_default() += 1;
        }
        self.shuffled += batch.len() as u64;
        let kept: Vec<_> = if self.honest {
            batch
        } else {
            batch.into_iter().filter(|_| rng.random::<f64>() >= self.drop_fraction).collect()
        };
        central_shuffle(kept, self.buffer_capacity, rng)
    }
}

/// Uniformly random permutation of `batch` (Fisher-Yates).
pub fn central_shuffle<T, R: Rng + ?Sized>(mut batch: Vec<T>, capacity: usize, rng: &mut R) -> Result<Vec<T>> {
    if batch.len() > capacity {
        return Err(Error::Backpressure {
            batch: batch.len(),
            capacity,
        });
    }
    for i in (1..batch.len()).rev() {
        let j = rng.random_range(0..=i);
        batch.swap(i, j);
    }
    Ok(batch)
}

/// Per-shuffler batches of one concurrent round, before and after permutation.
#[derive(Debug, Clone)]
pub struct ShuffleRound {
    /// Report ids in the order each shuffler received them.
    pub received: Vec<Vec<u64>>,
    /// Reports in the order each shuffler emitted them.
    pub emitted: Vec<Vec<Arc<ClientReport>>>,
}

impl ShuffleRound {
    /// The stream seen by the server: batches concatenated in shuffler order.
    pub fn merged(&self) -> Vec<Arc<ClientReport>> {
        self.emitted.iter().flatten().cloned().collect()
    }

    /// Size of the batch that carried `client`'s report, if any.
    pub fn anonymity_set(&self, client: u64) -> Option<usize> {
        self.emitted
            .iter()
            .find(|b| b.iter().any(|r| r.client_id == client))
            .map(Vec::len)
    }

    /// Accuracy of an observer who knows each batch's arrival order and
    /// guesses that the shuffler emitted reports in that same order.
    pub fn linkage_accuracy(&self) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (inp, out) in self.received.iter().zip(&self.emitted) {
            total += out.len();
            hits += inp.iter().zip(out).filter(|(id, r)| **id == r.report_id).count();
        }
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

/// Splits `reports` among `shufflers` according to `assignment` (client id to
/// shuffler index) and lets each permute its own batch.
pub fn concurrent_shuffle<R: Rng + ?Sized>(
    reports: &[Arc<ClientReport>],
    shufflers: &mut [ShufflerNode],
    assignment: &BTreeMap<u64, usize>,
    rng: &mut R,
) -> Result<ShuffleRound> {
    if shufflers.is_empty() {
        return Err(Error::config("concurrent shuffle needs at least one shuffler"));
    }
    let mut batches: Vec<Vec<Arc<ClientReport>>> = vec![Vec::new(); shufflers.len()];
    for r in reports {
        let s = *assignment
            .get(&r.client_id)
            .ok_or_else(|| Error::config(format!("client {} is not assigned to a shuffler", r.client_id)))?;
        batches
            .get_mut(s)
            .ok_or_else(|| Error::config(format!("client {} assigned to missing shuffler {s}", r.client_id)))?
            .push(Arc::clone(r));
    }
    let received = batches.iter().map(|b| b.iter().map(|r| r.report_id).collect()).collect();
    let emitted = shufflers
        .iter_mut()
        .zip(batches)
        .map(|(s, b)| s.process(b, rng))
        .collect::<Result<_>>()?;
    Ok(ShuffleRound { received, emitted })
}

/// Round-robin assignment of clients to `k` shufflers.
pub fn balanced_assignment(clients: impl IntoIterator<Item = u64>, k: usize) -> BTreeMap<u64, usize> {
    clients.into_iter().enumerate().map(|(i, c)| (c, i % k.max(1))).collect()
}

/// Pads every packet in a batch to the largest size present.
pub fn pad_batch(batch: &mut [Packet]) {
    if let Some(max) = batch.iter().map(|p| p.size_bytes).max() {
        for p in batch {
            p.size_bytes = max;
        }
    }
}
