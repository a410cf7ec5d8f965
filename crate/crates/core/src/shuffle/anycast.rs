use std::collections::BTreeMap;

use rand::Rng;

use super::{CostWeights, ShufflerNode};
use crate::netsim::{NodeId, Topology};
use crate::{Error, Result};

/// Service advertisement from a volunteer shuffler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beacon {
    pub node_id: NodeId,
    pub buffer_capacity: usize,
    /// Latency estimate in ticks.
    pub latency: f64,
    pub bandwidth: f64,
}

/// How often each client's messages went through each shuffler.
#[derive(Debug, Clone, Default)]
pub struct AffinityState {
    counts: BTreeMap<(NodeId, u64), u64>,
    totals: BTreeMap<u64, u64>,
}

impl AffinityState {
    pub fn from_shufflers(shufflers: &[ShufflerNode]) -> Self {
        let mut state = AffinityState::default();
        for s in shufflers {
            for (&c, &n) in s.affinity_counts() {
                *state.counts.entry((s.node_id, c)).or_default() += n;
                *state.totals.entry(c).or_default() += n;
            }
        }
        state
    }

    pub fn record(&mut self, shuffler: NodeId, client: u64) {
        *self.counts.entry((shuffler, client)).or_default() += 1;
        *self.totals.entry(client).or_default() += 1;
    }

    /// Share of `client`'s messages handled by `shuffler`.
    pub fn affinity(&self, shuffler: NodeId, client: u64) -> f64 {
        let n = self.counts.get(&(shuffler, client)).copied().unwrap_or(0);
        let total = self.totals.get(&client).copied().unwrap_or(0);
        n as f64 / total.max(1) as f64
    }
}

/// Volunteer shufflers within `radius` hops of `client` (undirected), in
/// ascending node order. The client itself is never listed.
pub fn discover_shufflers<R: Rng + ?Sized>(
    topology: &Topology,
    client: NodeId,
    radius: u32,
    rng: &mut R,
) -> Vec<Beacon> {
    let dist = topology.hop_distances(client);
    let mut out = Vec::new();
    for node in topology.nodes() {
        let (Some(v), Some(d)) = (node.volunteer, dist.get(node.id as usize).copied().flatten()) else {
            continue;
        };
        if node.id == client || d > radius {
            continue;
        }
        let link = topology
            .neighbors(node.id)
            .next()
            .and_then(|nb| topology.link(node.id, nb).copied())
            .unwrap_or_default();
        let mut latency = 0u64;
        for _ in 0..d {
            latency += link.latency_base + rng.random_range(0..=link.latency_jitter);
        }
        out.push(Beacon {
            node_id: node.id,
            buffer_capacity: v.buffer_capacity,
            latency: latency as f64,
            bandwidth: v.bandwidth,
        });
    }
    out
}

/// Cheapest shuffler for `client` under `weights`; ties go to the smallest
/// node id.
pub fn anycast_select(
    client: u64,
    beacons: &[Beacon],
    weights: &CostWeights,
    affinity: &AffinityState,
) -> Result<NodeId> {
    let cost = |b: &Beacon| {
        let inv_bw = if b.bandwidth > 0.0 { 1.0 / b.bandwidth } else { f64::INFINITY };
        let bw_term = if weights.bandwidth == 0.0 { 0.0 } else { weights.bandwidth * inv_bw };
        weights.latency * b.latency + bw_term + weights.affinity * affinity.affinity(b.node_id, client)
    };
    beacons
        .iter()
        .map(|b| (cost(b), b.node_id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(Error::DiscoveryEmpty)
}
