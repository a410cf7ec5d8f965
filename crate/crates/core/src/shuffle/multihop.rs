use std::sync::Arc;

use rand::Rng;

use crate::ldp::ClientReport;
use crate::netsim::{NodeId, Role, Topology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultihopParams {
    pub hops_t: u32,
    /// Per-node relay buffer, in reports.
    pub buffer_capacity: usize,
    /// Relay only through nodes of the report origin's vendor.
    pub same_vendor: bool,
}

impl MultihopParams {
    pub fn new(hops_t: u32, buffer_capacity: usize) -> Self {
        MultihopParams {
            hops_t,
            buffer_capacity,
            same_vendor: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MultihopOutcome {
    /// Reports in the order they reach the server.
    pub delivered: Vec<Arc<ClientReport>>,
    /// Final relay holding each delivered report, aligned with `delivered`.
    pub last_holder: Vec<NodeId>,
    /// Reports lost because no admissible neighbor existed.
    pub dead_ends: Vec<u64>,
    /// Largest number of reports any relay held at once.
    pub peak_buffer: usize,
    /// Total relay-to-relay transfers.
    pub relays: u64,
    pub steps: u64,
}

struct InFlight {
    report: Arc<ClientReport>,
    at: NodeId,
    vendor: u32,
    hops: u32,
}

fn relays(topology: &Topology, node: NodeId) -> bool {
    matches!(topology.node(node).map(|n| n.role), Some(Role::Client | Role::Shuffler))
}

/// Random-walk shuffling among relaying nodes.
///
/// Each report starts at its client's node and moves to a uniformly chosen
/// admissible neighbor once per step, `hops_t` times, then goes to the
/// server. A move into a node is granted only while that node's occupancy at
/// the start of the step plus moves already granted into it stays below the
/// buffer capacity; otherwise the report waits and redraws next step.
pub fn multihop_shuffle<R: Rng + ?Sized>(
    topology: &Topology,
    reports: &[Arc<ClientReport>],
    params: &MultihopParams,
    rng: &mut R,
) -> Result<MultihopOutcome> {
    if params.hops_t < 1 {
        return Err(Error::param("hops_t must be at least 1"));
    }
    if params.buffer_capacity < 1 {
        return Err(Error::param("relay buffer capacity must be at least 1"));
    }
    let n_nodes = topology.nodes().len();
    let mut occupancy = vec![0usize; n_nodes];
    let mut active = Vec::with_capacity(reports.len());
    for r in reports {
        let at = topology
            .client_node(r.client_id as usize)
            .ok_or_else(|| Error::Routing(format!("client {} has no node in the topology", r.client_id)))?;
        occupancy[at as usize] += 1;
        let vendor = topology.node(at).map_or(0, |n| n.vendor);
        active.push(InFlight {
            report: Arc::clone(r),
            at,
            vendor,
            hops: 0,
        });
    }
    let mut out = MultihopOutcome {
        peak_buffer: occupancy.iter().copied().max().unwrap_or(0),
        ..Default::default()
    };
    if out.peak_buffer > params.buffer_capacity {
        return Err(Error::Backpressure {
            batch: out.peak_buffer,
            capacity: params.buffer_capacity,
        });
    }
    let neighbors: Vec<Vec<NodeId>> = (0..n_nodes as NodeId)
        .map(|u| topology.neighbors(u).filter(|&v| relays(topology, v)).collect())
        .collect();
    let step_limit = 64 * params.hops_t as u64 + 4096;
    let mut candidates = Vec::new();
    while !active.is_empty() {
        if out.steps >= step_limit {
            return Err(Error::Routing(format!(
                "{} reports still relaying after {step_limit} steps",
                active.len()
            )));
        }
        out.steps += 1;
        let start = occupancy.clone();
        let mut incoming = vec![0usize; n_nodes];
        let mut done = Vec::new();
        let mut next = Vec::with_capacity(active.len());
        for mut f in active {
            if f.hops == params.hops_t {
                occupancy[f.at as usize] -= 1;
                done.push(f);
                continue;
            }
            candidates.clear();
            candidates.extend(neighbors[f.at as usize].iter().copied().filter(|&v| {
                !params.same_vendor || topology.node(v).is_some_and(|n| n.vendor == f.vendor)
            }));
            if candidates.is_empty() {
                occupancy[f.at as usize] -= 1;
                out.dead_ends.push(f.report.report_id);
                continue;
            }
            let v = candidates[rng.random_range(0..candidates.len())];
            if start[v as usize] + incoming[v as usize] < params.buffer_capacity {
                incoming[v as usize] += 1;
                occupancy[f.at as usize] -= 1;
                f.at = v;
                f.hops += 1;
                out.relays += 1;
            }
            next.push(f);
        }
        for (o, i) in occupancy.iter_mut().zip(&incoming) {
            *o += i;
        }
        out.peak_buffer = out.peak_buffer.max(occupancy.iter().copied().max().unwrap_or(0));
        // the server polls relays in id order
        done.sort_by_key(|f| f.at);
        for f in done {
            out.last_holder.push(f.at);
            out.delivered.push(f.report);
        }
        active = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::Payload;
    use crate::shuffle::RouteSpec;
    use crate::netsim::{build_topology, Edge, LinkModel, Node, TopologyKind, TopologyParams};
    use crate::SeedTree;

    fn complete(m: u32) -> Topology {
        let mut nodes = vec![Node {
            id: 0,
            role: Role::Server,
            vendor: 0,
            volunteer: None,
            grid: None,
        }];
        let mut edges = Vec::new();
        for i in 1..=m {
            nodes.push(Node {
                id: i,
                role: Role::Client,
                vendor: i % 2,
                volunteer: None,
                grid: None,
            });
            edges.push(Edge {
                from: i,
                to: 0,
                link: LinkModel::default(),
            });
            for j in 1..=m {
                if i != j {
                    edges.push(Edge {
                        from: i,
                        to: j,
                        link: LinkModel::default(),
                    });
                }
            }
        }
        Topology::custom(TopologyKind::Custom, nodes, edges).unwrap()
    }

    fn reports(n: u64, client: impl Fn(u64) -> u64) -> Vec<Arc<ClientReport>> {
        (0..n)
            .map(|i| Arc::new(ClientReport::new(client(i), i, Payload::Krr(0), 0)))
            .collect()
    }

    fn mesh(n: usize) -> Topology {
        let side = (n as f64).sqrt().ceil() as u32;
        let params = TopologyParams {
            grid: Some((side, side)),
            ..Default::default()
        };
        build_topology(TopologyKind::Mesh, n, &params, &mut SeedTree::new(1).stream("topo", &[])).unwrap()
    }

    /// Distribution after `t` steps of a uniform walk on the complete graph
    /// over `m` nodes, started at node 0.
    fn power_iteration(m: usize, t: u32) -> Vec<f64> {
        let mut d = vec![0.0; m];
        d[0] = 1.0;
        for _ in 0..t {
            let mut nd = vec![0.0; m];
            for (i, &pi) in d.iter().enumerate() {
                for (j, x) in nd.iter_mut().enumerate() {
                    if i != j {
                        *x += pi / (m - 1) as f64;
                    }
                }
            }
            d = nd;
        }
        d
    }

    #[test]
    fn zero_hops_rejected() {
        let t = complete(4);
        let err = multihop_shuffle(&t, &reports(4, |i| i), &MultihopParams::new(0, 4), &mut SeedTree::new(1).stream("w", &[]));
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn last_holder_mixes_to_uniform() {
        let m = 16;
        let hops = (4.0 * (m as f64).log2()) as u32;
        let n = 20_000;
        let t = complete(m as u32);
        let out = multihop_shuffle(
            &t,
            &reports(n, |_| 0),
            &MultihopParams::new(hops, n as usize),
            &mut SeedTree::new(7).stream("w", &[]),
        )
        .unwrap();
        let mut emp = vec![0.0; m];
        for &h in &out.last_holder {
            emp[h as usize - 1] += 1.0 / n as f64;
        }
        let oracle = power_iteration(m, hops);
        let tv_oracle: f64 = oracle.iter().map(|p| (p - 1.0 / m as f64).abs()).sum::<f64>() / 2.0;
        let tv: f64 = emp.iter().map(|p| (p - 1.0 / m as f64).abs()).sum::<f64>() / 2.0;
        assert!(tv_oracle < 1e-6);
        assert!(tv <= 0.05, "tv {tv}");
    }

    #[test]
    fn relay_buffers_stay_bounded() {
        for n in [1_000usize, 10_000] {
            let t = mesh(n);
            let rs = reports(n as u64, |i| i);
            let params = MultihopParams::new(RouteSpec::default_hops(n), 4);
            let out = multihop_shuffle(&t, &rs, &params, &mut SeedTree::new(3).stream("w", &[n as u64])).unwrap();
            assert!(out.peak_buffer <= 4, "n={n}: {}", out.peak_buffer);
            assert_eq!(out.delivered.len(), n);
            assert!(out.dead_ends.is_empty());
        }
    }

    #[test]
    fn delivers_every_report_once() {
        let t = complete(8);
        let rs = reports(8, |i| i);
        let out = multihop_shuffle(&t, &rs, &MultihopParams::new(5, 2), &mut SeedTree::new(9).stream("w", &[])).unwrap();
        let mut ids: Vec<u64> = out.delivered.iter().map(|r| r.report_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..8).collect::<Vec<_>>());
        assert_eq!(out.relays, 8 * 5);
    }

    #[test]
    fn vendor_policy_confines_walk() {
        let t = complete(8);
        let rs = reports(8, |i| i);
        let mut params = MultihopParams::new(6, 8);
        params.same_vendor = true;
        let out = multihop_shuffle(&t, &rs, &params, &mut SeedTree::new(2).stream("w", &[])).unwrap();
        for (r, &h) in out.delivered.iter().zip(&out.last_holder) {
            let origin = t.client_node(r.client_id as usize).unwrap();
            assert_eq!(t.node(h).unwrap().vendor, t.node(origin).unwrap().vendor);
        }
    }

    #[test]
    fn isolated_relay_is_a_dead_end() {
        let t = mesh(1);
        let out = multihop_shuffle(&t, &reports(1, |i| i), &MultihopParams::new(2, 2), &mut SeedTree::new(1).stream("w", &[])).unwrap();
        assert_eq!(out.dead_ends, vec![0]);
        assert!(out.delivered.is_empty());
    }
}
