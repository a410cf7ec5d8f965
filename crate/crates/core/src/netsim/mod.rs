//! Integer-tick discrete-event network simulation.
//!
//! Packets move hop by hop along static shortest-path routes. Every link
//! drops a packet independently with its base loss rate and otherwise adds
//! its latency. The server aggregates only what arrives inside an
//! [`AggregationWindow`]; everything else is still logged.

mod log;
mod topology;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::ldp::ClientReport;
use crate::{Error, Result, RngStream, SeedTree, Tick};

pub use log::{Event, EventKind, EventLog};
pub use topology::{
    build_topology, Edge, LinkModel, Node, NodeId, Role, Topology, TopologyKind, TopologyParams, Volunteer,
};

/// A report in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub report: Arc<ClientReport>,
    pub source: NodeId,
    /// 0 for the original transmission, `i` for the `i`-th replayed copy.
    pub copy: u32,
    pub path_so_far: Vec<NodeId>,
    pub send_time: Tick,
    pub arrival_time: Option<Tick>,
    pub dropped: bool,
    pub replayed_from: Option<u64>,
    /// Models an encrypted payload: observers and relays cannot decode it.
    pub payload_opaque: bool,
    /// Extra delay imposed by an on-path adversary at the first hop.
    pub held: Tick,
    pub size_bytes: u32,
}

impl Packet {
    pub fn new(report: Arc<ClientReport>, source: NodeId, payload_opaque: bool, size_bytes: u32) -> Self {
        Packet {
            source,
            copy: 0,
            path_so_far: vec![source],
            send_time: report.emit_time,
            arrival_time: None,
            dropped: false,
            replayed_from: None,
            payload_opaque,
            held: 0,
            size_bytes,
            report,
        }
    }

    pub fn report_id(&self) -> u64 {
        self.report.report_id
    }

    /// Stream of link randomness for this packet. Keyed by report id and copy
    /// number so clean and attacked runs see the same link outcomes.
    pub fn link_stream(&self, seeds: &SeedTree) -> RngStream {
        seeds.stream("link", &[self.report.report_id, self.copy as u64])
    }
}

/// Time interval `[start, end]` of one time-sensitive aggregation query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationWindow {
    pub start: Tick,
    pub end: Tick,
}

impl AggregationWindow {
    pub fn new(start: Tick, end: Tick) -> Result<Self> {
        if end <= start {
            return Err(Error::config(format!("window end {end} must exceed start {start}")));
        }
        Ok(AggregationWindow { start, end })
    }

    pub fn contains(&self, t: Tick) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn span(&self) -> Tick {
        self.end - self.start
    }
}

/// Sends `packet` along its route to the server.
///
/// Each link draws one loss uniform and one jitter value, in that order,
/// whether or not the packet survives; raising a loss rate under the same
/// stream therefore only turns deliveries into drops.
pub fn transmit(
    topology: &Topology,
    mut packet: Packet,
    rng: &mut RngStream,
    log: &mut EventLog,
) -> Result<Option<Packet>> {
    let links = topology.route_links(packet.source)?;
    let mut now = packet.send_time;
    for (i, (from, to, link)) in links.iter().enumerate() {
        let u: f64 = rng.random();
        let jitter = if link.latency_jitter > 0 {
            rng.random_range(0..=2 * link.latency_jitter)
        } else {
            0
        };
        if i == 0 {
            now += packet.held;
        }
        if u < link.base_plr {
            packet.dropped = true;
            log.push(Event::new(now, EventKind::DroppedLink, *from, &packet));
            return Ok(None);
        }
        now += link.latency_base + jitter - link.latency_jitter;
        packet.path_so_far.push(*to);
        if *to == topology.server() {
            packet.arrival_time = Some(now);
            log.push(Event::new(now, EventKind::Arrived, *to, &packet));
        } else {
            let kind = match topology.node(*to).map(|n| n.role) {
                Some(Role::Shuffler) => EventKind::Shuffled,
                _ => EventKind::Relayed,
            };
            log.push(Event::new(now, kind, *to, &packet));
        }
    }
    if links.is_empty() {
        return Err(Error::Routing(format!("packet source {} is the server", packet.source)));
    }
    Ok(Some(packet))
}

/// Shared context for stages that rewrite the packet stream.
pub struct StageContext<'a> {
    pub log: &'a mut EventLog,
    pub seeds: SeedTree,
    pub window: AggregationWindow,
}

/// A transformation of in-flight traffic, e.g. an on-path adversary.
pub trait PacketStage {
    fn apply(&self, packets: Vec<Packet>, ctx: &mut StageContext<'_>) -> Result<Vec<Packet>>;
}

/// Server-side processing of the arrived reports before aggregation.
pub trait ArrivalFilter {
    fn filter(&self, arrived: Vec<Arc<ClientReport>>, seeds: &SeedTree) -> Result<Vec<Arc<ClientReport>>>;
}

/// Network-level options for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOptions {
    pub payload_opaque: bool,
    /// Domain size, used for packet sizes.
    pub domain_k: u32,
}

/// Per-run packet accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Conservation {
    pub sent: u64,
    pub arrived_in_window: u64,
    pub arrived_late: u64,
    pub dropped_link: u64,
    pub dropped_adversary: u64,
}

impl Conservation {
    pub fn from_log(log: &EventLog, window: &AggregationWindow) -> Self {
        let mut c = Conservation::default();
        for e in log.events() {
            match e.kind {
                EventKind::Sent => c.sent += 1,
                EventKind::Arrived if window.contains(e.time) => c.arrived_in_window += 1,
                EventKind::Arrived => c.arrived_late += 1,
                EventKind::DroppedLink => c.dropped_link += 1,
                EventKind::DroppedAdversary => c.dropped_adversary += 1,
                _ => {}
            }
        }
        c
    }

    pub fn balanced(&self) -> bool {
        self.sent == self.arrived_in_window + self.arrived_late + self.dropped_link + self.dropped_adversary
    }
}

#[derive(Debug, Clone)]
pub struct WindowOutcome {
    /// In-window arrivals after server-side filtering, ordered by arrival
    /// time then report id.
    pub arrived: Vec<Arc<ClientReport>>,
    pub log: EventLog,
    pub conservation: Conservation,
}

/// Runs one aggregation window: emits every report from its client's node,
/// lets the adversary act on the traffic, transmits the survivors and
/// collects the in-window arrivals.
///
/// Report `client_id` `i` is sent from the `i`-th client node.
pub fn run_window(
    topology: &Topology,
    reports: &[Arc<ClientReport>],
    window: &AggregationWindow,
    options: &NetOptions,
    adversary: Option<&dyn PacketStage>,
    defense: Option<&dyn ArrivalFilter>,
    seeds: &SeedTree,
) -> Result<WindowOutcome> {
    let clients: Vec<NodeId> = topology.clients().collect();
    let mut log = EventLog::default();
    let mut packets = Vec::with_capacity(reports.len());
    for r in reports {
        let source = *clients
            .get(r.client_id as usize)
            .ok_or_else(|| Error::Routing(format!("client {} has no node in the topology", r.client_id)))?;
        let size = r.size_bytes(options.domain_k);
        let p = Packet::new(Arc::clone(r), source, options.payload_opaque, size);
        log.push(Event::new(p.send_time, EventKind::Sent, source, &p));
        packets.push(p);
    }
    if let Some(stage) = adversary {
        let mut ctx = StageContext {
            log: &mut log,
            seeds: *seeds,
            window: *window,
        };
        packets = stage.apply(packets, &mut ctx)?;
    }
    for p in packets {
        let mut rng = p.link_stream(seeds);
        transmit(topology, p, &mut rng, &mut log)?;
    }
    log.finalize();
    let conservation = Conservation::from_log(&log, window);
    let mut arrived = collect_arrivals(&log, window)?;
    if let Some(filter) = defense {
        arrived = filter.filter(arrived, seeds)?;
    }
    Ok(WindowOutcome {
        arrived,
        log,
        conservation,
    })
}

/// In-window arrivals from a finalized log, ordered by arrival time then
/// report id.
pub fn collect_arrivals(log: &EventLog, window: &AggregationWindow) -> Result<Vec<Arc<ClientReport>>> {
    let mut sent: HashMap<(u64, u32), Tick> = HashMap::new();
    let mut last = 0;
    let mut out = Vec::new();
    for e in log.events() {
        if e.time < last {
            return Err(Error::Integrity(format!("event time {} after {}", e.time, last)));
        }
        last = e.time;
        match e.kind {
            EventKind::Sent => {
                sent.insert((e.report_id, e.copy), e.time);
            }
            EventKind::Arrived => {
                if !sent.contains_key(&(e.report_id, e.copy)) {
                    return Err(Error::Integrity(format!(
                        "report {} (copy {}) arrived without being sent",
                        e.report_id, e.copy
                    )));
                }
                if window.contains(e.time) {
                    out.push(Arc::clone(&e.report));
                }
            }
            _ => {}
        }
    }
    // the log is already time ordered with report-id tie breaks
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::Payload;

    fn report(id: u64, t: Tick) -> Arc<ClientReport> {
        Arc::new(ClientReport::new(id, id, Payload::Krr(0), t))
    }

    fn star(n: usize, link: LinkModel) -> Topology {
        let params = TopologyParams {
            access: link,
            uplink: link,
            ..Default::default()
        };
        build_topology(TopologyKind::Star, n, &params, &mut SeedTree::new(0).stream("t", &[])).unwrap()
    }

    fn chain(plrs: &[f64]) -> Topology {
        // client -> relay ... -> server
        let hops = plrs.len();
        let mut nodes = vec![Node { id: 0, role: Role::Server, vendor: 0, volunteer: None, grid: None }];
        let mut edges = Vec::new();
        for i in 1..=hops as NodeId {
            let role = if i == hops as NodeId { Role::Client } else { Role::Gateway };
            nodes.push(Node { id: i, role, vendor: 0, volunteer: None, grid: None });
            edges.push(Edge { from: i, to: i - 1, link: LinkModel::lossy(plrs[(i - 1) as usize]) });
        }
        Topology::custom(TopologyKind::Custom, nodes, edges).unwrap()
    }

    const OPTS: NetOptions = NetOptions {
        payload_opaque: true,
        domain_k: 8,
    };

    fn delivered_fraction(topo: &Topology, n: u64, seed: u64) -> f64 {
        let seeds = SeedTree::new(seed);
        let node = topo.clients().next().unwrap();
        let mut log = EventLog::default();
        let mut ok = 0;
        for i in 0..n {
            let p = Packet::new(report(i, 0), node, true, 17);
            if transmit(topo, p.clone(), &mut p.link_stream(&seeds), &mut log).unwrap().is_some() {
                ok += 1;
            }
        }
        ok as f64 / n as f64
    }

    #[test]
    fn lossless_delivery_is_deterministic() {
        let topo = star(1, LinkModel { base_plr: 0.0, latency_base: 3, latency_jitter: 0 });
        let mut log = EventLog::default();
        let p = Packet::new(report(0, 10), 1, true, 17);
        let out = transmit(&topo, p.clone(), &mut p.link_stream(&SeedTree::new(1)), &mut log).unwrap().unwrap();
        assert_eq!(out.arrival_time, Some(13));
        assert_eq!(out.path_so_far, vec![1, 0]);
    }

    #[test]
    fn single_link_loss_rate() {
        let f = delivered_fraction(&chain(&[0.1]), 100_000, 3);
        assert!((f - 0.9).abs() <= 0.005, "{f}");
    }

    #[test]
    fn two_links_follow_product_rule() {
        let f = delivered_fraction(&chain(&[0.1, 0.1]), 100_000, 4);
        let want = 0.9 * 0.9;
        let sigma = (want * (1.0 - want) / 100_000.0f64).sqrt();
        assert!((f - want).abs() <= 0.006 && (f - want).abs() <= 3.0 * sigma + 1e-3, "{f}");
    }

    #[test]
    fn raising_loss_never_adds_deliveries() {
        let seeds = SeedTree::new(8);
        for i in 0..2_000u64 {
            let lo = chain(&[0.1, 0.2]);
            let hi = chain(&[0.3, 0.2]);
            let p = Packet::new(report(i, 0), 2, true, 17);
            let a = transmit(&lo, p.clone(), &mut p.link_stream(&seeds), &mut EventLog::default()).unwrap();
            let b = transmit(&hi, p.clone(), &mut p.link_stream(&seeds), &mut EventLog::default()).unwrap();
            assert!(!(a.is_none() && b.is_some()));
        }
    }

    #[test]
    fn jitter_stays_in_range() {
        let topo = star(1, LinkModel { base_plr: 0.0, latency_base: 5, latency_jitter: 2 });
        let seeds = SeedTree::new(2);
        for i in 0..500 {
            let p = Packet::new(report(i, 0), 1, true, 17);
            let out = transmit(&topo, p.clone(), &mut p.link_stream(&seeds), &mut EventLog::default()).unwrap().unwrap();
            assert!((3..=7).contains(&out.arrival_time.unwrap()));
        }
    }

    #[test]
    fn window_collects_everything_when_lossless() {
        let topo = star(1000, LinkModel::default());
        let reports: Vec<_> = (0..1000).map(|i| report(i, i % 50)).collect();
        let w = AggregationWindow::new(0, 100).unwrap();
        let out = run_window(&topo, &reports, &w, &OPTS, None, None, &SeedTree::new(1)).unwrap();
        assert_eq!(out.arrived.len(), 1000);
        assert!(out.conservation.balanced());
        let times: Vec<_> = out.log.events().iter().map(|e| e.time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn late_arrivals_are_logged_but_excluded() {
        let topo = star(3, LinkModel { base_plr: 0.0, latency_base: 10, latency_jitter: 0 });
        let reports = vec![report(0, 0), report(1, 5), report(2, 95)];
        let w = AggregationWindow::new(0, 100).unwrap();
        let out = run_window(&topo, &reports, &w, &OPTS, None, None, &SeedTree::new(1)).unwrap();
        assert_eq!(out.arrived.len(), 2);
        assert_eq!(out.conservation.arrived_late, 1);
        assert!(out.conservation.balanced());
    }

    #[test]
    fn conservation_under_loss() {
        let topo = star(500, LinkModel::lossy(0.3));
        let reports: Vec<_> = (0..500).map(|i| report(i, 0)).collect();
        let w = AggregationWindow::new(0, 10).unwrap();
        let out = run_window(&topo, &reports, &w, &OPTS, None, None, &SeedTree::new(5)).unwrap();
        let c = out.conservation;
        assert!(c.balanced());
        assert!(c.dropped_link > 100 && c.dropped_link < 200);
        assert_eq!(out.arrived.len() as u64, c.arrived_in_window);
    }

    #[test]
    fn same_seed_same_log_bytes() {
        let topo = star(200, LinkModel { base_plr: 0.2, latency_base: 4, latency_jitter: 2 });
        let reports: Vec<_> = (0..200).map(|i| report(i, i % 7)).collect();
        let w = AggregationWindow::new(0, 20).unwrap();
        let run = || {
            let out = run_window(&topo, &reports, &w, &OPTS, None, None, &SeedTree::new(77)).unwrap();
            let mut buf = Vec::new();
            out.log.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn collect_arrivals_cases() {
        let w = AggregationWindow::new(0, 100).unwrap();
        assert!(collect_arrivals(&EventLog::default(), &w).unwrap().is_empty());

        let mut log = EventLog::default();
        let a = Packet::new(report(9, 0), 1, true, 17);
        let b = Packet::new(report(4, 0), 2, true, 17);
        for p in [&a, &b] {
            log.push(Event::new(0, EventKind::Sent, p.source, p));
        }
        log.push(Event::new(5, EventKind::Arrived, 0, &a));
        log.push(Event::new(5, EventKind::Arrived, 0, &b));
        log.finalize();
        let got: Vec<u64> = collect_arrivals(&log, &w).unwrap().iter().map(|r| r.report_id).collect();
        assert_eq!(got, vec![4, 9]);

        let mut log = EventLog::default();
        log.push(Event::new(0, EventKind::Sent, 1, &a));
        log.push(Event::new(0, EventKind::Sent, 2, &b));
        log.push(Event::new(1, EventKind::DroppedLink, 1, &a));
        log.push(Event::new(3, EventKind::Arrived, 0, &b));
        log.finalize();
        assert_eq!(collect_arrivals(&log, &w).unwrap().len(), 1);
    }

    #[test]
    fn malformed_log_rejected() {
        let w = AggregationWindow::new(0, 100).unwrap();
        let p = Packet::new(report(1, 0), 1, true, 17);
        let mut log = EventLog::default();
        log.push(Event::new(3, EventKind::Arrived, 0, &p));
        log.finalize();
        assert!(matches!(collect_arrivals(&log, &w), Err(Error::Integrity(_))));
    }

    #[test]
    fn window_validation() {
        assert!(AggregationWindow::new(5, 5).is_err());
        assert!(AggregationWindow::new(0, 1).is_ok());
    }
}
