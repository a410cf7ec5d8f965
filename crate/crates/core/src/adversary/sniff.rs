use std::collections::HashMap;

use crate::ldp::Payload;
use crate::netsim::{EventKind, EventLog, NodeId};
use crate::Tick;

/// What a passive on-path observer learns about one transmitted packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: Tick,
    pub size_bytes: u32,
    pub source: NodeId,
    /// Number of packets seen from `source` so far, this one included.
    pub count_from_source: u64,
    pub report_id: u64,
    /// Present only when the packet is not opaque.
    pub payload: Option<Payload>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationLog {
    pub records: Vec<Observation>,
}

/// Projects an event log onto the fields a traffic sniffer can see: one
/// record per transmitted packet with timing, size, count and endpoint.
pub fn sniff(log: &EventLog) -> ObservationLog {
    let mut counts: HashMap<NodeId, u64> = HashMap::new();
    let records = log
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::Sent)
        .map(|e| {
            let c = counts.entry(e.source).or_default();
            *c += 1;
            Observation {
                time: e.time,
                size_bytes: e.size_bytes,
                source: e.source,
                count_from_source: *c,
                report_id: e.report_id,
                payload: (!e.payload_opaque).then(|| e.report.payload.clone()),
            }
        })
        .collect();
    ObservationLog { records }
}
