use std::fmt;
use std::io::Write;
use std::sync::Arc;

use super::{NodeId, Packet};
use crate::ldp::ClientReport;
use crate::{Result, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Sent,
    Relayed,
    Shuffled,
    DroppedLink,
    DroppedAdversary,
    Delayed,
    Arrived,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Sent => "sent",
            EventKind::Relayed => "relayed",
            EventKind::Shuffled => "shuffled",
            EventKind::DroppedLink => "dropped_link",
            EventKind::DroppedAdversary => "dropped_adversary",
            EventKind::Delayed => "delayed",
            EventKind::Arrived => "arrived",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: Tick,
    pub kind: EventKind,
    pub node: NodeId,
    pub report_id: u64,
    pub copy: u32,
    pub size_bytes: u32,
    pub source: NodeId,
    pub payload_opaque: bool,
    pub replayed_from: Option<u64>,
    /// The report carried. Observers must respect `payload_opaque`.
    pub report: Arc<ClientReport>,
}

impl Event {
    pub fn new(time: Tick, kind: EventKind, node: NodeId, packet: &Packet) -> Self {
        Event {
            time,
            kind,
            node,
            report_id: packet.report.report_id,
            copy: packet.copy,
            size_bytes: packet.size_bytes,
            source: packet.source,
            payload_opaque: packet.payload_opaque,
            replayed_from: packet.replayed_from,
            report: Arc::clone(&packet.report),
        }
    }
}

/// Time-ordered record of everything that happened to every packet.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Event>,
    finalized: bool,
}

impl EventLog {
    pub fn push(&mut self, event: Event) {
        self.finalized = false;
        self.events.push(event);
    }

    /// Sorts into the canonical total order: time, then report id, then
    /// insertion order.
    pub fn finalize(&mut self) {
        if !self.finalized {
            self.events.sort_by_key(|e| (e.time, e.report_id));
            self.finalized = true;
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// CSV export with columns `time,event,node,report_id,size`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "event", "node", "report_id", "size"])?;
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.kind.name().to_string(),
                e.node.to_string(),
                e.report_id.to_string(),
                e.size_bytes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
