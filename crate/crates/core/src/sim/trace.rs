use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::queue::SimTime;
use crate::access::{AccessMessage, ModelId};
use crate::address::Address;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bearer {
    Advertising,
    Gatt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Radio link loss.
    Lost,
    UnknownKey,
    Authentication,
    Malformed,
    Duplicate,
    /// Network layer opened but no held AppKey opened the payload.
    ApplicationKey,
    ProxyProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Publish { t: SimTime, node: NodeId, src: Address, seq: u32, dst: Address, ttl: u8 },
    Transmit { t: SimTime, node: NodeId, bearer: Bearer, src: Address, seq: u32, ttl: u8, len: usize },
    Receive { t: SimTime, node: NodeId, bearer: Bearer, src: Address, seq: u32, ttl: u8 },
    Drop { t: SimTime, node: NodeId, reason: DropReason },
    Dispatch {
        t: SimTime,
        node: NodeId,
        src: Address,
        seq: u32,
        ttl: u8,
        model: ModelId,
        message: AccessMessage,
    },
}

impl TraceEvent {
    pub fn time(&self) -> SimTime {
        match self {
            TraceEvent::Publish { t, .. }
            | TraceEvent::Transmit { t, .. }
            | TraceEvent::Receive { t, .. }
            | TraceEvent::Drop { t, .. }
            | TraceEvent::Dispatch { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, e: TraceEvent) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn radio_transmissions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Transmit { bearer: Bearer::Advertising, .. }))
            .count()
    }
}
