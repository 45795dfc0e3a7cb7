//! Bidirectional flow assembly.
//!
//! A flow is keyed by its canonical endpoint pair and protocol plus the time it
//! started. It ends at the first FIN (or RST) from either side, when it grows
//! older than the flow timeout, or when the capture ends.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::pcap::{DecodedPacket, Transport};

/// 1,200,000 ms.
pub const DEFAULT_FLOW_TIMEOUT_US: u64 = 1_200_000 * 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("packet timestamp {got} us precedes previous timestamp {previous} us")]
    OutOfOrderTimestamp { previous: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Direction-insensitive conversation key; `a <= b` always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: Transport,
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}-{}", self.protocol, self.a, self.b)
    }
}

pub fn flow_key(packet: &DecodedPacket) -> FlowKey {
    let src = Endpoint::new(packet.src_ip, packet.src_port);
    let dst = Endpoint::new(packet.dst_ip, packet.dst_port);
    let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
    FlowKey {
        a,
        b,
        protocol: packet.protocol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// FIN or RST seen.
    Fin,
    Timeout,
    CaptureEnd,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Fin => "fin",
            Termination::Timeout => "timeout",
            Termination::CaptureEnd => "capture-end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub key: FlowKey,
    /// Sender of the first packet.
    pub initiator: Endpoint,
    pub start_time_us: u64,
    pub end_time_us: u64,
    pub packets: Vec<DecodedPacket>,
    pub termination: Termination,
    /// Creation order within the table; sorting by it yields flow-start order.
    pub seq: u64,
}

impl FlowRecord {
    pub fn responder(&self) -> Endpoint {
        if self.initiator == self.key.a {
            self.key.b
        } else {
            self.key.a
        }
    }

    /// Stable identifier: key plus start time.
    pub fn flow_id(&self) -> String {
        format!(
            "{} {}-{}@{}",
            self.key.protocol,
            self.initiator,
            self.responder(),
            self.start_time_us
        )
    }
}

struct LiveFlow {
    seq: u64,
    initiator: Endpoint,
    start_time_us: u64,
    packets: Vec<DecodedPacket>,
}

impl LiveFlow {
    fn close(self, key: FlowKey, termination: Termination) -> FlowRecord {
        FlowRecord {
            key,
            initiator: self.initiator,
            start_time_us: self.start_time_us,
            end_time_us: self.packets.last().map_or(self.start_time_us, |p| p.timestamp_us),
            packets: self.packets,
            termination,
            seq: self.seq,
        }
    }
}

/// Live-flow table fed one packet at a time in timestamp order.
pub struct FlowTable {
    timeout_us: u64,
    max_live: Option<usize>,
    live: HashMap<FlowKey, LiveFlow>,
    // Start-ordered index; entries whose flow already closed are dropped lazily.
    order: VecDeque<(u64, FlowKey)>,
    next_seq: u64,
    last_ts: Option<u64>,
}

impl Default for FlowTable {
    fn default() -> Self {
        FlowTable::new(DEFAULT_FLOW_TIMEOUT_US)
    }
}

impl FlowTable {
    pub fn new(timeout_us: u64) -> Self {
        FlowTable {
            timeout_us,
            max_live: None,
            live: HashMap::new(),
            order: VecDeque::new(),
            next_seq: 0,
            last_ts: None,
        }
    }

    /// Caps the number of simultaneously live flows; the oldest is evicted as `Timeout`.
    pub fn with_max_live_flows(mut self, max_live: usize) -> Self {
        self.max_live = Some(max_live.max(1));
        self
    }

    pub fn live_flows(&self) -> usize {
        self.live.len()
    }

    fn is_current(&self, seq: u64, key: &FlowKey) -> bool {
        self.live.get(key).is_some_and(|f| f.seq == seq)
    }

    fn pop_oldest(&mut self, termination: Termination) -> Option<FlowRecord> {
        while let Some((seq, key)) = self.order.pop_front() {
            if self.is_current(seq, &key) {
                let flow = self.live.remove(&key).expect("indexed flow is live");
                return Some(flow.close(key, termination));
            }
        }
        None
    }

    /// Adds a packet; returns every flow that closed as a consequence, oldest first.
    pub fn ingest(&mut self, packet: DecodedPacket) -> Result<Vec<FlowRecord>, FlowError> {
        let ts = packet.timestamp_us;
        if let Some(previous) = self.last_ts {
            if ts < previous {
                return Err(FlowError::OutOfOrderTimestamp { previous, got: ts });
            }
        }
        self.last_ts = Some(ts);

        let mut closed = Vec::new();
        // Expire by age relative to this packet.
        while let Some(&(seq, key)) = self.order.front() {
            if !self.is_current(seq, &key) {
                self.order.pop_front();
                continue;
            }
            let start = self.live[&key].start_time_us;
            if ts - start > self.timeout_us {
                self.order.pop_front();
                let flow = self.live.remove(&key).expect("indexed flow is live");
                closed.push(flow.close(key, Termination::Timeout));
            } else {
                break;
            }
        }

        let key = flow_key(&packet);
        if !self.live.contains_key(&key) {
            if let Some(max) = self.max_live {
                while self.live.len() >= max {
                    match self.pop_oldest(Termination::Timeout) {
                        Some(f) => closed.push(f),
                        None => break,
                    }
                }
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            self.order.push_back((seq, key));
            self.live.insert(
                key,
                LiveFlow {
                    seq,
                    initiator: Endpoint::new(packet.src_ip, packet.src_port),
                    start_time_us: ts,
                    packets: Vec::new(),
                },
            );
        }

        let ends = packet.protocol == Transport::Tcp && (packet.tcp_flags.fin() || packet.tcp_flags.rst());
        let flow = self.live.get_mut(&key).expect("flow inserted above");
        flow.packets.push(packet);
        if ends {
            let flow = self.live.remove(&key).expect("flow is live");
            closed.push(flow.close(key, Termination::Fin));
        }
        Ok(closed)
    }

    /// Closes everything still live as `CaptureEnd`, in flow-start order.
    pub fn flush(&mut self) -> Vec<FlowRecord> {
        let mut out = Vec::with_capacity(self.live.len());
        while let Some(f) = self.pop_oldest(Termination::CaptureEnd) {
            out.push(f);
        }
        out
    }
}

/// Runs a whole packet sequence through a table and returns flows in start order.
pub fn assemble<I>(packets: I, mut table: FlowTable) -> Result<Vec<FlowRecord>, FlowError>
where
    I: IntoIterator<Item = DecodedPacket>,
{
    let mut flows = Vec::new();
    for p in packets {
        flows.extend(table.ingest(p)?);
    }
    flows.extend(table.flush());
    flows.sort_by_key(|f| f.seq);
    Ok(flows)
}
