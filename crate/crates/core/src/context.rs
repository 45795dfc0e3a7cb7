//! Intra-flow context: the gap since the previous flow start and address
//! repetition counts over a fixed-size bucket and a time window of preceding
//! flow starts.
//!
//! Counts only ever look at strictly preceding flows, in the original
//! interleaved arrival order (attack and benign starts are not separated).

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;
use std::net::Ipv4Addr;

use crate::flow::FlowError;

pub const DEFAULT_BUCKET_FLOWS: usize = 1000;
pub const DEFAULT_WINDOW_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContextFeatures {
    pub gap_ms: f64,
    pub src_count_bucket: u32,
    pub src_count_time: u32,
    pub dst_count_bucket: u32,
    pub dst_count_time: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextConfig {
    /// N: how many most recent flow starts the bucket holds.
    pub bucket_flows: usize,
    /// T: time-window length.
    pub window_ms: u64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            bucket_flows: DEFAULT_BUCKET_FLOWS,
            window_ms: DEFAULT_WINDOW_MS,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Start {
    time_us: u64,
    src: Ipv4Addr,
    dst: Ipv4Addr,
}

/// Multiset counter keyed by address.
#[derive(Debug)]
struct Tally<K>(HashMap<K, u32>);

impl<K> Default for Tally<K> {
    fn default() -> Self {
        Tally(HashMap::new())
    }
}

impl<K: Hash + Eq> Tally<K> {
    fn get(&self, k: &K) -> u32 {
        self.0.get(k).copied().unwrap_or(0)
    }

    fn add(&mut self, k: K) {
        *self.0.entry(k).or_insert(0) += 1;
    }

    fn remove(&mut self, k: &K) {
        if let Some(c) = self.0.get_mut(k) {
            *c -= 1;
            if *c == 0 {
                self.0.remove(k);
            }
        }
    }
}

#[derive(Debug, Default)]
struct Window {
    starts: VecDeque<Start>,
    src: Tally<Ipv4Addr>,
    dst: Tally<Ipv4Addr>,
}

impl Window {
    fn push(&mut self, s: Start) {
        self.src.add(s.src);
        self.dst.add(s.dst);
        self.starts.push_back(s);
    }

    fn pop(&mut self) {
        if let Some(s) = self.starts.pop_front() {
            self.src.remove(&s.src);
            self.dst.remove(&s.dst);
        }
    }
}

#[derive(Debug)]
pub struct ContextTracker {
    cfg: ContextConfig,
    bucket: Window,
    timed: Window,
    last_start_us: Option<u64>,
}

impl ContextTracker {
    pub fn new(cfg: ContextConfig) -> Self {
        assert!(cfg.bucket_flows >= 1, "bucket must hold at least one flow");
        ContextTracker {
            cfg,
            bucket: Window::default(),
            timed: Window::default(),
            last_start_us: None,
        }
    }

    pub fn config(&self) -> ContextConfig {
        self.cfg
    }

    /// Features for a new flow start, computed before the start is recorded.
    pub fn observe_flow(
        &mut self,
        initiator_ip: Ipv4Addr,
        responder_ip: Ipv4Addr,
        start_time_us: u64,
    ) -> Result<ContextFeatures, FlowError> {
        if let Some(previous) = self.last_start_us {
            if start_time_us < previous {
                return Err(FlowError::OutOfOrderTimestamp {
                    previous,
                    got: start_time_us,
                });
            }
        }

        // Keep starts with time > now - T.
        let window_us = self.cfg.window_ms.saturating_mul(1000);
        while let Some(front) = self.timed.starts.front() {
            if front.time_us.saturating_add(window_us) <= start_time_us {
                self.timed.pop();
            } else {
                break;
            }
        }

        let features = ContextFeatures {
            gap_ms: self
                .last_start_us
                .map_or(0.0, |prev| (start_time_us - prev) as f64 / 1000.0),
            src_count_bucket: self.bucket.src.get(&initiator_ip),
            src_count_time: self.timed.src.get(&initiator_ip),
            dst_count_bucket: self.bucket.dst.get(&responder_ip),
            dst_count_time: self.timed.dst.get(&responder_ip),
        };

        let start = Start {
            time_us: start_time_us,
            src: initiator_ip,
            dst: responder_ip,
        };
        self.bucket.push(start);
        if self.bucket.starts.len() > self.cfg.bucket_flows {
            self.bucket.pop();
        }
        self.timed.push(start);
        self.last_start_us = Some(start_time_us);
        Ok(features)
    }
}
