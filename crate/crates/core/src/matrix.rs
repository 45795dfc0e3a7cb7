//! The enriched normalized matrix.
//!
//! Row 0 carries the five context features; row `i >= 1` carries the
//! inter-arrival gap of packet `i` in column 0 followed by its first `B` masked
//! bytes scaled by 1/255. Every cell lies in `[0, 1]`.

use thiserror::Error;

use crate::context::ContextFeatures;
use crate::flow::{FlowRecord, DEFAULT_FLOW_TIMEOUT_US};
use crate::pcap::{DecodedPacket, Transport};

pub const CONTEXT_FEATURES: usize = 5;
/// UDP headers are zero-extended to the minimum TCP header length.
pub const PADDED_TRANSPORT_HEADER: usize = 20;
pub const MIN_BYTES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("invalid matrix config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixConfig {
    /// P: packet rows.
    pub max_packets: usize,
    /// B: byte columns per packet row.
    pub max_bytes: usize,
    pub gap_scale_ms: f64,
    /// Denominators for the context row: gap, src/bucket, src/time, dst/bucket, dst/time.
    pub ctx_scales: [f64; CONTEXT_FEATURES],
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig::new(100, 200, crate::context::DEFAULT_BUCKET_FLOWS)
    }
}

impl MatrixConfig {
    /// Context counts are scaled by the bucket capacity, gaps by the flow timeout.
    pub fn new(max_packets: usize, max_bytes: usize, bucket_flows: usize) -> Self {
        let gap_scale_ms = (DEFAULT_FLOW_TIMEOUT_US / 1000) as f64;
        let n = bucket_flows.max(1) as f64;
        MatrixConfig {
            max_packets,
            max_bytes,
            gap_scale_ms,
            ctx_scales: [gap_scale_ms, n, n, n, n],
        }
    }

    pub fn validate(&self) -> Result<(), MatrixError> {
        if self.max_packets < 1 {
            return Err(MatrixError::InvalidConfig("max_packets must be >= 1".into()));
        }
        if self.max_bytes < MIN_BYTES {
            return Err(MatrixError::InvalidConfig(format!(
                "max_bytes must be >= {MIN_BYTES}"
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.gap_scale_ms) || !self.ctx_scales.iter().all(|&s| positive(s)) {
            return Err(MatrixError::InvalidConfig("scales must be positive".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        1 + self.max_packets
    }

    pub fn cols(&self) -> usize {
        1 + self.max_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f32>,
    pub label: Option<u16>,
    pub flow_id: String,
}

impl FlowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FlowMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            label: None,
            flow_id: String::new(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    fn row_mut(&mut self, row: usize) -> &mut [f32] {
        &mut self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Clears the context row, leaving only per-packet content.
    pub fn zero_context_row(&mut self) {
        self.row_mut(0).fill(0.0);
    }
}

/// IP/transport bytes with addresses and checksums zeroed in place; UDP headers
/// are followed by 12 inserted zero bytes so payload columns align with TCP.
pub fn mask_packet(packet: &DecodedPacket) -> Vec<u8> {
    let mut bytes = packet.ip_and_payload.clone();
    let layout = &packet.layout;
    for (offset, width) in [
        (layout.ip_checksum, 2),
        (layout.src_ip, 4),
        (layout.dst_ip, 4),
        (layout.l4_checksum, 2),
    ] {
        let end = (offset + width).min(bytes.len());
        if offset < end {
            bytes[offset..end].fill(0);
        }
    }
    if packet.protocol == Transport::Udp {
        let header_end = (layout.l4_start + layout.l4_header_len).min(bytes.len());
        let pad = PADDED_TRANSPORT_HEADER.saturating_sub(layout.l4_header_len);
        bytes.splice(header_end..header_end, std::iter::repeat_n(0u8, pad));
    }
    bytes
}

fn scaled(value: f64, scale: f64) -> f32 {
    (value / scale).clamp(0.0, 1.0) as f32
}

pub fn context_row(ctx: &ContextFeatures, cfg: &MatrixConfig) -> [f32; CONTEXT_FEATURES] {
    let s = &cfg.ctx_scales;
    [
        scaled(ctx.gap_ms, s[0]),
        scaled(ctx.src_count_bucket as f64, s[1]),
        scaled(ctx.src_count_time as f64, s[2]),
        scaled(ctx.dst_count_bucket as f64, s[3]),
        scaled(ctx.dst_count_time as f64, s[4]),
    ]
}

pub fn build_matrix(
    flow: &FlowRecord,
    ctx: &ContextFeatures,
    cfg: &MatrixConfig,
) -> Result<FlowMatrix, MatrixError> {
    cfg.validate()?;
    if flow.packets.is_empty() {
        return Err(MatrixError::EmptyFlow);
    }
    let mut m = FlowMatrix::zeros(cfg.rows(), cfg.cols());
    m.flow_id = flow.flow_id();
    m.row_mut(0)[..CONTEXT_FEATURES].copy_from_slice(&context_row(ctx, cfg));

    let mut previous_us = flow.packets[0].timestamp_us;
    for (i, packet) in flow.packets.iter().take(cfg.max_packets).enumerate() {
        let gap_ms = packet.timestamp_us.saturating_sub(previous_us) as f64 / 1000.0;
        previous_us = packet.timestamp_us;
        let row = m.row_mut(i + 1);
        row[0] = scaled(gap_ms, cfg.gap_scale_ms);
        for (cell, &b) in row[1..].iter_mut().zip(mask_packet(packet).iter()) {
            *cell = b as f32 / 255.0;
        }
    }
    Ok(m)
}
