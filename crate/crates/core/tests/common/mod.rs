//! Independent reference implementations shared by the property tests and the
//! acceptance harness. None of these call into the code they check.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use did::context::ContextFeatures;
use did::nn::{dropout_rng, Model, ModelConfig};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn hex(s: &str) -> Vec<u8> {
    let digits: Vec<u8> = s.bytes().filter(|b| b.is_ascii_hexdigit()).collect();
    assert!(digits.len().is_multiple_of(2), "odd hex length");
    digits
        .chunks(2)
        .map(|p| u8::from_str_radix(std::str::from_utf8(p).unwrap(), 16).unwrap())
        .collect()
}

// ---------------------------------------------------------------- matrices

const TIMEOUT_MS: f64 = 1_200_000.0;

fn clamp01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

/// Masked, padded bytes of one captured Ethernet frame, straight from the
/// header layout: 14-byte Ethernet (18 with an 802.1Q tag), IPv4 with IHL,
/// TCP data offset or the fixed 8-byte UDP header.
pub fn reference_bytes(frame: &[u8]) -> Vec<u8> {
    let eth = if frame[12] == 0x81 && frame[13] == 0x00 { 18 } else { 14 };
    let mut ip = frame[eth..].to_vec();
    let ihl = (ip[0] & 0x0F) as usize * 4;
    let total = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    let tcp = ip[9] == 6;
    let l4_header = if tcp { (ip[ihl + 12] >> 4) as usize * 4 } else { 8 };
    if total >= ihl + l4_header && total < ip.len() {
        ip.truncate(total);
    }
    let checksum = ihl + if tcp { 16 } else { 6 };
    for i in [10, 11, 12, 13, 14, 15, 16, 17, 18, 19, checksum, checksum + 1] {
        if i < ip.len() {
            ip[i] = 0;
        }
    }
    if !tcp {
        let at = ihl + 8;
        let tail = ip.split_off(at);
        ip.extend_from_slice(&[0u8; 12]);
        ip.extend_from_slice(&tail);
    }
    ip
}

/// Full `(1+P) x (1+B)` matrix for a flow given as `(timestamp_us, frame)`
/// pairs and raw context values `[gap_ms, src_bucket, src_time, dst_bucket, dst_time]`.
pub fn reference_matrix(packets: &[(u64, Vec<u8>)], context: [f64; 5], p: usize, b: usize, bucket: usize) -> Vec<f32> {
    let cols = 1 + b;
    let mut m = vec![0f32; (1 + p) * cols];
    m[0] = clamp01(context[0] / TIMEOUT_MS);
    for k in 1..5 {
        m[k] = clamp01(context[k] / bucket as f64);
    }
    for (row, (i, (ts, frame))) in (1..).zip(packets.iter().enumerate().take(p)) {
        let prev = if i == 0 { *ts } else { packets[i - 1].0 };
        m[row * cols] = clamp01((ts - prev) as f64 / 1000.0 / TIMEOUT_MS);
        for (k, byte) in reference_bytes(frame).into_iter().take(b).enumerate() {
            m[row * cols + 1 + k] = byte as f32 / 255.0;
        }
    }
    m
}

// ----------------------------------------------------------------- context

#[derive(Debug, Clone, Copy)]
pub struct StartEvent {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub time_us: u64,
}

/// Rescans every preceding start for every flow: bucket = the `n` most recent
/// starts, time window = starts with `time + window > now`.
pub fn brute_context(starts: &[StartEvent], n: usize, window_ms: u64) -> Vec<ContextFeatures> {
    (0..starts.len())
        .map(|i| {
            let me = starts[i];
            let mut f = ContextFeatures {
                gap_ms: if i == 0 {
                    0.0
                } else {
                    (me.time_us - starts[i - 1].time_us) as f64 / 1000.0
                },
                ..Default::default()
            };
            for (j, other) in starts[..i].iter().enumerate() {
                let in_bucket = i - j <= n;
                let in_time = other.time_us + window_ms * 1000 > me.time_us;
                if other.src == me.src {
                    f.src_count_bucket += in_bucket as u32;
                    f.src_count_time += in_time as u32;
                }
                if other.dst == me.dst {
                    f.dst_count_bucket += in_bucket as u32;
                    f.dst_count_time += in_time as u32;
                }
            }
            f
        })
        .collect()
}

// ----------------------------------------------------------------- metrics

pub type Q = Ratio<i128>;

#[derive(Debug, Clone, Copy)]
pub struct RationalMetrics {
    pub precision: Option<Q>,
    pub recall: Option<Q>,
    pub fall_out: Option<Q>,
    pub f1: Option<Q>,
}

pub fn rational_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> RationalMetrics {
    let q = |n: u64, d: u64| (d != 0).then(|| Q::new(n as i128, d as i128));
    let precision = q(tp, tp + fp);
    let recall = q(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r != Q::from(0) => Some(Q::from(2) * p * r / (p + r)),
        _ => None,
    };
    RationalMetrics {
        precision,
        recall,
        fall_out: q(fp, fp + tn),
        f1,
    }
}

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

// ---------------------------------------------------------- gradient check

#[derive(Debug, Default)]
pub struct GradCheck {
    pub configs: usize,
    pub parameters: usize,
    pub resampled: usize,
    pub max_rel_error: f64,
    pub two_layer_configs: usize,
    pub train_mode_configs: usize,
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so gradients near zero are
/// compared on an absolute scale of 1e-3.
pub const REL_FLOOR: f64 = 1e-3;
/// Configurations with a hidden ReLU pre-activation this close to zero are
/// redrawn: the finite difference would straddle the kink.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

struct Case {
    model: Model<f64>,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    dropout_seed: Option<u64>,
}

fn draw_case(rng: &mut ChaCha8Rng) -> Case {
    let input_dim = rng.random_range(1..=6);
    let seq_len = rng.random_range(1..=4);
    let layers = rng.random_range(1..=2);
    let lstm: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=6)).collect();
    let fc: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=6)).collect();
    let n_classes = rng.random_range(2..=4);
    let mut cfg = ModelConfig::custom(input_dim, seq_len, lstm, fc, n_classes);
    cfg.seed = rng.random();
    let mut model: Model<f64> = Model::new(cfg).unwrap();
    // Move every parameter, biases included, off its initial value.
    for t in &mut model.params {
        for v in &mut t.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let batch = rng.random_range(1..=3);
    let inputs = (0..batch)
        .map(|_| (0..input_dim * seq_len).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..n_classes)).collect();
    let dropout_seed = rng.random_bool(0.5).then(|| rng.random());
    Case {
        model,
        inputs,
        labels,
        dropout_seed,
    }
}

fn near_kink(case: &Case) -> bool {
    case.inputs.iter().enumerate().any(|(i, x)| {
        let mut rng = case.dropout_seed.map(|s| dropout_rng(s, i as u64));
        case.model
            .hidden_preactivations(x, rng.as_mut())
            .unwrap()
            .iter()
            .flatten()
            .any(|z| z.abs() < KINK_MARGIN)
    })
}

/// Analytic gradients of `configs` random small models against 64-bit central
/// differences, every parameter of every model.
pub fn gradient_check(configs: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    while out.configs < configs {
        let case = draw_case(&mut rng);
        if near_kink(&case) {
            out.resampled += 1;
            continue;
        }
        let batch: Vec<(&[f64], usize)> = case.inputs.iter().map(|x| &x[..]).zip(case.labels.iter().copied()).collect();
        let (_, grads) = case.model.loss_and_grads(&batch, case.dropout_seed).unwrap();
        let mut probe = case.model.clone();
        for t in 0..probe.params.len() {
            for k in 0..probe.params[t].data.len() {
                let orig = probe.params[t].data[k];
                probe.params[t].data[k] = orig + FD_STEP;
                let up = probe.loss_and_grads(&batch, case.dropout_seed).unwrap().0;
                probe.params[t].data[k] = orig - FD_STEP;
                let down = probe.loss_and_grads(&batch, case.dropout_seed).unwrap().0;
                probe.params[t].data[k] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                out.max_rel_error = out.max_rel_error.max(rel_error(grads[t][k], numeric));
                out.parameters += 1;
            }
        }
        out.configs += 1;
        out.two_layer_configs += (case.model.n_lstm() == 2) as usize;
        out.train_mode_configs += case.dropout_seed.is_some() as usize;
    }
    out
}

// ------------------------------------------------------ handcrafted flows

/// One hand-assembled flow for the matrix oracle.
pub struct HandFlow {
    pub name: &'static str,
    pub p: usize,
    pub b: usize,
    pub bucket: usize,
    /// Raw context values `[gap_ms, src_bucket, src_time, dst_bucket, dst_time]`.
    pub context: [f64; 5],
    /// Capture snap length; frames longer than this are truncated on write.
    pub snaplen: u32,
    /// `(timestamp_us, frame hex)`.
    pub packets: Vec<(u64, String)>,
}

const ETH: &str = "020000000001 020000000002 0800";
const ETH_VLAN: &str = "020000000001 020000000002 8100 0064 0800";
const CLIENT: &str = "c0a80164"; // 192.168.1.100
const SERVER: &str = "0a000009"; // 10.0.0.9

fn ip(proto: u8, payload_len: usize, options: &str, src: &str, dst: &str) -> String {
    let opt_len = hex(options).len();
    assert!(opt_len.is_multiple_of(4));
    let ihl = 5 + opt_len / 4;
    let total = ihl * 4 + payload_len;
    format!("{:02x}00 {total:04x} 1c46 4000 40 {proto:02x} beef {src} {dst} {options}", 0x40 + ihl)
}

fn tcp(sport: u16, dport: u16, seq: u32, flags: u8, options: &str, payload: &str) -> (String, usize) {
    let opt_len = hex(options).len();
    let offset = 5 + opt_len / 4;
    let seg = format!(
        "{sport:04x} {dport:04x} {seq:08x} 00000001 {:02x}{flags:02x} faf0 abcd 0000 {options} {payload}",
        offset << 4
    );
    let len = hex(&seg).len();
    (seg, len)
}

fn udp(sport: u16, dport: u16, payload: &str) -> (String, usize) {
    let len = 8 + hex(payload).len();
    (format!("{sport:04x} {dport:04x} {len:04x} 5a5a {payload}"), len)
}

fn tcp_frame(c2s: bool, flags: u8, payload: &str) -> String {
    tcp_frame_with(ETH, c2s, flags, "", "", payload)
}

fn tcp_frame_with(eth: &str, c2s: bool, flags: u8, ip_opts: &str, tcp_opts: &str, payload: &str) -> String {
    let (sp, dp, src, dst) = if c2s { (50000, 80, CLIENT, SERVER) } else { (80, 50000, SERVER, CLIENT) };
    let (seg, len) = tcp(sp, dp, 0x01020304, flags, tcp_opts, payload);
    format!("{eth} {} {seg}", ip(6, len, ip_opts, src, dst))
}

fn udp_frame(c2s: bool, payload: &str) -> String {
    let (sp, dp, src, dst) = if c2s { (40000, 53, CLIENT, SERVER) } else { (53, 40000, SERVER, CLIENT) };
    let (dg, len) = udp(sp, dp, payload);
    format!("{ETH} {} {dg}", ip(17, len, "", src, dst))
}

fn ascii_hex(s: &str) -> String {
    s.bytes().map(|b| format!("{b:02x}")).collect()
}

fn ramp_hex(n: usize) -> String {
    (0..n).map(|i| format!("{:02x}", (i * 7 + 3) % 256)).collect()
}

const SYN: u8 = 0x02;
const SYN_ACK: u8 = 0x12;
const ACK: u8 = 0x10;
const PSH_ACK: u8 = 0x18;
const FIN_ACK: u8 = 0x11;
const RST: u8 = 0x04;

pub fn handcrafted_flows() -> Vec<HandFlow> {
    let t0 = 1_600_000_000_000_000u64;
    let seq = |frames: Vec<String>, step_us: u64| -> Vec<(u64, String)> {
        frames.into_iter().enumerate().map(|(i, f)| (t0 + i as u64 * step_us, f)).collect()
    };
    let handshake = || {
        vec![
            tcp_frame(true, SYN, ""),
            tcp_frame(false, SYN_ACK, ""),
            tcp_frame(true, ACK, ""),
        ]
    };
    let flow = |name, p, b, context, packets| HandFlow {
        name,
        p,
        b,
        bucket: 100,
        context,
        snaplen: 65535,
        packets,
    };
    let mut out = Vec::new();

    let mut f = handshake();
    f.push(tcp_frame(true, PSH_ACK, &ascii_hex("GET / HTTP/1.1\r\n\r\n")));
    f.push(tcp_frame(false, PSH_ACK, &ascii_hex("HTTP/1.1 200 OK\r\n\r\nhello")));
    f.push(tcp_frame(true, FIN_ACK, ""));
    out.push(flow("tcp-full-exchange", 8, 80, [0.0; 5], seq(f, 1_500)));

    out.push(flow(
        "tcp-payload-wider-than-b",
        3,
        60,
        [12.5, 3.0, 2.0, 1.0, 0.0],
        seq(vec![tcp_frame(true, PSH_ACK, &ramp_hex(300)), tcp_frame(true, FIN_ACK, "")], 250),
    ));
    out.push(flow(
        "tcp-options",
        2,
        100,
        [1.0, 0.0, 0.0, 0.0, 0.0],
        seq(vec![tcp_frame_with(ETH, true, SYN, "", "020405b4 0103030801010402", "")], 0),
    ));
    out.push(flow(
        "ip-options",
        2,
        100,
        [0.0; 5],
        seq(vec![tcp_frame_with(ETH, true, PSH_ACK, "94040000", "", &ascii_hex("abc"))], 0),
    ));
    out.push(flow(
        "udp-query-response",
        4,
        80,
        [40.0, 5.0, 5.0, 7.0, 9.0],
        seq(vec![udp_frame(true, &ascii_hex("QUERY a.example")), udp_frame(false, &ascii_hex("ANSWER 1.2.3.4"))], 900),
    ));
    out.push(flow(
        "udp-payload-wider-than-b",
        2,
        48,
        [0.0; 5],
        seq(vec![udp_frame(true, &ramp_hex(200))], 0),
    ));
    out.push(flow("udp-empty-payload", 2, 40, [0.0; 5], seq(vec![udp_frame(true, "")], 0)));

    let mut long = handshake();
    for i in 0..4 {
        long.push(tcp_frame(i % 2 == 0, PSH_ACK, &ramp_hex(10 + i)));
    }
    out.push(flow("more-packets-than-p", 4, 64, [0.0; 5], seq(long, 333)));

    let mut truncated = flow(
        "tcp-truncated-capture",
        2,
        120,
        [0.0; 5],
        seq(vec![tcp_frame(true, PSH_ACK, &ramp_hex(200)), tcp_frame(false, ACK, "")], 10),
    );
    truncated.snaplen = 80;
    out.push(truncated);

    let mut utrunc = flow(
        "udp-truncated-capture",
        2,
        120,
        [0.0; 5],
        seq(vec![udp_frame(true, &ramp_hex(100))], 0),
    );
    utrunc.snaplen = 60;
    out.push(utrunc);

    // A bare ACK is 54 bytes; Ethernet pads it to 60 with a trailer.
    let padded = tcp_frame(true, ACK, "") + " 000000000000";
    out.push(flow("ethernet-trailer", 2, 60, [0.0; 5], seq(vec![tcp_frame(true, SYN, ""), padded], 75)));

    out.push(flow(
        "vlan-tagged",
        2,
        64,
        [0.0; 5],
        seq(vec![tcp_frame_with(ETH_VLAN, true, PSH_ACK, "", "", &ascii_hex("vlan payload"))], 0),
    ));
    out.push(flow(
        "long-gap",
        3,
        50,
        [0.0; 5],
        seq(vec![tcp_frame(true, SYN, ""), tcp_frame(false, SYN_ACK, ""), tcp_frame(true, ACK, "")], 500_000_000),
    ));
    out.push(flow(
        "clamped-context",
        2,
        50,
        [5_000_000.0, 150.0, 100.0, 99.0, 1_000.0],
        seq(vec![tcp_frame(true, SYN, "")], 0),
    ));
    out.push(flow(
        "rst-terminated",
        3,
        50,
        [3.0, 1.0, 1.0, 1.0, 1.0],
        seq(vec![tcp_frame(true, SYN, ""), tcp_frame(false, RST | ACK, "")], 120),
    ));
    out.push(flow(
        "same-timestamp",
        3,
        50,
        [0.0; 5],
        seq(vec![tcp_frame(true, SYN, ""), tcp_frame(false, SYN_ACK, ""), tcp_frame(true, ACK, "")], 0),
    ));
    out.push(flow(
        "minimum-width",
        2,
        20,
        [0.0; 5],
        seq(vec![tcp_frame(true, PSH_ACK, &ramp_hex(40))], 0),
    ));
    out.push(flow(
        "high-bytes",
        2,
        64,
        [0.0; 5],
        seq(vec![tcp_frame(true, PSH_ACK, "ffffffff00ff80 7f fe01")], 0),
    ));
    out.push(flow(
        "single-row",
        1,
        100,
        [0.25, 1.0, 0.0, 0.0, 1.0],
        seq(vec![tcp_frame(true, PSH_ACK, &ascii_hex("x")), tcp_frame(false, ACK, "")], 40),
    ));
    let mut mixed = flow(
        "uneven-gaps",
        5,
        70,
        [0.0, 0.0, 0.0, 0.0, 0.0],
        seq(handshake(), 0),
    );
    for (i, (ts, _)) in mixed.packets.iter_mut().enumerate() {
        *ts = t0 + [0, 17, 1_234_567][i];
    }
    mixed.bucket = 7;
    mixed.context = [0.5, 3.0, 7.0, 8.0, 2.0];
    out.push(mixed);
    out
}

/// What the library produces for a handcrafted flow, going through a pcap
/// written with the flow's snap length.
pub fn library_matrix(flow: &HandFlow) -> did::matrix::FlowMatrix {
    use did::flow::{assemble, FlowTable};
    use did::pcap::{CaptureReader, CaptureWriter, Decoder};

    let mut w = CaptureWriter::new(Vec::new(), flow.snaplen).unwrap();
    for (ts, h) in &flow.packets {
        w.write_frame(*ts, &hex(h)).unwrap();
    }
    let bytes = w.finish().unwrap();
    let mut decoder = Decoder::default();
    let packets: Vec<_> = CaptureReader::new(&bytes[..])
        .unwrap()
        .map(|f| decoder.decode(&f.unwrap()).expect("handcrafted frame decodes"))
        .collect();
    let flows = assemble(packets, FlowTable::default()).unwrap();
    assert_eq!(flows.len(), 1, "{}: expected one flow", flow.name);
    let c = flow.context;
    let ctx = ContextFeatures {
        gap_ms: c[0],
        src_count_bucket: c[1] as u32,
        src_count_time: c[2] as u32,
        dst_count_bucket: c[3] as u32,
        dst_count_time: c[4] as u32,
    };
    let cfg = did::matrix::MatrixConfig::new(flow.p, flow.b, flow.bucket);
    did::matrix::build_matrix(&flows[0], &ctx, &cfg).unwrap()
}

/// Reference matrix for a handcrafted flow, from its hex alone.
pub fn oracle_matrix(flow: &HandFlow) -> Vec<f32> {
    let captured: Vec<(u64, Vec<u8>)> = flow
        .packets
        .iter()
        .map(|(ts, h)| {
            let mut b = hex(h);
            b.truncate(flow.snaplen as usize);
            (*ts, b)
        })
        .collect();
    reference_matrix(&captured, flow.context, flow.p, flow.b, flow.bucket)
}

// ------------------------------------------------------------ pcap fuzzing

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub inputs: usize,
    /// Records the reader handed out.
    pub records: u64,
    pub decoded: u64,
    pub skipped: u64,
    /// Inputs that ended in a declared reader error.
    pub reader_errors: u64,
    /// Inputs whose packets were rejected by flow assembly (out-of-order time).
    pub flow_errors: u64,
    pub matrices: u64,
    /// Inputs where records != decoded + skipped.
    pub accounting_failures: u64,
    /// Matrices with a cell outside [0, 1].
    pub range_failures: u64,
}

impl FuzzStats {
    /// Records consumed, counting a record that ended in an error.
    pub fn attempted(&self) -> u64 {
        self.records + self.reader_errors
    }
}

fn le32(v: u32) -> [u8; 4] {
    v.to_le_bytes()
}

fn global_header(snaplen: u32) -> Vec<u8> {
    let mut h = vec![0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0];
    h.extend_from_slice(&[0; 8]);
    h.extend_from_slice(&le32(snaplen));
    h.extend_from_slice(&le32(1));
    h
}

/// A frame that reaches the IPv4/L4 decoders with random lengths and flags.
fn plausible_frame(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.random_range(0..120);
    let mut f: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    if f.len() >= 14 {
        let vlan = rng.random_bool(0.2);
        let (et, ip) = if vlan && f.len() >= 18 {
            f[12] = 0x81;
            f[13] = 0x00;
            (16, 18)
        } else {
            (12, 14)
        };
        if rng.random_bool(0.9) {
            f[et] = 0x08;
            f[et + 1] = 0x00;
        }
        if f.len() > ip + 9 {
            if rng.random_bool(0.8) {
                f[ip] = 0x40 | rng.random_range(0..16u8);
            }
            if rng.random_bool(0.8) {
                f[ip + 9] = if rng.random_bool(0.5) { 6 } else { 17 };
            }
            if rng.random_bool(0.7) {
                f[ip + 6] &= 0x40;
                f[ip + 7] = 0;
            }
        }
    }
    f
}

fn random_capture(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let snaplen = if rng.random_bool(0.2) { rng.random_range(0..200) } else { 65535 };
    let mut out = global_header(snaplen);
    let mut ts = 0u32;
    for _ in 0..rng.random_range(1..200) {
        let frame = plausible_frame(rng);
        ts = if rng.random_bool(0.05) { rng.random() } else { ts.saturating_add(rng.random_range(0..3)) };
        let mut incl = frame.len() as u32;
        let mut orig = incl + rng.random_range(0..4);
        if rng.random_bool(0.02) {
            incl = rng.random();
        }
        if rng.random_bool(0.02) {
            orig = rng.random();
        }
        for v in [ts, rng.random_range(0..1_000_000), incl, orig] {
            out.extend_from_slice(&le32(v));
        }
        out.extend_from_slice(&frame);
    }
    out
}

fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut bytes = base.to_vec();
    match rng.random_range(0..3) {
        0 => bytes.truncate(rng.random_range(0..=bytes.len())),
        1 => {
            for _ in 0..rng.random_range(1..32) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = rng.random();
            }
        }
        _ => {
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(24..bytes.len());
                bytes[i] ^= 1 << rng.random_range(0..8);
            }
            bytes.truncate(rng.random_range(bytes.len() / 2..=bytes.len()));
        }
    }
    bytes
}

fn fuzz_one(bytes: &[u8], stats: &mut FuzzStats) {
    use did::flow::{FlowTable, assemble};
    use did::matrix::{build_matrix, MatrixConfig};
    use did::pcap::{CaptureReader, Decoder};

    stats.inputs += 1;
    let Ok(mut reader) = CaptureReader::new(bytes) else {
        stats.reader_errors += 1;
        return;
    };
    let mut decoder = Decoder::default();
    let mut packets = Vec::new();
    let mut records = 0u64;
    loop {
        match reader.next_frame() {
            Ok(Some(frame)) => {
                records += 1;
                packets.extend(decoder.decode(&frame));
            }
            Ok(None) => break,
            Err(_) => {
                stats.reader_errors += 1;
                break;
            }
        }
    }
    stats.records += records;
    stats.decoded += decoder.decoded;
    stats.skipped += decoder.skipped.total();
    if records != decoder.decoded + decoder.skipped.total() {
        stats.accounting_failures += 1;
    }
    let flows = match assemble(packets, FlowTable::default()) {
        Ok(f) => f,
        Err(_) => {
            stats.flow_errors += 1;
            return;
        }
    };
    let cfg = MatrixConfig::new(8, 64, 100);
    for flow in &flows {
        let m = build_matrix(flow, &ContextFeatures::default(), &cfg).unwrap();
        stats.matrices += 1;
        if m.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            stats.range_failures += 1;
        }
    }
}

/// Feeds corrupted synthetic captures and random record streams through the
/// reader, decoder, flow table and matrix builder until at least `records`
/// records have been consumed.
pub fn fuzz_pcap(records: u64, seed: u64) -> FuzzStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = did::synth::generate(&did::synth::ScenarioConfig {
        seed,
        ..did::synth::ScenarioConfig::pattern(20, 20)
    })
    .pcap;
    let mut stats = FuzzStats::default();
    while stats.attempted() < records {
        let input = if rng.random_bool(0.5) { mutate(&base, &mut rng) } else { random_capture(&mut rng) };
        fuzz_one(&input, &mut stats);
    }
    stats
}

// -------------------------------------------------------- full experiment

pub struct Experiment {
    pub didm: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub metrics_json: String,
    pub f1: Option<f64>,
    pub best_epoch: usize,
    pub test_size: usize,
}

/// synth, extract, featurize, binary balance, 64/16/20 split, train, and
/// evaluate on the test part; everything in memory.
pub fn run_experiment(
    scenario: &did::synth::ScenarioConfig,
    cfg: &did::config::RunConfig,
    zero_context: bool,
) -> Experiment {
    use did::dataset::{balance, split, write_matrices_to, Split};
    use did::pipeline;

    let s = did::synth::generate(scenario);
    let reader = did::pcap::CaptureReader::new(&s.pcap[..]).unwrap();
    let ex = pipeline::extract_from(reader, cfg).unwrap();
    let mats = pipeline::featurize(&ex.flows, Some(&s.manifest), cfg, zero_context).unwrap();
    let file = pipeline::matrix_file(mats, cfg);
    let mut didm = Vec::new();
    write_matrices_to(&mut didm, &file).unwrap();

    let file = file.subset(&balance(&file.labels(), cfg.balance_mode(), cfg.seed).unwrap());
    let parts = split(&file.labels(), cfg.split, cfg.seed).unwrap();
    let pick = |want: Split| {
        let idx: Vec<usize> = (0..parts.len()).filter(|&i| parts[i] == want).collect();
        file.subset(&idx)
    };
    let (train, val, test) = (pick(Split::Train), pick(Split::Val), pick(Split::Test));

    let outcome = pipeline::train_model(&train, &val, cfg).unwrap();
    let mut checkpoint = Vec::new();
    outcome.best.write_to(&mut checkpoint).unwrap();
    let cm = pipeline::evaluate(&outcome.best.model, &test).unwrap();
    let report = did::eval::multiclass_report(&cm, cfg.class_names());
    Experiment {
        didm,
        checkpoint,
        metrics_json: report.to_json(),
        f1: did::eval::metrics(&cm, 1).f1,
        best_epoch: outcome.best_epoch,
        test_size: test.records.len(),
    }
}

// ------------------------------------------------------ split accounting

/// Checks a 64/16/20 assignment class by class. Train and val must be the
/// rounded-down shares, test takes the rest; with `strict` every part must
/// also sit within one record of its exact share.
pub fn check_split(labels: &[u16], parts: &[did::dataset::Split], strict: bool) -> Result<(), String> {
    use did::dataset::Split;
    let mut classes: Vec<u16> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let n = labels.iter().filter(|&&l| l == c).count();
        let count = |want: Split| labels.iter().zip(parts).filter(|&(&l, &p)| l == c && p == want).count();
        let (train, val, test) = (count(Split::Train), count(Split::Val), count(Split::Test));
        let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        if (train, val) != (floor(0.64), floor(0.16)) || train + val + test != n {
            return Err(format!("class {c} (n={n}): {train}/{val}/{test}"));
        }
        if strict {
            for (got, frac) in [(train, 0.64), (val, 0.16), (test, 0.20)] {
                if (got as f64 - frac * n as f64).abs() > 1.0 {
                    return Err(format!("class {c} (n={n}): {train}/{val}/{test} not within 1 of 64/16/20"));
                }
            }
        }
    }
    Ok(())
}

/// Folds equal within one record overall and within every class.
pub fn check_folds(labels: &[u16], folds: &[usize], k: usize) -> Result<(), String> {
    let spread = |counts: &[usize]| counts.iter().max().unwrap() - counts.iter().min().unwrap();
    let mut overall = vec![0usize; k];
    for &f in folds {
        if f >= k {
            return Err(format!("fold id {f} out of range"));
        }
        overall[f] += 1;
    }
    if spread(&overall) > 1 {
        return Err(format!("fold sizes {overall:?}"));
    }
    let mut classes: Vec<u16> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut per = vec![0usize; k];
        for (&l, &f) in labels.iter().zip(folds) {
            if l == c {
                per[f] += 1;
            }
        }
        if spread(&per) > 1 {
            return Err(format!("class {c} fold sizes {per:?}"));
        }
    }
    Ok(())
}

// ------------------------------------------------- metrics vs rationals

#[derive(Debug, Default)]
pub struct MetricCheck {
    pub matrices: usize,
    pub class_views: usize,
    pub undefined_seen: usize,
    /// Largest relative deviation of F1 from its exact rational value.
    pub max_f1_rel: f64,
    pub failures: Vec<String>,
}

/// Random confusion matrices (2-7 classes, some empty rows and columns); every
/// one-vs-rest view is compared to exact rational arithmetic. PR, RC and FO
/// are single divisions and must match the correctly rounded rational
/// bit for bit; F1 within 1e-12 relative.
pub fn check_metrics(matrices: usize, seed: u64) -> MetricCheck {
    use did::eval::{confusion, metrics};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MetricCheck::default();
    for _ in 0..matrices {
        let n = rng.random_range(2..=7);
        let dead: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..rng.random_range(0..2000) {
            let t = rng.random_range(0..n);
            let p = if rng.random_bool(0.6) { t } else { rng.random_range(0..n) };
            if !dead[t] && !dead[p] {
                truths.push(t);
                preds.push(p);
            }
        }
        let cm = confusion(&truths, &preds, n).unwrap();
        out.matrices += 1;
        for class in 0..n {
            let c = cm.collapse(class);
            let got = metrics(&cm, class);
            let want = rational_metrics(c.tp, c.fp, c.tn, c.fn_);
            out.class_views += 1;
            let exact = [
                ("precision", got.precision, want.precision),
                ("recall", got.recall, want.recall),
                ("fall_out", got.fall_out, want.fall_out),
            ];
            for (name, g, w) in exact {
                if g.map(f64::to_bits) != w.map(|q| to_f64(q).to_bits()) {
                    out.failures.push(format!("{name} {g:?} vs {w:?} for {c:?}"));
                }
            }
            match (got.f1, want.f1) {
                (Some(g), Some(w)) => {
                    let w = to_f64(w);
                    let rel = (g - w).abs() / w.abs();
                    out.max_f1_rel = out.max_f1_rel.max(rel);
                    if rel > 1e-12 {
                        out.failures.push(format!("f1 {g} vs {w} for {c:?}"));
                    }
                }
                (None, None) => out.undefined_seen += 1,
                (g, w) => out.failures.push(format!("f1 {g:?} vs {w:?} for {c:?}")),
            }
            if got.precision.is_none() || got.recall.is_none() || got.fall_out.is_none() {
                out.undefined_seen += 1;
            }
        }
    }
    out
}

// ------------------------------------------------------------------- CLI

pub fn did_bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_did"))
}

/// Runs the binary in `dir`, panicking with its stderr unless it exits 0.
pub fn did_ok(dir: &std::path::Path, args: &[&str]) -> String {
    let out = did_bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "did {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub struct CliArtifacts {
    pub didm: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub metrics_json: Vec<u8>,
}

/// synth, featurize, balance, split, train and eval through the binary, all
/// inside `dir`, with a small matrix shape so it runs in seconds.
pub fn cli_pipeline(dir: &std::path::Path, seed: u64, epochs: usize) -> CliArtifacts {
    let seed = seed.to_string();
    let epochs = epochs.to_string();
    let shape = ["--max-packets", "8", "--max-bytes", "64"];
    did_ok(dir, &["synth", "--seed", &seed, "--benign", "150", "--attack", "150", "-o", "s.pcap", "-m", "s.labels", "--summary", "s.json"]);
    let mut args = vec!["featurize", "s.pcap", "-l", "s.labels", "-o", "all.didm"];
    args.extend(shape);
    did_ok(dir, &args);
    did_ok(dir, &["balance", "all.didm", "--seed", &seed, "-o", "bal.didm"]);
    did_ok(dir, &["split", "bal.didm", "--seed", &seed, "-o", "run"]);
    did_ok(dir, &["train", "run.train.didm", "--seed", &seed, "--epochs", &epochs, "-o", "m.didc"]);
    did_ok(dir, &["eval", "m.didc", "run.test.didm", "-o", "metrics.json"]);
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
    CliArtifacts {
        didm: read("all.didm"),
        checkpoint: read("m.didc"),
        metrics_json: read("metrics.json"),
    }
}
