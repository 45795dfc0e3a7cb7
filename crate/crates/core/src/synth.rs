//! Synthetic labeled captures.
//!
//! Every flow, benign or attack, is built by the same generator: a TCP
//! handshake, one to three request/response turns and a closing client FIN, or
//! a short UDP exchange. Benign payloads are printable ASCII. Attack classes
//! differ from benign in exactly one controlled way:
//!
//! - [`AttackProfile::Pattern`]: a fixed high-byte motif sits at a random
//!   offset in the first client payload. Arrival times and endpoints follow the
//!   benign distribution.
//! - [`AttackProfile::Flood`]: payloads, ports and packet timing are drawn
//!   exactly as for benign flows, but flows arrive in dense bursts aimed at one
//!   victim, so only the context features can tell them apart.
//! - [`AttackProfile::Scan`]: one scanner probes consecutive ports; each probe
//!   is a SYN answered by RST.

use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::dataset::{EndpointPattern, LabelManifest, LabelRule, TimeRange};
use crate::flow::Endpoint;
use crate::pcap::{CaptureWriter, TcpFlags, Transport};

/// Inserted into the first client payload of pattern-attack flows: a short NOP
/// sled and a jump/interrupt tail. Every byte is >= 0x80, so it never occurs in
/// benign (ASCII) payloads.
pub const PATTERN_MOTIF: [u8; 16] = [
    0x90, 0x90, 0x90, 0x90, 0x90, 0x90, 0x90, 0x90, 0xEB, 0xFE, 0xCD, 0x80, 0xFF, 0xE4, 0xC3, 0xCC,
];

/// Largest payload offset for the motif, so it stays within the first 200
/// bytes of the packet (IP and TCP headers take 40).
const MAX_MOTIF_OFFSET: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackProfile {
    Pattern,
    Flood,
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSpec {
    pub profile: AttackProfile,
    pub class_id: u16,
    pub class_name: String,
    pub flows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub benign_flows: usize,
    pub attacks: Vec<AttackSpec>,
    /// Mean gap between benign flow starts.
    pub benign_gap_ms: f64,
    /// Share of UDP flows, the same in every class.
    pub udp_fraction: f64,
    /// Flood and scan target; it is also one of the ordinary servers.
    pub victim: Ipv4Addr,
    /// Byte sequence injected into pattern-attack payloads.
    pub motif: Vec<u8>,
    /// Draw attack initiators (and pattern-attack responders) from pools no
    /// benign flow uses. Off by default so addresses carry no label signal.
    pub disjoint_ips: bool,
    pub start_us: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::pattern(1000, 1000)
    }
}

impl ScenarioConfig {
    fn with_attack(benign: usize, attack: AttackSpec) -> Self {
        ScenarioConfig {
            seed: 0,
            benign_flows: benign,
            attacks: vec![attack],
            benign_gap_ms: 50.0,
            udp_fraction: 0.2,
            victim: Ipv4Addr::new(10, 0, 0, 9),
            motif: PATTERN_MOTIF.to_vec(),
            disjoint_ips: false,
            start_us: 1_500_000_000_000_000,
        }
    }

    pub fn pattern(benign: usize, attack: usize) -> Self {
        ScenarioConfig::with_attack(
            benign,
            AttackSpec {
                profile: AttackProfile::Pattern,
                class_id: 1,
                class_name: "web-attack".into(),
                flows: attack,
            },
        )
    }

    pub fn flood(benign: usize, attack: usize) -> Self {
        ScenarioConfig::with_attack(
            benign,
            AttackSpec {
                profile: AttackProfile::Flood,
                class_id: 4,
                class_name: "dos-ddos".into(),
                flows: attack,
            },
        )
    }

    pub fn scan(benign: usize, attack: usize) -> Self {
        ScenarioConfig::with_attack(
            benign,
            AttackSpec {
                profile: AttackProfile::Scan,
                class_id: 3,
                class_name: "port-scan".into(),
                flows: attack,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub class_id: u16,
    pub class_name: String,
    pub flows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub classes: Vec<ClassCount>,
    pub flows: usize,
    pub packets: usize,
    pub first_us: u64,
    pub last_us: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Classic little-endian microsecond pcap.
    pub pcap: Vec<u8>,
    pub manifest: LabelManifest,
    pub summary: Summary,
}

impl Scenario {
    /// Writes `<stem>.pcap`, `<stem>.labels` and `<stem>.summary.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.pcap")), &self.pcap)?;
        fs::write(dir.join(format!("{stem}.labels")), self.manifest.to_string())?;
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(dir.join(format!("{stem}.summary.json")), json + "\n")
    }
}

struct Packet {
    ts_us: u64,
    flow: usize,
    frame: Vec<u8>,
}

struct FlowPlan {
    class: Option<usize>,
    profile: Option<AttackProfile>,
    start_us: u64,
    protocol: Transport,
    client: Endpoint,
    server: Endpoint,
}

const WORDS: &[&str] = &[
    "index", "api", "login", "static", "images", "news", "cart", "search", "user", "account", "docs",
    "assets", "blog", "v1", "v2", "status", "health", "data", "report", "feed",
];

fn ascii_text<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        out.extend_from_slice(WORDS.choose(rng).unwrap().as_bytes());
        out.push(if rng.random_bool(0.1) { b'\n' } else { b' ' });
    }
    out.truncate(len);
    out
}

fn http_request<R: Rng>(rng: &mut R) -> Vec<u8> {
    let path: Vec<&str> = (0..rng.random_range(1..4)).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let method = if rng.random_bool(0.8) { "GET" } else { "POST" };
    let mut req = format!(
        "{method} /{}.html HTTP/1.1\r\nHost: www.{}.example\r\nUser-Agent: client/{}.{}\r\nAccept: */*\r\n",
        path.join("/"),
        WORDS.choose(rng).unwrap(),
        rng.random_range(1..10),
        rng.random_range(0..100)
    )
    .into_bytes();
    if method == "POST" {
        let body = {
            let n = rng.random_range(20..200);
            ascii_text(rng, n)
        };
        req.extend_from_slice(format!("Content-Length: {}\r\n\r\n", body.len()).as_bytes());
        req.extend_from_slice(&body);
    } else {
        req.extend_from_slice(b"\r\n");
    }
    req
}

fn http_response<R: Rng>(rng: &mut R) -> Vec<u8> {
    let body = {
        let n = rng.random_range(50..900);
        ascii_text(rng, n)
    };
    let mut resp = format!("HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {}\r\n\r\n", body.len()).into_bytes();
    resp.extend_from_slice(&body);
    resp
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum = 0u32;
    for chunk in chunks {
        let mut it = chunk.chunks(2);
        for pair in &mut it {
            let word = (pair[0] as u32) << 8 | pair.get(1).copied().unwrap_or(0) as u32;
            sum += word;
        }
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Ethernet + IPv4 + transport segment with valid checksums.
fn frame(src: Endpoint, dst: Endpoint, protocol: Transport, ip_id: u16, ttl: u8, l4: Vec<u8>) -> Vec<u8> {
    let mut l4 = l4;
    let total = 20 + l4.len();
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&(total as u16).to_be_bytes());
    ip[4..6].copy_from_slice(&ip_id.to_be_bytes());
    ip[6] = 0x40;
    ip[8] = ttl;
    ip[9] = protocol.ip_protocol();
    ip[12..16].copy_from_slice(&src.ip.octets());
    ip[16..20].copy_from_slice(&dst.ip.octets());
    let c = checksum(&[&ip]);
    ip[10..12].copy_from_slice(&c.to_be_bytes());

    let mut pseudo = [0u8; 12];
    pseudo[0..4].copy_from_slice(&src.ip.octets());
    pseudo[4..8].copy_from_slice(&dst.ip.octets());
    pseudo[9] = protocol.ip_protocol();
    pseudo[10..12].copy_from_slice(&(l4.len() as u16).to_be_bytes());
    let at = match protocol {
        Transport::Tcp => 16,
        Transport::Udp => 6,
    };
    let c = checksum(&[&pseudo, &l4]);
    l4[at..at + 2].copy_from_slice(&c.to_be_bytes());

    let mut f = Vec::with_capacity(14 + total);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00]);
    f.extend_from_slice(&ip);
    f.extend_from_slice(&l4);
    f
}

fn tcp_segment(src_port: u16, dst_port: u16, seq: u32, ack: u32, flags: u8, window: u16, payload: &[u8]) -> Vec<u8> {
    let mut t = vec![0u8; 20];
    t[0..2].copy_from_slice(&src_port.to_be_bytes());
    t[2..4].copy_from_slice(&dst_port.to_be_bytes());
    t[4..8].copy_from_slice(&seq.to_be_bytes());
    t[8..12].copy_from_slice(&ack.to_be_bytes());
    t[12] = 5 << 4;
    t[13] = flags;
    t[14..16].copy_from_slice(&window.to_be_bytes());
    t.extend_from_slice(payload);
    t
}

fn udp_datagram(src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut u = vec![0u8; 8];
    u[0..2].copy_from_slice(&src_port.to_be_bytes());
    u[2..4].copy_from_slice(&dst_port.to_be_bytes());
    u[4..6].copy_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    u.extend_from_slice(payload);
    u
}

fn insert_motif<R: Rng>(rng: &mut R, motif: &[u8], payload: &mut Vec<u8>) {
    let at = rng.random_range(0..=payload.len().min(MAX_MOTIF_OFFSET));
    payload.splice(at..at, motif.iter().copied());
}

/// Emits every packet of one flow.
fn flow_packets<R: Rng>(rng: &mut R, index: usize, plan: &FlowPlan, motif: &[u8], out: &mut Vec<Packet>) {
    let (c, s) = (plan.client, plan.server);
    let ttl_c = *[64u8, 128].choose(rng).unwrap();
    let ttl_s = *[64u8, 255].choose(rng).unwrap();
    let mut ip_id_c: u16 = rng.random();
    let mut ip_id_s: u16 = rng.random();
    let mut t = plan.start_us;
    let mut emit = |from_client: bool, ts: u64, l4: Vec<u8>| {
        let (src, dst, ttl, id) = if from_client {
            ip_id_c = ip_id_c.wrapping_add(1);
            (c, s, ttl_c, ip_id_c)
        } else {
            ip_id_s = ip_id_s.wrapping_add(1);
            (s, c, ttl_s, ip_id_s)
        };
        out.push(Packet {
            ts_us: ts,
            flow: index,
            frame: frame(src, dst, plan.protocol, id, ttl, l4),
        });
    };
    let pattern = plan.profile == Some(AttackProfile::Pattern);

    if plan.protocol == Transport::Udp {
        let turns = rng.random_range(1..=2);
        for turn in 0..turns {
            let mut query = format!("QUERY {}.{}.example IN A\n", WORDS.choose(rng).unwrap(), WORDS.choose(rng).unwrap()).into_bytes();
            if pattern && turn == 0 {
                insert_motif(rng, motif, &mut query);
            }
            emit(true, t, udp_datagram(c.port, s.port, &query));
            t += rng.random_range(200..20_000);
            let answer = {
                let n = rng.random_range(30..200);
                ascii_text(rng, n)
            };
            emit(false, t, udp_datagram(s.port, c.port, &answer));
            t += rng.random_range(200..20_000);
        }
        return;
    }

    let window_c = rng.random_range(8192..=65535);
    let window_s = rng.random_range(8192..=65535);
    let mut seq_c: u32 = rng.random();
    let mut seq_s: u32 = rng.random();
    const SYN: u8 = TcpFlags::SYN;
    const ACK: u8 = TcpFlags::ACK;
    const PSH: u8 = TcpFlags::PSH;

    if plan.profile == Some(AttackProfile::Scan) {
        emit(true, t, tcp_segment(c.port, s.port, seq_c, 0, SYN, 1024, &[]));
        t += rng.random_range(100..3_000);
        emit(false, t, tcp_segment(s.port, c.port, 0, seq_c.wrapping_add(1), TcpFlags::RST | ACK, 0, &[]));
        return;
    }

    emit(true, t, tcp_segment(c.port, s.port, seq_c, 0, SYN, window_c, &[]));
    seq_c = seq_c.wrapping_add(1);
    t += rng.random_range(100..5_000);
    emit(false, t, tcp_segment(s.port, c.port, seq_s, seq_c, SYN | ACK, window_s, &[]));
    seq_s = seq_s.wrapping_add(1);
    t += rng.random_range(100..5_000);
    emit(true, t, tcp_segment(c.port, s.port, seq_c, seq_s, ACK, window_c, &[]));
    t += rng.random_range(100..5_000);

    let turns = rng.random_range(1..=3);
    for turn in 0..turns {
        let mut req = http_request(rng);
        if pattern && turn == 0 {
            insert_motif(rng, motif, &mut req);
        }
        emit(true, t, tcp_segment(c.port, s.port, seq_c, seq_s, PSH | ACK, window_c, &req));
        seq_c = seq_c.wrapping_add(req.len() as u32);
        t += rng.random_range(200..20_000);
        let resp = http_response(rng);
        emit(false, t, tcp_segment(s.port, c.port, seq_s, seq_c, PSH | ACK, window_s, &resp));
        seq_s = seq_s.wrapping_add(resp.len() as u32);
        t += rng.random_range(200..20_000);
    }
    // A single FIN closes the flow; a second FIN would open a new one.
    emit(true, t, tcp_segment(c.port, s.port, seq_c, seq_s, TcpFlags::FIN | ACK, window_c, &[]));
}

pub fn generate(cfg: &ScenarioConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let servers: Vec<Ipv4Addr> = (0..200u32)
        .map(|i| Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 0, 0, 1)) + i))
        .collect();
    let clients: Vec<Ipv4Addr> = (0..60u32)
        .map(|i| Ipv4Addr::from(u32::from(Ipv4Addr::new(192, 168, 1, 10)) + i))
        .collect();
    let arrival = Exp::new(1.0 / cfg.benign_gap_ms.max(1e-3)).expect("positive rate");
    let span_us = (cfg.benign_flows.max(1) as f64 * cfg.benign_gap_ms * 1000.0) as u64;

    // (start, class index or None for benign, profile)
    let mut starts: Vec<(u64, Option<usize>)> = Vec::new();
    let mut pattern_slots = Vec::new();
    let mut t = cfg.start_us;
    for _ in 0..cfg.benign_flows {
        t += (arrival.sample(&mut rng) * 1000.0) as u64 + 1;
        starts.push((t, None));
    }
    for (ci, attack) in cfg.attacks.iter().enumerate() {
        match attack.profile {
            AttackProfile::Pattern => pattern_slots.extend(std::iter::repeat_n(ci, attack.flows)),
            AttackProfile::Flood | AttackProfile::Scan => {
                let mut left = attack.flows;
                while left > 0 {
                    let burst = left.min(rng.random_range(50..=100));
                    let mut bt = cfg.start_us + rng.random_range(0..span_us.max(1));
                    for _ in 0..burst {
                        starts.push((bt, Some(ci)));
                        bt += rng.random_range(10_000..20_000);
                    }
                    left -= burst;
                }
            }
        }
    }
    // Pattern attacks follow the benign arrival process at random positions.
    for ci in pattern_slots {
        starts.push((cfg.start_us + rng.random_range(0..span_us.max(1)), Some(ci)));
    }
    starts.sort_by_key(|&(ts, _)| ts);

    let mut plans = Vec::with_capacity(starts.len());
    let mut scan_port = 1u16;
    let scanner = if cfg.disjoint_ips { Ipv4Addr::new(172, 16, 0, 66) } else { clients[0] };
    for (i, &(start_us, class)) in starts.iter().enumerate() {
        let profile = class.map(|ci| cfg.attacks[ci].profile);
        let client_port = 1024 + (i % 64_000) as u16;
        let udp = profile != Some(AttackProfile::Scan) && rng.random_bool(cfg.udp_fraction);
        let (protocol, server_port) = if udp {
            (Transport::Udp, *[53u16, 123].choose(&mut rng).unwrap())
        } else {
            (Transport::Tcp, *[80u16, 443, 8080].choose(&mut rng).unwrap())
        };
        let client_ip = if cfg.disjoint_ips && class.is_some() {
            Ipv4Addr::from(u32::from(Ipv4Addr::new(172, 20, 0, 0)) + rng.random_range(0..65_536))
        } else {
            *clients.choose(&mut rng).unwrap()
        };
        let (client, server) = match profile {
            Some(AttackProfile::Flood) => (Endpoint::new(client_ip, client_port), Endpoint::new(cfg.victim, server_port)),
            Some(AttackProfile::Scan) => {
                let port = scan_port;
                scan_port = scan_port.checked_add(1).unwrap_or(1);
                (Endpoint::new(scanner, client_port), Endpoint::new(cfg.victim, port))
            }
            Some(AttackProfile::Pattern) if cfg.disjoint_ips => (
                Endpoint::new(client_ip, client_port),
                Endpoint::new(Ipv4Addr::new(10, 1, 0, rng.random_range(1..255)), server_port),
            ),
            _ => (
                Endpoint::new(client_ip, client_port),
                Endpoint::new(*servers.choose(&mut rng).unwrap(), server_port),
            ),
        };
        plans.push(FlowPlan {
            class,
            profile,
            start_us,
            protocol,
            client,
            server,
        });
    }

    let mut packets = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        flow_packets(&mut rng, i, plan, &cfg.motif, &mut packets);
    }
    packets.sort_by_key(|p| (p.ts_us, p.flow));

    let mut writer = CaptureWriter::new(Vec::new(), 65_535).expect("in-memory write");
    for p in &packets {
        writer.write_frame(p.ts_us, &p.frame).expect("in-memory write");
    }
    let pcap = writer.finish().expect("in-memory write");

    let mut manifest = LabelManifest::default();
    for plan in &plans {
        if let Some(ci) = plan.class {
            let a = &cfg.attacks[ci];
            manifest.rules.push(LabelRule {
                class_id: a.class_id,
                class_name: a.class_name.clone(),
                protocol: Some(plan.protocol),
                src: EndpointPattern::exact(plan.client),
                dst: EndpointPattern::exact(plan.server),
                time: Some(TimeRange {
                    start_us: Some(plan.start_us),
                    end_us: Some(plan.start_us + 1),
                }),
            });
        }
    }

    let mut classes = vec![ClassCount {
        class_id: 0,
        class_name: "benign".into(),
        flows: cfg.benign_flows,
    }];
    classes.extend(cfg.attacks.iter().map(|a| ClassCount {
        class_id: a.class_id,
        class_name: a.class_name.clone(),
        flows: a.flows,
    }));
    let summary = Summary {
        seed: cfg.seed,
        classes,
        flows: plans.len(),
        packets: packets.len(),
        first_us: packets.first().map_or(0, |p| p.ts_us),
        last_us: packets.last().map_or(0, |p| p.ts_us),
    };
    Scenario { pcap, manifest, summary }
}
