use std::fmt;
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use super::DatasetError;
use crate::flow::{Endpoint, FlowRecord};
use crate::pcap::Transport;

/// `cidr:port` with `*` wildcards on either side, or a bare `*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EndpointPattern {
    pub net: Option<(Ipv4Addr, u8)>,
    pub port: Option<u16>,
}

impl EndpointPattern {
    pub fn exact(ep: Endpoint) -> Self {
        EndpointPattern {
            net: Some((ep.ip, 32)),
            port: Some(ep.port),
        }
    }

    pub fn matches(&self, ep: Endpoint) -> bool {
        let ip_ok = self.net.is_none_or(|(net, prefix)| {
            let mask = if prefix == 0 { 0 } else { u32::MAX << (32 - prefix as u32) };
            u32::from(ep.ip) & mask == u32::from(net) & mask
        });
        ip_ok && self.port.is_none_or(|p| p == ep.port)
    }
}

impl FromStr for EndpointPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "*" {
            return Ok(EndpointPattern::default());
        }
        let (net_s, port_s) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("endpoint {s:?} must be cidr:port"))?;
        let net = if net_s == "*" {
            None
        } else {
            let (ip_s, prefix) = match net_s.split_once('/') {
                Some((ip, p)) => (ip, p.parse::<u8>().map_err(|_| format!("bad prefix in {s:?}"))?),
                None => (net_s, 32),
            };
            if prefix > 32 {
                return Err(format!("prefix /{prefix} out of range"));
            }
            let ip = ip_s.parse::<Ipv4Addr>().map_err(|_| format!("bad address {ip_s:?}"))?;
            Some((ip, prefix))
        };
        let port = if port_s == "*" {
            None
        } else {
            Some(port_s.parse::<u16>().map_err(|_| format!("bad port {port_s:?}"))?)
        };
        Ok(EndpointPattern { net, port })
    }
}

impl fmt::Display for EndpointPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.net {
            None => f.write_str("*")?,
            Some((ip, 32)) => write!(f, "{ip}")?,
            Some((ip, p)) => write!(f, "{ip}/{p}")?,
        }
        match self.port {
            None => f.write_str(":*"),
            Some(p) => write!(f, ":{p}"),
        }
    }
}

/// Half-open range `[start, end)` over flow start times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    pub start_us: Option<u64>,
    pub end_us: Option<u64>,
}

impl TimeRange {
    pub fn contains(&self, t: u64) -> bool {
        self.start_us.is_none_or(|s| t >= s) && self.end_us.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRule {
    pub class_id: u16,
    pub class_name: String,
    pub protocol: Option<Transport>,
    /// Matched against the flow initiator.
    pub src: EndpointPattern,
    /// Matched against the flow responder.
    pub dst: EndpointPattern,
    pub time: Option<TimeRange>,
}

impl LabelRule {
    pub fn matches(&self, protocol: Transport, initiator: Endpoint, responder: Endpoint, start_us: u64) -> bool {
        self.protocol.is_none_or(|p| p == protocol)
            && self.src.matches(initiator)
            && self.dst.matches(responder)
            && self.time.is_none_or(|r| r.contains(start_us))
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = self.protocol.map_or("*", |p| p.as_str());
        write!(f, "{} {} {} {} {}", self.class_id, self.class_name, proto, self.src, self.dst)?;
        if let Some(t) = self.time {
            let bound = |b: Option<u64>| b.map_or(String::new(), |v| v.to_string());
            write!(f, " [{}..{}]", bound(t.start_us), bound(t.end_us))?;
        }
        Ok(())
    }
}

/// Ordered rules, first match wins; unmatched flows get `default_class`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelManifest {
    pub rules: Vec<LabelRule>,
    pub default_class: u16,
    pub default_name: String,
}

impl Default for LabelManifest {
    fn default() -> Self {
        LabelManifest {
            rules: Vec::new(),
            default_class: 0,
            default_name: "benign".to_string(),
        }
    }
}

fn parse_time_range(s: &str) -> Result<TimeRange, String> {
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("time range {s:?} must look like [t0..t1]"))?;
    let (a, b) = inner
        .split_once("..")
        .ok_or_else(|| format!("time range {s:?} must look like [t0..t1]"))?;
    let bound = |v: &str| -> Result<Option<u64>, String> {
        match v.trim() {
            "" | "*" => Ok(None),
            t => t.parse::<u64>().map(Some).map_err(|_| format!("bad time bound {t:?}")),
        }
    };
    Ok(TimeRange {
        start_us: bound(a)?,
        end_us: bound(b)?,
    })
}

impl LabelManifest {
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut manifest = LabelManifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| DatasetError::Manifest {
                path: None,
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "default" {
                if fields.len() < 2 || fields.len() > 3 {
                    return Err(err("expected `default <class_id> [name]`".into()));
                }
                manifest.default_class = fields[1]
                    .parse()
                    .map_err(|_| err(format!("bad class id {:?}", fields[1])))?;
                manifest.default_name = fields.get(2).unwrap_or(&"benign").to_string();
                continue;
            }
            if fields.len() != 5 && fields.len() != 6 {
                return Err(err(
                    "expected `class_id class_name proto src_cidr:port dst_cidr:port [t0..t1]`".into(),
                ));
            }
            let class_id: u16 = fields[0]
                .parse()
                .map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
            let protocol = match fields[2].to_ascii_lowercase().as_str() {
                "*" => None,
                "tcp" => Some(Transport::Tcp),
                "udp" => Some(Transport::Udp),
                other => return Err(err(format!("unknown protocol {other:?}"))),
            };
            let rule = LabelRule {
                class_id,
                class_name: fields[1].to_string(),
                protocol,
                src: fields[3].parse().map_err(err)?,
                dst: fields[4].parse().map_err(err)?,
                time: fields.get(5).map(|t| parse_time_range(t)).transpose().map_err(err)?,
            };
            if rule.class_id == 0 && rule.class_name != "benign" {
                return Err(err("class 0 is reserved for \"benign\"".into()));
            }
            manifest.rules.push(rule);
        }
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        LabelManifest::parse(&text).map_err(|e| match e {
            DatasetError::Manifest { line, message, .. } => DatasetError::Manifest {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn classify(&self, protocol: Transport, initiator: Endpoint, responder: Endpoint, start_us: u64) -> u16 {
        self.rules
            .iter()
            .find(|r| r.matches(protocol, initiator, responder, start_us))
            .map_or(self.default_class, |r| r.class_id)
    }

    pub fn label_flow(&self, flow: &FlowRecord) -> u16 {
        self.classify(flow.key.protocol, flow.initiator, flow.responder(), flow.start_time_us)
    }

    pub fn label_flows(&self, flows: &[FlowRecord]) -> Vec<u16> {
        flows.iter().map(|f| self.label_flow(f)).collect()
    }

    /// Name for a class id, if this manifest mentions it.
    pub fn class_name(&self, class_id: u16) -> Option<&str> {
        if class_id == self.default_class {
            return Some(&self.default_name);
        }
        self.rules
            .iter()
            .find(|r| r.class_id == class_id)
            .map(|r| r.class_name.as_str())
    }
}

impl fmt::Display for LabelManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "default {} {}", self.default_class, self.default_name)?;
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
