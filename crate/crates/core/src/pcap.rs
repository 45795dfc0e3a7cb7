//! Classic pcap reading/writing and Ethernet/IPv4/TCP/UDP decoding.
//!
//! Only the classic (non-ng) format is handled. Both byte orders and both the
//! microsecond and nanosecond magic numbers are accepted; nanosecond stamps are
//! reduced to microseconds by integer division.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const ETHERNET_HEADER_LEN: usize = 14;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("unknown pcap magic {0:02x?}")]
    UnknownMagic([u8; 4]),
    #[error("unsupported link type {0} (only Ethernet is supported)")]
    UnsupportedLinkType(u32),
    #[error("pcap global header truncated ({0} of 24 bytes)")]
    TruncatedHeader(usize),
    #[error("record {index}: truncated ({available} of {expected} bytes)")]
    TruncatedRecord {
        index: u64,
        expected: usize,
        available: usize,
    },
    #[error("record {index}: captured length {incl_len} exceeds {limit_name} {limit}")]
    InvalidRecordLength {
        index: u64,
        incl_len: u32,
        limit_name: &'static str,
        limit: u32,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

impl ByteOrder {
    fn u16(self, b: [u8; 2]) -> u16 {
        match self {
            ByteOrder::Big => u16::from_be_bytes(b),
            ByteOrder::Little => u16::from_le_bytes(b),
        }
    }

    fn u32(self, b: [u8; 4]) -> u32 {
        match self {
            ByteOrder::Big => u32::from_be_bytes(b),
            ByteOrder::Little => u32::from_le_bytes(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampResolution {
    Micro,
    Nano,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalHeader {
    pub byte_order: ByteOrder,
    pub resolution: TimestampResolution,
    pub version_major: u16,
    pub version_minor: u16,
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub linktype: u32,
}

impl GlobalHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, PcapError> {
        if bytes.len() < 4 {
            return Err(PcapError::TruncatedHeader(bytes.len()));
        }
        let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
        let (byte_order, resolution) = match magic {
            [0xA1, 0xB2, 0xC3, 0xD4] => (ByteOrder::Big, TimestampResolution::Micro),
            [0xD4, 0xC3, 0xB2, 0xA1] => (ByteOrder::Little, TimestampResolution::Micro),
            [0xA1, 0xB2, 0x3C, 0x4D] => (ByteOrder::Big, TimestampResolution::Nano),
            [0x4D, 0x3C, 0xB2, 0xA1] => (ByteOrder::Little, TimestampResolution::Nano),
            other => return Err(PcapError::UnknownMagic(other)),
        };
        if bytes.len() < GLOBAL_HEADER_LEN {
            return Err(PcapError::TruncatedHeader(bytes.len()));
        }
        let u16_at = |o: usize| byte_order.u16([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| byte_order.u32([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let header = GlobalHeader {
            byte_order,
            resolution,
            version_major: u16_at(4),
            version_minor: u16_at(6),
            thiszone: u32_at(8) as i32,
            sigfigs: u32_at(12),
            snaplen: u32_at(16),
            linktype: u32_at(20),
        };
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::UnsupportedLinkType(header.linktype));
        }
        Ok(header)
    }
}

/// One captured record, data-link header still attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub timestamp_us: u64,
    pub captured_bytes: Vec<u8>,
    pub original_length: u32,
}

/// Sequential reader over a classic pcap stream.
pub struct CaptureReader<R> {
    inner: R,
    header: GlobalHeader,
    records_read: u64,
}

/// Opens a capture file and validates its global header.
pub fn open_capture(path: impl AsRef<Path>) -> Result<CaptureReader<BufReader<File>>, PcapError> {
    let file = File::open(path.as_ref())?;
    CaptureReader::new(BufReader::new(file))
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut buf)?;
        let header = GlobalHeader::parse(&buf[..n])?;
        Ok(CaptureReader {
            inner,
            header,
            records_read: 0,
        })
    }

    pub fn header(&self) -> &GlobalHeader {
        &self.header
    }

    pub fn records_read(&self) -> u64 {
        self.records_read
    }

    /// Next record in file order, `None` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<RawFrame>, PcapError> {
        let index = self.records_read;
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        let n = read_full(&mut self.inner, &mut hdr)?;
        if n == 0 {
            return Ok(None);
        }
        if n < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedRecord {
                index,
                expected: RECORD_HEADER_LEN,
                available: n,
            });
        }
        let bo = self.header.byte_order;
        let ts_sec = bo.u32([hdr[0], hdr[1], hdr[2], hdr[3]]);
        let ts_sub = bo.u32([hdr[4], hdr[5], hdr[6], hdr[7]]);
        let incl_len = bo.u32([hdr[8], hdr[9], hdr[10], hdr[11]]);
        let orig_len = bo.u32([hdr[12], hdr[13], hdr[14], hdr[15]]);

        if self.header.snaplen != 0 && incl_len > self.header.snaplen {
            return Err(PcapError::InvalidRecordLength {
                index,
                incl_len,
                limit_name: "snaplen",
                limit: self.header.snaplen,
            });
        }
        if incl_len > orig_len {
            return Err(PcapError::InvalidRecordLength {
                index,
                incl_len,
                limit_name: "original length",
                limit: orig_len,
            });
        }

        // `take` keeps allocation bounded by what the file actually holds.
        let mut body = Vec::with_capacity((incl_len as usize).min(1 << 16));
        (&mut self.inner).take(incl_len as u64).read_to_end(&mut body)?;
        if body.len() < incl_len as usize {
            return Err(PcapError::TruncatedRecord {
                index,
                expected: incl_len as usize,
                available: body.len(),
            });
        }

        let sub_us = match self.header.resolution {
            TimestampResolution::Micro => ts_sub as u64,
            TimestampResolution::Nano => ts_sub as u64 / 1000,
        };
        self.records_read += 1;
        Ok(Some(RawFrame {
            timestamp_us: ts_sec as u64 * 1_000_000 + sub_us,
            captured_bytes: body,
            original_length: orig_len,
        }))
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<RawFrame, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Writes little-endian microsecond classic pcap.
pub struct CaptureWriter<W: Write> {
    inner: W,
    snaplen: u32,
}

impl CaptureWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        CaptureWriter::new(BufWriter::new(File::create(path)?), 65535)
    }
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(mut inner: W, snaplen: u32) -> io::Result<Self> {
        let mut hdr = Vec::with_capacity(GLOBAL_HEADER_LEN);
        hdr.extend_from_slice(&0xA1B2_C3D4u32.to_le_bytes());
        hdr.extend_from_slice(&2u16.to_le_bytes());
        hdr.extend_from_slice(&4u16.to_le_bytes());
        hdr.extend_from_slice(&0i32.to_le_bytes());
        hdr.extend_from_slice(&0u32.to_le_bytes());
        hdr.extend_from_slice(&snaplen.to_le_bytes());
        hdr.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&hdr)?;
        Ok(CaptureWriter { inner, snaplen })
    }

    pub fn write_frame(&mut self, timestamp_us: u64, frame: &[u8]) -> io::Result<()> {
        let incl = frame.len().min(self.snaplen as usize);
        let ts_sec = u32::try_from(timestamp_us / 1_000_000)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "timestamp beyond pcap range"))?;
        let ts_usec = (timestamp_us % 1_000_000) as u32;
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        hdr[0..4].copy_from_slice(&ts_sec.to_le_bytes());
        hdr[4..8].copy_from_slice(&ts_usec.to_le_bytes());
        hdr[8..12].copy_from_slice(&(incl as u32).to_le_bytes());
        hdr[12..16].copy_from_slice(&(frame.len() as u32).to_le_bytes());
        self.inner.write_all(&hdr)?;
        self.inner.write_all(&frame[..incl])
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        }
    }

    pub fn ip_protocol(self) -> u8 {
        match self {
            Transport::Tcp => 6,
            Transport::Udp => 17,
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;

    pub fn fin(self) -> bool {
        self.0 & Self::FIN != 0
    }

    pub fn syn(self) -> bool {
        self.0 & Self::SYN != 0
    }

    pub fn rst(self) -> bool {
        self.0 & Self::RST != 0
    }
}

/// Offsets into `DecodedPacket::ip_and_payload`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderLayout {
    pub ip_checksum: usize,
    pub src_ip: usize,
    pub dst_ip: usize,
    pub l4_checksum: usize,
    /// First byte of the transport header (the IPv4 header length).
    pub l4_start: usize,
    pub l4_header_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPacket {
    pub timestamp_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Transport,
    /// Meaningful only for TCP.
    pub tcp_flags: TcpFlags,
    /// Starts at the IPv4 header; Ethernet framing and trailer padding removed.
    pub ip_and_payload: Vec<u8>,
    pub layout: HeaderLayout,
    /// Total length field of the IPv4 header, as declared.
    pub ip_total_length: u16,
    pub original_length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    NonIpv4,
    NotVersion4,
    UnsupportedProtocol,
    Fragment,
    TooShort,
}

impl SkipReason {
    pub const ALL: [SkipReason; 5] = [
        SkipReason::NonIpv4,
        SkipReason::NotVersion4,
        SkipReason::UnsupportedProtocol,
        SkipReason::Fragment,
        SkipReason::TooShort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SkipReason::NonIpv4 => "non-ipv4",
            SkipReason::NotVersion4 => "ip-version",
            SkipReason::UnsupportedProtocol => "non-tcp-udp",
            SkipReason::Fragment => "fragment",
            SkipReason::TooShort => "truncated-header",
        }
    }
}

/// Per-reason counts of frames that did not decode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipCounters {
    counts: [u64; 5],
}

impl SkipCounters {
    pub fn record(&mut self, reason: SkipReason) {
        self.counts[reason as usize] += 1;
    }

    pub fn get(&self, reason: SkipReason) -> u64 {
        self.counts[reason as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SkipReason, u64)> + '_ {
        SkipReason::ALL.iter().map(move |&r| (r, self.get(r)))
    }
}

fn be16(b: &[u8], o: usize) -> u16 {
    u16::from_be_bytes([b[o], b[o + 1]])
}

/// Strips the Ethernet header (one optional 802.1Q tag) and decodes IPv4 TCP/UDP.
pub fn decode_packet(frame: &RawFrame) -> Result<DecodedPacket, SkipReason> {
    let bytes = &frame.captured_bytes;
    if bytes.len() < ETHERNET_HEADER_LEN {
        return Err(SkipReason::TooShort);
    }
    let mut ethertype = be16(bytes, 12);
    let mut ip_start = ETHERNET_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN {
        if bytes.len() < ETHERNET_HEADER_LEN + 4 {
            return Err(SkipReason::TooShort);
        }
        ethertype = be16(bytes, 16);
        ip_start += 4;
    }
    if ethertype != ETHERTYPE_IPV4 {
        return Err(SkipReason::NonIpv4);
    }

    let ip = &bytes[ip_start..];
    if ip.is_empty() {
        return Err(SkipReason::TooShort);
    }
    if ip[0] >> 4 != 4 {
        return Err(SkipReason::NotVersion4);
    }
    let ihl = (ip[0] & 0x0F) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(SkipReason::TooShort);
    }
    let total_length = be16(ip, 2);
    let frag = be16(ip, 6);
    let more_fragments = frag & 0x2000 != 0;
    let frag_offset = frag & 0x1FFF;
    let protocol = match ip[9] {
        6 => Transport::Tcp,
        17 => Transport::Udp,
        _ => return Err(SkipReason::UnsupportedProtocol),
    };
    if more_fragments || frag_offset != 0 {
        return Err(SkipReason::Fragment);
    }

    let l4 = &ip[ihl..];
    let (l4_header_len, checksum_rel, tcp_flags) = match protocol {
        Transport::Tcp => {
            if l4.len() < 20 {
                return Err(SkipReason::TooShort);
            }
            let data_offset = (l4[12] >> 4) as usize * 4;
            if data_offset < 20 || l4.len() < data_offset {
                return Err(SkipReason::TooShort);
            }
            (data_offset, 16, TcpFlags(l4[13]))
        }
        Transport::Udp => {
            if l4.len() < 8 {
                return Err(SkipReason::TooShort);
            }
            (8, 6, TcpFlags::default())
        }
    };

    // Drop link-layer trailer padding when the IP length field is plausible.
    let headers_len = ihl + l4_header_len;
    let keep = if total_length as usize >= headers_len {
        ip.len().min(total_length as usize)
    } else {
        ip.len()
    };

    Ok(DecodedPacket {
        timestamp_us: frame.timestamp_us,
        src_ip: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst_ip: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        src_port: be16(l4, 0),
        dst_port: be16(l4, 2),
        protocol,
        tcp_flags,
        ip_and_payload: ip[..keep].to_vec(),
        layout: HeaderLayout {
            ip_checksum: 10,
            src_ip: 12,
            dst_ip: 16,
            l4_checksum: ihl + checksum_rel,
            l4_start: ihl,
            l4_header_len,
        },
        ip_total_length: total_length,
        original_length: frame.original_length,
    })
}

/// Stateful decoding that tallies skipped frames.
#[derive(Debug, Default)]
pub struct Decoder {
    pub skipped: SkipCounters,
    pub decoded: u64,
}

impl Decoder {
    pub fn decode(&mut self, frame: &RawFrame) -> Option<DecodedPacket> {
        match decode_packet(frame) {
            Ok(p) => {
                self.decoded += 1;
                Some(p)
            }
            Err(reason) => {
                self.skipped.record(reason);
                None
            }
        }
    }
}
