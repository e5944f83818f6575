//! Classic PCAP reading and Ethernet/IPv4/TCP|UDP payload extraction.
//!
//! Only the classic libpcap container is understood (both byte orders).
//! Frames that are not Ethernet → IPv4 → TCP|UDP, non-first IP fragments,
//! and packets with an empty transport payload are skipped and tallied in
//! [`CaptureStats`].

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexser;

const MAGIC_NATIVE: u32 = 0xA1B2_C3D4;
const MAGIC_SWAPPED: u32 = 0xD4C3_B2A1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

pub const LINKTYPE_ETHERNET: u32 = 1;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERNET_HEADER_LEN: usize = 14;
const IPV4_MIN_HEADER_LEN: usize = 20;
const TCP_MIN_HEADER_LEN: usize = 20;
const UDP_HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("not a classic pcap file (magic {0:#010x})")]
    UnknownMagic(u32),
    #[error("pcap global header truncated ({0} of 24 bytes)")]
    TruncatedHeader(usize),
    #[error("pcap record truncated at byte offset {offset}")]
    TruncatedRecord { offset: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed {layer} header: {reason}")]
pub struct MalformedHeader {
    pub layer: &'static str,
    pub reason: String,
}

impl MalformedHeader {
    fn new(layer: &'static str, reason: impl Into<String>) -> Self {
        Self { layer, reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: PcapError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn from_ip_number(n: u8) -> Option<Self> {
        match n {
            6 => Some(Protocol::Tcp),
            17 => Some(Protocol::Udp),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tcp" | "6" => Ok(Protocol::Tcp),
            "udp" | "17" => Ok(Protocol::Udp),
            other => Err(format!("unsupported transport protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
}

/// Capture time as stored in the record header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub secs: u32,
    pub micros: u32,
}

impl Timestamp {
    pub fn as_secs_f64(&self) -> f64 {
        self.secs as f64 + self.micros as f64 * 1e-6
    }
}

/// One PCAP record: capture time, link type from the global header, frame bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub timestamp: Timestamp,
    pub link_type: u32,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawPacket {
    pub timestamp: Timestamp,
    pub tuple: FiveTuple,
    #[serde(with = "hexser")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub total_frames: u64,
    pub tcp_with_payload: u64,
    pub udp_with_payload: u64,
    pub discarded_no_payload: u64,
    /// Non-IPv4, non-TCP/UDP, non-Ethernet and non-first-fragment frames.
    pub discarded_other_protocol: u64,
    pub malformed: u64,
}

impl CaptureStats {
    pub fn merge(&mut self, other: &CaptureStats) {
        self.total_frames += other.total_frames;
        self.tcp_with_payload += other.tcp_with_payload;
        self.udp_with_payload += other.udp_with_payload;
        self.discarded_no_payload += other.discarded_no_payload;
        self.discarded_other_protocol += other.discarded_other_protocol;
        self.malformed += other.malformed;
    }

    pub fn emitted(&self) -> u64 {
        self.tcp_with_payload + self.udp_with_payload
    }

    /// `total_frames` equals the sum of the per-outcome counters.
    pub fn reconciles(&self) -> bool {
        self.total_frames
            == self.emitted()
                + self.discarded_no_payload
                + self.discarded_other_protocol
                + self.malformed
    }
}

/// Streaming reader over a classic PCAP byte stream.
///
/// Yields records in file order. After a truncated record the iterator
/// reports the offset once and then ends.
pub struct PcapReader<R> {
    inner: R,
    swapped: bool,
    snaplen: u32,
    link_type: u32,
    offset: u64,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut header = [0u8; GLOBAL_HEADER_LEN];
        let got = read_full(&mut inner, &mut header)?;
        if got < 4 {
            return Err(PcapError::TruncatedHeader(got));
        }
        let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let swapped = match magic {
            MAGIC_NATIVE => false,
            MAGIC_SWAPPED => true,
            other => return Err(PcapError::UnknownMagic(other)),
        };
        if got < GLOBAL_HEADER_LEN {
            return Err(PcapError::TruncatedHeader(got));
        }
        let field = |at: usize| read_u32(&header[at..at + 4], swapped);
        Ok(Self {
            snaplen: field(16),
            link_type: field(20),
            inner,
            swapped,
            offset: GLOBAL_HEADER_LEN as u64,
            done: false,
        })
    }

    pub fn link_type(&self) -> u32 {
        self.link_type
    }

    pub fn snaplen(&self) -> u32 {
        self.snaplen
    }

    /// True when the file was written in the opposite byte order to its magic.
    pub fn is_byte_swapped(&self) -> bool {
        self.swapped
    }

    fn read_record(&mut self) -> Result<Option<PcapRecord>, PcapError> {
        let start = self.offset;
        let mut header = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedRecord { offset: start });
        }
        let ts_sec = read_u32(&header[0..4], self.swapped);
        let ts_usec = read_u32(&header[4..8], self.swapped);
        let incl_len = read_u32(&header[8..12], self.swapped) as u64;

        // `take` keeps a corrupt length field from forcing a huge allocation.
        let mut frame = Vec::new();
        (&mut self.inner).take(incl_len).read_to_end(&mut frame)?;
        if (frame.len() as u64) < incl_len {
            return Err(PcapError::TruncatedRecord { offset: start });
        }
        self.offset += RECORD_HEADER_LEN as u64 + incl_len;
        Ok(Some(PcapRecord {
            timestamp: Timestamp { secs: ts_sec, micros: ts_usec },
            link_type: self.link_type,
            frame,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<PcapRecord, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_u32(bytes: &[u8], swapped: bool) -> u32 {
    let raw: [u8; 4] = bytes.try_into().unwrap();
    if swapped {
        u32::from_be_bytes(raw)
    } else {
        u32::from_le_bytes(raw)
    }
}

/// Like `read_exact`, but reports how many bytes arrived instead of failing on EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
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

/// Parses a whole in-memory capture. Stops at the first error.
pub fn parse_pcap(bytes: &[u8]) -> Result<Vec<PcapRecord>, PcapError> {
    PcapReader::new(bytes)?.collect()
}

/// Outcome of dissecting one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameClass<'a> {
    Transport { tuple: FiveTuple, payload: &'a [u8] },
    NoPayload(Protocol),
    OtherProtocol,
}

/// Walks Ethernet → IPv4 → TCP|UDP and classifies the frame.
pub fn classify_frame(link_type: u32, frame: &[u8]) -> Result<FrameClass<'_>, MalformedHeader> {
    if link_type != LINKTYPE_ETHERNET {
        return Ok(FrameClass::OtherProtocol);
    }
    if frame.len() < ETHERNET_HEADER_LEN {
        return Err(MalformedHeader::new("ethernet", format!("frame is {} bytes", frame.len())));
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Ok(FrameClass::OtherProtocol);
    }

    let ip = &frame[ETHERNET_HEADER_LEN..];
    if ip.len() < IPV4_MIN_HEADER_LEN {
        return Err(MalformedHeader::new("ipv4", format!("only {} bytes after ethernet", ip.len())));
    }
    let version = ip[0] >> 4;
    if version != 4 {
        return Err(MalformedHeader::new("ipv4", format!("version field {version}")));
    }
    let ihl = usize::from(ip[0] & 0x0F) * 4;
    let total_len = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    if ihl < IPV4_MIN_HEADER_LEN || ihl > total_len || total_len > ip.len() {
        return Err(MalformedHeader::new(
            "ipv4",
            format!("ihl {ihl}, total length {total_len}, {} bytes captured", ip.len()),
        ));
    }
    let fragment_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1FFF;
    if fragment_offset != 0 {
        return Ok(FrameClass::OtherProtocol);
    }
    let Some(protocol) = Protocol::from_ip_number(ip[9]) else {
        return Ok(FrameClass::OtherProtocol);
    };
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    // Total Length bounds the datagram; anything after it is link padding.
    let segment = &ip[ihl..total_len];
    let ((src_port, dst_port), payload) = match protocol {
        Protocol::Tcp => {
            if segment.len() < TCP_MIN_HEADER_LEN {
                return Err(MalformedHeader::new("tcp", format!("segment is {} bytes", segment.len())));
            }
            let data_offset = usize::from(segment[12] >> 4) * 4;
            if data_offset < TCP_MIN_HEADER_LEN || data_offset > segment.len() {
                return Err(MalformedHeader::new(
                    "tcp",
                    format!("data offset {data_offset} in {}-byte segment", segment.len()),
                ));
            }
            (port_pair(segment), &segment[data_offset..])
        }
        Protocol::Udp => {
            if segment.len() < UDP_HEADER_LEN {
                return Err(MalformedHeader::new("udp", format!("datagram is {} bytes", segment.len())));
            }
            let udp_len = usize::from(u16::from_be_bytes([segment[4], segment[5]]));
            if udp_len < UDP_HEADER_LEN || udp_len > segment.len() {
                return Err(MalformedHeader::new(
                    "udp",
                    format!("length field {udp_len} in {}-byte datagram", segment.len()),
                ));
            }
            (port_pair(segment), &segment[UDP_HEADER_LEN..udp_len])
        }
    };

    if payload.is_empty() {
        return Ok(FrameClass::NoPayload(protocol));
    }
    Ok(FrameClass::Transport {
        tuple: FiveTuple { src_ip, dst_ip, src_port, dst_port, protocol },
        payload,
    })
}

fn port_pair(segment: &[u8]) -> (u16, u16) {
    (
        u16::from_be_bytes([segment[0], segment[1]]),
        u16::from_be_bytes([segment[2], segment[3]]),
    )
}

/// Five-tuple and payload of a TCP/UDP frame with a non-empty payload.
pub fn extract_transport(
    link_type: u32,
    frame: &[u8],
) -> Result<Option<(FiveTuple, Vec<u8>)>, MalformedHeader> {
    Ok(match classify_frame(link_type, frame)? {
        FrameClass::Transport { tuple, payload } => Some((tuple, payload.to_vec())),
        FrameClass::NoPayload(_) | FrameClass::OtherProtocol => None,
    })
}

/// Dissects every record of one capture stream.
///
/// A truncated trailing record counts as one malformed frame and ends the file.
pub fn ingest_reader<R: Read>(reader: R) -> Result<(Vec<RawPacket>, CaptureStats), PcapError> {
    let mut stats = CaptureStats::default();
    let mut packets = Vec::new();
    for record in PcapReader::new(reader)? {
        let record = match record {
            Ok(r) => r,
            Err(PcapError::TruncatedRecord { offset }) => {
                log::warn!("truncated pcap record at offset {offset}, stopping");
                stats.total_frames += 1;
                stats.malformed += 1;
                break;
            }
            Err(e) => return Err(e),
        };
        stats.total_frames += 1;
        match classify_frame(record.link_type, &record.frame) {
            Ok(FrameClass::Transport { tuple, payload }) => {
                match tuple.protocol {
                    Protocol::Tcp => stats.tcp_with_payload += 1,
                    Protocol::Udp => stats.udp_with_payload += 1,
                }
                packets.push(RawPacket {
                    timestamp: record.timestamp,
                    tuple,
                    payload: payload.to_vec(),
                });
            }
            Ok(FrameClass::NoPayload(_)) => stats.discarded_no_payload += 1,
            Ok(FrameClass::OtherProtocol) => stats.discarded_other_protocol += 1,
            Err(e) => {
                log::debug!("skipping frame: {e}");
                stats.malformed += 1;
            }
        }
    }
    Ok((packets, stats))
}

pub fn ingest_file(path: &Path) -> Result<(Vec<RawPacket>, CaptureStats), IngestError> {
    let wrap = |source: PcapError| IngestError::FileUnreadable { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(|e| wrap(e.into()))?;
    ingest_reader(BufReader::with_capacity(1 << 16, file)).map_err(wrap)
}

/// Ingests captures in parallel and concatenates results in path order.
pub fn ingest<P: AsRef<Path> + Sync>(
    paths: &[P],
) -> Result<(Vec<RawPacket>, CaptureStats), IngestError> {
    let per_file: Vec<_> = paths
        .par_iter()
        .map(|p| ingest_file(p.as_ref()))
        .collect::<Result<_, _>>()?;
    let mut packets = Vec::new();
    let mut stats = CaptureStats::default();
    for (pkts, s) in per_file {
        packets.extend(pkts);
        stats.merge(&s);
    }
    Ok((packets, stats))
}
