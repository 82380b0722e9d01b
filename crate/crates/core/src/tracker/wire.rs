//! Binary layouts for the UDP tracker protocol.
//!
//! All integers are big-endian. Actions: 0 = connect, 1 = announce,
//! 2 = scrape, 3 = error. Request sizes are fixed: connect 16 bytes,
//! announce 98 bytes, scrape 16 + 20 per hash.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::magnet::InfoHash;

/// Fixed 8-byte magic constant opening every connect request.
pub const PROTOCOL_MAGIC: u64 = 0x0417_2710_1980;

pub const ACTION_CONNECT: u32 = 0;
pub const ACTION_ANNOUNCE: u32 = 1;
pub const ACTION_SCRAPE: u32 = 2;
pub const ACTION_ERROR: u32 = 3;

pub const CONNECT_REQUEST_LEN: usize = 16;
pub const CONNECT_RESPONSE_LEN: usize = 16;
pub const ANNOUNCE_REQUEST_LEN: usize = 98;
pub const ANNOUNCE_RESPONSE_MIN_LEN: usize = 20;
/// 74 hashes fit a scrape request inside a typical 1500-byte MTU.
pub const MAX_SCRAPE_HASHES: usize = 74;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("compact peer payload length {0} is not a multiple of 6")]
    RaggedPayload(usize),
    #[error("response truncated: {got} bytes, expected at least {want}")]
    Truncated { got: usize, want: usize },
    #[error("unexpected action {0}")]
    UnexpectedAction(u32),
}

/// One IPv4 peer as reported by a tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerEndpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl PeerEndpoint {
    pub fn new(ip: Ipv4Addr, port: u16) -> Self {
        PeerEndpoint { ip, port }
    }
}

impl std::fmt::Display for PeerEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Compact peers decoded from a response payload. Zero-port entries are
/// dropped and tallied rather than surfaced.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecodedPeers {
    pub peers: Vec<PeerEndpoint>,
    pub zero_port_dropped: usize,
}

/// Each peer is six bytes: four for the IPv4 address in network order,
/// two for the port as a big-endian unsigned integer.
pub fn decode_compact_peers(payload: &[u8]) -> Result<DecodedPeers, WireError> {
    if payload.len() % 6 != 0 {
        return Err(WireError::RaggedPayload(payload.len()));
    }
    let mut decoded = DecodedPeers::default();
    for chunk in payload.chunks_exact(6) {
        let ip = Ipv4Addr::new(chunk[0], chunk[1], chunk[2], chunk[3]);
        let port = u16::from_be_bytes([chunk[4], chunk[5]]);
        if port == 0 {
            decoded.zero_port_dropped += 1;
        } else {
            decoded.peers.push(PeerEndpoint { ip, port });
        }
    }
    Ok(decoded)
}

pub fn encode_compact_peers(peers: &[PeerEndpoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(peers.len() * 6);
    for p in peers {
        out.extend_from_slice(&p.ip.octets());
        out.extend_from_slice(&p.port.to_be_bytes());
    }
    out
}

pub fn connect_request(transaction_id: u32) -> [u8; CONNECT_REQUEST_LEN] {
    let mut buf = [0u8; CONNECT_REQUEST_LEN];
    buf[0..8].copy_from_slice(&PROTOCOL_MAGIC.to_be_bytes());
    buf[8..12].copy_from_slice(&ACTION_CONNECT.to_be_bytes());
    buf[12..16].copy_from_slice(&transaction_id.to_be_bytes());
    buf
}

pub fn connect_response(transaction_id: u32, connection_id: u64) -> [u8; CONNECT_RESPONSE_LEN] {
    let mut buf = [0u8; CONNECT_RESPONSE_LEN];
    buf[0..4].copy_from_slice(&ACTION_CONNECT.to_be_bytes());
    buf[4..8].copy_from_slice(&transaction_id.to_be_bytes());
    buf[8..16].copy_from_slice(&connection_id.to_be_bytes());
    buf
}

/// Announce event codes from the protocol document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnounceEvent {
    #[default]
    None,
    Completed,
    Started,
    Stopped,
}

impl AnnounceEvent {
    pub fn code(self) -> u32 {
        match self {
            AnnounceEvent::None => 0,
            AnnounceEvent::Completed => 1,
            AnnounceEvent::Started => 2,
            AnnounceEvent::Stopped => 3,
        }
    }
}

/// Everything that goes into the fixed 98-byte announce request.
#[derive(Debug, Clone)]
pub struct AnnounceRequest {
    pub connection_id: u64,
    pub transaction_id: u32,
    pub info_hash: InfoHash,
    pub peer_id: [u8; 20],
    pub downloaded: u64,
    pub left: u64,
    pub uploaded: u64,
    pub event: AnnounceEvent,
    pub key: u32,
    /// -1 asks the tracker for its default.
    pub num_want: i32,
    pub port: u16,
}

pub fn announce_request(req: &AnnounceRequest) -> [u8; ANNOUNCE_REQUEST_LEN] {
    let mut buf = [0u8; ANNOUNCE_REQUEST_LEN];
    buf[0..8].copy_from_slice(&req.connection_id.to_be_bytes());
    buf[8..12].copy_from_slice(&ACTION_ANNOUNCE.to_be_bytes());
    buf[12..16].copy_from_slice(&req.transaction_id.to_be_bytes());
    buf[16..36].copy_from_slice(req.info_hash.as_bytes());
    buf[36..56].copy_from_slice(&req.peer_id);
    buf[56..64].copy_from_slice(&req.downloaded.to_be_bytes());
    buf[64..72].copy_from_slice(&req.left.to_be_bytes());
    buf[72..80].copy_from_slice(&req.uploaded.to_be_bytes());
    buf[80..84].copy_from_slice(&req.event.code().to_be_bytes());
    // IP field stays 0: announce from the observed source address.
    buf[88..92].copy_from_slice(&req.key.to_be_bytes());
    buf[92..96].copy_from_slice(&req.num_want.to_be_bytes());
    buf[96..98].copy_from_slice(&req.port.to_be_bytes());
    buf
}

pub fn scrape_request(connection_id: u64, transaction_id: u32, hashes: &[InfoHash]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 20 * hashes.len());
    buf.extend_from_slice(&connection_id.to_be_bytes());
    buf.extend_from_slice(&ACTION_SCRAPE.to_be_bytes());
    buf.extend_from_slice(&transaction_id.to_be_bytes());
    for h in hashes {
        buf.extend_from_slice(h.as_bytes());
    }
    buf
}

pub fn error_response(transaction_id: u32, message: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + message.len());
    buf.extend_from_slice(&ACTION_ERROR.to_be_bytes());
    buf.extend_from_slice(&transaction_id.to_be_bytes());
    buf.extend_from_slice(message.as_bytes());
    buf
}

/// Action and transaction id common to every response. Needs 8 bytes.
pub fn response_header(payload: &[u8]) -> Option<(u32, u32)> {
    if payload.len() < 8 {
        return None;
    }
    let action = u32::from_be_bytes(payload[0..4].try_into().unwrap());
    let transaction_id = u32::from_be_bytes(payload[4..8].try_into().unwrap());
    Some((action, transaction_id))
}

pub fn parse_connect_response(payload: &[u8]) -> Result<u64, WireError> {
    if payload.len() < CONNECT_RESPONSE_LEN {
        return Err(WireError::Truncated {
            got: payload.len(),
            want: CONNECT_RESPONSE_LEN,
        });
    }
    Ok(u64::from_be_bytes(payload[8..16].try_into().unwrap()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnounceResponseBody {
    pub interval: u32,
    pub leechers: u32,
    pub seeders: u32,
    pub peers: Vec<PeerEndpoint>,
    pub zero_port_dropped: usize,
}

pub fn parse_announce_response(payload: &[u8]) -> Result<AnnounceResponseBody, WireError> {
    if payload.len() < ANNOUNCE_RESPONSE_MIN_LEN {
        return Err(WireError::Truncated {
            got: payload.len(),
            want: ANNOUNCE_RESPONSE_MIN_LEN,
        });
    }
    let interval = u32::from_be_bytes(payload[8..12].try_into().unwrap());
    let leechers = u32::from_be_bytes(payload[12..16].try_into().unwrap());
    let seeders = u32::from_be_bytes(payload[16..20].try_into().unwrap());
    // ⌊(len − 20) / 6⌋ compact peers; a ragged tail is tolerated here
    // because some trackers pad responses.
    let peer_bytes = &payload[20..];
    let usable = peer_bytes.len() - peer_bytes.len() % 6;
    let decoded = decode_compact_peers(&peer_bytes[..usable])?;
    Ok(AnnounceResponseBody {
        interval,
        leechers,
        seeders,
        peers: decoded.peers,
        zero_port_dropped: decoded.zero_port_dropped,
    })
}

/// Per-hash counters from a scrape response, in request order.
pub fn parse_scrape_response(payload: &[u8], n_hashes: usize) -> Result<Vec<(u32, u32, u32)>, WireError> {
    let want = 8 + 12 * n_hashes;
    if payload.len() < want {
        return Err(WireError::Truncated {
            got: payload.len(),
            want,
        });
    }
    let mut out = Vec::with_capacity(n_hashes);
    for i in 0..n_hashes {
        let base = 8 + 12 * i;
        let seeders = u32::from_be_bytes(payload[base..base + 4].try_into().unwrap());
        let completed = u32::from_be_bytes(payload[base + 4..base + 8].try_into().unwrap());
        let leechers = u32::from_be_bytes(payload[base + 8..base + 12].try_into().unwrap());
        out.push((seeders, completed, leechers));
    }
    Ok(out)
}
