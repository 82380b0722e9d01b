//! In-process UDP tracker serving swarm fixtures, for tests and demos.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{self, PeerEndpoint};
use crate::magnet::InfoHash;

/// One swarm the mock tracker knows about. Counts are settable
/// independently of the peer list to exercise disagreement handling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwarmFixture {
    pub info_hash: InfoHash,
    pub peers: Vec<PeerEndpoint>,
    pub seeders: u32,
    pub leechers: u32,
    pub completed: u32,
}

/// Fault injection knobs, all independently toggleable.
#[derive(Debug, Clone, Default)]
pub struct FaultProfile {
    /// Silently drop this many packets before answering anything.
    pub drop_first_n: usize,
    /// Flip the transaction id in every response.
    pub corrupt_transaction_id: bool,
    /// When set, answer every request with an action=3 error.
    pub error_message: Option<String>,
    /// Reject announces/scrapes whose connection id was never issued or
    /// has outlived the token ttl.
    pub stale_token_rejection: bool,
    /// Upper bound on peers per announce response.
    pub response_peer_cap: Option<usize>,
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("failed to bind mock tracker to {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error("fixture file error: {0}")]
    FixtureFile(String),
}

/// Counters handed back by [`MockTracker::shutdown`].
#[derive(Debug, Clone, Default)]
pub struct MockStats {
    pub requests_by_action: BTreeMap<u32, u64>,
    pub dropped: u64,
    pub errors_sent: u64,
    pub malformed: u64,
    /// Arrival instant and action of every datagram received, dropped
    /// ones included. Tests use the gaps to check retry schedules.
    pub arrivals: Vec<(Instant, Option<u32>)>,
}

/// Running mock tracker. Serves one datagram at a time on its own thread.
pub struct MockTracker {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<MockStats>>,
}

const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(60);
const ANNOUNCE_INTERVAL: u32 = 1800;

impl MockTracker {
    pub fn serve(
        fixtures: Vec<SwarmFixture>,
        faults: FaultProfile,
        bind: &str,
    ) -> Result<Self, MockError> {
        Self::serve_with_ttl(fixtures, faults, bind, DEFAULT_TOKEN_TTL)
    }

    /// Like [`serve`](Self::serve) with a custom token ttl so expiry tests
    /// do not need to wait a real minute.
    pub fn serve_with_ttl(
        fixtures: Vec<SwarmFixture>,
        faults: FaultProfile,
        bind: &str,
        token_ttl: Duration,
    ) -> Result<Self, MockError> {
        let socket = UdpSocket::bind(bind).map_err(|source| MockError::BindFailure {
            addr: bind.to_string(),
            source,
        })?;
        let addr = socket.local_addr().map_err(|source| MockError::BindFailure {
            addr: bind.to_string(),
            source,
        })?;
        socket
            .set_read_timeout(Some(Duration::from_millis(20)))
            .expect("set_read_timeout");

        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let swarms: HashMap<InfoHash, SwarmFixture> = fixtures
            .into_iter()
            .map(|f| (f.info_hash, f))
            .collect();
        let handle = std::thread::spawn(move || serve_loop(socket, swarms, faults, token_ttl, flag));
        Ok(MockTracker {
            addr,
            shutdown,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` string usable in a magnet `tr=udp://...` parameter.
    pub fn endpoint(&self) -> String {
        format!("udp://{}", self.addr)
    }

    pub fn shutdown(mut self) -> MockStats {
        self.shutdown.store(true, Ordering::SeqCst);
        match self.handle.take() {
            Some(h) => h.join().unwrap_or_default(),
            None => MockStats::default(),
        }
    }
}

impl Drop for MockTracker {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_loop(
    socket: UdpSocket,
    swarms: HashMap<InfoHash, SwarmFixture>,
    faults: FaultProfile,
    token_ttl: Duration,
    shutdown: Arc<AtomicBool>,
) -> MockStats {
    let mut stats = MockStats::default();
    let mut issued: HashMap<u64, Instant> = HashMap::new();
    let mut packets_seen = 0usize;
    let mut buf = [0u8; 2048];
    let mut rng = rand::rng();

    while !shutdown.load(Ordering::SeqCst) {
        let (len, peer) = match socket.recv_from(&mut buf) {
            Ok(v) => v,
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue
            }
            Err(_) => break,
        };
        let packet = &buf[..len];
        packets_seen += 1;

        let request = parse_request(packet);
        stats
            .arrivals
            .push((Instant::now(), request.as_ref().map(Request::action)));

        if packets_seen <= faults.drop_first_n {
            stats.dropped += 1;
            continue;
        }
        let Some(request) = request else {
            stats.malformed += 1;
            continue;
        };

        *stats
            .requests_by_action
            .entry(request.action())
            .or_insert(0) += 1;

        let reply_txid = if faults.corrupt_transaction_id {
            request.transaction_id() ^ 0xFFFF_FFFF
        } else {
            request.transaction_id()
        };

        if let Some(msg) = &faults.error_message {
            let _ = socket.send_to(&wire::error_response(reply_txid, msg), peer);
            stats.errors_sent += 1;
            continue;
        }

        let response: Vec<u8> = match request {
            Request::Connect { .. } => {
                let connection_id: u64 = rng.random();
                issued.insert(connection_id, Instant::now());
                wire::connect_response(reply_txid, connection_id).to_vec()
            }
            Request::Announce {
                connection_id,
                info_hash,
                num_want,
                ..
            } => {
                if faults.stale_token_rejection && !token_is_fresh(&issued, connection_id, token_ttl)
                {
                    stats.errors_sent += 1;
                    wire::error_response(reply_txid, "stale connection id")
                } else {
                    match swarms.get(&info_hash) {
                        None => {
                            stats.errors_sent += 1;
                            wire::error_response(reply_txid, "unknown torrent")
                        }
                        Some(fixture) => {
                            let mut cap = fixture.peers.len();
                            if num_want >= 0 {
                                cap = cap.min(num_want as usize);
                            }
                            if let Some(limit) = faults.response_peer_cap {
                                cap = cap.min(limit);
                            }
                            // Deterministic prefix keeps tests reproducible.
                            let chosen = &fixture.peers[..cap];
                            let mut out = Vec::with_capacity(20 + chosen.len() * 6);
                            out.extend_from_slice(&wire::ACTION_ANNOUNCE.to_be_bytes());
                            out.extend_from_slice(&reply_txid.to_be_bytes());
                            out.extend_from_slice(&ANNOUNCE_INTERVAL.to_be_bytes());
                            out.extend_from_slice(&fixture.leechers.to_be_bytes());
                            out.extend_from_slice(&fixture.seeders.to_be_bytes());
                            out.extend_from_slice(&wire::encode_compact_peers(chosen));
                            out
                        }
                    }
                }
            }
            Request::Scrape {
                connection_id,
                hashes,
                ..
            } => {
                if faults.stale_token_rejection && !token_is_fresh(&issued, connection_id, token_ttl)
                {
                    stats.errors_sent += 1;
                    wire::error_response(reply_txid, "stale connection id")
                } else {
                    let mut out = Vec::with_capacity(8 + 12 * hashes.len());
                    out.extend_from_slice(&wire::ACTION_SCRAPE.to_be_bytes());
                    out.extend_from_slice(&reply_txid.to_be_bytes());
                    for h in &hashes {
                        let (s, c, l) = swarms
                            .get(h)
                            .map(|f| (f.seeders, f.completed, f.leechers))
                            .unwrap_or((0, 0, 0));
                        out.extend_from_slice(&s.to_be_bytes());
                        out.extend_from_slice(&c.to_be_bytes());
                        out.extend_from_slice(&l.to_be_bytes());
                    }
                    out
                }
            }
        };
        let _ = socket.send_to(&response, peer);
    }
    stats
}

fn token_is_fresh(issued: &HashMap<u64, Instant>, connection_id: u64, ttl: Duration) -> bool {
    issued
        .get(&connection_id)
        .is_some_and(|at| at.elapsed() < ttl)
}

enum Request {
    Connect {
        transaction_id: u32,
    },
    Announce {
        connection_id: u64,
        transaction_id: u32,
        info_hash: InfoHash,
        num_want: i32,
    },
    Scrape {
        connection_id: u64,
        transaction_id: u32,
        hashes: Vec<InfoHash>,
    },
}

impl Request {
    fn action(&self) -> u32 {
        match self {
            Request::Connect { .. } => wire::ACTION_CONNECT,
            Request::Announce { .. } => wire::ACTION_ANNOUNCE,
            Request::Scrape { .. } => wire::ACTION_SCRAPE,
        }
    }

    fn transaction_id(&self) -> u32 {
        match self {
            Request::Connect { transaction_id, .. }
            | Request::Announce { transaction_id, .. }
            | Request::Scrape { transaction_id, .. } => *transaction_id,
        }
    }
}

fn parse_request(packet: &[u8]) -> Option<Request> {
    if packet.len() < 16 {
        return None;
    }
    let head = u64::from_be_bytes(packet[0..8].try_into().unwrap());
    let action = u32::from_be_bytes(packet[8..12].try_into().unwrap());
    let transaction_id = u32::from_be_bytes(packet[12..16].try_into().unwrap());
    match action {
        wire::ACTION_CONNECT if head == wire::PROTOCOL_MAGIC && packet.len() == 16 => {
            Some(Request::Connect { transaction_id })
        }
        wire::ACTION_ANNOUNCE if packet.len() == wire::ANNOUNCE_REQUEST_LEN => {
            let mut hash = [0u8; 20];
            hash.copy_from_slice(&packet[16..36]);
            let num_want = i32::from_be_bytes(packet[92..96].try_into().unwrap());
            Some(Request::Announce {
                connection_id: head,
                transaction_id,
                info_hash: InfoHash::new(hash),
                num_want,
            })
        }
        wire::ACTION_SCRAPE
            if packet.len() > 16
                && (packet.len() - 16) % 20 == 0
                && (packet.len() - 16) / 20 <= wire::MAX_SCRAPE_HASHES =>
        {
            let hashes = packet[16..]
                .chunks_exact(20)
                .map(|c| {
                    let mut h = [0u8; 20];
                    h.copy_from_slice(c);
                    InfoHash::new(h)
                })
                .collect();
            Some(Request::Scrape {
                connection_id: head,
                transaction_id,
                hashes,
            })
        }
        _ => None,
    }
}

#[derive(Serialize, Deserialize)]
struct RawFixture {
    info_hash: String,
    #[serde(default)]
    peers: Vec<String>,
    #[serde(default)]
    seeders: u32,
    #[serde(default)]
    leechers: u32,
    #[serde(default)]
    completed: u32,
}

/// Load swarm fixtures from a JSON file: an array of objects with
/// `info_hash` (hex), `peers` (`"ip:port"` strings), and counters.
pub fn load_fixtures(path: &Path) -> Result<Vec<SwarmFixture>, MockError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MockError::FixtureFile(format!("{}: {e}", path.display())))?;
    let raw: Vec<RawFixture> =
        serde_json::from_str(&text).map_err(|e| MockError::FixtureFile(e.to_string()))?;
    raw.into_iter()
        .map(|r| {
            let info_hash = InfoHash::parse(&r.info_hash)
                .map_err(|e| MockError::FixtureFile(e.to_string()))?;
            let peers = r
                .peers
                .iter()
                .map(|p| {
                    let (ip, port) = p
                        .rsplit_once(':')
                        .ok_or_else(|| MockError::FixtureFile(format!("bad peer {p:?}")))?;
                    Ok(PeerEndpoint::new(
                        ip.parse()
                            .map_err(|_| MockError::FixtureFile(format!("bad peer ip {ip:?}")))?,
                        port.parse()
                            .map_err(|_| MockError::FixtureFile(format!("bad peer port {port:?}")))?,
                    ))
                })
                .collect::<Result<Vec<_>, MockError>>()?;
            Ok(SwarmFixture {
                info_hash,
                peers,
                seeders: r.seeders,
                leechers: r.leechers,
                completed: r.completed,
            })
        })
        .collect()
}

/// Inverse of [`load_fixtures`], used by tests and the fixture generator.
pub fn save_fixtures(path: &Path, fixtures: &[SwarmFixture]) -> Result<(), MockError> {
    let raw: Vec<RawFixture> = fixtures
        .iter()
        .map(|f| RawFixture {
            info_hash: f.info_hash.canonical_hex(),
            peers: f.peers.iter().map(|p| p.to_string()).collect(),
            seeders: f.seeders,
            leechers: f.leechers,
            completed: f.completed,
        })
        .collect();
    let text = serde_json::to_string_pretty(&raw).map_err(|e| MockError::FixtureFile(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| MockError::FixtureFile(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn fixture(hash_byte: u8, peers: &[(u8, u16)]) -> SwarmFixture {
        SwarmFixture {
            info_hash: InfoHash::new([hash_byte; 20]),
            peers: peers
                .iter()
                .map(|&(last, port)| PeerEndpoint::new(Ipv4Addr::new(10, 0, 0, last), port))
                .collect(),
            seeders: 4,
            leechers: 10,
            completed: 2,
        }
    }

    fn client_socket() -> UdpSocket {
        let s = UdpSocket::bind("127.0.0.1:0").unwrap();
        s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        s
    }

    #[test]
    fn connect_gets_16_byte_response_with_echoed_txid() {
        let server =
            MockTracker::serve(vec![], FaultProfile::default(), "127.0.0.1:0").unwrap();
        let sock = client_socket();
        sock.send_to(&wire::connect_request(0x1234_5678), server.addr())
            .unwrap();
        let mut buf = [0u8; 64];
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        assert_eq!(len, 16);
        let (action, txid) = wire::response_header(&buf[..len]).unwrap();
        assert_eq!(action, wire::ACTION_CONNECT);
        assert_eq!(txid, 0x1234_5678);
        let stats = server.shutdown();
        assert_eq!(stats.requests_by_action.get(&0), Some(&1));
    }

    #[test]
    fn announce_unknown_hash_returns_error_action() {
        let server =
            MockTracker::serve(vec![fixture(1, &[(1, 6881)])], FaultProfile::default(), "127.0.0.1:0")
                .unwrap();
        let sock = client_socket();
        sock.send_to(&wire::connect_request(1), server.addr()).unwrap();
        let mut buf = [0u8; 1024];
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        let connection_id = wire::parse_connect_response(&buf[..len]).unwrap();

        let req = wire::AnnounceRequest {
            connection_id,
            transaction_id: 2,
            info_hash: InfoHash::new([0xEE; 20]),
            peer_id: [0u8; 20],
            downloaded: 0,
            left: 0,
            uploaded: 0,
            event: wire::AnnounceEvent::None,
            key: 0,
            num_want: -1,
            port: 6881,
        };
        sock.send_to(&wire::announce_request(&req), server.addr()).unwrap();
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        let (action, _) = wire::response_header(&buf[..len]).unwrap();
        assert_eq!(action, wire::ACTION_ERROR);
        assert_eq!(&buf[8..len], b"unknown torrent");
        let stats = server.shutdown();
        assert_eq!(stats.errors_sent, 1);
    }

    #[test]
    fn num_want_caps_announce_peer_list() {
        let peers: Vec<(u8, u16)> = (1..=30).map(|i| (i as u8, 6000 + i as u16)).collect();
        let server =
            MockTracker::serve(vec![fixture(7, &peers)], FaultProfile::default(), "127.0.0.1:0")
                .unwrap();
        let sock = client_socket();
        sock.send_to(&wire::connect_request(1), server.addr()).unwrap();
        let mut buf = [0u8; 2048];
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        let connection_id = wire::parse_connect_response(&buf[..len]).unwrap();

        let req = wire::AnnounceRequest {
            connection_id,
            transaction_id: 9,
            info_hash: InfoHash::new([7; 20]),
            peer_id: [0u8; 20],
            downloaded: 0,
            left: 0,
            uploaded: 0,
            event: wire::AnnounceEvent::None,
            key: 0,
            num_want: 5,
            port: 6881,
        };
        sock.send_to(&wire::announce_request(&req), server.addr()).unwrap();
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        let body = wire::parse_announce_response(&buf[..len]).unwrap();
        assert_eq!(body.peers.len(), 5);
        // deterministic prefix of the fixture list
        assert_eq!(body.peers[0], PeerEndpoint::new(Ipv4Addr::new(10, 0, 0, 1), 6001));
        drop(server);
    }

    #[test]
    fn shutdown_counters_reflect_traffic() {
        let server =
            MockTracker::serve(vec![], FaultProfile::default(), "127.0.0.1:0").unwrap();
        let stats = MockTracker::serve(vec![], FaultProfile::default(), "127.0.0.1:0")
            .unwrap()
            .shutdown();
        assert!(stats.requests_by_action.is_empty());
        assert_eq!(stats.dropped, 0);
        assert_eq!(stats.errors_sent, 0);

        let sock = client_socket();
        sock.send_to(&wire::connect_request(5), server.addr()).unwrap();
        let mut buf = [0u8; 64];
        let _ = sock.recv_from(&mut buf).unwrap();
        let stats = server.shutdown();
        assert_eq!(stats.requests_by_action.get(&0), Some(&1));
    }

    #[test]
    fn drop_first_n_counts_drops() {
        let faults = FaultProfile {
            drop_first_n: 1,
            ..FaultProfile::default()
        };
        let server = MockTracker::serve(vec![], faults, "127.0.0.1:0").unwrap();
        let sock = client_socket();
        sock.set_read_timeout(Some(Duration::from_millis(100))).unwrap();
        sock.send_to(&wire::connect_request(1), server.addr()).unwrap();
        let mut buf = [0u8; 64];
        assert!(sock.recv_from(&mut buf).is_err()); // dropped
        sock.send_to(&wire::connect_request(2), server.addr()).unwrap();
        sock.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let (len, _) = sock.recv_from(&mut buf).unwrap();
        assert_eq!(len, 16);
        let stats = server.shutdown();
        assert_eq!(stats.dropped, 1);
    }

    #[test]
    fn fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("swarms.json");
        let fixtures = vec![fixture(1, &[(1, 6881), (2, 51413)]), fixture(2, &[])];
        save_fixtures(&path, &fixtures).unwrap();
        assert_eq!(load_fixtures(&path).unwrap(), fixtures);
    }
}
