//! UDP tracker client: connect, announce, scrape, and batch harvesting.
//!
//! The client never opens a TCP connection and never requests piece data;
//! it only enumerates swarm membership.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::{Ipv4Addr, SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

use super::wire::{self, AnnounceEvent, PeerEndpoint};
use crate::magnet::{InfoHash, MagnetLink};

/// Retransmit timeouts follow 15·2ⁿ seconds with n capped; `scale`
/// compresses the schedule for tests.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base: Duration,
    pub max_n: u32,
    pub scale: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_secs(15),
            max_n: 3,
            scale: 1.0,
        }
    }
}

impl RetryPolicy {
    pub fn compressed(scale: f64) -> Self {
        RetryPolicy {
            scale,
            ..RetryPolicy::default()
        }
    }

    pub fn timeout_for(&self, n: u32) -> Duration {
        self.base.mul_f64(self.scale * (1u64 << n.min(self.max_n)) as f64)
    }

    pub fn attempts(&self) -> u32 {
        self.max_n + 1
    }
}

/// Tracker-issued connection id, valid for 60 seconds.
#[derive(Debug, Clone, Copy)]
pub struct ConnectionToken {
    pub connection_id: u64,
    pub obtained_at: Instant,
    pub endpoint: SocketAddr,
}

impl ConnectionToken {
    pub fn age(&self) -> Duration {
        self.obtained_at.elapsed()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnounceResult {
    pub interval: u32,
    pub leechers: u32,
    pub seeders: u32,
    pub peers: Vec<PeerEndpoint>,
    pub zero_port_dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScrapeEntry {
    pub info_hash: InfoHash,
    pub seeders: u32,
    pub completed: u32,
    pub leechers: u32,
}

/// One (info-hash, IP, port, timestamp) sighting from an announce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeerObservation {
    pub info_hash: InfoHash,
    pub ip: Ipv4Addr,
    pub port: u16,
    /// UTC seconds.
    pub observed_at: i64,
}

/// Announce parameters. The defaults announce purely to enumerate peers:
/// event=none, all counters zero, num_want 200.
#[derive(Debug, Clone, Copy)]
pub struct AnnounceParams {
    pub peer_id: [u8; 20],
    pub num_want: u32,
    pub listen_port: u16,
    pub event: AnnounceEvent,
    pub downloaded: u64,
    pub left: u64,
    pub uploaded: u64,
}

impl Default for AnnounceParams {
    fn default() -> Self {
        AnnounceParams {
            peer_id: generate_peer_id(),
            num_want: 200,
            listen_port: 6881,
            event: AnnounceEvent::None,
            downloaded: 0,
            left: 0,
            uploaded: 0,
        }
    }
}

/// Fixed client prefix plus 12 random bytes, regenerated per run.
pub fn generate_peer_id() -> [u8; 20] {
    let mut id = [0u8; 20];
    id[..8].copy_from_slice(b"-ST0100-");
    rand::rng().fill(&mut id[8..]);
    id
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no response from {endpoint} after full retry schedule")]
    Timeout { endpoint: SocketAddr },
    #[error("{observed} response(s) with mismatched transaction id from {endpoint}; none accepted")]
    TransactionMismatch { endpoint: SocketAddr, observed: u64 },
    #[error("tracker error: {0}")]
    Tracker(String),
    #[error("response truncated: {got} bytes, expected at least {want}")]
    Truncated { got: usize, want: usize },
    #[error("connection token for {endpoint} expired ({age:?} old)")]
    TokenExpired { endpoint: SocketAddr, age: Duration },
    #[error("scrape limited to {max} hashes, got {got}")]
    TooManyHashes { got: usize, max: usize },
    #[error("cannot resolve tracker endpoint {0:?}")]
    Resolve(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const TOKEN_TTL: Duration = Duration::from_secs(60);
const TOKEN_EXPIRY_MARGIN: Duration = Duration::from_secs(5);

/// Blocking UDP tracker client with a per-endpoint token cache. Safe to
/// share across threads; each request uses its own ephemeral socket and
/// matches responses by transaction id.
pub struct TrackerClient {
    policy: RetryPolicy,
    token_ttl: Duration,
    token_margin: Duration,
    tokens: Mutex<HashMap<SocketAddr, ConnectionToken>>,
}

impl Default for TrackerClient {
    fn default() -> Self {
        Self::new(RetryPolicy::default())
    }
}

impl TrackerClient {
    pub fn new(policy: RetryPolicy) -> Self {
        TrackerClient {
            policy,
            token_ttl: TOKEN_TTL,
            token_margin: TOKEN_EXPIRY_MARGIN,
            tokens: Mutex::new(HashMap::new()),
        }
    }

    /// Shrink the token lifetime, for expiry tests.
    pub fn with_token_ttl(mut self, ttl: Duration, margin: Duration) -> Self {
        self.token_ttl = ttl;
        self.token_margin = margin;
        self
    }

    pub fn resolve(endpoint: &str) -> Result<SocketAddr, ClientError> {
        endpoint
            .to_socket_addrs()
            .map_err(|_| ClientError::Resolve(endpoint.to_string()))?
            .find(|a| a.is_ipv4())
            .ok_or_else(|| ClientError::Resolve(endpoint.to_string()))
    }

    fn token_is_fresh(&self, token: &ConnectionToken) -> bool {
        token.age() + self.token_margin < self.token_ttl
    }

    /// Issue a connect request and return the tracker's connection id.
    pub fn connect(&self, endpoint: SocketAddr) -> Result<ConnectionToken, ClientError> {
        let payload = self.exchange(
            endpoint,
            |txid| wire::connect_request(txid).to_vec(),
            wire::ACTION_CONNECT,
            wire::CONNECT_RESPONSE_LEN,
        )?;
        let connection_id = wire::parse_connect_response(&payload).map_err(wire_err)?;
        let token = ConnectionToken {
            connection_id,
            obtained_at: Instant::now(),
            endpoint,
        };
        self.tokens.lock().unwrap().insert(endpoint, token);
        Ok(token)
    }

    /// Cached token for an endpoint, reconnecting transparently when the
    /// cached one is within the expiry margin of the 60 s bound.
    pub fn token_for(&self, endpoint: SocketAddr) -> Result<ConnectionToken, ClientError> {
        {
            let tokens = self.tokens.lock().unwrap();
            if let Some(token) = tokens.get(&endpoint) {
                if self.token_is_fresh(token) {
                    return Ok(*token);
                }
            }
        }
        self.connect(endpoint)
    }

    pub fn announce(
        &self,
        token: &ConnectionToken,
        hash: InfoHash,
        params: &AnnounceParams,
    ) -> Result<AnnounceResult, ClientError> {
        if !self.token_is_fresh(token) {
            return Err(ClientError::TokenExpired {
                endpoint: token.endpoint,
                age: token.age(),
            });
        }
        let req_template = wire::AnnounceRequest {
            connection_id: token.connection_id,
            transaction_id: 0,
            info_hash: hash,
            peer_id: params.peer_id,
            downloaded: params.downloaded,
            left: params.left,
            uploaded: params.uploaded,
            event: params.event,
            key: rand::rng().random(),
            num_want: params.num_want.min(i32::MAX as u32) as i32,
            port: params.listen_port,
        };
        let payload = self.exchange(
            token.endpoint,
            |txid| {
                let mut req = req_template.clone();
                req.transaction_id = txid;
                wire::announce_request(&req).to_vec()
            },
            wire::ACTION_ANNOUNCE,
            wire::ANNOUNCE_RESPONSE_MIN_LEN,
        )?;
        let mut body = wire::parse_announce_response(&payload).map_err(wire_err)?;
        body.peers.truncate(params.num_want as usize);
        Ok(AnnounceResult {
            interval: body.interval,
            leechers: body.leechers,
            seeders: body.seeders,
            peers: body.peers,
            zero_port_dropped: body.zero_port_dropped,
        })
    }

    /// Announce with automatic token acquisition and reuse.
    pub fn announce_cached(
        &self,
        endpoint: SocketAddr,
        hash: InfoHash,
        params: &AnnounceParams,
    ) -> Result<AnnounceResult, ClientError> {
        let token = self.token_for(endpoint)?;
        self.announce(&token, hash, params)
    }

    pub fn scrape(
        &self,
        token: &ConnectionToken,
        hashes: &[InfoHash],
    ) -> Result<Vec<ScrapeEntry>, ClientError> {
        if hashes.is_empty() || hashes.len() > wire::MAX_SCRAPE_HASHES {
            return Err(ClientError::TooManyHashes {
                got: hashes.len(),
                max: wire::MAX_SCRAPE_HASHES,
            });
        }
        if !self.token_is_fresh(token) {
            return Err(ClientError::TokenExpired {
                endpoint: token.endpoint,
                age: token.age(),
            });
        }
        let connection_id = token.connection_id;
        let payload = self.exchange(
            token.endpoint,
            |txid| wire::scrape_request(connection_id, txid, hashes),
            wire::ACTION_SCRAPE,
            8 + 12 * hashes.len(),
        )?;
        let counts = wire::parse_scrape_response(&payload, hashes.len()).map_err(wire_err)?;
        Ok(hashes
            .iter()
            .zip(counts)
            .map(|(&info_hash, (seeders, completed, leechers))| ScrapeEntry {
                info_hash,
                seeders,
                completed,
                leechers,
            })
            .collect())
    }

    /// Send a request and wait for the matching response, retransmitting
    /// on the retry schedule. Responses with unknown transaction ids are
    /// discarded; responses to earlier attempts of the same request are
    /// ignored silently.
    fn exchange(
        &self,
        endpoint: SocketAddr,
        build: impl Fn(u32) -> Vec<u8>,
        expect_action: u32,
        min_len: usize,
    ) -> Result<Vec<u8>, ClientError> {
        let socket = UdpSocket::bind("0.0.0.0:0")?;
        socket.connect(endpoint)?;

        let mut rng = rand::rng();
        let mut own_txids: Vec<u32> = Vec::with_capacity(self.policy.attempts() as usize);
        let mut mismatches = 0u64;
        let mut buf = [0u8; 65536];

        for n in 0..self.policy.attempts() {
            let txid: u32 = rng.random();
            own_txids.push(txid);
            socket.send(&build(txid))?;

            let deadline = Instant::now() + self.policy.timeout_for(n);
            loop {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    break; // next attempt
                }
                socket.set_read_timeout(Some(remaining))?;
                let len = match socket.recv(&mut buf) {
                    Ok(len) => len,
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut =>
                    {
                        break
                    }
                    Err(e) => return Err(e.into()),
                };
                let payload = &buf[..len];
                let Some((action, resp_txid)) = wire::response_header(payload) else {
                    continue; // too short to classify, keep waiting
                };
                if resp_txid != txid {
                    if !own_txids.contains(&resp_txid) {
                        mismatches += 1;
                    }
                    continue;
                }
                if action == wire::ACTION_ERROR {
                    let message = String::from_utf8_lossy(&payload[8..]).into_owned();
                    return Err(ClientError::Tracker(message));
                }
                if action != expect_action {
                    mismatches += 1;
                    continue;
                }
                if len < min_len {
                    return Err(ClientError::Truncated {
                        got: len,
                        want: min_len,
                    });
                }
                return Ok(payload.to_vec());
            }
        }

        if mismatches > 0 {
            Err(ClientError::TransactionMismatch {
                endpoint,
                observed: mismatches,
            })
        } else {
            Err(ClientError::Timeout { endpoint })
        }
    }
}

fn wire_err(e: wire::WireError) -> ClientError {
    match e {
        wire::WireError::Truncated { got, want } => ClientError::Truncated { got, want },
        other => ClientError::Tracker(other.to_string()),
    }
}

/// Concurrency bound and per-tracker pacing for a harvest run.
#[derive(Debug, Clone, Copy)]
pub struct HarvestSchedule {
    pub concurrency: usize,
    /// Minimum gap between two requests to the same tracker.
    pub per_tracker_interval: Duration,
}

impl Default for HarvestSchedule {
    fn default() -> Self {
        HarvestSchedule {
            concurrency: 4,
            per_tracker_interval: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HarvestReport {
    pub attempted_pairs: usize,
    pub succeeded_pairs: usize,
    /// Hashes of magnets that listed no udp tracker and were skipped.
    pub skipped_magnets: Vec<String>,
    /// Failure messages tallied per tracker endpoint.
    pub failures: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Default)]
pub struct HarvestOutcome {
    pub observations: Vec<PeerObservation>,
    pub report: HarvestReport,
}

impl TrackerClient {
    /// Announce every (magnet, udp tracker) pair and timestamp the peers
    /// returned. Partial failures never abort the batch.
    pub fn harvest_swarms(
        &self,
        magnets: &[MagnetLink],
        schedule: &HarvestSchedule,
    ) -> HarvestOutcome {
        self.harvest_swarms_with(magnets, schedule, &AnnounceParams::default())
    }

    pub fn harvest_swarms_with(
        &self,
        magnets: &[MagnetLink],
        schedule: &HarvestSchedule,
        params: &AnnounceParams,
    ) -> HarvestOutcome {
        let mut report = HarvestReport::default();
        let mut tasks: VecDeque<(InfoHash, String, SocketAddr)> = VecDeque::new();

        for magnet in magnets {
            let udp = magnet.udp_trackers();
            if udp.is_empty() {
                report
                    .skipped_magnets
                    .push(magnet.info_hash.canonical_hex());
                continue;
            }
            for (host, port) in udp {
                let endpoint_str = format!("{host}:{port}");
                match Self::resolve(&endpoint_str) {
                    Ok(addr) => tasks.push_back((magnet.info_hash, endpoint_str, addr)),
                    Err(e) => {
                        report
                            .failures
                            .entry(endpoint_str)
                            .or_default()
                            .push(e.to_string());
                    }
                }
            }
        }
        report.attempted_pairs = tasks.len();

        let queue = Mutex::new(tasks);
        let limiter = RateLimiter::new(schedule.per_tracker_interval);
        let results: Mutex<Vec<(Vec<PeerObservation>, Option<(String, String)>)>> =
            Mutex::new(Vec::new());

        let workers = schedule.concurrency.max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let task = queue.lock().unwrap().pop_front();
                    let Some((hash, endpoint_str, addr)) = task else {
                        break;
                    };
                    limiter.wait_turn(&endpoint_str);
                    match self.announce_cached(addr, hash, params) {
                        Ok(result) => {
                            let observed_at = chrono::Utc::now().timestamp();
                            let obs = result
                                .peers
                                .iter()
                                .map(|p| PeerObservation {
                                    info_hash: hash,
                                    ip: p.ip,
                                    port: p.port,
                                    observed_at,
                                })
                                .collect();
                            results.lock().unwrap().push((obs, None));
                        }
                        Err(e) => {
                            results
                                .lock()
                                .unwrap()
                                .push((Vec::new(), Some((endpoint_str, e.to_string()))));
                        }
                    }
                });
            }
        });

        let mut observations = Vec::new();
        for (obs, failure) in results.into_inner().unwrap() {
            match failure {
                None => {
                    report.succeeded_pairs += 1;
                    observations.extend(obs);
                }
                Some((endpoint, message)) => {
                    report.failures.entry(endpoint).or_default().push(message);
                }
            }
        }
        // Batch order is worker-dependent; sort for reproducible output.
        observations.sort_by_key(|o| (o.info_hash, o.ip, o.port, o.observed_at));
        HarvestOutcome {
            observations,
            report,
        }
    }
}

/// Shared per-key pacing: callers of the same key proceed at least
/// `interval` apart, whichever thread they run on.
struct RateLimiter {
    interval: Duration,
    slots: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    fn new(interval: Duration) -> Self {
        RateLimiter {
            interval,
            slots: Mutex::new(HashMap::new()),
        }
    }

    fn wait_turn(&self, key: &str) {
        if self.interval.is_zero() {
            return;
        }
        let wake = {
            let mut slots = self.slots.lock().unwrap();
            let now = Instant::now();
            let slot = slots
                .entry(key.to_string())
                .and_modify(|t| *t = (*t + self.interval).max(now))
                .or_insert(now);
            *slot
        };
        let now = Instant::now();
        if wake > now {
            std::thread::sleep(wake - now);
        }
    }
}
