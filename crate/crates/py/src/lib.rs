//! Python bindings for the swarm-tracing pipeline. Addresses cross the
//! boundary as dotted-quad strings and info-hashes as 40-char hex, so
//! callers never touch the Rust types directly.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use swarmtrace::enrichment::{
    enrich_all, FlagList, OfflineFileProvider, PrivacyMatcher, Provider,
};
use swarmtrace::graph::{self, NodeFilter, NodeId, ProjectionSide, WeightedGraph};
use swarmtrace::magnet::{self, InfoHash};
use swarmtrace::report::{self, ReportParams};
use swarmtrace::store::{self, TorrentRecord};
use swarmtrace::tracker::{
    wire, AnnounceParams, FaultProfile, HarvestSchedule, MockTracker as CoreMockTracker,
    PeerEndpoint, RetryPolicy, SwarmFixture, TrackerClient,
};

fn val_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_ip(s: &str) -> PyResult<Ipv4Addr> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("not an IPv4 address: {s:?}")))
}

fn parse_hash(s: &str) -> PyResult<InfoHash> {
    InfoHash::from_hex(s).map_err(val_err)
}

fn node_name(node: NodeId) -> String {
    match node {
        NodeId::Ip(ip) => ip.to_string(),
        NodeId::Torrent(hash) => hash.canonical_hex(),
    }
}

/// Parsed magnet URI.
#[pyclass(frozen)]
pub struct MagnetInfo {
    #[pyo3(get)]
    info_hash: String,
    #[pyo3(get)]
    display_name: Option<String>,
    #[pyo3(get)]
    trackers: Vec<String>,
    #[pyo3(get)]
    warnings: Vec<String>,
}

#[pymethods]
impl MagnetInfo {
    fn __repr__(&self) -> String {
        format!(
            "MagnetInfo(info_hash={:?}, trackers={})",
            self.info_hash,
            self.trackers.len()
        )
    }
}

/// Parse a magnet URI; raises ValueError on malformed input.
#[pyfunction]
fn parse_magnet(uri: &str) -> PyResult<MagnetInfo> {
    let link = magnet::parse_magnet(uri).map_err(val_err)?;
    Ok(MagnetInfo {
        info_hash: link.info_hash.canonical_hex(),
        display_name: link.display_name,
        trackers: link.trackers,
        warnings: link.warnings,
    })
}

/// Encode (ip, port) pairs into the 6-byte-per-peer compact form.
#[pyfunction]
fn encode_compact_peers<'py>(
    py: Python<'py>,
    peers: Vec<(String, u16)>,
) -> PyResult<Bound<'py, PyBytes>> {
    let endpoints: Vec<PeerEndpoint> = peers
        .iter()
        .map(|(ip, port)| Ok(PeerEndpoint::new(parse_ip(ip)?, *port)))
        .collect::<PyResult<_>>()?;
    Ok(PyBytes::new(py, &wire::encode_compact_peers(&endpoints)))
}

/// Decode compact peer bytes; returns (peers, zero_port_dropped).
#[pyfunction]
fn decode_compact_peers(data: &[u8]) -> PyResult<(Vec<(String, u16)>, usize)> {
    let decoded = wire::decode_compact_peers(data).map_err(val_err)?;
    let peers = decoded
        .peers
        .iter()
        .map(|p| (p.ip.to_string(), p.port))
        .collect();
    Ok((peers, decoded.zero_port_dropped))
}

/// Default-keyword privacy check over the three ownership fields.
#[pyfunction]
#[pyo3(signature = (isp, org="", as_field=""))]
fn privacy_heuristic(isp: &str, org: &str, as_field: &str) -> bool {
    swarmtrace::enrichment::privacy_heuristic(isp, org, as_field)
}

/// Announce every magnet to its trackers plus `trackers` and collect
/// sightings. Returns (observations, report) where observations are
/// (info_hash, ip, port, observed_at) tuples.
#[pyfunction]
#[pyo3(signature = (magnets, trackers=Vec::new(), num_want=200, retry_scale=1.0))]
fn harvest<'py>(
    py: Python<'py>,
    magnets: Vec<String>,
    trackers: Vec<String>,
    num_want: u32,
    retry_scale: f64,
) -> PyResult<(Vec<(String, String, u16, i64)>, Bound<'py, PyDict>)> {
    let mut parsed = Vec::new();
    for uri in &magnets {
        let mut link = magnet::parse_magnet(uri).map_err(val_err)?;
        for extra in &trackers {
            link.trackers.push(format!("udp://{extra}"));
        }
        parsed.push(link);
    }
    let client = TrackerClient::new(RetryPolicy::compressed(retry_scale));
    let params = AnnounceParams {
        num_want,
        ..AnnounceParams::default()
    };
    let outcome = client.harvest_swarms_with(&parsed, &HarvestSchedule::default(), &params);
    let observations = outcome
        .observations
        .iter()
        .map(|o| {
            (
                o.info_hash.canonical_hex(),
                o.ip.to_string(),
                o.port,
                o.observed_at,
            )
        })
        .collect();
    let report = PyDict::new(py);
    report.set_item("attempted_pairs", outcome.report.attempted_pairs)?;
    report.set_item("succeeded_pairs", outcome.report.succeeded_pairs)?;
    report.set_item("skipped_magnets", outcome.report.skipped_magnets)?;
    let failures = PyDict::new(py);
    for (endpoint, errors) in &outcome.report.failures {
        failures.set_item(endpoint, errors.clone())?;
    }
    report.set_item("failures", failures)?;
    Ok((observations, report))
}

/// Exact betweenness centrality of an undirected edge list over
/// arbitrary string node names. Returns (node, betweenness, degree)
/// rows, highest betweenness first.
#[pyfunction]
fn betweenness(edges: Vec<(String, String)>) -> PyResult<Vec<(String, f64, usize)>> {
    // node names get interned as synthetic addresses internally
    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    let mut names: Vec<String> = Vec::new();
    let intern = |name: &str, index: &mut BTreeMap<String, u32>, names: &mut Vec<String>| {
        *index.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            (names.len() - 1) as u32
        })
    };
    let mut g = WeightedGraph::default();
    for (a, b) in &edges {
        if a == b {
            return Err(PyValueError::new_err(format!("self-loop on {a:?}")));
        }
        let ia = intern(a, &mut index, &mut names);
        let ib = intern(b, &mut index, &mut names);
        g.add_edge(
            NodeId::Ip(Ipv4Addr::from(ia)),
            NodeId::Ip(Ipv4Addr::from(ib)),
            1,
        );
    }
    Ok(graph::betweenness(&g)
        .into_iter()
        .map(|row| {
            let NodeId::Ip(ip) = row.node else {
                unreachable!("only address nodes were inserted")
            };
            let name = names[u32::from(ip) as usize].clone();
            (name, row.betweenness, row.degree)
        })
        .collect())
}

/// The three-table observation store.
#[pyclass]
pub struct Store {
    inner: store::Store,
}

#[pymethods]
impl Store {
    #[new]
    fn new() -> Self {
        Store {
            inner: store::Store::new(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Store {
            inner: store::Store::load(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[pyo3(signature = (info_hash, title, uploader="", category="Other", magnet=""))]
    fn add_torrent(
        &mut self,
        info_hash: &str,
        title: &str,
        uploader: &str,
        category: &str,
        magnet: &str,
    ) -> PyResult<()> {
        self.inner
            .upsert_torrent(TorrentRecord {
                info_hash: parse_hash(info_hash)?,
                title: title.to_string(),
                category: category.to_string(),
                subcategory: String::new(),
                uploaded_at: String::new(),
                size_bytes: 0,
                seeders: 0,
                leechers: 0,
                uploader: uploader.to_string(),
                magnet: magnet.to_string(),
                interest_category: None,
            })
            .map_err(val_err)?;
        Ok(())
    }

    /// Record (info_hash, ip, port, observed_at) sightings; sightings
    /// for unknown torrents are rejected, replays are deduplicated.
    fn record_observations<'py>(
        &mut self,
        py: Python<'py>,
        observations: Vec<(String, String, u16, i64)>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let parsed: Vec<swarmtrace::tracker::PeerObservation> = observations
            .iter()
            .map(|(hash, ip, port, at)| {
                Ok(swarmtrace::tracker::PeerObservation {
                    info_hash: parse_hash(hash)?,
                    ip: parse_ip(ip)?,
                    port: *port,
                    observed_at: *at,
                })
            })
            .collect::<PyResult<_>>()?;
        let report = self.inner.record_observations(&parsed);
        let out = PyDict::new(py);
        out.set_item("new_links", report.new_links)?;
        out.set_item("new_ips", report.new_ips)?;
        out.set_item("observations_added", report.observations_added)?;
        out.set_item("duplicates_ignored", report.duplicates_ignored)?;
        out.set_item("rejected_unknown_hash", report.rejected_unknown_hash)?;
        Ok(out)
    }

    /// Enrich every unenriched address from an offline lookup file.
    /// Returns the number of profiles updated.
    fn enrich_offline(&mut self, provider_csv: PathBuf) -> PyResult<usize> {
        let provider = OfflineFileProvider::load(&provider_csv).map_err(io_err)?;
        let targets = self.inner.unenriched_ips();
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(provider)];
        let (profiles, summary) = enrich_all(&targets, &providers, &PrivacyMatcher::default());
        if summary.looked_up > 0 && summary.all_failed == summary.looked_up {
            return Err(run_err("every lookup failed"));
        }
        Ok(self.inner.apply_profiles(&profiles))
    }

    /// Tag the listed addresses with `label`; returns how many matched
    /// a stored profile.
    fn apply_flags(&mut self, label: &str, ips: Vec<String>) -> PyResult<usize> {
        let members: Vec<Ipv4Addr> = ips.iter().map(|s| parse_ip(s)).collect::<PyResult<_>>()?;
        let summary = self.inner.apply_flags(&[FlagList::new(label, members)]);
        Ok(summary.per_label.get(label).copied().unwrap_or(0))
    }

    /// Canonicalize city spellings, lowercase ownership fields, and
    /// re-run the privacy heuristic. Returns the number of field edits.
    fn normalize(&mut self) -> usize {
        self.inner
            .normalize(&store::CityTable::seeded(), &PrivacyMatcher::default())
            .changes
            .len()
    }

    fn assign_interest_categories(&mut self) -> usize {
        self.inner
            .assign_interest_categories(&store::InterestRules::seeded())
    }

    fn torrent_count(&self) -> usize {
        self.inner.torrent_count()
    }

    fn ip_count(&self) -> usize {
        self.inner.ip_count()
    }

    fn link_count(&self) -> usize {
        self.inner.links().count()
    }

    /// Run a canned query; returns tab-separated rows.
    #[pyo3(signature = (kind, param=""))]
    fn query(&self, kind: &str, param: &str) -> PyResult<Vec<String>> {
        self.inner.query(kind, param).map_err(val_err)
    }

    /// Headline dataset statistics as a dict.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let stats = report::summary(&self.inner, &[]);
        let out = PyDict::new(py);
        out.set_item("torrents", stats.torrent_count)?;
        out.set_item("unique_ips", stats.unique_ip_count)?;
        out.set_item("countries", stats.country_count)?;
        out.set_item("mean_links_per_ip", stats.mean_links_per_ip)?;
        out.set_item("max_links_per_ip", stats.max_links_per_ip)?;
        out.set_item("privacy_count", stats.privacy_count)?;
        out.set_item("privacy_rate", stats.privacy_rate)?;
        out.set_item("least_anonymized_count", stats.least_anonymized_count)?;
        out.set_item("least_anonymized_rate", stats.least_anonymized_rate)?;
        let flags = PyDict::new(py);
        for (label, f) in &stats.flags {
            let entry = PyDict::new(py);
            entry.set_item("count", f.count)?;
            entry.set_item("rate", f.rate)?;
            entry.set_item("privacy_overlap", f.privacy_overlap)?;
            entry.set_item("least_anonymized_overlap", f.least_anonymized_overlap)?;
            flags.set_item(label, entry)?;
        }
        out.set_item("flags", flags)?;
        Ok(out)
    }

    /// Weighted co-download edges between addresses sharing at least
    /// one torrent, as (ip_a, ip_b, shared_torrents) tuples.
    #[pyo3(signature = (min_links=1))]
    fn co_occurrence(&self, min_links: usize) -> PyResult<Vec<(String, String, u64)>> {
        let filter = NodeFilter {
            min_links: Some(min_links),
            ..NodeFilter::default()
        };
        let bipartite = graph::build_bipartite(&self.inner, &filter).map_err(val_err)?;
        let projected = graph::project(&bipartite, ProjectionSide::Ip);
        Ok(projected
            .edges
            .iter()
            .map(|(&(a, b), &w)| (node_name(a), node_name(b), w))
            .collect())
    }

    /// Betweenness and degree per address over the co-download network.
    #[pyo3(signature = (min_links=1))]
    fn ip_centrality(&self, min_links: usize) -> PyResult<Vec<(String, f64, usize)>> {
        let filter = NodeFilter {
            min_links: Some(min_links),
            ..NodeFilter::default()
        };
        let bipartite = graph::build_bipartite(&self.inner, &filter).map_err(val_err)?;
        let projected = graph::project(&bipartite, ProjectionSide::Ip);
        Ok(graph::betweenness(&projected)
            .into_iter()
            .map(|row| (node_name(row.node), row.betweenness, row.degree))
            .collect())
    }

    /// Write the full report bundle; returns the file names written.
    #[pyo3(signature = (dir, uploader=None, min_links=7, top_fraction=0.0001, top_k=10, pseudonymize=true, coord_decimals=4))]
    #[allow(clippy::too_many_arguments)]
    fn render_report(
        &self,
        dir: PathBuf,
        uploader: Option<String>,
        min_links: usize,
        top_fraction: f64,
        top_k: usize,
        pseudonymize: bool,
        coord_decimals: usize,
    ) -> PyResult<Vec<String>> {
        let params = report_params(
            uploader,
            min_links,
            top_fraction,
            top_k,
            pseudonymize,
            coord_decimals,
        );
        let manifest = report::render_report(&self.inner, &params, &dir).map_err(run_err)?;
        Ok(manifest.files)
    }

    /// Recompute a bundle with the independent audit engine and
    /// byte-compare. Returns discrepancies; empty means clean.
    #[pyo3(signature = (dir, uploader=None, min_links=7, top_fraction=0.0001, top_k=10, pseudonymize=true, coord_decimals=4))]
    #[allow(clippy::too_many_arguments)]
    fn self_audit(
        &self,
        dir: PathBuf,
        uploader: Option<String>,
        min_links: usize,
        top_fraction: f64,
        top_k: usize,
        pseudonymize: bool,
        coord_decimals: usize,
    ) -> Vec<String> {
        let params = report_params(
            uploader,
            min_links,
            top_fraction,
            top_k,
            pseudonymize,
            coord_decimals,
        );
        report::self_audit(&self.inner, &params, &dir)
    }
}

fn report_params(
    uploader: Option<String>,
    min_links: usize,
    top_fraction: f64,
    top_k: usize,
    pseudonymize: bool,
    coord_decimals: usize,
) -> ReportParams {
    ReportParams {
        flag_labels: Vec::new(),
        min_links,
        top_fraction,
        top_k,
        uploader,
        pseudonymize,
        coord_decimals,
    }
}

/// In-process UDP tracker serving canned swarms, for hermetic tests.
#[pyclass]
pub struct MockTracker {
    inner: Option<CoreMockTracker>,
}

#[pymethods]
impl MockTracker {
    /// `fixtures` maps info-hash hex to its peer list:
    /// [(hash, [(ip, port), ...]), ...]
    #[new]
    #[pyo3(signature = (fixtures, bind="127.0.0.1:0", drop_first=0))]
    fn new(
        fixtures: Vec<(String, Vec<(String, u16)>)>,
        bind: &str,
        drop_first: usize,
    ) -> PyResult<Self> {
        let mut swarms = Vec::new();
        for (hash, peers) in &fixtures {
            let endpoints: Vec<PeerEndpoint> = peers
                .iter()
                .map(|(ip, port)| Ok(PeerEndpoint::new(parse_ip(ip)?, *port)))
                .collect::<PyResult<_>>()?;
            swarms.push(SwarmFixture {
                info_hash: parse_hash(hash)?,
                seeders: endpoints.len() as u32,
                leechers: 0,
                completed: 0,
                peers: endpoints,
            });
        }
        let faults = FaultProfile {
            drop_first_n: drop_first,
            ..FaultProfile::default()
        };
        let inner = CoreMockTracker::serve(swarms, faults, bind).map_err(run_err)?;
        Ok(MockTracker { inner: Some(inner) })
    }

    /// `udp://host:port` endpoint usable in magnet tracker lists.
    fn endpoint(&self) -> PyResult<String> {
        self.running()?;
        Ok(self.inner.as_ref().unwrap().endpoint())
    }

    /// `host:port` without the scheme.
    fn addr(&self) -> PyResult<String> {
        self.running()?;
        Ok(self.inner.as_ref().unwrap().addr().to_string())
    }

    /// Stop serving and return traffic counters.
    fn shutdown<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let tracker = self
            .inner
            .take()
            .ok_or_else(|| run_err("tracker already shut down"))?;
        let stats = tracker.shutdown();
        let out = PyDict::new(py);
        let by_action = PyDict::new(py);
        for (action, count) in &stats.requests_by_action {
            by_action.set_item(action, count)?;
        }
        out.set_item("requests_by_action", by_action)?;
        out.set_item("dropped", stats.dropped)?;
        out.set_item("errors_sent", stats.errors_sent)?;
        out.set_item("malformed", stats.malformed)?;
        Ok(out)
    }
}

impl MockTracker {
    fn running(&self) -> PyResult<()> {
        if self.inner.is_none() {
            return Err(run_err("tracker already shut down"));
        }
        Ok(())
    }
}

#[pymodule]
fn swarmtrace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MagnetInfo>()?;
    m.add_class::<Store>()?;
    m.add_class::<MockTracker>()?;
    m.add_function(wrap_pyfunction!(parse_magnet, m)?)?;
    m.add_function(wrap_pyfunction!(encode_compact_peers, m)?)?;
    m.add_function(wrap_pyfunction!(decode_compact_peers, m)?)?;
    m.add_function(wrap_pyfunction!(privacy_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(harvest, m)?)?;
    m.add_function(wrap_pyfunction!(betweenness, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn betweenness_line_graph_over_names() {
        let rows = betweenness(vec![
            ("left".into(), "mid".into()),
            ("mid".into(), "right".into()),
        ])
        .unwrap();
        assert_eq!(rows[0].0, "mid");
        assert_eq!(rows[0].1, 1.0);
        assert_eq!(rows[0].2, 2);
        for (_, b, _) in &rows[1..] {
            assert_eq!(*b, 0.0);
        }
    }

    #[test]
    fn betweenness_rejects_self_loops() {
        assert!(betweenness(vec![("a".into(), "a".into())]).is_err());
    }

    #[test]
    fn magnet_round_trip_through_binding_types() {
        let info = parse_magnet(
            "magnet:?xt=urn:btih:0123456789abcdef0123456789abcdef01234567&dn=x&tr=udp%3A%2F%2Ft.example%3A80",
        )
        .unwrap();
        assert_eq!(info.info_hash, "0123456789abcdef0123456789abcdef01234567");
        assert_eq!(info.display_name.as_deref(), Some("x"));
        assert_eq!(info.trackers, ["udp://t.example:80"]);
    }
}
