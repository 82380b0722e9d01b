//! Report bundle generation: summary statistics, rankings, centrality
//! and content-network tables, geodata, and graph exports, with total
//! IP pseudonymization and a brute-force self-audit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use serde_json::json;
use thiserror::Error;

use crate::enrichment::IpProfile;
use crate::graph::{
    self, BipartiteGraph, FlagMode, NodeFilter, NodeId, ProjectionSide, WeightedGraph,
};
use crate::magnet::InfoHash;
use crate::store::Store;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("bundle path {path}: {message}")]
    Bundle { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn percent(count: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        100.0 * count as f64 / denominator as f64
    }
}

/// Headline dataset statistics plus per-flag cross rates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryStats {
    pub torrent_count: usize,
    pub unique_ip_count: usize,
    pub country_count: usize,
    pub mean_links_per_ip: f64,
    pub max_links_per_ip: usize,
    pub privacy_count: usize,
    pub privacy_rate: f64,
    /// Neither a privacy flag nor any hostname: the least anonymized
    /// slice of the dataset.
    pub least_anonymized_count: usize,
    pub least_anonymized_rate: f64,
    pub flags: BTreeMap<String, FlagStats>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagStats {
    pub count: usize,
    /// Percent of all unique addresses.
    pub rate: f64,
    pub privacy_overlap: usize,
    /// Percent of the flagged addresses that also use privacy tech.
    pub privacy_overlap_rate: f64,
    pub least_anonymized_overlap: usize,
    /// Percent of the flagged addresses that are least anonymized.
    pub least_anonymized_overlap_rate: f64,
}

pub fn is_least_anonymized(p: &IpProfile) -> bool {
    !p.privacy && p.hostname.is_empty()
}

/// Compute the summary over the whole store. `flag_labels` empty means
/// every label present in ip_info.
pub fn summary(store: &Store, flag_labels: &[String]) -> SummaryStats {
    let labels = effective_labels(store, flag_labels);
    let total = store.ip_count();
    let mut stats = SummaryStats {
        torrent_count: store.torrent_count(),
        unique_ip_count: total,
        ..SummaryStats::default()
    };
    let mut countries = BTreeSet::new();
    for p in store.ips() {
        if !p.country.is_empty() {
            countries.insert(p.country.as_str());
        }
        if p.privacy {
            stats.privacy_count += 1;
        }
        if is_least_anonymized(p) {
            stats.least_anonymized_count += 1;
        }
    }
    stats.country_count = countries.len();
    stats.privacy_rate = percent(stats.privacy_count, total);
    stats.least_anonymized_rate = percent(stats.least_anonymized_count, total);
    let (mean, max) = store.link_aggregates();
    stats.mean_links_per_ip = mean;
    stats.max_links_per_ip = max;

    for label in labels {
        let mut flag = FlagStats::default();
        for p in store.ips() {
            if !p.flags.contains(&label) {
                continue;
            }
            flag.count += 1;
            if p.privacy {
                flag.privacy_overlap += 1;
            }
            if is_least_anonymized(p) {
                flag.least_anonymized_overlap += 1;
            }
        }
        flag.rate = percent(flag.count, total);
        flag.privacy_overlap_rate = percent(flag.privacy_overlap, flag.count);
        flag.least_anonymized_overlap_rate = percent(flag.least_anonymized_overlap, flag.count);
        stats.flags.insert(label, flag);
    }
    stats
}

fn effective_labels(store: &Store, requested: &[String]) -> Vec<String> {
    if !requested.is_empty() {
        return requested.to_vec();
    }
    let mut labels: BTreeSet<String> = BTreeSet::new();
    for p in store.ips() {
        labels.extend(p.flags.iter().cloned());
    }
    labels.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingKind {
    Isp,
    Country,
    Uploader,
    Category,
}

impl RankingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RankingKind::Isp => "isp",
            RankingKind::Country => "country",
            RankingKind::Uploader => "uploader",
            RankingKind::Category => "category",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingTable {
    pub kind: RankingKind,
    /// Records carrying a value for this attribute; the percentage
    /// denominator. Missing values are excluded rather than diluted.
    pub denominator: usize,
    pub rows: Vec<(String, usize, f64)>,
}

/// Top-k attribute histogram with percentages of the value-carrying
/// population, count descending then name ascending.
pub fn rankings(store: &Store, kind: RankingKind, k: usize) -> RankingTable {
    let counts = match kind {
        RankingKind::Isp => store.isp_counts(),
        RankingKind::Country => store.country_counts(),
        RankingKind::Uploader => store.uploader_counts(),
        RankingKind::Category => store.category_counts(),
    };
    let denominator: usize = counts.iter().map(|&(_, c)| c).sum();
    let rows = counts
        .into_iter()
        .take(k)
        .map(|(name, count)| {
            let pct = percent(count, denominator);
            (name, count, pct)
        })
        .collect();
    RankingTable {
        kind,
        denominator,
        rows,
    }
}

/// Stable address-to-label assignment for one bundle run. Labels are
/// rounded coordinates plus country when available, an opaque alias
/// otherwise; raw addresses appear only when pseudonymization is off.
#[derive(Debug, Clone)]
pub struct Pseudonymizer {
    enabled: bool,
    decimals: usize,
    labels: BTreeMap<Ipv4Addr, String>,
    /// Distinct addresses that rounded to an identical label.
    pub collisions: Vec<String>,
}

impl Pseudonymizer {
    /// Assign labels to every known address, in address order so the
    /// assignment is deterministic.
    pub fn build(store: &Store, enabled: bool, decimals: usize) -> Self {
        let mut labels = BTreeMap::new();
        let mut seen: BTreeMap<String, Ipv4Addr> = BTreeMap::new();
        let mut collisions = Vec::new();
        let mut alias = 0usize;
        for p in store.ips() {
            let label = if !enabled {
                p.ip.to_string()
            } else if let Some((lat, lon)) = p.coordinates() {
                let label = if p.country.is_empty() {
                    format!("({lat:.prec$}, {lon:.prec$})", prec = decimals)
                } else {
                    format!(
                        "({lat:.prec$}, {lon:.prec$}) {}",
                        p.country,
                        prec = decimals
                    )
                };
                match seen.get(&label) {
                    Some(_) => {
                        collisions.push(format!(
                            "label {label:?} covers multiple addresses after rounding"
                        ));
                    }
                    None => {
                        seen.insert(label.clone(), p.ip);
                    }
                }
                label
            } else {
                alias += 1;
                if p.country.is_empty() {
                    format!("node-{alias:04}")
                } else {
                    format!("node-{alias:04} ({})", p.country)
                }
            };
            labels.insert(p.ip, label);
        }
        Pseudonymizer {
            enabled,
            decimals,
            labels,
            collisions,
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn decimals(&self) -> usize {
        self.decimals
    }

    pub fn label(&self, ip: Ipv4Addr) -> String {
        self.labels
            .get(&ip)
            .cloned()
            .unwrap_or_else(|| format!("node-unknown-{}", self.labels.len()))
    }
}

/// All knobs a bundle run depends on; echoed into the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportParams {
    pub flag_labels: Vec<String>,
    /// Node threshold applied before projection (distinct links).
    pub min_links: usize,
    /// Edge-count fraction kept in the co-download network.
    pub top_fraction: f64,
    pub top_k: usize,
    /// Uploader whose torrents seed the content network, if any.
    pub uploader: Option<String>,
    pub pseudonymize: bool,
    pub coord_decimals: usize,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            flag_labels: Vec::new(),
            min_links: 7,
            top_fraction: 0.0001,
            top_k: 10,
            uploader: None,
            pseudonymize: true,
            coord_decimals: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleManifest {
    pub files: Vec<String>,
    pub omissions: Vec<(String, String)>,
    pub notes: Vec<String>,
}

/// Which aggregation engine computes the graph-derived numbers. The
/// audit engine recomputes projections by brute-force pairwise
/// intersection and tallies by independent loops, so agreement between
/// the two is a real cross-check rather than a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Engine {
    Fast,
    Audit,
}

/// Write the full bundle into `dir` (created if needed). Deterministic:
/// the same store and params produce byte-identical bundles.
pub fn render_report(
    store: &Store,
    params: &ReportParams,
    dir: &Path,
) -> Result<BundleManifest, ReportError> {
    let files = compute_bundle(store, params, Engine::Fast);
    std::fs::create_dir_all(dir)?;
    let manifest = manifest_of(&files);
    for (name, content) in &files {
        std::fs::write(dir.join(name), content)?;
    }
    Ok(manifest)
}

/// Regenerate every bundle file with the audit engine and diff against
/// what is on disk. Returns one message per divergence; empty means the
/// bundle is exactly reproducible from the store.
pub fn self_audit(store: &Store, params: &ReportParams, dir: &Path) -> Vec<String> {
    let expected = compute_bundle(store, params, Engine::Audit);
    let mut diffs = Vec::new();
    for (name, want) in &expected {
        let path = dir.join(name);
        match std::fs::read(&path) {
            Err(_) => diffs.push(format!("{name}: missing from bundle")),
            Ok(got) => {
                if &got != want {
                    let line = first_divergence(want, &got);
                    diffs.push(format!("{name}: differs from recomputation ({line})"));
                }
            }
        }
    }
    // surplus files mean the bundle was not produced by this store/params
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !expected.contains_key(&name) {
                diffs.push(format!("{name}: not part of the expected bundle"));
            }
        }
    }
    diffs
}

fn first_divergence(want: &[u8], got: &[u8]) -> String {
    let want_text = String::from_utf8_lossy(want);
    let got_text = String::from_utf8_lossy(got);
    for (i, (w, g)) in want_text.lines().zip(got_text.lines()).enumerate() {
        if w != g {
            return format!("line {}: expected {w:?}, found {g:?}", i + 1);
        }
    }
    format!(
        "length {} expected vs {} found",
        want.len(),
        got.len()
    )
}

fn manifest_of(files: &BTreeMap<String, Vec<u8>>) -> BundleManifest {
    let manifest_json: serde_json::Value =
        serde_json::from_slice(files.get("manifest.json").expect("manifest always present"))
            .expect("manifest is valid json");
    let omissions = manifest_json["omissions"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|o| {
                    (
                        o["artifact"].as_str().unwrap_or_default().to_string(),
                        o["reason"].as_str().unwrap_or_default().to_string(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let notes = manifest_json["notes"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|n| n.as_str().map(|s| s.to_string()))
                .collect()
        })
        .unwrap_or_default();
    BundleManifest {
        files: files.keys().cloned().collect(),
        omissions,
        notes,
    }
}

fn compute_bundle(
    store: &Store,
    params: &ReportParams,
    engine: Engine,
) -> BTreeMap<String, Vec<u8>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut omissions: Vec<(String, String)> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let pseudo = Pseudonymizer::build(store, params.pseudonymize, params.coord_decimals);
    notes.extend(pseudo.collisions.iter().cloned());
    let labels = effective_labels(store, &params.flag_labels);

    files.insert(
        "summary.csv".to_string(),
        render_summary(store, &labels, engine).into_bytes(),
    );

    for kind in [
        RankingKind::Isp,
        RankingKind::Country,
        RankingKind::Uploader,
        RankingKind::Category,
    ] {
        let name = format!("rankings_{}.csv", kind.as_str());
        let table = match engine {
            Engine::Fast => rankings(store, kind, params.top_k),
            Engine::Audit => rankings_recount(store, kind, params.top_k),
        };
        if table.denominator == 0 {
            omissions.push((name, format!("no {} data in store", kind.as_str())));
            continue;
        }
        files.insert(name, render_ranking(&table).into_bytes());
    }

    // co-download network: node threshold first, then edge fraction
    let ip_network = build_projection(
        store,
        &NodeFilter {
            min_links: if params.min_links > 1 {
                Some(params.min_links)
            } else {
                None
            },
            ..NodeFilter::default()
        },
        ProjectionSide::Ip,
        engine,
    );
    match ip_network {
        None => {
            for name in ["top_pairs.csv", "ip_network.nodes.csv", "ip_network.edges.csv", "ip_network.dot"] {
                omissions.push((
                    name.to_string(),
                    format!("no address reaches {} distinct links", params.min_links),
                ));
            }
        }
        Some(projected) => {
            let filtered = graph::filter_top_fraction(&projected, params.top_fraction);
            files.insert(
                "top_pairs.csv".to_string(),
                render_top_pairs(store, &projected, params.top_k, &pseudo).into_bytes(),
            );
            let (nodes_csv, edges_csv, dot) =
                render_graph_files(store, &filtered, &pseudo, "co-download network");
            files.insert("ip_network.nodes.csv".to_string(), nodes_csv.into_bytes());
            files.insert("ip_network.edges.csv".to_string(), edges_csv.into_bytes());
            files.insert("ip_network.dot".to_string(), dot.into_bytes());
        }
    }

    // flagged subnetworks use the unfiltered projection of the whole
    // store so small flag sets are not starved by the link threshold
    let full_network = build_projection(store, &NodeFilter::default(), ProjectionSide::Ip, engine);
    for label in &labels {
        let Some(full) = &full_network else { break };
        let flagged_set: BTreeSet<NodeId> = store
            .flagged_ips(label)
            .into_iter()
            .map(NodeId::Ip)
            .collect();
        if flagged_set.is_empty() {
            omissions.push((
                format!("centrality_flagged_{label}.csv"),
                format!("no address carries flag {label:?}"),
            ));
            continue;
        }
        let is_flagged = |n: NodeId| flagged_set.contains(&n);
        for (mode, stem) in [
            (FlagMode::FlaggedOnly, format!("flagged_{label}")),
            (FlagMode::ExtendedOneHop, format!("extended_{label}")),
        ] {
            let sub = graph::subgraph_flagged(full, &is_flagged, mode);
            let rows = graph::betweenness(&sub);
            files.insert(
                format!("centrality_{stem}.csv"),
                render_centrality(store, &rows, params.top_k, &pseudo, &flagged_set).into_bytes(),
            );
            let (nodes_csv, edges_csv, dot) =
                render_graph_files(store, &sub, &pseudo, &format!("{stem} network"));
            files.insert(format!("{stem}.nodes.csv"), nodes_csv.into_bytes());
            files.insert(format!("{stem}.edges.csv"), edges_csv.into_bytes());
            files.insert(format!("{stem}.dot"), dot.into_bytes());
        }
    }

    match &params.uploader {
        None => {
            omissions.push((
                "content_metrics.csv".to_string(),
                "no uploader selected for the content network".to_string(),
            ));
        }
        Some(uploader) => match content_tables(store, uploader, engine) {
            None => {
                omissions.push((
                    "content_metrics.csv".to_string(),
                    format!("no links for uploader {uploader:?}"),
                ));
            }
            Some(tables) => {
                files.insert("content_reference.csv".to_string(), tables.reference.into_bytes());
                files.insert("content_metrics.csv".to_string(), tables.base.into_bytes());
                match tables.extended {
                    Some(extended) => {
                        files.insert("content_metrics_extended.csv".to_string(), extended.into_bytes());
                    }
                    None => {
                        omissions.push((
                            "content_metrics_extended.csv".to_string(),
                            "no shared downloads outside the selected uploader".to_string(),
                        ));
                    }
                }
            }
        },
    }

    let located: Vec<&IpProfile> = store.ips().filter(|p| p.coordinates().is_some()).collect();
    if located.is_empty() {
        omissions.push((
            "geo_points.geojson".to_string(),
            "no address has coordinates".to_string(),
        ));
        omissions.push((
            "geo_edges.geojson".to_string(),
            "no address has coordinates".to_string(),
        ));
    } else {
        files.insert(
            "geo_points.geojson".to_string(),
            render_geo_points(store, &located, &pseudo).into_bytes(),
        );
        let edge_graph = full_network.as_ref();
        let (geojson, skipped) = render_geo_edges(store, edge_graph, &pseudo);
        files.insert("geo_edges.geojson".to_string(), geojson.into_bytes());
        if skipped > 0 {
            notes.push(format!(
                "{skipped} co-download edge(s) skipped in geo_edges.geojson for missing coordinates"
            ));
        }
    }

    // manifest goes last so it can list everything else
    let mut listed: Vec<String> = files.keys().cloned().collect();
    listed.push("manifest.json".to_string());
    listed.sort();
    omissions.sort();
    let manifest = json!({
        "bundle_version": 1,
        "parameters": {
            "flag_labels": labels,
            "min_links": params.min_links,
            "top_fraction": params.top_fraction,
            "top_k": params.top_k,
            "uploader": params.uploader,
            "pseudonymize": params.pseudonymize,
            "coord_decimals": params.coord_decimals,
        },
        "files": listed,
        "omissions": omissions
            .iter()
            .map(|(artifact, reason)| json!({"artifact": artifact, "reason": reason}))
            .collect::<Vec<_>>(),
        "notes": notes,
    });
    files.insert(
        "manifest.json".to_string(),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .into_bytes(),
    );
    files
}

// ---- individual artifact renderers ----

fn render_summary(store: &Store, labels: &[String], engine: Engine) -> String {
    let stats = match engine {
        Engine::Fast => summary(store, labels),
        Engine::Audit => summary_recount(store, labels),
    };
    let mut out = String::from("metric,value,percent\n");
    let mut row = |name: &str, value: String, pct: Option<f64>| {
        out.push_str(name);
        out.push(',');
        out.push_str(&value);
        out.push(',');
        if let Some(p) = pct {
            out.push_str(&format!("{p:.2}"));
        }
        out.push('\n');
    };
    row("torrents", stats.torrent_count.to_string(), None);
    row("unique_ips", stats.unique_ip_count.to_string(), None);
    row("countries", stats.country_count.to_string(), None);
    row(
        "mean_links_per_ip",
        format!("{:.2}", stats.mean_links_per_ip),
        None,
    );
    row("max_links_per_ip", stats.max_links_per_ip.to_string(), None);
    row(
        "privacy",
        stats.privacy_count.to_string(),
        Some(stats.privacy_rate),
    );
    row(
        "least_anonymized",
        stats.least_anonymized_count.to_string(),
        Some(stats.least_anonymized_rate),
    );
    for (label, flag) in &stats.flags {
        row(
            &format!("flagged_{label}"),
            flag.count.to_string(),
            Some(flag.rate),
        );
        row(
            &format!("flagged_{label}_privacy_overlap"),
            flag.privacy_overlap.to_string(),
            Some(flag.privacy_overlap_rate),
        );
        row(
            &format!("flagged_{label}_least_anonymized"),
            flag.least_anonymized_overlap.to_string(),
            Some(flag.least_anonymized_overlap_rate),
        );
    }
    out
}

/// Independent tally for the audit engine: straight loops over cloned
/// row vectors, no store helper methods.
fn summary_recount(store: &Store, labels: &[String]) -> SummaryStats {
    let rows: Vec<IpProfile> = store.ips().cloned().collect();
    let total = rows.len();
    let mut per_ip_links: HashMap<Ipv4Addr, usize> = HashMap::new();
    for link in store.links() {
        *per_ip_links.entry(link.ip).or_insert(0) += 1;
    }
    let mut stats = SummaryStats {
        torrent_count: store.torrents().count(),
        unique_ip_count: total,
        ..SummaryStats::default()
    };
    let mut countries: Vec<&str> = rows
        .iter()
        .filter(|p| !p.country.is_empty())
        .map(|p| p.country.as_str())
        .collect();
    countries.sort_unstable();
    countries.dedup();
    stats.country_count = countries.len();
    stats.privacy_count = rows.iter().filter(|p| p.privacy).count();
    stats.least_anonymized_count = rows
        .iter()
        .filter(|p| !p.privacy && p.hostname.is_empty())
        .count();
    stats.privacy_rate = percent(stats.privacy_count, total);
    stats.least_anonymized_rate = percent(stats.least_anonymized_count, total);
    if !per_ip_links.is_empty() {
        let sum: usize = per_ip_links.values().sum();
        stats.mean_links_per_ip = sum as f64 / per_ip_links.len() as f64;
        stats.max_links_per_ip = per_ip_links.values().copied().max().unwrap_or(0);
    }
    for label in effective_labels(store, labels) {
        let flagged: Vec<&IpProfile> = rows.iter().filter(|p| p.flags.contains(&label)).collect();
        let privacy_overlap = flagged.iter().filter(|p| p.privacy).count();
        let least = flagged
            .iter()
            .filter(|p| !p.privacy && p.hostname.is_empty())
            .count();
        stats.flags.insert(
            label,
            FlagStats {
                count: flagged.len(),
                rate: percent(flagged.len(), total),
                privacy_overlap,
                privacy_overlap_rate: percent(privacy_overlap, flagged.len()),
                least_anonymized_overlap: least,
                least_anonymized_overlap_rate: percent(least, flagged.len()),
            },
        );
    }
    stats
}

fn render_ranking(table: &RankingTable) -> String {
    let mut out = String::from("name,count,percent\n");
    for (name, count, pct) in &table.rows {
        out.push_str(&csv_field(name));
        out.push_str(&format!(",{count},{pct:.2}\n"));
    }
    out
}

/// Independent tally for the audit engine.
fn rankings_recount(store: &Store, kind: RankingKind, k: usize) -> RankingTable {
    let mut tally: HashMap<String, usize> = HashMap::new();
    match kind {
        RankingKind::Isp => {
            for p in store.ips() {
                if !p.isp.is_empty() {
                    *tally.entry(p.isp.clone()).or_insert(0) += 1;
                }
            }
        }
        RankingKind::Country => {
            for p in store.ips() {
                if !p.country.is_empty() {
                    *tally.entry(p.country.clone()).or_insert(0) += 1;
                }
            }
        }
        RankingKind::Uploader => {
            for t in store.torrents() {
                if !t.uploader.is_empty() {
                    *tally.entry(t.uploader.clone()).or_insert(0) += 1;
                }
            }
        }
        RankingKind::Category => {
            for t in store.torrents() {
                if !t.category.is_empty() {
                    *tally.entry(t.category.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    let denominator: usize = tally.values().sum();
    let mut counts: Vec<(String, usize)> = tally.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.truncate(k);
    RankingTable {
        kind,
        denominator,
        rows: counts
            .into_iter()
            .map(|(name, count)| {
                let pct = percent(count, denominator);
                (name, count, pct)
            })
            .collect(),
    }
}

/// Build bipartite + projection, brute-force under the audit engine.
/// `None` when nothing passes the filter.
fn build_projection(
    store: &Store,
    filter: &NodeFilter,
    side: ProjectionSide,
    engine: Engine,
) -> Option<WeightedGraph> {
    let bipartite = graph::build_bipartite(store, filter).ok()?;
    Some(match engine {
        Engine::Fast => graph::project(&bipartite, side),
        Engine::Audit => brute_force_project(&bipartite, side),
    })
}

/// Pairwise double loop over same-side nodes, intersecting their
/// opposite-side neighbor sets read straight off the edge list.
fn brute_force_project(bipartite: &BipartiteGraph, side: ProjectionSide) -> WeightedGraph {
    let mut incidence: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for &(ip, hash) in &bipartite.edges {
        let (keep, other) = match side {
            ProjectionSide::Ip => (NodeId::Ip(ip), NodeId::Torrent(hash)),
            ProjectionSide::Content => (NodeId::Torrent(hash), NodeId::Ip(ip)),
        };
        incidence.entry(keep).or_default().insert(other);
    }
    let nodes: Vec<NodeId> = incidence.keys().copied().collect();
    let mut out = WeightedGraph::default();
    for &node in &nodes {
        out.nodes.insert(node);
    }
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let shared = incidence[&nodes[i]]
                .intersection(&incidence[&nodes[j]])
                .count() as u64;
            if shared > 0 {
                out.edges.insert((nodes[i], nodes[j]), shared);
            }
        }
    }
    out
}

fn ip_of(node: NodeId) -> Option<Ipv4Addr> {
    match node {
        NodeId::Ip(ip) => Some(ip),
        NodeId::Torrent(_) => None,
    }
}

fn render_top_pairs(
    store: &Store,
    projected: &WeightedGraph,
    k: usize,
    pseudo: &Pseudonymizer,
) -> String {
    let downloads = store.link_counts_per_ip();
    let mut out = String::from(
        "rank,node_a,node_b,weight,country_a,country_b,privacy_a,privacy_b,flags_a,flags_b,downloads_a,downloads_b\n",
    );
    for (rank, (a, b, weight)) in graph::top_pairs(projected, k).into_iter().enumerate() {
        let annotate = |node: NodeId| -> (String, String, bool, String, usize) {
            let Some(ip) = ip_of(node) else {
                return (node.to_string(), String::new(), false, String::new(), 0);
            };
            let profile = store.ip(ip);
            (
                pseudo.label(ip),
                profile.map(|p| p.country.clone()).unwrap_or_default(),
                profile.map(|p| p.privacy).unwrap_or(false),
                profile
                    .map(|p| p.flags.iter().cloned().collect::<Vec<_>>().join(";"))
                    .unwrap_or_default(),
                downloads.get(&ip).copied().unwrap_or(0),
            )
        };
        let (label_a, country_a, privacy_a, flags_a, downloads_a) = annotate(a);
        let (label_b, country_b, privacy_b, flags_b, downloads_b) = annotate(b);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            csv_field(&label_a),
            csv_field(&label_b),
            weight,
            csv_field(&country_a),
            csv_field(&country_b),
            privacy_a as u8,
            privacy_b as u8,
            csv_field(&flags_a),
            csv_field(&flags_b),
            downloads_a,
            downloads_b,
        ));
    }
    out
}

fn render_centrality(
    store: &Store,
    rows: &[graph::CentralityRow],
    k: usize,
    pseudo: &Pseudonymizer,
    flagged: &BTreeSet<NodeId>,
) -> String {
    let downloads = store.link_counts_per_ip();
    let mut out =
        String::from("rank,node,country,betweenness,degree,privacy,downloads,flagged\n");
    for (rank, row) in rows.iter().take(k).enumerate() {
        let Some(ip) = ip_of(row.node) else { continue };
        let profile = store.ip(ip);
        out.push_str(&format!(
            "{},{},{},{:.3},{},{},{},{}\n",
            rank + 1,
            csv_field(&pseudo.label(ip)),
            csv_field(&profile.map(|p| p.country.clone()).unwrap_or_default()),
            row.betweenness,
            row.degree,
            profile.map(|p| p.privacy).unwrap_or(false) as u8,
            downloads.get(&ip).copied().unwrap_or(0),
            flagged.contains(&row.node) as u8,
        ));
    }
    out
}

/// Opaque node ids (`n0001`) with a label column keep exports free of
/// raw addresses even when two labels collide after rounding.
fn render_graph_files(
    store: &Store,
    graph: &WeightedGraph,
    pseudo: &Pseudonymizer,
    description: &str,
) -> (String, String, String) {
    let ids: BTreeMap<NodeId, String> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, format!("n{:04}", i + 1)))
        .collect();

    let mut nodes_csv = String::from("id,label,country,privacy,flags\n");
    for (&node, id) in &ids {
        let (label, country, privacy, flags) = match ip_of(node) {
            Some(ip) => {
                let p = store.ip(ip);
                (
                    pseudo.label(ip),
                    p.map(|p| p.country.clone()).unwrap_or_default(),
                    p.map(|p| p.privacy).unwrap_or(false),
                    p.map(|p| p.flags.iter().cloned().collect::<Vec<_>>().join(";"))
                        .unwrap_or_default(),
                )
            }
            None => {
                let title = match node {
                    NodeId::Torrent(hash) => store
                        .torrent(&hash)
                        .map(|t| t.title.clone())
                        .unwrap_or_else(|| hash.to_string()),
                    NodeId::Ip(_) => unreachable!(),
                };
                (title, String::new(), false, String::new())
            }
        };
        nodes_csv.push_str(&format!(
            "{id},{},{},{},{}\n",
            csv_field(&label),
            csv_field(&country),
            privacy as u8,
            csv_field(&flags),
        ));
    }

    let mut edges_csv = String::from("source,target,weight,display_suppressed\n");
    for (&(a, b), &weight) in &graph.edges {
        let suppressed = graph.display_suppressed.contains(&(a, b));
        edges_csv.push_str(&format!(
            "{},{},{weight},{}\n",
            ids[&a],
            ids[&b],
            suppressed as u8
        ));
    }

    let mut dot = format!("graph g {{\n  // {description}\n");
    for (&node, id) in &ids {
        let label = match ip_of(node) {
            Some(ip) => pseudo.label(ip),
            None => match node {
                NodeId::Torrent(hash) => store
                    .torrent(&hash)
                    .map(|t| t.title.clone())
                    .unwrap_or_else(|| hash.to_string()),
                NodeId::Ip(_) => unreachable!(),
            },
        };
        dot.push_str(&format!("  {id} [label=\"{}\"];\n", dot_escape(&label)));
    }
    for (&(a, b), &weight) in &graph.edges {
        let style = if graph.display_suppressed.contains(&(a, b)) {
            ", style=invis"
        } else {
            ""
        };
        dot.push_str(&format!(
            "  {} -- {} [weight={weight}, label={weight}{style}];\n",
            ids[&a], ids[&b]
        ));
    }
    dot.push_str("}\n");
    (nodes_csv, edges_csv, dot)
}

struct ContentTables {
    reference: String,
    base: String,
    extended: Option<String>,
}

/// Base network: the uploader's torrents projected by shared
/// downloaders. Extended network: add every other torrent those same
/// addresses downloaded. Both tables share one reference numbering.
fn content_tables(store: &Store, uploader: &str, engine: Engine) -> Option<ContentTables> {
    let base_filter = NodeFilter {
        uploader: Some(uploader.to_string()),
        ..NodeFilter::default()
    };
    let base_bipartite = graph::build_bipartite(store, &base_filter).ok()?;
    let base_ips = base_bipartite.ip_nodes.clone();

    // extended incidence: every link whose address saw the uploader
    let mut extended_bipartite = BipartiteGraph::default();
    for link in store.links() {
        if base_ips.contains(&link.ip) {
            extended_bipartite.ip_nodes.insert(link.ip);
            extended_bipartite.torrent_nodes.insert(link.info_hash);
            extended_bipartite.edges.insert((link.ip, link.info_hash));
        }
    }

    let title_of = |hash: &InfoHash| {
        store
            .torrent(hash)
            .map(|t| t.title.clone())
            .unwrap_or_else(|| hash.to_string())
    };

    // shared numbering: base titles first, extended-only appended,
    // each block case-insensitively alphabetical
    let sort_key = |title: &String| (title.to_lowercase(), title.clone());
    let mut base_titles: Vec<(String, InfoHash)> = base_bipartite
        .torrent_nodes
        .iter()
        .map(|h| (title_of(h), *h))
        .collect();
    base_titles.sort_by_key(|(t, _)| sort_key(t));
    let mut extended_only: Vec<(String, InfoHash)> = extended_bipartite
        .torrent_nodes
        .iter()
        .filter(|h| !base_bipartite.torrent_nodes.contains(h))
        .map(|h| (title_of(h), *h))
        .collect();
    extended_only.sort_by_key(|(t, _)| sort_key(t));

    let mut numbers: BTreeMap<InfoHash, usize> = BTreeMap::new();
    let mut reference = String::from("number,title\n");
    for (i, (title, hash)) in base_titles.iter().chain(extended_only.iter()).enumerate() {
        numbers.insert(*hash, i + 1);
        reference.push_str(&format!("{},{}\n", i + 1, csv_field(title)));
    }

    let render = |bipartite: &BipartiteGraph| -> Option<String> {
        let projected = match engine {
            Engine::Fast => graph::project(bipartite, ProjectionSide::Content),
            Engine::Audit => brute_force_project(bipartite, ProjectionSide::Content),
        };
        if projected.edge_count() == 0 && bipartite.torrent_nodes.len() < 2 {
            return None;
        }
        let mut found_peers: BTreeMap<InfoHash, usize> = BTreeMap::new();
        for &(ip, hash) in &bipartite.edges {
            let _ = ip;
            *found_peers.entry(hash).or_insert(0) += 1;
        }
        let centrality = graph::betweenness(&projected);
        let by_node: BTreeMap<NodeId, &graph::CentralityRow> =
            centrality.iter().map(|r| (r.node, r)).collect();
        let mut rows: Vec<(String, usize, f64, f64, Vec<usize>)> = projected
            .nodes
            .iter()
            .filter_map(|&node| {
                let NodeId::Torrent(hash) = node else {
                    return None;
                };
                let row = by_node.get(&node)?;
                let mut connected: Vec<usize> = projected
                    .neighbors(node)
                    .into_iter()
                    .filter_map(|n| match n {
                        NodeId::Torrent(h) => numbers.get(&h).copied(),
                        NodeId::Ip(_) => None,
                    })
                    .collect();
                connected.sort_unstable();
                Some((
                    title_of(&hash),
                    found_peers.get(&hash).copied().unwrap_or(0),
                    row.normalized_degree,
                    row.betweenness,
                    connected,
                ))
            })
            .collect();
        rows.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(
                    b.3.partial_cmp(&a.3)
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(a.0.to_lowercase().cmp(&b.0.to_lowercase()))
        });
        let mut out = String::from("title,found_peers,degree,betweenness,connected_titles\n");
        for (title, peers, degree, betweenness, connected) in rows {
            let refs = connected
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{peers},{degree:.3},{betweenness:.3},{}\n",
                csv_field(&title),
                csv_field(&refs)
            ));
        }
        Some(out)
    };

    let base = render(&base_bipartite)?;
    let extended = if extended_only.is_empty() {
        None
    } else {
        render(&extended_bipartite)
    };
    Some(ContentTables {
        reference,
        base,
        extended,
    })
}

fn render_geo_points(store: &Store, located: &[&IpProfile], pseudo: &Pseudonymizer) -> String {
    let downloads = store.link_counts_per_ip();
    let mut observations: BTreeMap<Ipv4Addr, usize> = BTreeMap::new();
    for link in store.links() {
        *observations.entry(link.ip).or_insert(0) += link.observation_count();
    }
    let features: Vec<serde_json::Value> = located
        .iter()
        .map(|p| {
            let (lat, lon) = p.coordinates().expect("located points have coordinates");
            let flagged = !p.flags.is_empty();
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [round_to(lon, pseudo.decimals()), round_to(lat, pseudo.decimals())]},
                "properties": {
                    "label": pseudo.label(p.ip),
                    "country": p.country,
                    "privacy": p.privacy,
                    "flags": p.flags.iter().cloned().collect::<Vec<_>>(),
                    "weight_downloads": downloads.get(&p.ip).copied().unwrap_or(0),
                    "weight_observations": observations.get(&p.ip).copied().unwrap_or(0),
                    "marker": if p.privacy { "triangle" } else { "circle" },
                    "color": if flagged { "red" } else { "blue" },
                }
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "type": "FeatureCollection",
        "features": features,
    }))
    .expect("geojson serializes")
}

fn render_geo_edges(
    store: &Store,
    graph: Option<&WeightedGraph>,
    pseudo: &Pseudonymizer,
) -> (String, usize) {
    let mut features: Vec<serde_json::Value> = Vec::new();
    let mut skipped = 0usize;
    if let Some(g) = graph {
        for (&(a, b), &weight) in &g.edges {
            if g.display_suppressed.contains(&(a, b)) {
                continue;
            }
            let coords = |n: NodeId| -> Option<(f64, f64)> {
                store.ip(ip_of(n)?)?.coordinates()
            };
            let (Some((lat_a, lon_a)), Some((lat_b, lon_b))) = (coords(a), coords(b)) else {
                skipped += 1;
                continue;
            };
            let d = pseudo.decimals();
            features.push(json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [
                        [round_to(lon_a, d), round_to(lat_a, d)],
                        [round_to(lon_b, d), round_to(lat_b, d)],
                    ],
                },
                "properties": {
                    "label_a": ip_of(a).map(|ip| pseudo.label(ip)),
                    "label_b": ip_of(b).map(|ip| pseudo.label(ip)),
                    "weight": weight,
                }
            }));
        }
    }
    (
        serde_json::to_string_pretty(&json!({
            "type": "FeatureCollection",
            "features": features,
        }))
        .expect("geojson serializes"),
        skipped,
    )
}

fn round_to(value: f64, decimals: usize) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    (value * factor).round() / factor
}

/// First span that reads as a dotted-quad address: four dot-joined
/// runs of 1-3 digits, each within octet range, not embedded in a
/// longer numeric token. Conservative on purpose; coordinate pairs and
/// version strings never qualify.
pub fn find_dotted_quad(text: &str) -> Option<std::ops::Range<usize>> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        if start > 0 && (bytes[start - 1].is_ascii_digit() || bytes[start - 1] == b'.') {
            i += 1;
            continue;
        }
        let mut parts = 0;
        let mut j = start;
        loop {
            let digit_start = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let run = j - digit_start;
            if run == 0 || run > 3 {
                break;
            }
            let value: u32 = text[digit_start..j].parse().unwrap_or(999);
            if value > 255 {
                break;
            }
            parts += 1;
            if parts == 4 {
                return Some(start..j);
            }
            if j >= bytes.len() || bytes[j] != b'.' {
                break;
            }
            j += 1;
        }
        i = j.max(start + 1);
    }
    None
}

pub fn contains_dotted_quad(text: &str) -> bool {
    find_dotted_quad(text).is_some()
}

/// Replace every dotted-quad span with `replacement`.
pub fn scrub_dotted_quads(text: &str, replacement: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(span) = find_dotted_quad(rest) {
        out.push_str(&rest[..span.start]);
        out.push_str(replacement);
        rest = &rest[span.end..];
    }
    out.push_str(rest);
    out
}

fn csv_field(value: &str) -> String {
    if value.contains(',') || value.contains('"') || value.contains('\n') {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn dot_escape(value: &str) -> String {
    value.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TorrentRecord;
    use crate::tracker::PeerObservation;

    fn hash(b: u8) -> InfoHash {
        InfoHash::new([b; 20])
    }

    fn addr(b: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 1, 0, b)
    }

    fn seed_torrent(store: &mut Store, b: u8, title: &str, uploader: &str) {
        store
            .upsert_torrent(TorrentRecord {
                info_hash: hash(b),
                title: title.to_string(),
                category: "Other".into(),
                subcategory: String::new(),
                uploaded_at: "2024-02-10".into(),
                size_bytes: 0,
                seeders: 1,
                leechers: 0,
                uploader: uploader.to_string(),
                magnet: String::new(),
                interest_category: None,
            })
            .unwrap();
    }

    fn link(store: &mut Store, b: u8, ip: Ipv4Addr, t: i64) {
        store.record_observations(&[PeerObservation {
            info_hash: hash(b),
            ip,
            port: 6881,
            observed_at: t,
        }]);
    }

    fn profile(ip: Ipv4Addr) -> IpProfile {
        IpProfile::new(ip)
    }

    #[test]
    fn summary_reproduces_small_rate_arithmetic() {
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Alpha", "up");
        for i in 1..=100u8 {
            link(&mut store, 1, addr(i), i as i64);
        }
        let mut updates = Vec::new();
        for i in 1..=100u8 {
            let mut p = profile(addr(i));
            p.country = if i <= 60 { "A".into() } else { "B".into() };
            // privacy on 25 addresses, of which 5 are also flagged
            p.privacy = i <= 5 || (51..=70).contains(&i);
            if i <= 10 {
                p.flags.insert("watch".to_string()); // 10%
            }
            updates.push(p);
        }
        store.apply_profiles(&updates);
        store.apply_flags(&[crate::enrichment::FlagList::new(
            "watch",
            (1..=10u8).map(addr),
        )]);
        let stats = summary(&store, &[]);
        assert_eq!(stats.unique_ip_count, 100);
        assert_eq!(stats.country_count, 2);
        assert_eq!(stats.privacy_count, 25);
        assert!((stats.privacy_rate - 25.0).abs() < 1e-9);
        let watch = &stats.flags["watch"];
        assert_eq!(watch.count, 10);
        assert!((watch.rate - 10.0).abs() < 1e-9);
        assert_eq!(watch.privacy_overlap, 5);
        assert!((watch.privacy_overlap_rate - 50.0).abs() < 1e-9);
        // least anonymized = no privacy flag, no hostname
        assert_eq!(stats.least_anonymized_count, 75);
    }

    #[test]
    fn empty_store_summary_is_all_zeros() {
        let stats = summary(&Store::new(), &[]);
        assert_eq!(stats.unique_ip_count, 0);
        assert_eq!(stats.privacy_rate, 0.0);
        assert_eq!(stats.mean_links_per_ip, 0.0);
        assert!(stats.flags.is_empty());
    }

    #[test]
    fn rankings_use_value_carrying_denominator() {
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Alpha", "up");
        for i in 1..=10u8 {
            link(&mut store, 1, addr(i), i as i64);
        }
        let mut updates = Vec::new();
        for i in 1..=10u8 {
            let mut p = profile(addr(i));
            if i <= 8 {
                // two addresses have no country at all
                p.country = if i <= 6 { "X".into() } else { "Y".into() };
            }
            p.isp = "carrier".into();
            updates.push(p);
        }
        store.apply_profiles(&updates);
        let by_country = rankings(&store, RankingKind::Country, 10);
        assert_eq!(by_country.denominator, 8);
        assert_eq!(by_country.rows[0], ("X".to_string(), 6, 75.0));
        let by_isp = rankings(&store, RankingKind::Isp, 10);
        assert_eq!(by_isp.denominator, 10);
        assert_eq!(by_isp.rows[0].1, 10);
        assert_eq!(rankings(&store, RankingKind::Isp, 0).rows.len(), 0);
    }

    #[test]
    fn pseudonym_labels_follow_the_documented_formats() {
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Alpha", "up");
        link(&mut store, 1, addr(1), 1);
        link(&mut store, 1, addr(2), 2);
        store.apply_profiles(&[
            IpProfile {
                latitude: Some(37.29801),
                longitude: Some(127.07772),
                country: "South Korea".into(),
                ..profile(addr(1))
            },
            IpProfile {
                country: "India".into(),
                ..profile(addr(2))
            },
        ]);
        let pseudo = Pseudonymizer::build(&store, true, 4);
        assert_eq!(pseudo.label(addr(1)), "(37.2980, 127.0777) South Korea");
        assert_eq!(pseudo.label(addr(2)), "node-0001 (India)");
        assert!(pseudo.collisions.is_empty());

        let raw = Pseudonymizer::build(&store, false, 4);
        assert_eq!(raw.label(addr(1)), "10.1.0.1");
    }

    #[test]
    fn rounded_coordinate_collisions_share_a_label_and_warn() {
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Alpha", "up");
        link(&mut store, 1, addr(1), 1);
        link(&mut store, 1, addr(2), 2);
        store.apply_profiles(&[
            IpProfile {
                latitude: Some(10.00001),
                longitude: Some(20.0),
                country: "X".into(),
                ..profile(addr(1))
            },
            IpProfile {
                latitude: Some(10.00004),
                longitude: Some(20.0),
                country: "X".into(),
                ..profile(addr(2))
            },
        ]);
        let pseudo = Pseudonymizer::build(&store, true, 4);
        assert_eq!(pseudo.label(addr(1)), pseudo.label(addr(2)));
        assert_eq!(pseudo.collisions.len(), 1);
    }

    fn case_study_store() -> Store {
        // 4 torrents by one uploader, 6 addresses, overlapping swarms
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Guide One", "crwildman");
        seed_torrent(&mut store, 2, "Guide Two", "crwildman");
        seed_torrent(&mut store, 3, "Guide Three", "crwildman");
        seed_torrent(&mut store, 4, "Blockbuster", "other");
        let mut t = 0;
        for (torrent, who) in [
            (1, 1u8),
            (1, 2),
            (2, 1),
            (2, 2),
            (2, 3),
            (3, 3),
            (3, 4),
            (4, 1),
            (4, 5),
        ] {
            t += 1;
            link(&mut store, torrent, addr(who), t);
        }
        let mut updates = Vec::new();
        for i in 1..=5u8 {
            let mut p = profile(addr(i));
            p.country = ["South Korea", "China", "Japan", "Brazil", "India"][i as usize - 1].into();
            p.latitude = Some(10.0 + i as f64);
            p.longitude = Some(100.0 + i as f64);
            p.privacy = i == 2;
            updates.push(p);
        }
        store.apply_profiles(&updates);
        store.apply_flags(&[crate::enrichment::FlagList::new("cem", [addr(1)])]);
        store
    }

    #[test]
    fn bundle_is_deterministic_and_complete() {
        let store = case_study_store();
        let params = ReportParams {
            uploader: Some("crwildman".into()),
            min_links: 1,
            top_fraction: 1.0,
            ..ReportParams::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a");
        let second = dir.path().join("b");
        let manifest = render_report(&store, &params, &first).unwrap();
        render_report(&store, &params, &second).unwrap();

        assert!(manifest.files.contains(&"summary.csv".to_string()));
        assert!(manifest.files.contains(&"manifest.json".to_string()));
        for name in &manifest.files {
            let a = std::fs::read(first.join(name)).unwrap();
            let b = std::fs::read(second.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn bundle_has_no_dotted_quads_when_pseudonymized() {
        let store = case_study_store();
        let params = ReportParams {
            uploader: Some("crwildman".into()),
            min_links: 1,
            top_fraction: 1.0,
            ..ReportParams::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = render_report(&store, &params, dir.path()).unwrap();
        for name in &manifest.files {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(!contains_dotted_quad(&text), "{name} leaks an address");
        }
    }

    #[test]
    fn dotted_quad_scanner_sanity() {
        assert!(contains_dotted_quad("x 10.0.0.1 y"));
        assert!(contains_dotted_quad("\"192.168.1.200\""));
        assert!(!contains_dotted_quad("version 1.2.3"));
        assert!(!contains_dotted_quad("(37.2980, 127.0777) South Korea"));
        assert!(!contains_dotted_quad("DD5.1.x264 1400MB"));
        assert!(!contains_dotted_quad("1.2.3.999"));
        assert_eq!(
            scrub_dotted_quads("peer 10.0.0.1 via 10.0.0.2:6881", "[addr]"),
            "peer [addr] via [addr]:6881"
        );
    }

    #[test]
    fn self_audit_passes_then_catches_tampering() {
        let store = case_study_store();
        let params = ReportParams {
            uploader: Some("crwildman".into()),
            min_links: 1,
            top_fraction: 1.0,
            ..ReportParams::default()
        };
        let dir = tempfile::tempdir().unwrap();
        render_report(&store, &params, dir.path()).unwrap();
        let diffs = self_audit(&store, &params, dir.path());
        assert!(diffs.is_empty(), "unexpected diffs: {diffs:?}");

        // flip one digit in the summary
        let summary_path = dir.path().join("summary.csv");
        let text = std::fs::read_to_string(&summary_path).unwrap();
        std::fs::write(&summary_path, text.replace("unique_ips,5", "unique_ips,6")).unwrap();
        let diffs = self_audit(&store, &params, dir.path());
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0].starts_with("summary.csv"));
    }

    #[test]
    fn content_tables_number_references_alphabetically() {
        let store = case_study_store();
        let tables = content_tables(&store, "crwildman", Engine::Fast).unwrap();
        let lines: Vec<&str> = tables.reference.lines().collect();
        assert_eq!(lines[0], "number,title");
        assert_eq!(lines[1], "1,Guide One");
        assert_eq!(lines[2], "2,Guide Three");
        assert_eq!(lines[3], "3,Guide Two");
        // Blockbuster is extended-only, appended after the base block
        assert_eq!(lines[4], "4,Blockbuster");

        let base_lines: Vec<&str> = tables.base.lines().collect();
        assert_eq!(
            base_lines[0],
            "title,found_peers,degree,betweenness,connected_titles"
        );
        // Guide Two shares addresses with both other guides
        assert!(tables.base.contains("Guide Two,3,1.000"));
        assert!(tables.extended.is_some());
    }

    #[test]
    fn missing_inputs_become_manifest_omissions() {
        let mut store = Store::new();
        seed_torrent(&mut store, 1, "Alpha", "up");
        link(&mut store, 1, addr(1), 1);
        // no enrichment at all: no countries, no coordinates
        let params = ReportParams {
            min_links: 1,
            top_fraction: 1.0,
            ..ReportParams::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = render_report(&store, &params, dir.path()).unwrap();
        assert!(manifest
            .omissions
            .iter()
            .any(|(artifact, _)| artifact == "rankings_country.csv"));
        assert!(manifest
            .omissions
            .iter()
            .any(|(artifact, _)| artifact == "geo_points.geojson"));
        assert!(!dir.path().join("rankings_country.csv").exists());
    }

    #[test]
    fn geojson_styles_follow_the_legend() {
        let store = case_study_store();
        let params = ReportParams {
            min_links: 1,
            top_fraction: 1.0,
            ..ReportParams::default()
        };
        let dir = tempfile::tempdir().unwrap();
        render_report(&store, &params, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("geo_points.geojson")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let features = value["features"].as_array().unwrap();
        assert_eq!(features.len(), 5);
        for f in features {
            let props = &f["properties"];
            let flagged = !props["flags"].as_array().unwrap().is_empty();
            let privacy = props["privacy"].as_bool().unwrap();
            assert_eq!(
                props["marker"].as_str().unwrap(),
                if privacy { "triangle" } else { "circle" }
            );
            assert_eq!(
                props["color"].as_str().unwrap(),
                if flagged { "red" } else { "blue" }
            );
        }
        // the flagged privacy user from the fixture: addr(2) privacy,
        // addr(1) flagged
        assert!(text.contains("\"triangle\""));
        assert!(text.contains("\"red\""));
    }
}
