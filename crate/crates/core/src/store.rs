//! Single-file dataset with three tables: torrents (tor_info), IP
//! profiles (ip_info), and the links between them (hash_ip).
//!
//! Every ingest operation is an idempotent upsert, so re-running any
//! stage with identical input is a no-op. The file carries a schema
//! version and serializes in sorted order, making saves deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrichment::{IpProfile, PrivacyMatcher};
use crate::magnet::InfoHash;
use crate::tracker::PeerObservation;

pub const SCHEMA_VERSION: u32 = 1;

/// One scraped torrent listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorrentRecord {
    pub info_hash: InfoHash,
    pub title: String,
    pub category: String,
    pub subcategory: String,
    /// Listing date as scraped, `YYYY-MM-DD`.
    pub uploaded_at: String,
    pub size_bytes: u64,
    pub seeders: u32,
    pub leechers: u32,
    pub uploader: String,
    pub magnet: String,
    pub interest_category: Option<String>,
}

/// The ip_info row type is the enrichment profile keyed by address.
pub type IpInfoRecord = IpProfile;

/// Link between a torrent and an address. Timestamps and the
/// observation count derive from the sighting set, so replaying the
/// same observations cannot inflate them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashIpLink {
    pub info_hash: InfoHash,
    pub ip: Ipv4Addr,
    /// Distinct (utc seconds, source port) sightings, at least one.
    pub sightings: BTreeSet<(i64, u16)>,
}

impl HashIpLink {
    pub fn first_seen(&self) -> i64 {
        self.sightings.iter().next().map(|&(t, _)| t).unwrap_or(0)
    }

    pub fn last_seen(&self) -> i64 {
        self.sightings.iter().next_back().map(|&(t, _)| t).unwrap_or(0)
    }

    pub fn observation_count(&self) -> usize {
        self.sightings.len()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store file {path}: {message}")]
    File { path: String, message: String },
    #[error("unsupported schema version {found} (this build reads {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("unknown query kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub inserted: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub rejected: usize,
    /// (line number, reason) per rejected row.
    pub rejections: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObservationReport {
    pub new_links: usize,
    pub new_ips: usize,
    pub observations_added: usize,
    pub duplicates_ignored: usize,
    pub rejected_unknown_hash: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeEntry {
    pub ip: Ipv4Addr,
    pub field: &'static str,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizeReport {
    pub changes: Vec<ChangeEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub torrents: usize,
    pub ips: usize,
    pub links: usize,
    /// Invariant violations found by the full scan; empty means clean.
    pub problems: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Store {
    tor_info: BTreeMap<InfoHash, TorrentRecord>,
    ip_info: BTreeMap<Ipv4Addr, IpInfoRecord>,
    hash_ip: BTreeMap<(InfoHash, Ipv4Addr), HashIpLink>,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    schema_version: u32,
    tor_info: Vec<TorrentRecord>,
    ip_info: Vec<IpInfoRecord>,
    hash_ip: Vec<HashIpLink>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let file_err = |message: String| StoreError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path)?;
        // peek the version before full decode for a clear error
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let found = probe
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| file_err("missing schema_version".to_string()))? as u32;
        if found != SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let file: StoreFile =
            serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let mut store = Store::new();
        for t in file.tor_info {
            store.tor_info.insert(t.info_hash, t);
        }
        for p in file.ip_info {
            store.ip_info.insert(p.ip, p);
        }
        for l in file.hash_ip {
            store.hash_ip.insert((l.info_hash, l.ip), l);
        }
        Ok(store)
    }

    pub fn load_or_new(path: &Path) -> Result<Self, StoreError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Store::new())
        }
    }

    /// Atomic save: write a sibling temp file, then rename over.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let file = StoreFile {
            schema_version: SCHEMA_VERSION,
            tor_info: self.tor_info.values().cloned().collect(),
            ip_info: self.ip_info.values().cloned().collect(),
            hash_ip: self.hash_ip.values().cloned().collect(),
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| StoreError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    // ---- table access ----

    pub fn torrents(&self) -> impl Iterator<Item = &TorrentRecord> {
        self.tor_info.values()
    }

    pub fn torrent(&self, hash: &InfoHash) -> Option<&TorrentRecord> {
        self.tor_info.get(hash)
    }

    pub fn ips(&self) -> impl Iterator<Item = &IpInfoRecord> {
        self.ip_info.values()
    }

    pub fn ip(&self, ip: Ipv4Addr) -> Option<&IpInfoRecord> {
        self.ip_info.get(&ip)
    }

    pub fn links(&self) -> impl Iterator<Item = &HashIpLink> {
        self.hash_ip.values()
    }

    pub fn torrent_count(&self) -> usize {
        self.tor_info.len()
    }

    pub fn ip_count(&self) -> usize {
        self.ip_info.len()
    }

    pub fn link_count(&self) -> usize {
        self.hash_ip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tor_info.is_empty() && self.ip_info.is_empty() && self.hash_ip.is_empty()
    }

    // ---- ingest ----

    /// Upsert one torrent record. Identity fields must not change: a
    /// different title for a known hash is a rejection; swarm counters
    /// (seeders, leechers) and blanks-being-filled update freely.
    pub fn upsert_torrent(&mut self, record: TorrentRecord) -> Result<UpsertOutcome, String> {
        match self.tor_info.get_mut(&record.info_hash) {
            None => {
                self.tor_info.insert(record.info_hash, record);
                Ok(UpsertOutcome::Inserted)
            }
            Some(existing) => {
                if existing.title != record.title {
                    return Err(format!(
                        "title mismatch for {}: stored {:?}, incoming {:?}",
                        record.info_hash, existing.title, record.title
                    ));
                }
                let mut next = existing.clone();
                next.seeders = record.seeders;
                next.leechers = record.leechers;
                fill_text(&mut next.category, &record.category);
                fill_text(&mut next.subcategory, &record.subcategory);
                fill_text(&mut next.uploaded_at, &record.uploaded_at);
                fill_text(&mut next.uploader, &record.uploader);
                fill_text(&mut next.magnet, &record.magnet);
                if next.size_bytes == 0 {
                    next.size_bytes = record.size_bytes;
                }
                if next.interest_category.is_none() {
                    next.interest_category = record.interest_category.clone();
                }
                if next == *existing {
                    Ok(UpsertOutcome::Unchanged)
                } else {
                    *existing = next;
                    Ok(UpsertOutcome::Updated)
                }
            }
        }
    }

    /// Ingest the documented torrent interchange file (see
    /// [`TORRENT_CSV_HEADER`]). Bad rows are skipped and tallied, never
    /// fatal.
    pub fn ingest_torrents(&mut self, path: &Path) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| StoreError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        for (idx, row) in reader.records().enumerate() {
            let line = idx + 2; // header is line 1
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    report.rejected += 1;
                    report.rejections.push((line, e.to_string()));
                    continue;
                }
            };
            match parse_torrent_row(&row) {
                Ok(record) => match self.upsert_torrent(record) {
                    Ok(UpsertOutcome::Inserted) => report.inserted += 1,
                    Ok(UpsertOutcome::Updated) => report.updated += 1,
                    Ok(UpsertOutcome::Unchanged) => report.unchanged += 1,
                    Err(reason) => {
                        report.rejected += 1;
                        report.rejections.push((line, reason));
                    }
                },
                Err(reason) => {
                    report.rejected += 1;
                    report.rejections.push((line, reason));
                }
            }
        }
        Ok(report)
    }

    /// Fold swarm sightings into hash_ip, creating skeleton ip_info
    /// rows for unseen addresses. Observations for hashes missing from
    /// tor_info are rejected so links never dangle.
    pub fn record_observations(&mut self, obs: &[PeerObservation]) -> ObservationReport {
        let mut report = ObservationReport::default();
        for o in obs {
            if !self.tor_info.contains_key(&o.info_hash) {
                report.rejected_unknown_hash += 1;
                continue;
            }
            if !self.ip_info.contains_key(&o.ip) {
                self.ip_info.insert(o.ip, IpProfile::new(o.ip));
                report.new_ips += 1;
            }
            let link = self
                .hash_ip
                .entry((o.info_hash, o.ip))
                .or_insert_with(|| {
                    report.new_links += 1;
                    HashIpLink {
                        info_hash: o.info_hash,
                        ip: o.ip,
                        sightings: BTreeSet::new(),
                    }
                });
            if link.sightings.insert((o.observed_at, o.port)) {
                report.observations_added += 1;
            } else {
                report.duplicates_ignored += 1;
            }
        }
        report
    }

    /// Merge enrichment output into ip_info. Existing values win per
    /// field, so re-running with the same providers changes nothing.
    pub fn apply_profiles(&mut self, profiles: &[IpProfile]) -> usize {
        let mut touched = 0;
        for p in profiles {
            if let Some(row) = self.ip_info.get_mut(&p.ip) {
                let before = row.clone();
                row.absorb(p);
                if *row != before {
                    touched += 1;
                }
            }
        }
        touched
    }

    /// Add flag labels from the lists to every matching ip_info row.
    pub fn apply_flags(
        &mut self,
        lists: &[crate::enrichment::FlagList],
    ) -> crate::enrichment::FlagSummary {
        let mut rows: Vec<IpProfile> = self.ip_info.values().cloned().collect();
        let summary = crate::enrichment::apply_flags(&mut rows, lists);
        for row in rows {
            self.ip_info.insert(row.ip, row);
        }
        summary
    }

    /// Addresses that still have no country, for incremental
    /// enrichment.
    pub fn unenriched_ips(&self) -> Vec<Ipv4Addr> {
        self.ip_info
            .values()
            .filter(|p| p.country.is_empty() && p.isp.is_empty())
            .map(|p| p.ip)
            .collect()
    }

    pub fn all_ips(&self) -> Vec<Ipv4Addr> {
        self.ip_info.keys().copied().collect()
    }

    // ---- normalize ----

    /// Standardize text fields in place and report every change:
    /// lowercase isp/org, canonicalize city names through the
    /// region-aware table, re-run the privacy heuristic (OR, never
    /// clearing a provider-set flag), and drop the provider-reported
    /// anycast column. Running twice yields an empty second report.
    pub fn normalize(
        &mut self,
        cities: &CityTable,
        matcher: &PrivacyMatcher,
    ) -> NormalizeReport {
        let mut report = NormalizeReport::default();
        for row in self.ip_info.values_mut() {
            let lower_isp = row.isp.to_lowercase();
            if lower_isp != row.isp {
                report.changes.push(ChangeEntry {
                    ip: row.ip,
                    field: "isp",
                    before: row.isp.clone(),
                    after: lower_isp.clone(),
                });
                row.isp = lower_isp;
            }
            let lower_org = row.org.to_lowercase();
            if lower_org != row.org {
                report.changes.push(ChangeEntry {
                    ip: row.ip,
                    field: "org",
                    before: row.org.clone(),
                    after: lower_org.clone(),
                });
                row.org = lower_org;
            }
            if let Some(canonical) = cities.canonical_for(&row.city, &row.region) {
                if canonical != row.city {
                    report.changes.push(ChangeEntry {
                        ip: row.ip,
                        field: "city",
                        before: row.city.clone(),
                        after: canonical.to_string(),
                    });
                    row.city = canonical.to_string();
                }
            }
            if !row.privacy && matcher.is_privacy(&row.isp, &row.org, &row.as_number) {
                report.changes.push(ChangeEntry {
                    ip: row.ip,
                    field: "privacy",
                    before: "false".to_string(),
                    after: "true".to_string(),
                });
                row.privacy = true;
            }
            if let Some(value) = row.anycast.take() {
                report.changes.push(ChangeEntry {
                    ip: row.ip,
                    field: "anycast",
                    before: value.to_string(),
                    after: String::new(),
                });
            }
        }
        report
    }

    /// Assign interest categories to titles that match a rule and have
    /// none yet. Returns the number of rows categorized.
    pub fn assign_interest_categories(&mut self, rules: &InterestRules) -> usize {
        let mut assigned = 0;
        for t in self.tor_info.values_mut() {
            if t.interest_category.is_none() {
                if let Some(category) = rules.categorize(&t.title) {
                    t.interest_category = Some(category.to_string());
                    assigned += 1;
                }
            }
        }
        assigned
    }

    // ---- queries (each documents its sort order) ----

    /// Case-insensitive substring match over titles, sorted by title
    /// then hash.
    pub fn torrents_by_keyword(&self, keyword: &str) -> Vec<&TorrentRecord> {
        let needle = keyword.to_lowercase();
        let mut hits: Vec<&TorrentRecord> = self
            .tor_info
            .values()
            .filter(|t| t.title.to_lowercase().contains(&needle))
            .collect();
        hits.sort_by(|a, b| (&a.title, a.info_hash).cmp(&(&b.title, b.info_hash)));
        hits
    }

    /// Exact uploader match, sorted by title then hash.
    pub fn torrents_by_uploader(&self, uploader: &str) -> Vec<&TorrentRecord> {
        let mut hits: Vec<&TorrentRecord> = self
            .tor_info
            .values()
            .filter(|t| t.uploader == uploader)
            .collect();
        hits.sort_by(|a, b| (&a.title, a.info_hash).cmp(&(&b.title, b.info_hash)));
        hits
    }

    /// Addresses linked to a hash, ascending.
    pub fn ips_by_torrent(&self, hash: &InfoHash) -> Vec<Ipv4Addr> {
        self.hash_ip
            .range((*hash, Ipv4Addr::new(0, 0, 0, 0))..=(*hash, Ipv4Addr::new(255, 255, 255, 255)))
            .map(|((_, ip), _)| *ip)
            .collect()
    }

    /// Torrents linked to an address, sorted by title then hash.
    pub fn torrents_by_ip(&self, ip: Ipv4Addr) -> Vec<&TorrentRecord> {
        let mut hits: Vec<&TorrentRecord> = self
            .hash_ip
            .values()
            .filter(|l| l.ip == ip)
            .filter_map(|l| self.tor_info.get(&l.info_hash))
            .collect();
        hits.sort_by(|a, b| (&a.title, a.info_hash).cmp(&(&b.title, b.info_hash)));
        hits
    }

    /// Distinct-torrent link count per address.
    pub fn link_counts_per_ip(&self) -> BTreeMap<Ipv4Addr, usize> {
        let mut counts: BTreeMap<Ipv4Addr, usize> = BTreeMap::new();
        for link in self.hash_ip.values() {
            *counts.entry(link.ip).or_insert(0) += 1;
        }
        counts
    }

    /// Addresses with at least `n` distinct torrent links, sorted by
    /// count descending then address ascending.
    pub fn ips_with_min_links(&self, n: usize) -> Vec<(Ipv4Addr, usize)> {
        let mut hits: Vec<(Ipv4Addr, usize)> = self
            .link_counts_per_ip()
            .into_iter()
            .filter(|&(_, c)| c >= n)
            .collect();
        hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        hits
    }

    /// Addresses carrying a flag label, ascending.
    pub fn flagged_ips(&self, label: &str) -> Vec<Ipv4Addr> {
        self.ip_info
            .values()
            .filter(|p| p.flags.contains(label))
            .map(|p| p.ip)
            .collect()
    }

    /// Torrent category histogram, count descending then name.
    pub fn category_counts(&self) -> Vec<(String, usize)> {
        count_non_empty(self.tor_info.values().map(|t| t.category.as_str()))
    }

    /// Interest-category histogram, count descending then name.
    pub fn interest_category_counts(&self) -> Vec<(String, usize)> {
        count_non_empty(
            self.tor_info
                .values()
                .filter_map(|t| t.interest_category.as_deref()),
        )
    }

    /// ISP histogram over ip_info, count descending then name.
    pub fn isp_counts(&self) -> Vec<(String, usize)> {
        count_non_empty(self.ip_info.values().map(|p| p.isp.as_str()))
    }

    /// Country histogram over ip_info, count descending then name.
    pub fn country_counts(&self) -> Vec<(String, usize)> {
        count_non_empty(self.ip_info.values().map(|p| p.country.as_str()))
    }

    /// Uploader histogram over tor_info, count descending then name.
    pub fn uploader_counts(&self) -> Vec<(String, usize)> {
        count_non_empty(self.tor_info.values().map(|t| t.uploader.as_str()))
    }

    /// String-keyed dispatcher mirroring the CLI `query` subcommand.
    pub fn query(&self, kind: &str, param: &str) -> Result<Vec<String>, StoreError> {
        let rows = match kind {
            "torrents_by_keyword" => self
                .torrents_by_keyword(param)
                .iter()
                .map(|t| format!("{}\t{}", t.info_hash, t.title))
                .collect(),
            "torrents_by_uploader" => self
                .torrents_by_uploader(param)
                .iter()
                .map(|t| format!("{}\t{}", t.info_hash, t.title))
                .collect(),
            "ips_by_torrent" => {
                let hash: InfoHash = param
                    .parse()
                    .map_err(|e| StoreError::UnknownKind(format!("bad hash: {e}")))?;
                self.ips_by_torrent(&hash)
                    .iter()
                    .map(|ip| ip.to_string())
                    .collect()
            }
            "torrents_by_ip" => {
                let ip: Ipv4Addr = param
                    .parse()
                    .map_err(|_| StoreError::UnknownKind(format!("bad ip {param:?}")))?;
                self.torrents_by_ip(ip)
                    .iter()
                    .map(|t| format!("{}\t{}", t.info_hash, t.title))
                    .collect()
            }
            "ips_with_min_links" => {
                let n: usize = param
                    .parse()
                    .map_err(|_| StoreError::UnknownKind(format!("bad count {param:?}")))?;
                self.ips_with_min_links(n)
                    .iter()
                    .map(|(ip, c)| format!("{ip}\t{c}"))
                    .collect()
            }
            "flagged_ips" => self
                .flagged_ips(param)
                .iter()
                .map(|ip| ip.to_string())
                .collect(),
            "category_counts" => to_count_rows(self.category_counts()),
            "isp_counts" => to_count_rows(self.isp_counts()),
            "country_counts" => to_count_rows(self.country_counts()),
            other => return Err(StoreError::UnknownKind(other.to_string())),
        };
        Ok(rows)
    }

    // ---- audit ----

    /// Full-scan integrity check: referential integrity of every link,
    /// non-empty sighting sets, ordered timestamps, and count
    /// consistency between tables and brute-force recomputation.
    pub fn audit(&self) -> AuditReport {
        let mut report = AuditReport {
            torrents: self.tor_info.len(),
            ips: self.ip_info.len(),
            links: self.hash_ip.len(),
            problems: Vec::new(),
        };
        for ((hash, ip), link) in &self.hash_ip {
            if link.info_hash != *hash || link.ip != *ip {
                report
                    .problems
                    .push(format!("link key ({hash}, {ip}) disagrees with row content"));
            }
            if !self.tor_info.contains_key(hash) {
                report
                    .problems
                    .push(format!("link ({hash}, {ip}) references missing torrent"));
            }
            if !self.ip_info.contains_key(ip) {
                report
                    .problems
                    .push(format!("link ({hash}, {ip}) references missing ip"));
            }
            if link.sightings.is_empty() {
                report
                    .problems
                    .push(format!("link ({hash}, {ip}) has no sightings"));
            }
            if link.first_seen() > link.last_seen() {
                report
                    .problems
                    .push(format!("link ({hash}, {ip}) timestamps out of order"));
            }
        }
        for (key, row) in &self.ip_info {
            if row.ip != *key {
                report
                    .problems
                    .push(format!("ip_info key {key} disagrees with row ip {}", row.ip));
            }
        }
        for (key, row) in &self.tor_info {
            if row.info_hash != *key {
                report.problems.push(format!(
                    "tor_info key {key} disagrees with row hash {}",
                    row.info_hash
                ));
            }
        }
        report
    }

    /// Mean and max distinct-torrent links per address.
    pub fn link_aggregates(&self) -> (f64, usize) {
        let counts = self.link_counts_per_ip();
        if counts.is_empty() {
            return (0.0, 0);
        }
        let total: usize = counts.values().sum();
        let max = counts.values().copied().max().unwrap_or(0);
        (total as f64 / counts.len() as f64, max)
    }

    // ---- interchange ----

    /// Write tor_info.csv, ip_info.csv, and hash_ip.csv into `dir`.
    pub fn export_tables(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("tor_info.csv")).map_err(csv_err)?;
        w.write_record(TORRENT_CSV_HEADER.split(',')).map_err(csv_err)?;
        for t in self.tor_info.values() {
            w.write_record(&torrent_row(t)).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("ip_info.csv")).map_err(csv_err)?;
        w.write_record(IP_CSV_HEADER.split(',')).map_err(csv_err)?;
        for p in self.ip_info.values() {
            w.write_record(&ip_row(p)).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("hash_ip.csv")).map_err(csv_err)?;
        w.write_record(LINK_CSV_HEADER.split(',')).map_err(csv_err)?;
        for l in self.hash_ip.values() {
            let sightings = l
                .sightings
                .iter()
                .map(|(t, p)| format!("{t}:{p}"))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                l.info_hash.to_string(),
                l.ip.to_string(),
                l.first_seen().to_string(),
                l.last_seen().to_string(),
                l.observation_count().to_string(),
                sightings,
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the three tables back from `dir`. Inverse of
    /// [`export_tables`] for any store.
    pub fn import_tables(dir: &Path) -> Result<Self, StoreError> {
        let mut store = Store::new();
        let table_err = |path: &Path, message: String| StoreError::File {
            path: path.display().to_string(),
            message,
        };

        let path = dir.join("tor_info.csv");
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| table_err(&path, e.to_string()))?;
        for row in reader.records() {
            let row = row.map_err(|e| table_err(&path, e.to_string()))?;
            let record =
                parse_torrent_row(&row).map_err(|reason| table_err(&path, reason))?;
            store.tor_info.insert(record.info_hash, record);
        }

        let path = dir.join("ip_info.csv");
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| table_err(&path, e.to_string()))?;
        for row in reader.records() {
            let row = row.map_err(|e| table_err(&path, e.to_string()))?;
            let profile = parse_ip_row(&row).map_err(|reason| table_err(&path, reason))?;
            store.ip_info.insert(profile.ip, profile);
        }

        let path = dir.join("hash_ip.csv");
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| table_err(&path, e.to_string()))?;
        for row in reader.records() {
            let row = row.map_err(|e| table_err(&path, e.to_string()))?;
            if row.len() < 6 {
                return Err(table_err(&path, format!("expected 6 columns, got {}", row.len())));
            }
            let info_hash: InfoHash = row[0]
                .parse()
                .map_err(|e| table_err(&path, format!("bad hash: {e}")))?;
            let ip: Ipv4Addr = row[1]
                .parse()
                .map_err(|_| table_err(&path, format!("bad ip {:?}", &row[1])))?;
            let mut sightings = BTreeSet::new();
            for part in row[5].split(';').filter(|s| !s.is_empty()) {
                let (t, p) = part
                    .split_once(':')
                    .ok_or_else(|| table_err(&path, format!("bad sighting {part:?}")))?;
                let t: i64 = t
                    .parse()
                    .map_err(|_| table_err(&path, format!("bad sighting time {t:?}")))?;
                let p: u16 = p
                    .parse()
                    .map_err(|_| table_err(&path, format!("bad sighting port {p:?}")))?;
                sightings.insert((t, p));
            }
            if sightings.is_empty() {
                return Err(table_err(&path, format!("link {info_hash}/{ip} has no sightings")));
            }
            store
                .hash_ip
                .insert((info_hash, ip), HashIpLink { info_hash, ip, sightings });
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    Unchanged,
}

fn fill_text(slot: &mut String, candidate: &str) {
    if slot.is_empty() && !candidate.is_empty() {
        *slot = candidate.to_string();
    }
}

fn count_non_empty<'a>(values: impl Iterator<Item = &'a str>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        if !v.is_empty() {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(k, c)| (k.to_string(), c))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    rows
}

fn to_count_rows(counts: Vec<(String, usize)>) -> Vec<String> {
    counts
        .into_iter()
        .map(|(name, c)| format!("{name}\t{c}"))
        .collect()
}

fn csv_err(e: csv::Error) -> StoreError {
    StoreError::File {
        path: String::new(),
        message: e.to_string(),
    }
}

pub const TORRENT_CSV_HEADER: &str = "info_hash,title,category,subcategory,uploaded_at,size_bytes,seeders,leechers,uploader,magnet,interest_category";
pub const IP_CSV_HEADER: &str = "ip,city,region,country,isp,org,as_number,latitude,longitude,hostname,privacy,flags,anycast";
pub const LINK_CSV_HEADER: &str = "info_hash,ip,first_seen,last_seen,observation_count,sightings";

fn parse_torrent_row(row: &csv::StringRecord) -> Result<TorrentRecord, String> {
    if row.len() < 11 {
        return Err(format!("expected 11 columns, got {}", row.len()));
    }
    let info_hash: InfoHash = row[0].trim().parse().map_err(|e| format!("bad hash: {e}"))?;
    let title = row[1].trim().to_string();
    if title.is_empty() {
        return Err("empty title".to_string());
    }
    let parse_count = |s: &str, what: &str| -> Result<u32, String> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(0);
        }
        let n: i64 = s.parse().map_err(|_| format!("bad {what} {s:?}"))?;
        if n < 0 {
            return Err(format!("negative {what} {n}"));
        }
        Ok(n as u32)
    };
    let size_bytes = {
        let s = row[5].trim();
        if s.is_empty() {
            0
        } else {
            s.parse::<u64>().map_err(|_| format!("bad size {s:?}"))?
        }
    };
    Ok(TorrentRecord {
        info_hash,
        title,
        category: row[2].trim().to_string(),
        subcategory: row[3].trim().to_string(),
        uploaded_at: row[4].trim().to_string(),
        size_bytes,
        seeders: parse_count(&row[6], "seeders")?,
        leechers: parse_count(&row[7], "leechers")?,
        uploader: row[8].trim().to_string(),
        magnet: row[9].trim().to_string(),
        interest_category: match row[10].trim() {
            "" => None,
            s => Some(s.to_string()),
        },
    })
}

fn torrent_row(t: &TorrentRecord) -> Vec<String> {
    vec![
        t.info_hash.to_string(),
        t.title.clone(),
        t.category.clone(),
        t.subcategory.clone(),
        t.uploaded_at.clone(),
        t.size_bytes.to_string(),
        t.seeders.to_string(),
        t.leechers.to_string(),
        t.uploader.clone(),
        t.magnet.clone(),
        t.interest_category.clone().unwrap_or_default(),
    ]
}

fn ip_row(p: &IpProfile) -> Vec<String> {
    vec![
        p.ip.to_string(),
        p.city.clone(),
        p.region.clone(),
        p.country.clone(),
        p.isp.clone(),
        p.org.clone(),
        p.as_number.clone(),
        p.latitude.map(|v| v.to_string()).unwrap_or_default(),
        p.longitude.map(|v| v.to_string()).unwrap_or_default(),
        p.hostname.clone(),
        if p.privacy { "1" } else { "0" }.to_string(),
        p.flags.iter().cloned().collect::<Vec<_>>().join(";"),
        match p.anycast {
            None => String::new(),
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
        },
    ]
}

fn parse_ip_row(row: &csv::StringRecord) -> Result<IpProfile, String> {
    if row.len() < 13 {
        return Err(format!("expected 13 columns, got {}", row.len()));
    }
    let ip: Ipv4Addr = row[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad ip {:?}", &row[0]))?;
    let coord = |s: &str| -> Result<Option<f64>, String> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|_| format!("bad coordinate {s:?}"))
    };
    Ok(IpProfile {
        ip,
        city: row[1].trim().to_string(),
        region: row[2].trim().to_string(),
        country: row[3].trim().to_string(),
        isp: row[4].trim().to_string(),
        org: row[5].trim().to_string(),
        as_number: row[6].trim().to_string(),
        latitude: coord(&row[7])?,
        longitude: coord(&row[8])?,
        hostname: row[9].trim().to_string(),
        privacy: matches!(row[10].trim(), "1" | "true" | "yes"),
        flags: row[11]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .collect(),
        anycast: match row[12].trim() {
            "" => None,
            s => Some(matches!(s, "1" | "true" | "yes")),
        },
    })
}

/// Region-aware city canonicalization rules, editable as data. First
/// matching rule wins; a rule with an empty region applies anywhere,
/// otherwise the region must match case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CityTable {
    rules: Vec<CityRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CityRule {
    /// Lowercased variant to match.
    pub variant: String,
    /// Empty = any region.
    pub region: String,
    pub canonical: String,
}

impl CityTable {
    /// Starter rules: spelling variants of Dar es Salaam unify
    /// globally; Lafayette only within Louisiana, so the Georgia
    /// spelling LaFayette stays separate.
    pub fn seeded() -> Self {
        CityTable {
            rules: vec![
                CityRule {
                    variant: "lafayette".into(),
                    region: "Louisiana".into(),
                    canonical: "Lafayette".into(),
                },
                CityRule {
                    variant: "dar es salaam".into(),
                    region: String::new(),
                    canonical: "Dar es Salaam".into(),
                },
            ],
        }
    }

    pub fn new(rules: Vec<CityRule>) -> Self {
        CityTable { rules }
    }

    /// CSV `variant,region,canonical` with header.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| StoreError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut rules = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| StoreError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if row.len() < 3 {
                continue;
            }
            rules.push(CityRule {
                variant: row[0].trim().to_lowercase(),
                region: row[1].trim().to_string(),
                canonical: row[2].trim().to_string(),
            });
        }
        Ok(CityTable { rules })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["variant", "region", "canonical"]).map_err(csv_err)?;
        for r in &self.rules {
            w.write_record([&r.variant, &r.region, &r.canonical])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn canonical_for(&self, city: &str, region: &str) -> Option<&str> {
        if city.is_empty() {
            return None;
        }
        let city_lower = city.to_lowercase();
        self.rules
            .iter()
            .find(|r| {
                r.variant == city_lower
                    && (r.region.is_empty() || r.region.eq_ignore_ascii_case(region))
            })
            .map(|r| r.canonical.as_str())
    }
}

/// Title-pattern to interest-category rules, editable as data. A title
/// gets the category of the first pattern it contains
/// (case-insensitive substring).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterestRules {
    rules: Vec<(String, String)>,
}

impl InterestRules {
    pub fn seeded() -> Self {
        let rules = [
            ("explosive", "DIY explosives, weapons, and drugs"),
            ("bomb", "DIY explosives, weapons, and drugs"),
            ("weapon", "DIY explosives, weapons, and drugs"),
            ("poison", "DIY explosives, weapons, and drugs"),
            ("claymore", "DIY explosives, weapons, and drugs"),
            ("drug", "DIY explosives, weapons, and drugs"),
            ("assassination", "assassination, killing, and combat techniques"),
            ("sniper", "assassination, killing, and combat techniques"),
            ("combat", "assassination, killing, and combat techniques"),
            ("kill", "assassination, killing, and combat techniques"),
            ("military", "government and military operations"),
            ("guerrilla", "government and military operations"),
            ("cia ", "government and military operations"),
            ("survival", "survival and evasion techniques"),
            ("evasion", "survival and evasion techniques"),
            ("lockpick", "lockpicking, pickpocketing, and safe manipulation"),
            ("lock picking", "lockpicking, pickpocketing, and safe manipulation"),
            ("pickpocket", "lockpicking, pickpocketing, and safe manipulation"),
            ("safe manipulation", "lockpicking, pickpocketing, and safe manipulation"),
            ("cannibal", "cannibalism"),
        ];
        InterestRules {
            rules: rules
                .iter()
                .map(|(p, c)| (p.to_string(), c.to_string()))
                .collect(),
        }
    }

    pub fn new(rules: Vec<(String, String)>) -> Self {
        InterestRules {
            rules: rules
                .into_iter()
                .map(|(p, c)| (p.to_lowercase(), c))
                .collect(),
        }
    }

    /// CSV `pattern,category` with header.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| StoreError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut rules = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| StoreError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if row.len() >= 2 {
                // patterns keep their whitespace; a trailing space can
                // be the whole point of a rule
                rules.push((row[0].to_lowercase(), row[1].trim().to_string()));
            }
        }
        Ok(InterestRules { rules })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["pattern", "category"]).map_err(csv_err)?;
        for (p, c) in &self.rules {
            w.write_record([p, c]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn categorize(&self, title: &str) -> Option<&str> {
        let lower = title.to_lowercase();
        self.rules
            .iter()
            .find(|(pattern, _)| lower.contains(pattern.as_str()))
            .map(|(_, category)| category.as_str())
    }
}
