//! Subcommand orchestration: one config, one store, one lock, and an
//! append-only provenance log.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::enrichment::{
    self, FlagList, HttpFieldMap, HttpJsonProvider, OfflineFileProvider, PrivacyMatcher, Provider,
};
use crate::graph::{self, GraphError, NodeFilter, ProjectionSide};
use crate::magnet::parse_magnet;
use crate::report::{self, Pseudonymizer, ReportParams};
use crate::store::{CityTable, InterestRules, Store, StoreError};
use crate::tracker::mock::load_fixtures;
use crate::tracker::{
    AnnounceParams, FaultProfile, HarvestSchedule, MockTracker, RetryPolicy, TrackerClient,
};

pub const EXIT_OK: i32 = 0;
/// Config and usage problems.
pub const EXIT_USAGE: i32 = 2;
/// Store file, schema, or input-data problems.
pub const EXIT_STORE: i32 = 3;
/// Network failures that left nothing harvested.
pub const EXIT_NETWORK: i32 = 4;
/// Enrichment provider or flag-list problems.
pub const EXIT_ENRICH: i32 = 5;
/// Analysis produced nothing to report on.
pub const EXIT_ANALYSIS: i32 = 6;
/// Report bundle could not be written.
pub const EXIT_REPORT: i32 = 7;
/// Integrity or self-audit failures.
pub const EXIT_AUDIT: i32 = 8;
/// Another process holds the store lock.
pub const EXIT_LOCKED: i32 = 9;

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: String) -> Self {
        CliError { code, message }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::UnknownKind(_) => EXIT_USAGE,
            _ => EXIT_STORE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::new(EXIT_USAGE, e.to_string())
    }
}

impl From<crate::enrichment::EnrichError> for CliError {
    fn from(e: crate::enrichment::EnrichError) -> Self {
        CliError::new(EXIT_ENRICH, e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::new(EXIT_ANALYSIS, e.to_string())
    }
}

impl From<crate::report::ReportError> for CliError {
    fn from(e: crate::report::ReportError) -> Self {
        CliError::new(EXIT_REPORT, e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "swarmtrace",
    version,
    about = "BitTorrent swarm metadata collection and co-download network analysis"
)]
struct Cli {
    /// Flat TOML config file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store file, overriding the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load torrent records from a CSV file into the store.
    Ingest { file: PathBuf },
    /// Announce every stored magnet and record the peers returned.
    Harvest {
        /// Extra tracker endpoints (host:port) tried for every magnet.
        #[arg(long = "tracker")]
        trackers: Vec<String>,
        /// Peers requested per announce.
        #[arg(long)]
        num_want: Option<u32>,
        /// Compress the retransmit schedule by this factor.
        #[arg(long)]
        retry_scale: Option<f64>,
    },
    /// Look up location and ownership data for stored addresses.
    Enrich {
        /// Offline provider table, overriding the configured one.
        #[arg(long)]
        provider_file: Option<PathBuf>,
        /// Re-enrich every address, not only the blank ones.
        #[arg(long)]
        all: bool,
    },
    /// Apply flag lists (one address per line) to stored addresses.
    Flag {
        /// List files in addition to the configured ones.
        lists: Vec<PathBuf>,
        /// Label for the lists given on the command line.
        #[arg(long)]
        label: Option<String>,
    },
    /// Standardize text fields and recompute derived columns.
    Normalize,
    /// Build the co-download network and print its metrics.
    Analyze {
        #[arg(long)]
        min_links: Option<usize>,
        #[arg(long)]
        top_fraction: Option<f64>,
        #[arg(long)]
        uploader: Option<String>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        flag_label: Option<String>,
    },
    /// Write the full report bundle.
    Report {
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        min_links: Option<usize>,
        #[arg(long)]
        top_fraction: Option<f64>,
        #[arg(long)]
        uploader: Option<String>,
    },
    /// Check store integrity; with --bundle, re-derive and diff a report.
    Audit {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Run a read-only store query.
    Query {
        kind: String,
        #[arg(default_value = "")]
        param: String,
    },
    /// Export the three store tables as CSV interchange files.
    Export {
        #[arg(long, default_value = "tables")]
        dir: PathBuf,
    },
    /// Serve swarm fixtures over UDP for hermetic client testing.
    MockTracker {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
        /// Ignore the first N datagrams per client address.
        #[arg(long, default_value_t = 0)]
        drop_first: u32,
        /// Serve this long, print stats, then exit.
        #[arg(long)]
        duration_secs: Option<f64>,
    },
}

/// Line-oriented output; replaces dotted-quad spans when the run is
/// pseudonymized so no raw address leaks to standard output.
struct Console<'a> {
    out: &'a mut dyn Write,
    scrub: bool,
}

impl Console<'_> {
    fn line(&mut self, text: &str) {
        if self.scrub && report::contains_dotted_quad(text) {
            let _ = writeln!(self.out, "{}", report::scrub_dotted_quads(text, "[addr]"));
        } else {
            let _ = writeln!(self.out, "{text}");
        }
    }
}

/// `<store>.lock`, created exclusively, removed on drop. A leftover
/// file from a crashed run must be removed by hand.
struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    fn acquire(path: &Path) -> Result<Self, CliError> {
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(StoreLock {
                    path: path.to_path_buf(),
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                EXIT_LOCKED,
                format!(
                    "store is locked by another process ({} exists; remove it if that run crashed)",
                    path.display()
                ),
            )),
            Err(e) => Err(CliError::new(
                EXIT_STORE,
                format!("cannot create lock {}: {e}", path.display()),
            )),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn file_digest(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
        Err(_) => "unreadable".to_string(),
    }
}

/// One provenance line per run: timestamp, subcommand, input digests.
fn append_run_log(config: &PipelineConfig, subcommand: &str, inputs: &[&Path]) {
    let timestamp = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    let digests = if inputs.is_empty() {
        "-".to_string()
    } else {
        inputs
            .iter()
            .map(|p| format!("{}={}", p.display(), file_digest(p)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let path = config.run_log_path();
    let _ = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(&path)
        .and_then(|mut f| writeln!(f, "{timestamp}\t{subcommand}\t{digests}"));
}

pub fn run() -> i32 {
    let mut out = std::io::stdout();
    run_from(std::env::args_os(), &mut out)
}

/// Testable entrypoint: parse `args`, execute, write human output to
/// `out`, return the exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let scrub = config.pseudonymize && !matches!(cli.command, Command::MockTracker { .. });
    let mut console = Console { out, scrub };
    match dispatch(&cli.command, &config, &mut console) {
        Ok(code) => code,
        Err(e) => {
            console.line(&format!("error: {}", e.message));
            e.code
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, crate::config::ConfigError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let default_path = Path::new("swarmtrace.toml");
            if default_path.exists() {
                PipelineConfig::load(default_path)?
            } else {
                PipelineConfig::default()
            }
        }
    };
    if let Some(store) = &cli.store {
        config.store_path = store.clone();
    }
    config.validate("config")?;
    Ok(config)
}

fn dispatch(
    command: &Command,
    config: &PipelineConfig,
    console: &mut Console,
) -> Result<i32, CliError> {
    match command {
        Command::Ingest { file } => {
            let _lock = StoreLock::acquire(&config.lock_path())?;
            append_run_log(config, "ingest", &[file]);
            let mut store = Store::load_or_new(&config.store_path)?;
            let report = store.ingest_torrents(file)?;
            store.save(&config.store_path)?;
            console.line(&format!(
                "ingest: {} inserted, {} updated, {} unchanged, {} rejected",
                report.inserted, report.updated, report.unchanged, report.rejected
            ));
            for (line, reason) in &report.rejections {
                console.line(&format!("warning: line {line}: {reason}"));
            }
            Ok(EXIT_OK)
        }
        Command::Harvest {
            trackers,
            num_want,
            retry_scale,
        } => {
            let _lock = StoreLock::acquire(&config.lock_path())?;
            append_run_log(config, "harvest", &[]);
            let mut store = Store::load_or_new(&config.store_path)?;
            run_harvest(&mut store, config, console, trackers, *num_want, *retry_scale)?;
            store.save(&config.store_path)?;
            Ok(EXIT_OK)
        }
        Command::Enrich { provider_file, all } => {
            let _lock = StoreLock::acquire(&config.lock_path())?;
            let inputs: Vec<&Path> = provider_file
                .as_deref()
                .or(config.offline_provider_path.as_deref())
                .into_iter()
                .collect();
            append_run_log(config, "enrich", &inputs);
            let mut store = Store::load_or_new(&config.store_path)?;
            run_enrich(&mut store, config, console, provider_file.as_deref(), *all)?;
            store.save(&config.store_path)?;
            Ok(EXIT_OK)
        }
        Command::Flag { lists, label } => {
            let _lock = StoreLock::acquire(&config.lock_path())?;
            let mut inputs: Vec<&Path> = config.flag_list_paths.iter().map(|p| p.as_path()).collect();
            inputs.extend(lists.iter().map(|p| p.as_path()));
            append_run_log(config, "flag", &inputs);
            let mut store = Store::load_or_new(&config.store_path)?;
            let mut flag_lists = Vec::new();
            for path in &config.flag_list_paths {
                flag_lists.push(FlagList::load(path)?);
            }
            for path in lists {
                let mut list = FlagList::load(path)?;
                if let Some(label) = label {
                    list.label = label.clone();
                }
                flag_lists.push(list);
            }
            if flag_lists.is_empty() {
                return Err(CliError::new(
                    EXIT_USAGE,
                    "no flag lists given; pass files or set flag_list_paths".to_string(),
                ));
            }
            let summary = store.apply_flags(&flag_lists);
            store.save(&config.store_path)?;
            for (label, count) in &summary.per_label {
                console.line(&format!(
                    "flag {label}: {count} address(es), {:.2}% of {}",
                    summary.rate_percent(label),
                    summary.total_profiles
                ));
            }
            Ok(EXIT_OK)
        }
        Command::Normalize => {
            let _lock = StoreLock::acquire(&config.lock_path())?;
            append_run_log(config, "normalize", &[]);
            let mut store = Store::load_or_new(&config.store_path)?;
            let cities = match &config.city_table_path {
                Some(path) => CityTable::load(path)?,
                None => CityTable::seeded(),
            };
            let rules = match &config.interest_rules_path {
                Some(path) => InterestRules::load(path)?,
                None => InterestRules::seeded(),
            };
            let report = store.normalize(&cities, &PrivacyMatcher::default());
            let assigned = store.assign_interest_categories(&rules);
            store.save(&config.store_path)?;
            console.line(&format!(
                "normalize: {} field change(s), {assigned} interest categor(y/ies) assigned",
                report.changes.len()
            ));
            for change in &report.changes {
                console.line(&format!(
                    "  {} {}: {:?} -> {:?}",
                    change.ip, change.field, change.before, change.after
                ));
            }
            Ok(EXIT_OK)
        }
        Command::Analyze {
            min_links,
            top_fraction,
            uploader,
            category,
            flag_label,
        } => {
            append_run_log(config, "analyze", &[]);
            let store = Store::load_or_new(&config.store_path)?;
            run_analyze(
                &store,
                config,
                console,
                *min_links,
                *top_fraction,
                uploader.clone(),
                category.clone(),
                flag_label.clone(),
            )
        }
        Command::Report {
            out,
            min_links,
            top_fraction,
            uploader,
        } => {
            append_run_log(config, "report", &[]);
            let store = Store::load_or_new(&config.store_path)?;
            let params = report_params(config, *min_links, *top_fraction, uploader.clone())?;
            let manifest = report::render_report(&store, &params, out)?;
            console.line(&format!(
                "report: {} file(s) written to {}",
                manifest.files.len(),
                out.display()
            ));
            for (artifact, reason) in &manifest.omissions {
                console.line(&format!("note: {artifact} omitted: {reason}"));
            }
            for note in &manifest.notes {
                console.line(&format!("note: {note}"));
            }
            Ok(EXIT_OK)
        }
        Command::Audit { bundle } => {
            append_run_log(config, "audit", &[]);
            let store = Store::load_or_new(&config.store_path)?;
            let integrity = store.audit();
            console.line(&format!(
                "audit: {} torrents, {} addresses, {} links",
                integrity.torrents, integrity.ips, integrity.links
            ));
            let mut failures = integrity.problems.clone();
            if let Some(dir) = bundle {
                match params_from_manifest(dir) {
                    None => failures.push(format!(
                        "{}: manifest.json missing or unreadable",
                        dir.display()
                    )),
                    Some(params) => failures.extend(report::self_audit(&store, &params, dir)),
                }
            }
            if failures.is_empty() {
                console.line("audit: clean");
                Ok(EXIT_OK)
            } else {
                for failure in &failures {
                    console.line(&format!("problem: {failure}"));
                }
                Err(CliError::new(
                    EXIT_AUDIT,
                    format!("audit found {} problem(s)", failures.len()),
                ))
            }
        }
        Command::Query { kind, param } => {
            append_run_log(config, "query", &[]);
            let store = Store::load_or_new(&config.store_path)?;
            let rows = store.query(kind, param)?;
            let rows = if config.pseudonymize {
                let pseudo = Pseudonymizer::build(&store, true, config.coord_decimals);
                rows.into_iter().map(|row| relabel_row(row, &pseudo)).collect()
            } else {
                rows
            };
            for row in rows {
                console.line(&row);
            }
            Ok(EXIT_OK)
        }
        Command::Export { dir } => {
            append_run_log(config, "export", &[]);
            let store = Store::load_or_new(&config.store_path)?;
            store.export_tables(dir)?;
            console.line(&format!("export: three tables written to {}", dir.display()));
            Ok(EXIT_OK)
        }
        Command::MockTracker {
            fixtures,
            bind,
            drop_first,
            duration_secs,
        } => {
            append_run_log(config, "mock-tracker", &[fixtures]);
            let swarms = load_fixtures(fixtures)
                .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
            let faults = FaultProfile {
                drop_first_n: *drop_first as usize,
                ..FaultProfile::default()
            };
            let tracker = MockTracker::serve(swarms, faults, bind)
                .map_err(|e| CliError::new(EXIT_NETWORK, e.to_string()))?;
            console.line(&format!("listening on {}", tracker.endpoint()));
            let _ = console.out.flush();
            match duration_secs {
                Some(secs) => {
                    std::thread::sleep(Duration::from_secs_f64(*secs));
                    let stats = tracker.shutdown();
                    for (action, count) in &stats.requests_by_action {
                        let name = match action {
                            0 => "connect",
                            1 => "announce",
                            2 => "scrape",
                            _ => "other",
                        };
                        console.line(&format!("served {name}: {count}"));
                    }
                    console.line(&format!(
                        "dropped: {}, errors sent: {}, malformed: {}",
                        stats.dropped, stats.errors_sent, stats.malformed
                    ));
                    Ok(EXIT_OK)
                }
                None => loop {
                    std::thread::sleep(Duration::from_secs(3600));
                },
            }
        }
    }
}

/// Swap a leading dotted-quad field for its pseudonym.
fn relabel_row(row: String, pseudo: &Pseudonymizer) -> String {
    let (first, rest) = match row.split_once('\t') {
        Some((first, rest)) => (first, Some(rest)),
        None => (row.as_str(), None),
    };
    match first.parse::<Ipv4Addr>() {
        Ok(ip) => match rest {
            Some(rest) => format!("{}\t{rest}", pseudo.label(ip)),
            None => pseudo.label(ip),
        },
        Err(_) => row,
    }
}

fn run_harvest(
    store: &mut Store,
    config: &PipelineConfig,
    console: &mut Console,
    extra_trackers: &[String],
    num_want: Option<u32>,
    retry_scale: Option<f64>,
) -> Result<(), CliError> {
    let mut magnets = Vec::new();
    let mut extras: Vec<String> = config.extra_trackers.clone();
    extras.extend(extra_trackers.iter().cloned());
    for torrent in store.torrents() {
        if torrent.magnet.is_empty() {
            continue;
        }
        match parse_magnet(&torrent.magnet) {
            Ok(mut magnet) => {
                for extra in &extras {
                    magnet.trackers.push(format!("udp://{extra}"));
                }
                magnets.push(magnet);
            }
            Err(e) => {
                console.line(&format!("warning: magnet for {}: {e}", torrent.info_hash));
            }
        }
    }
    if magnets.is_empty() {
        console.line("harvest: no magnets in store, nothing to do");
        return Ok(());
    }
    let policy = RetryPolicy {
        base: Duration::from_secs_f64(config.retry_base_secs),
        max_n: config.retry_max_n,
        scale: retry_scale.unwrap_or(config.retry_scale),
    };
    let client = TrackerClient::new(policy);
    let schedule = HarvestSchedule {
        concurrency: config.harvest_concurrency,
        per_tracker_interval: Duration::from_millis(config.per_tracker_interval_ms),
    };
    let params = AnnounceParams {
        num_want: num_want.unwrap_or(config.num_want),
        ..AnnounceParams::default()
    };
    let outcome = client.harvest_swarms_with(&magnets, &schedule, &params);
    let observed = store.record_observations(&outcome.observations);
    console.line(&format!(
        "harvest: {}/{} announce(s) succeeded, {} observation(s), {} new link(s), {} new address(es)",
        outcome.report.succeeded_pairs,
        outcome.report.attempted_pairs,
        observed.observations_added,
        observed.new_links,
        observed.new_ips
    ));
    if observed.duplicates_ignored > 0 {
        console.line(&format!(
            "harvest: {} duplicate sighting(s) ignored",
            observed.duplicates_ignored
        ));
    }
    for hash in &outcome.report.skipped_magnets {
        console.line(&format!("warning: {hash}: no udp tracker listed"));
    }
    for (endpoint, errors) in &outcome.report.failures {
        console.line(&format!(
            "warning: {endpoint}: {} failure(s), first: {}",
            errors.len(),
            errors.first().map(String::as_str).unwrap_or("")
        ));
    }
    if outcome.report.attempted_pairs > 0 && outcome.report.succeeded_pairs == 0 {
        return Err(CliError::new(
            EXIT_NETWORK,
            "every announce failed; see warnings above".to_string(),
        ));
    }
    Ok(())
}

fn run_enrich(
    store: &mut Store,
    config: &PipelineConfig,
    console: &mut Console,
    provider_file: Option<&Path>,
    all: bool,
) -> Result<(), CliError> {
    let mut providers: Vec<Box<dyn Provider>> = Vec::new();
    let offline = provider_file.or(config.offline_provider_path.as_deref());
    if let Some(path) = offline {
        providers.push(Box::new(OfflineFileProvider::load(path)?));
    }
    if let Some(url) = &config.http_provider_url {
        providers.push(Box::new(HttpJsonProvider::new(
            "http",
            url,
            HttpFieldMap::default(),
            config.api_key(),
            "key",
            config.http_provider_interval(),
        )?));
    }
    if providers.is_empty() {
        return Err(CliError::new(
            EXIT_USAGE,
            "no provider configured; set offline_provider_path or http_provider_url".to_string(),
        ));
    }
    let targets: Vec<Ipv4Addr> = if all {
        store.ips().map(|p| p.ip).collect()
    } else {
        store.unenriched_ips()
    };
    let (profiles, summary) = enrichment::enrich_all(&targets, &providers, &PrivacyMatcher::default());
    store.apply_profiles(&profiles);
    console.line(&format!(
        "enrich: {} looked up, {} with no answer from any provider",
        summary.looked_up, summary.all_failed
    ));
    for (provider, count) in &summary.provider_failures {
        console.line(&format!("warning: provider {provider}: {count} failure(s)"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_analyze(
    store: &Store,
    config: &PipelineConfig,
    console: &mut Console,
    min_links: Option<usize>,
    top_fraction: Option<f64>,
    uploader: Option<String>,
    category: Option<String>,
    flag_label: Option<String>,
) -> Result<i32, CliError> {
    let min_links = min_links.unwrap_or(config.min_links);
    let fraction = top_fraction.unwrap_or(config.top_fraction);
    if min_links == 0 {
        return Err(CliError::new(EXIT_USAGE, "--min-links must be at least 1".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("--top-fraction {fraction} is outside (0, 1]"),
        ));
    }
    let filter = NodeFilter {
        min_links: Some(min_links),
        uploader: uploader.or_else(|| config.uploader.clone()),
        categories: category.map(|c| BTreeSet::from([c])),
        flag_label,
        ..NodeFilter::default()
    };
    let bipartite = graph::build_bipartite(store, &filter)?;
    let projected = graph::project(&bipartite, ProjectionSide::Ip);
    let filtered = graph::filter_top_fraction(&projected, fraction);
    console.line(&format!(
        "parameters: min_links={min_links} top_fraction={fraction}"
    ));
    console.line(&format!(
        "bipartite: {} address(es), {} torrent(s), {} link(s)",
        bipartite.ip_nodes.len(),
        bipartite.torrent_nodes.len(),
        bipartite.edge_count()
    ));
    console.line(&format!(
        "projection: {} node(s), {} edge(s)",
        projected.node_count(),
        projected.edge_count()
    ));
    console.line(&format!(
        "after top fraction: {} node(s), {} edge(s)",
        filtered.node_count(),
        filtered.edge_count()
    ));
    let pseudo = Pseudonymizer::build(store, config.pseudonymize, config.coord_decimals);
    let node_label = |node: graph::NodeId| match node {
        graph::NodeId::Ip(ip) => pseudo.label(ip),
        graph::NodeId::Torrent(hash) => store
            .torrent(&hash)
            .map(|t| t.title.clone())
            .unwrap_or_else(|| hash.to_string()),
    };
    console.line("top pairs:");
    for (i, (a, b, weight)) in graph::top_pairs(&projected, config.top_k).into_iter().enumerate() {
        console.line(&format!(
            "  {}. {} -- {} (weight {weight})",
            i + 1,
            node_label(a),
            node_label(b)
        ));
    }
    console.line("centrality:");
    for (i, row) in graph::betweenness(&filtered)
        .into_iter()
        .take(config.top_k)
        .enumerate()
    {
        console.line(&format!(
            "  {}. {} betweenness {:.3} degree {}",
            i + 1,
            node_label(row.node),
            row.betweenness,
            row.degree
        ));
    }
    Ok(EXIT_OK)
}

fn report_params(
    config: &PipelineConfig,
    min_links: Option<usize>,
    top_fraction: Option<f64>,
    uploader: Option<String>,
) -> Result<ReportParams, CliError> {
    let min_links = min_links.unwrap_or(config.min_links);
    let fraction = top_fraction.unwrap_or(config.top_fraction);
    if min_links == 0 {
        return Err(CliError::new(EXIT_USAGE, "--min-links must be at least 1".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("--top-fraction {fraction} is outside (0, 1]"),
        ));
    }
    Ok(ReportParams {
        flag_labels: Vec::new(),
        min_links,
        top_fraction: fraction,
        top_k: config.top_k,
        uploader: uploader.or_else(|| config.uploader.clone()),
        pseudonymize: config.pseudonymize,
        coord_decimals: config.coord_decimals,
    })
}

/// Rebuild the exact parameters a bundle was rendered with from its
/// manifest, so audit re-derives like for like.
fn params_from_manifest(dir: &Path) -> Option<ReportParams> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    let p = &value["parameters"];
    Some(ReportParams {
        flag_labels: p["flag_labels"]
            .as_array()?
            .iter()
            .filter_map(|v| v.as_str().map(String::from))
            .collect(),
        min_links: p["min_links"].as_u64()? as usize,
        top_fraction: p["top_fraction"].as_f64()?,
        top_k: p["top_k"].as_u64()? as usize,
        uploader: p["uploader"].as_str().map(String::from),
        pseudonymize: p["pseudonymize"].as_bool()?,
        coord_decimals: p["coord_decimals"].as_u64()? as usize,
    })
}
