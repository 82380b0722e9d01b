//! IP enrichment: geolocation/ownership lookup through pluggable
//! providers, the privacy-network keyword heuristic, and flag-list
//! cross-referencing.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Everything known about one address. Empty strings and `None` mean
/// the sources had no value; nothing is ever fabricated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpProfile {
    pub ip: Ipv4Addr,
    pub city: String,
    pub region: String,
    pub country: String,
    /// Stored lowercase.
    pub isp: String,
    /// Stored lowercase.
    pub org: String,
    pub as_number: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub hostname: String,
    /// VPN, proxy, Tor, or hosting exit: provider-reported or keyword
    /// heuristic, OR-ed.
    pub privacy: bool,
    pub flags: BTreeSet<String>,
    /// Provider-reported only; the store drops this column during
    /// normalization but it stays visible for raw-response audits.
    pub anycast: Option<bool>,
}

impl IpProfile {
    pub fn new(ip: Ipv4Addr) -> Self {
        IpProfile {
            ip,
            city: String::new(),
            region: String::new(),
            country: String::new(),
            isp: String::new(),
            org: String::new(),
            as_number: String::new(),
            latitude: None,
            longitude: None,
            hostname: String::new(),
            privacy: false,
            flags: BTreeSet::new(),
            anycast: None,
        }
    }

    pub fn coordinates(&self) -> Option<(f64, f64)> {
        Some((self.latitude?, self.longitude?))
    }

    /// Merge `incoming` into `self`: existing non-empty fields win,
    /// blanks are filled, `privacy` is OR-ed, flags union. Merging the
    /// same data twice changes nothing.
    pub fn absorb(&mut self, incoming: &IpProfile) {
        fill(&mut self.city, &incoming.city);
        fill(&mut self.region, &incoming.region);
        fill(&mut self.country, &incoming.country);
        fill(&mut self.isp, &incoming.isp);
        fill(&mut self.org, &incoming.org);
        fill(&mut self.as_number, &incoming.as_number);
        fill(&mut self.hostname, &incoming.hostname);
        // coordinates travel as a pair, never mixed across sources
        if self.latitude.is_none() && self.longitude.is_none() {
            self.latitude = incoming.latitude;
            self.longitude = incoming.longitude;
        }
        self.privacy |= incoming.privacy;
        self.flags.extend(incoming.flags.iter().cloned());
        if self.anycast.is_none() {
            self.anycast = incoming.anycast;
        }
    }
}

fn fill(slot: &mut String, candidate: &str) {
    if slot.is_empty() && !candidate.is_empty() {
        *slot = candidate.to_string();
    }
}

fn coord_ok(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error("lookup source {source_name}: {message}")]
    Source { source_name: String, message: String },
    #[error("lookup table {path}: {message}")]
    Table { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A source of per-IP metadata. Implementations must be callable from
/// multiple threads; any request pacing lives inside the provider and
/// is shared across its callers.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    /// `Ok(None)` means the source has no record for this address.
    fn lookup(&self, ip: Ipv4Addr) -> Result<Option<IpProfile>, EnrichError>;
}

/// Per-batch outcome counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrichSummary {
    pub looked_up: usize,
    /// Addresses for which every configured provider errored; their
    /// profiles carry only the ip field.
    pub all_failed: usize,
    /// Error tally per provider name.
    pub provider_failures: BTreeMap<String, u64>,
}

/// Look up every address against the providers in order and merge the
/// answers per field: the first source supplying a value wins, later
/// sources fill blanks only, privacy is OR-ed across sources and the
/// keyword heuristic. Provider failures degrade to partial profiles.
pub fn enrich_all(
    ips: &[Ipv4Addr],
    providers: &[Box<dyn Provider>],
    matcher: &PrivacyMatcher,
) -> (Vec<IpProfile>, EnrichSummary) {
    let mut summary = EnrichSummary {
        looked_up: ips.len(),
        ..EnrichSummary::default()
    };
    let mut out = Vec::with_capacity(ips.len());
    for &ip in ips {
        let mut profile = IpProfile::new(ip);
        let mut answered = false;
        let mut errored = 0usize;
        for provider in providers {
            match provider.lookup(ip) {
                Ok(Some(found)) => {
                    profile.absorb(&sanitize(found));
                    answered = true;
                }
                Ok(None) => {}
                Err(_) => {
                    errored += 1;
                    *summary
                        .provider_failures
                        .entry(provider.name().to_string())
                        .or_insert(0) += 1;
                }
            }
        }
        if !answered && errored == providers.len() && !providers.is_empty() {
            summary.all_failed += 1;
        }
        profile.privacy |=
            matcher.is_privacy(&profile.isp, &profile.org, &profile.as_number);
        out.push(profile);
    }
    (out, summary)
}

/// Lowercase the ownership fields and discard out-of-range coordinates
/// before a provider answer enters a merge.
fn sanitize(mut p: IpProfile) -> IpProfile {
    p.isp = p.isp.trim().to_lowercase();
    p.org = p.org.trim().to_lowercase();
    if let (Some(lat), Some(lon)) = (p.latitude, p.longitude) {
        if !coord_ok(lat, lon) {
            p.latitude = None;
            p.longitude = None;
        }
    } else {
        // half a coordinate is useless
        p.latitude = None;
        p.longitude = None;
    }
    p
}

/// Keywords whose presence in ISP, organization, or AS names marks the
/// address as probable VPN, proxy, or hosting infrastructure.
pub const DEFAULT_PRIVACY_KEYWORDS: &[&str] = &[
    "cloud",
    "host",
    "data centre",
    "data center",
    "private internet",
    "private network",
    "proxy",
    "tor",
    "vpn",
];

/// All keywords match as case-insensitive substrings ("host" matches
/// "hosting") except `tor`, which must stand alone as a word so that
/// "operator" and "Toronto" stay clean.
#[derive(Debug, Clone)]
pub struct PrivacyMatcher {
    substrings: Vec<String>,
    whole_words: Vec<String>,
}

impl Default for PrivacyMatcher {
    fn default() -> Self {
        Self::new(DEFAULT_PRIVACY_KEYWORDS.iter().map(|s| s.to_string()))
    }
}

impl PrivacyMatcher {
    pub fn new(keywords: impl IntoIterator<Item = String>) -> Self {
        let mut substrings = Vec::new();
        let mut whole_words = Vec::new();
        for kw in keywords {
            let kw = kw.to_lowercase();
            if kw.is_empty() {
                continue;
            }
            if kw == "tor" {
                whole_words.push(kw);
            } else {
                substrings.push(kw);
            }
        }
        PrivacyMatcher {
            substrings,
            whole_words,
        }
    }

    pub fn with_extra(mut self, keywords: impl IntoIterator<Item = String>) -> Self {
        let extra = PrivacyMatcher::new(keywords);
        self.substrings.extend(extra.substrings);
        self.whole_words.extend(extra.whole_words);
        self
    }

    /// True when any of the three ownership fields carries a keyword.
    pub fn is_privacy(&self, isp: &str, org: &str, as_field: &str) -> bool {
        self.matches(isp) || self.matches(org) || self.matches(as_field)
    }

    fn matches(&self, name: &str) -> bool {
        let lower = name.to_lowercase();
        if self.substrings.iter().any(|kw| lower.contains(kw.as_str())) {
            return true;
        }
        self.whole_words.iter().any(|kw| contains_word(&lower, kw))
    }
}

/// Default-keyword check over the three ownership fields.
pub fn privacy_heuristic(isp: &str, org: &str, as_field: &str) -> bool {
    PrivacyMatcher::default().is_privacy(isp, org, as_field)
}

fn contains_word(haystack: &str, word: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(word) {
        let abs = start + pos;
        let before_ok = abs == 0
            || !haystack[..abs]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric());
        let after = abs + word.len();
        let after_ok = after >= haystack.len()
            || !haystack[after..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        start = abs + 1;
        if start >= haystack.len() {
            break;
        }
    }
    false
}

/// Structured-text provider for hermetic runs. Columns, with header:
/// `ip,city,region,country,isp,org,as_number,latitude,longitude,hostname,privacy,anycast`
pub struct OfflineFileProvider {
    name: String,
    table: BTreeMap<Ipv4Addr, IpProfile>,
}

pub const OFFLINE_PROVIDER_HEADER: &str =
    "ip,city,region,country,isp,org,as_number,latitude,longitude,hostname,privacy,anycast";

impl OfflineFileProvider {
    pub fn load(path: &Path) -> Result<Self, EnrichError> {
        let table_err = |message: String| EnrichError::Table {
            path: path.display().to_string(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
        let mut table = BTreeMap::new();
        for row in reader.records() {
            let row = row.map_err(|e| table_err(e.to_string()))?;
            if row.len() < 12 {
                return Err(table_err(format!(
                    "expected 12 columns, got {}",
                    row.len()
                )));
            }
            let ip: Ipv4Addr = row[0]
                .trim()
                .parse()
                .map_err(|_| table_err(format!("bad ip {:?}", &row[0])))?;
            let parse_coord = |s: &str| -> Result<Option<f64>, EnrichError> {
                let s = s.trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| table_err(format!("bad coordinate {s:?} for {ip}")))
            };
            let truthy = |s: &str| matches!(s.trim(), "1" | "true" | "yes");
            let profile = IpProfile {
                ip,
                city: row[1].trim().to_string(),
                region: row[2].trim().to_string(),
                country: row[3].trim().to_string(),
                isp: row[4].trim().to_string(),
                org: row[5].trim().to_string(),
                as_number: row[6].trim().to_string(),
                latitude: parse_coord(&row[7])?,
                longitude: parse_coord(&row[8])?,
                hostname: row[9].trim().to_string(),
                privacy: truthy(&row[10]),
                flags: BTreeSet::new(),
                anycast: match row[11].trim() {
                    "" => None,
                    s => Some(truthy(s)),
                },
            };
            table.insert(ip, profile);
        }
        Ok(OfflineFileProvider {
            name: format!("file:{}", path.display()),
            table,
        })
    }

    pub fn from_profiles(name: &str, profiles: impl IntoIterator<Item = IpProfile>) -> Self {
        OfflineFileProvider {
            name: name.to_string(),
            table: profiles.into_iter().map(|p| (p.ip, p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Provider for OfflineFileProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn lookup(&self, ip: Ipv4Addr) -> Result<Option<IpProfile>, EnrichError> {
        Ok(self.table.get(&ip).cloned())
    }
}

/// JSON-over-HTTP provider. `{ip}` in the URL template is replaced per
/// request; response fields are picked by the names configured here,
/// empty name = mapping disabled. The API key, if any, is appended as a
/// query parameter and should come from an environment variable.
pub struct HttpJsonProvider {
    name: String,
    url_template: String,
    fields: HttpFieldMap,
    api_key: Option<String>,
    api_key_param: String,
    client: reqwest::blocking::Client,
    limiter: Mutex<Instant>,
    min_interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpFieldMap {
    pub city: String,
    pub region: String,
    pub country: String,
    pub isp: String,
    pub org: String,
    pub as_number: String,
    pub latitude: String,
    pub longitude: String,
    pub hostname: String,
    pub privacy: String,
    pub anycast: String,
}

impl Default for HttpFieldMap {
    fn default() -> Self {
        HttpFieldMap {
            city: "city".into(),
            region: "regionName".into(),
            country: "country".into(),
            isp: "isp".into(),
            org: "org".into(),
            as_number: "as".into(),
            latitude: "lat".into(),
            longitude: "lon".into(),
            hostname: "reverse".into(),
            privacy: "proxy".into(),
            anycast: "anycast".into(),
        }
    }
}

impl HttpJsonProvider {
    pub fn new(
        name: &str,
        url_template: &str,
        fields: HttpFieldMap,
        api_key: Option<String>,
        api_key_param: &str,
        min_interval: Duration,
    ) -> Result<Self, EnrichError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| EnrichError::Source {
                source_name: name.to_string(),
                message: e.to_string(),
            })?;
        Ok(HttpJsonProvider {
            name: name.to_string(),
            url_template: url_template.to_string(),
            fields,
            api_key,
            api_key_param: api_key_param.to_string(),
            client,
            limiter: Mutex::new(Instant::now() - min_interval),
            min_interval,
        })
    }

    /// Requests from all threads through this provider keep at least
    /// `min_interval` apart.
    fn pace(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wake = {
            let mut last = self.limiter.lock().unwrap();
            let now = Instant::now();
            *last = (*last + self.min_interval).max(now);
            *last
        };
        let now = Instant::now();
        if wake > now {
            std::thread::sleep(wake - now);
        }
    }

    fn get_str(value: &serde_json::Value, field: &str) -> String {
        if field.is_empty() {
            return String::new();
        }
        match value.get(field) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => String::new(),
        }
    }

    fn get_f64(value: &serde_json::Value, field: &str) -> Option<f64> {
        if field.is_empty() {
            return None;
        }
        value.get(field)?.as_f64()
    }

    fn get_bool(value: &serde_json::Value, field: &str) -> Option<bool> {
        if field.is_empty() {
            return None;
        }
        value.get(field)?.as_bool()
    }
}

impl Provider for HttpJsonProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn lookup(&self, ip: Ipv4Addr) -> Result<Option<IpProfile>, EnrichError> {
        self.pace();
        let mut url = self.url_template.replace("{ip}", &ip.to_string());
        if let Some(key) = &self.api_key {
            let sep = if url.contains('?') { '&' } else { '?' };
            url.push(sep);
            url.push_str(&self.api_key_param);
            url.push('=');
            url.push_str(key);
        }
        let source_err = |message: String| EnrichError::Source {
            source_name: self.name.clone(),
            message,
        };
        let response = self
            .client
            .get(&url)
            .send()
            .map_err(|e| source_err(e.to_string()))?;
        if response.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        if !response.status().is_success() {
            return Err(source_err(format!("status {}", response.status())));
        }
        let value: serde_json::Value = response.json().map_err(|e| source_err(e.to_string()))?;
        Ok(Some(IpProfile {
            ip,
            city: Self::get_str(&value, &self.fields.city),
            region: Self::get_str(&value, &self.fields.region),
            country: Self::get_str(&value, &self.fields.country),
            isp: Self::get_str(&value, &self.fields.isp),
            org: Self::get_str(&value, &self.fields.org),
            as_number: Self::get_str(&value, &self.fields.as_number),
            latitude: Self::get_f64(&value, &self.fields.latitude),
            longitude: Self::get_f64(&value, &self.fields.longitude),
            hostname: Self::get_str(&value, &self.fields.hostname),
            privacy: Self::get_bool(&value, &self.fields.privacy).unwrap_or(false),
            flags: BTreeSet::new(),
            anycast: Self::get_bool(&value, &self.fields.anycast),
        }))
    }
}

/// One flag list: a label and the exact addresses it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlagList {
    pub label: String,
    pub members: BTreeSet<Ipv4Addr>,
}

impl FlagList {
    pub fn new(label: &str, members: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        FlagList {
            label: label.to_string(),
            members: members.into_iter().collect(),
        }
    }

    /// Text format: optional `# label: <name>` header, one dotted-quad
    /// per line, `#` comments and blank lines ignored. Without a header
    /// the file stem is the label.
    pub fn load(path: &Path) -> Result<Self, EnrichError> {
        let text = std::fs::read_to_string(path)?;
        let mut label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "flagged".to_string());
        let mut members = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(value) = rest.trim().strip_prefix("label:") {
                    label = value.trim().to_string();
                }
                continue;
            }
            let ip: Ipv4Addr = line.parse().map_err(|_| EnrichError::Table {
                path: path.display().to_string(),
                message: format!("line {}: bad address {line:?}", lineno + 1),
            })?;
            members.insert(ip);
        }
        Ok(FlagList { label, members })
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.members.contains(&ip)
    }
}

/// Per-label match counts and rates over the profile set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagSummary {
    pub total_profiles: usize,
    pub per_label: BTreeMap<String, usize>,
}

impl FlagSummary {
    /// Percentage of profiles carrying `label`, 0.0 for an empty set.
    pub fn rate_percent(&self, label: &str) -> f64 {
        if self.total_profiles == 0 {
            return 0.0;
        }
        let n = self.per_label.get(label).copied().unwrap_or(0);
        100.0 * n as f64 / self.total_profiles as f64
    }
}

/// Add every matching label to every profile. Never removes a flag;
/// applying the same lists again, in any order, changes nothing.
pub fn apply_flags(profiles: &mut [IpProfile], lists: &[FlagList]) -> FlagSummary {
    let mut summary = FlagSummary {
        total_profiles: profiles.len(),
        per_label: BTreeMap::new(),
    };
    for list in lists {
        summary.per_label.insert(list.label.clone(), 0);
    }
    for profile in profiles.iter_mut() {
        for list in lists {
            if list.contains(profile.ip) {
                profile.flags.insert(list.label.clone());
            }
        }
    }
    for profile in profiles.iter() {
        for label in &profile.flags {
            if let Some(count) = summary.per_label.get_mut(label) {
                *count += 1;
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn privacy_keywords_match_case_insensitive_substrings() {
        assert!(privacy_heuristic("DataCamp Limited Cloud Services", "", ""));
        assert!(privacy_heuristic("", "M247 HOSTING ltd", ""));
        assert!(privacy_heuristic("Private Internet Access", "", ""));
        assert!(privacy_heuristic("NordVPN exit", "", ""));
        assert!(privacy_heuristic("Acme Data Centre Ops", "", ""));
        assert!(privacy_heuristic("", "", "AS9009 M247 Cloud"));
        assert!(!privacy_heuristic("chinanet", "", ""));
        assert!(!privacy_heuristic("Comcast Cable", "Comcast", "AS7922"));
        assert!(!privacy_heuristic("Deutsche Telekom", "", ""));
    }

    #[test]
    fn tor_matches_whole_word_only() {
        assert!(privacy_heuristic("Tor exit relay", "", ""));
        assert!(privacy_heuristic("", "tor", ""));
        assert!(privacy_heuristic("foo-tor-bar", "", "")); // hyphen is a word break
        assert!(!privacy_heuristic("Toronto Internet Exchange", "", ""));
        assert!(!privacy_heuristic("network operator ltd", "", ""));
        assert!(!privacy_heuristic("Storage Networks Inc", "", ""));
        assert!(!privacy_heuristic("Vector Communications", "", ""));
    }

    #[test]
    fn extra_keywords_extend_and_never_shrink_the_match_set() {
        let base = PrivacyMatcher::default();
        let extended = PrivacyMatcher::default().with_extra(["relay".to_string()]);
        assert!(extended.is_privacy("Quantum Relay Networks", "", ""));
        assert!(!base.is_privacy("Quantum Relay Networks", "", ""));
        // monotone: everything the base catches, the extended set catches
        for name in ["NordVPN", "acme cloud", "tor", "host4u"] {
            if base.is_privacy(name, "", "") {
                assert!(extended.is_privacy(name, "", ""));
            }
        }
    }

    struct Fixed(IpProfile);
    impl Provider for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn lookup(&self, q: Ipv4Addr) -> Result<Option<IpProfile>, EnrichError> {
            Ok((q == self.0.ip).then(|| self.0.clone()))
        }
    }

    struct Failing;
    impl Provider for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn lookup(&self, _q: Ipv4Addr) -> Result<Option<IpProfile>, EnrichError> {
            Err(EnrichError::Source {
                source_name: "failing".into(),
                message: "boom".into(),
            })
        }
    }

    #[test]
    fn merge_first_source_wins_and_blanks_fill() {
        let target = ip("1.2.3.4");
        let first = IpProfile {
            country: "Portugal".into(),
            isp: "MEO".into(),
            ..IpProfile::new(target)
        };
        let second = IpProfile {
            country: "Spain".into(), // loses: first already set it
            city: "Lisbon".into(),   // fills the blank
            latitude: Some(38.72),
            longitude: Some(-9.14),
            privacy: true,
            ..IpProfile::new(target)
        };
        let providers: Vec<Box<dyn Provider>> =
            vec![Box::new(Fixed(first)), Box::new(Fixed(second))];
        let (profiles, summary) = enrich_all(&[target], &providers, &PrivacyMatcher::default());
        let merged = &profiles[0];
        assert_eq!(merged.country, "Portugal");
        assert_eq!(merged.city, "Lisbon");
        assert_eq!(merged.isp, "meo"); // lowercased on the way in
        assert_eq!(merged.coordinates(), Some((38.72, -9.14)));
        assert!(merged.privacy);
        assert_eq!(summary.all_failed, 0);
    }

    #[test]
    fn heuristic_overrides_provider_privacy_false() {
        let target = ip("5.6.7.8");
        let answer = IpProfile {
            isp: "acme cloud hosting".into(),
            privacy: false,
            ..IpProfile::new(target)
        };
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(Fixed(answer))];
        let (profiles, _) = enrich_all(&[target], &providers, &PrivacyMatcher::default());
        assert!(profiles[0].privacy);
    }

    #[test]
    fn total_failure_still_emits_bare_profile_and_counts() {
        let target = ip("9.9.9.9");
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(Failing), Box::new(Failing)];
        let (profiles, summary) = enrich_all(&[target], &providers, &PrivacyMatcher::default());
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].ip, target);
        assert!(profiles[0].country.is_empty());
        assert_eq!(summary.all_failed, 1);
        assert_eq!(summary.provider_failures.get("failing"), Some(&2));
    }

    #[test]
    fn partial_failure_degrades_to_partial_profile() {
        let target = ip("4.4.4.4");
        let good = IpProfile {
            country: "Germany".into(),
            ..IpProfile::new(target)
        };
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(Failing), Box::new(Fixed(good))];
        let (profiles, summary) = enrich_all(&[target], &providers, &PrivacyMatcher::default());
        assert_eq!(profiles[0].country, "Germany");
        assert_eq!(summary.all_failed, 0);
        assert_eq!(summary.provider_failures.get("failing"), Some(&1));
    }

    #[test]
    fn enrich_is_idempotent_over_reruns() {
        let target = ip("1.2.3.4");
        let answer = IpProfile {
            country: "Portugal".into(),
            city: "Porto".into(),
            isp: "meo".into(),
            latitude: Some(41.15),
            longitude: Some(-8.61),
            ..IpProfile::new(target)
        };
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(Fixed(answer))];
        let matcher = PrivacyMatcher::default();
        let (first, _) = enrich_all(&[target], &providers, &matcher);
        let mut again = first[0].clone();
        again.absorb(&first[0]);
        assert_eq!(again, first[0]);
    }

    #[test]
    fn out_of_range_coordinates_are_discarded() {
        let target = ip("8.8.4.4");
        let answer = IpProfile {
            latitude: Some(191.0),
            longitude: Some(12.0),
            ..IpProfile::new(target)
        };
        let providers: Vec<Box<dyn Provider>> = vec![Box::new(Fixed(answer))];
        let (profiles, _) = enrich_all(&[target], &providers, &PrivacyMatcher::default());
        assert_eq!(profiles[0].coordinates(), None);
    }

    #[test]
    fn offline_provider_round_trips_structured_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("geo.csv");
        std::fs::write(
            &path,
            format!(
                "{OFFLINE_PROVIDER_HEADER}\n\
                 41.59.200.10,dar es salaam,Dar es Salaam Region,Tanzania,TTCL,,AS33765,-6.8,39.28,,0,0\n\
                 104.16.0.5,,,United States,Cloudflare,Cloudflare Inc,AS13335,,,cf.example.net,0,1\n"
            ),
        )
        .unwrap();
        let provider = OfflineFileProvider::load(&path).unwrap();
        assert_eq!(provider.len(), 2);
        let hit = provider.lookup(ip("41.59.200.10")).unwrap().unwrap();
        assert_eq!(hit.country, "Tanzania");
        assert_eq!(hit.coordinates(), Some((-6.8, 39.28)));
        assert_eq!(hit.anycast, Some(false));
        let cf = provider.lookup(ip("104.16.0.5")).unwrap().unwrap();
        assert_eq!(cf.anycast, Some(true));
        assert_eq!(cf.hostname, "cf.example.net");
        assert!(cf.coordinates().is_none());
        assert!(provider.lookup(ip("9.9.9.9")).unwrap().is_none());
    }

    #[test]
    fn apply_flags_counts_rates_and_stays_order_independent() {
        let mut profiles: Vec<IpProfile> = (1..=1000u16)
            .map(|i| IpProfile::new(Ipv4Addr::new(10, (i >> 8) as u8, (i & 0xff) as u8, 1)))
            .collect();
        let flagged: Vec<Ipv4Addr> = profiles.iter().take(16).map(|p| p.ip).collect();
        let list_a = FlagList::new("watch", flagged.clone());
        let list_b = FlagList::new("other", flagged[..4].to_vec());

        let mut profiles_rev = profiles.clone();
        let summary = apply_flags(&mut profiles, &[list_a.clone(), list_b.clone()]);
        let summary_rev = apply_flags(&mut profiles_rev, &[list_b, list_a]);

        assert_eq!(summary.per_label.get("watch"), Some(&16));
        assert!((summary.rate_percent("watch") - 1.60).abs() < 1e-9);
        assert_eq!(summary.rate_percent("missing"), 0.0);
        assert_eq!(summary, summary_rev);
        assert_eq!(profiles, profiles_rev);

        // reapplying never removes or duplicates
        let again = apply_flags(&mut profiles, &[]);
        assert_eq!(again.per_label.len(), 0);
        assert_eq!(profiles[0].flags.len(), 2);
    }

    #[test]
    fn empty_flag_list_flags_nothing() {
        let mut profiles = vec![IpProfile::new(ip("10.0.0.1"))];
        let summary = apply_flags(&mut profiles, &[FlagList::new("empty", [])]);
        assert_eq!(summary.per_label.get("empty"), Some(&0));
        assert_eq!(summary.rate_percent("empty"), 0.0);
        assert!(profiles[0].flags.is_empty());
    }

    #[test]
    fn flag_list_parses_header_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("watch.txt");
        std::fs::write(
            &path,
            "# label: cem-watchlist\n# updated quarterly\n\n10.0.0.1\n10.0.0.2\n",
        )
        .unwrap();
        let list = FlagList::load(&path).unwrap();
        assert_eq!(list.label, "cem-watchlist");
        assert!(list.contains(ip("10.0.0.1")));
        assert_eq!(list.members.len(), 2);
    }

    #[test]
    fn flag_list_without_header_uses_file_stem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extremist.txt");
        std::fs::write(&path, "192.0.2.1\n").unwrap();
        let list = FlagList::load(&path).unwrap();
        assert_eq!(list.label, "extremist");
    }

    #[test]
    fn flag_list_rejects_garbage_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "10.0.0.1\nnot-an-ip\n").unwrap();
        let err = FlagList::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn http_provider_maps_fields_and_handles_missing() {
        let server = tiny_http_server(vec![(
            "/json/77.85.20.30".to_string(),
            r#"{"country":"Bulgaria","regionName":"Sofia-Capital","city":"Sofia","lat":42.7,"lon":23.32,"isp":"Vivacom","org":"BTC","as":"AS8866","reverse":"host.btc.bg","proxy":true}"#
                .to_string(),
        )]);
        let provider = HttpJsonProvider::new(
            "test-http",
            &format!("http://{}/json/{{ip}}", server.addr),
            HttpFieldMap::default(),
            None,
            "key",
            Duration::ZERO,
        )
        .unwrap();
        let hit = provider.lookup(ip("77.85.20.30")).unwrap().unwrap();
        assert_eq!(hit.country, "Bulgaria");
        assert_eq!(hit.city, "Sofia");
        assert_eq!(hit.as_number, "AS8866");
        assert_eq!(hit.hostname, "host.btc.bg");
        assert!(hit.privacy);
        assert_eq!(hit.coordinates(), Some((42.7, 23.32)));
        assert!(provider.lookup(ip("9.9.9.9")).unwrap().is_none());
        server.stop();
    }

    // Minimal single-thread HTTP responder; unknown paths get 404.
    struct TinyHttp {
        addr: std::net::SocketAddr,
        stop: std::sync::Arc<std::sync::atomic::AtomicBool>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl TinyHttp {
        fn stop(mut self) {
            self.stop.store(true, std::sync::atomic::Ordering::SeqCst);
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
    }

    fn tiny_http_server(routes: Vec<(String, String)>) -> TinyHttp {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));
        let stop2 = stop.clone();
        let handle = std::thread::spawn(move || {
            while !stop2.load(std::sync::atomic::Ordering::SeqCst) {
                match listener.accept() {
                    Ok((mut conn, _)) => {
                        conn.set_nonblocking(false).ok();
                        let mut buf = [0u8; 4096];
                        let n = conn.read(&mut buf).unwrap_or(0);
                        let req = String::from_utf8_lossy(&buf[..n]);
                        let path = req.split_whitespace().nth(1).unwrap_or("/").to_string();
                        let reply = routes.iter().find(|(p, _)| *p == path);
                        let (status, body) = match reply {
                            Some((_, body)) => ("200 OK", body.as_str()),
                            None => ("404 Not Found", "{}"),
                        };
                        let _ = write!(
                            conn,
                            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                            body.len()
                        );
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        TinyHttp {
            addr,
            stop,
            handle: Some(handle),
        }
    }
}
