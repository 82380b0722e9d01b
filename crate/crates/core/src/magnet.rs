//! Magnet URI parsing: info-hashes, display names and tracker lists.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// 20-byte SHA-1 identifier of a torrent's info dictionary.
///
/// Canonical text form is 40 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InfoHash([u8; 20]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MagnetError {
    #[error("uri is not parseable as a magnet link: {0}")]
    MalformedUri(String),
    #[error("no xt=urn:btih: component in magnet link")]
    MissingHash,
    #[error("malformed info hash {0:?}: expected 40 hex or 32 base32 characters")]
    MalformedHash(String),
}

impl InfoHash {
    pub fn new(bytes: [u8; 20]) -> Self {
        InfoHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Canonical form: 40 lowercase hex characters.
    pub fn canonical_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Accepts 40-char hex in either case.
    pub fn from_hex(s: &str) -> Result<Self, MagnetError> {
        if s.len() != 40 {
            return Err(MagnetError::MalformedHash(s.to_string()));
        }
        let bytes = hex::decode(s).map_err(|_| MagnetError::MalformedHash(s.to_string()))?;
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(InfoHash(out))
    }

    /// Accepts the 32-char RFC 4648 base32 form (no padding) in either case.
    pub fn from_base32(s: &str) -> Result<Self, MagnetError> {
        if s.len() != 32 {
            return Err(MagnetError::MalformedHash(s.to_string()));
        }
        let mut acc: u64 = 0;
        let mut bits = 0u32;
        let mut out = Vec::with_capacity(20);
        for c in s.chars() {
            let v = match c.to_ascii_uppercase() {
                'A'..='Z' => c.to_ascii_uppercase() as u64 - 'A' as u64,
                '2'..='7' => c as u64 - '2' as u64 + 26,
                _ => return Err(MagnetError::MalformedHash(s.to_string())),
            };
            acc = (acc << 5) | v;
            bits += 5;
            if bits >= 8 {
                bits -= 8;
                out.push((acc >> bits) as u8);
            }
        }
        let mut bytes = [0u8; 20];
        bytes.copy_from_slice(&out);
        Ok(InfoHash(bytes))
    }

    /// Hex or base32, decided by length.
    pub fn parse(s: &str) -> Result<Self, MagnetError> {
        match s.len() {
            40 => Self::from_hex(s),
            32 => Self::from_base32(s),
            _ => Err(MagnetError::MalformedHash(s.to_string())),
        }
    }
}

impl fmt::Display for InfoHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_hex())
    }
}

impl fmt::Debug for InfoHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InfoHash({})", self.canonical_hex())
    }
}

impl FromStr for InfoHash {
    type Err = MagnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl serde::Serialize for InfoHash {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical_hex())
    }
}

impl<'de> serde::Deserialize<'de> for InfoHash {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        InfoHash::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A parsed magnet link. Tracker URLs are kept verbatim and in order of
/// appearance; only `udp` entries are eligible for announce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagnetLink {
    pub info_hash: InfoHash,
    pub display_name: Option<String>,
    pub trackers: Vec<String>,
    /// Non-fatal oddities found while parsing (e.g. extra xt components).
    pub warnings: Vec<String>,
}

impl MagnetLink {
    /// Trackers with a `udp` scheme, as (host, port) endpoints.
    pub fn udp_trackers(&self) -> Vec<(String, u16)> {
        self.trackers
            .iter()
            .filter_map(|t| {
                let u = url::Url::parse(t).ok()?;
                if u.scheme() != "udp" {
                    return None;
                }
                Some((u.host_str()?.to_string(), u.port()?))
            })
            .collect()
    }
}

/// Parse a magnet URI. Accepts hex and base32 btih hashes, either case;
/// unknown parameters are ignored. With multiple xt components the first
/// valid btih wins and the rest are recorded as warnings.
pub fn parse_magnet(uri: &str) -> Result<MagnetLink, MagnetError> {
    let parsed = url::Url::parse(uri).map_err(|e| MagnetError::MalformedUri(e.to_string()))?;
    if parsed.scheme() != "magnet" {
        return Err(MagnetError::MalformedUri(format!(
            "expected magnet scheme, got {:?}",
            parsed.scheme()
        )));
    }

    let mut info_hash: Option<InfoHash> = None;
    let mut first_hash_err: Option<MagnetError> = None;
    let mut display_name = None;
    let mut trackers = Vec::new();
    let mut warnings = Vec::new();

    for (key, value) in parsed.query_pairs() {
        match key.as_ref() {
            "xt" => {
                let Some(encoded) = value.strip_prefix("urn:btih:") else {
                    warnings.push(format!("ignored non-btih xt component {value:?}"));
                    continue;
                };
                match InfoHash::parse(encoded) {
                    Ok(h) if info_hash.is_none() => info_hash = Some(h),
                    Ok(h) => warnings.push(format!(
                        "ignored additional btih component {}",
                        h.canonical_hex()
                    )),
                    Err(e) => {
                        if first_hash_err.is_none() {
                            first_hash_err = Some(e);
                        }
                    }
                }
            }
            "dn" => display_name = Some(value.into_owned()),
            "tr" => trackers.push(value.into_owned()),
            _ => {} // xl, ws, kt, ... are not errors
        }
    }

    match (info_hash, first_hash_err) {
        (Some(info_hash), _) => Ok(MagnetLink {
            info_hash,
            display_name,
            trackers,
            warnings,
        }),
        (None, Some(e)) => Err(e),
        (None, None) => Err(MagnetError::MissingHash),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent base32 encoder used only to derive expected fixtures.
    fn oracle_base32(bytes: &[u8; 20]) -> String {
        const ALPHABET: &[u8; 32] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
        let mut bitstring = String::new();
        for b in bytes {
            bitstring.push_str(&format!("{b:08b}"));
        }
        bitstring
            .as_bytes()
            .chunks(5)
            .map(|chunk| {
                let idx = chunk
                    .iter()
                    .fold(0usize, |acc, &c| (acc << 1) | (c - b'0') as usize);
                ALPHABET[idx] as char
            })
            .collect()
    }

    #[test]
    fn parses_hex_hash_without_trackers() {
        let link = parse_magnet(&format!("magnet:?xt=urn:btih:{}", "aa".repeat(20))).unwrap();
        assert_eq!(link.info_hash, InfoHash::new([0xAA; 20]));
        assert!(link.trackers.is_empty());
        assert!(link.display_name.is_none());
    }

    #[test]
    fn percent_decodes_tracker_urls_in_order() {
        let uri = format!(
            "magnet:?xt=urn:btih:{}&tr=udp%3A%2F%2Ft.example%3A1337&tr=udp%3A%2F%2Fu.example%3A80",
            "aa".repeat(20)
        );
        let link = parse_magnet(&uri).unwrap();
        assert_eq!(
            link.trackers,
            vec!["udp://t.example:1337", "udp://u.example:80"]
        );
        assert_eq!(
            link.udp_trackers(),
            vec![("t.example".to_string(), 1337), ("u.example".to_string(), 80)]
        );
    }

    #[test]
    fn base32_and_hex_forms_agree() {
        let bytes: [u8; 20] = [
            0x20, 0x21, 0x08, 0x42, 0x10, 0xc8, 0x54, 0x29, 0x14, 0xa5, 0x31, 0x18, 0x64, 0x39,
            0x74, 0x49, 0x95, 0xab, 0xcd, 0xef,
        ];
        let b32 = oracle_base32(&bytes);
        assert_eq!(b32.len(), 32);
        let from_b32 = parse_magnet(&format!("magnet:?xt=urn:btih:{b32}")).unwrap();
        let from_hex =
            parse_magnet(&format!("magnet:?xt=urn:btih:{}", hex::encode(bytes))).unwrap();
        assert_eq!(from_b32.info_hash, from_hex.info_hash);
        assert_eq!(from_b32.info_hash, InfoHash::new(bytes));
        // lowercase base32 is accepted too
        let lower = parse_magnet(&format!("magnet:?xt=urn:btih:{}", b32.to_lowercase())).unwrap();
        assert_eq!(lower.info_hash, InfoHash::new(bytes));
    }

    #[test]
    fn display_name_is_percent_decoded() {
        let uri = format!(
            "magnet:?xt=urn:btih:{}&dn=Some%20Title%20%5B2024%5D",
            "0f".repeat(20)
        );
        let link = parse_magnet(&uri).unwrap();
        assert_eq!(link.display_name.as_deref(), Some("Some Title [2024]"));
    }

    #[test]
    fn missing_hash_and_malformed_hash_are_distinct_errors() {
        assert_eq!(
            parse_magnet("magnet:?dn=NoHash"),
            Err(MagnetError::MissingHash)
        );
        let err = parse_magnet("magnet:?xt=urn:btih:zzzz").unwrap_err();
        assert!(matches!(err, MagnetError::MalformedHash(_)));
        assert!(matches!(
            parse_magnet("not a uri at all"),
            Err(MagnetError::MalformedUri(_))
        ));
    }

    #[test]
    fn first_valid_btih_wins_with_warning() {
        let uri = format!(
            "magnet:?xt=urn:btih:{}&xt=urn:btih:{}",
            "ab".repeat(20),
            "cd".repeat(20)
        );
        let link = parse_magnet(&uri).unwrap();
        assert_eq!(link.info_hash, InfoHash::new([0xAB; 20]));
        assert_eq!(link.warnings.len(), 1);
    }

    #[test]
    fn unknown_parameters_are_ignored() {
        let uri = format!("magnet:?xt=urn:btih:{}&xl=123&ws=http%3A%2F%2Fx&kt=a+b", "11".repeat(20));
        let link = parse_magnet(&uri).unwrap();
        assert!(link.warnings.is_empty());
        assert_eq!(link.info_hash, InfoHash::new([0x11; 20]));
    }

    #[test]
    fn canonical_hex_boundary_values() {
        assert_eq!(InfoHash::new([0u8; 20]).canonical_hex(), "0".repeat(40));
        assert_eq!(InfoHash::new([0xFF; 20]).canonical_hex(), "f".repeat(40));
        // uppercase input, lowercase output
        let h = InfoHash::from_hex(&"AB".repeat(20)).unwrap();
        assert_eq!(h.canonical_hex(), "ab".repeat(20));
    }

    proptest::proptest! {
        #[test]
        fn hex_round_trip(bytes: [u8; 20]) {
            let h = InfoHash::new(bytes);
            let parsed = parse_magnet(&format!("magnet:?xt=urn:btih:{}", h.canonical_hex())).unwrap();
            proptest::prop_assert_eq!(parsed.info_hash, h);
        }

        #[test]
        fn base32_round_trip(bytes: [u8; 20]) {
            let h = InfoHash::from_base32(&oracle_base32(&bytes)).unwrap();
            proptest::prop_assert_eq!(h, InfoHash::new(bytes));
        }
    }
}
