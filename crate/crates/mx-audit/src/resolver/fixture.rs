//! Deterministic query backend answering from JSON fixtures.
//!
//! The fixture format is a map keyed "name TYPE", one file or a directory
//! of files:
//!
//! ```json
//! {
//!   "domain.tld MX": {"status": "OK", "ttl": 3600, "records": ["10 mx.domain.tld."]},
//!   "mx.domain.tld A": {"status": "OK", "ttl": 600, "records": ["1.2.3.4"]},
//!   "4.3.2.1.in-addr.arpa PTR": {"status": "OK", "ttl": 600, "records": ["mx.domain.tld."]}
//! }
//! ```
//!
//! Statuses are OK, NXDOMAIN, NOERROR_EMPTY, TIMEOUT, SERVFAIL. An
//! optional `"cname": true` marks an answer that arrived through a CNAME
//! chain. Unlisted (name, type) pairs answer NXDOMAIN.

use std::collections::{BTreeMap, HashMap};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{BackendError, QueryBackend, QueryResult, RecordType};
use crate::model::{DomainName, Exchanger, LookupStatus};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse fixture {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid fixture entry {key:?} in {path}: {reason}")]
    Invalid {
        path: String,
        key: String,
        reason: String,
    },
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    status: String,
    #[serde(default)]
    ttl: u32,
    #[serde(default)]
    records: Vec<String>,
    #[serde(default)]
    cname: bool,
}

#[derive(Debug, Clone)]
struct FixtureEntry {
    status: LookupStatus,
    ttl: u32,
    records: Vec<String>,
    is_cname: bool,
}

/// In-memory fixture table; cheap to share across worker threads.
#[derive(Debug, Default)]
pub struct FixtureBackend {
    entries: HashMap<(DomainName, RecordType), FixtureEntry>,
}

fn parse_status(s: &str) -> Option<LookupStatus> {
    match s {
        "OK" => Some(LookupStatus::Ok),
        "NXDOMAIN" => Some(LookupStatus::NxDomain),
        "NOERROR_EMPTY" => Some(LookupStatus::NoRecords),
        "TIMEOUT" => Some(LookupStatus::Timeout),
        "SERVFAIL" => Some(LookupStatus::ServFail),
        _ => None,
    }
}

fn validate_rdata(rrtype: RecordType, rdata: &str) -> Result<(), String> {
    match rrtype {
        RecordType::A => rdata
            .parse::<Ipv4Addr>()
            .map(|_| ())
            .map_err(|_| format!("bad A rdata {rdata:?}")),
        RecordType::Aaaa => rdata
            .parse::<Ipv6Addr>()
            .map(|_| ())
            .map_err(|_| format!("bad AAAA rdata {rdata:?}")),
        RecordType::Mx => {
            let mut parts = rdata.split_whitespace();
            let pref = parts.next().and_then(|p| p.parse::<u16>().ok());
            let exch = parts.next().map(Exchanger::parse);
            match (pref, exch, parts.next()) {
                (Some(_), Some(Ok(_)), None) => Ok(()),
                _ => Err(format!(
                    "bad MX rdata {rdata:?}, want \"preference exchanger\""
                )),
            }
        }
        RecordType::Ptr => DomainName::new(rdata)
            .map(|_| ())
            .map_err(|e| format!("bad PTR rdata: {e}")),
        RecordType::Txt => Ok(()),
    }
}

impl FixtureBackend {
    /// Loads a single fixture file or every `*.json` file in a directory.
    /// Keys duplicated across files are an error.
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let io_err = |source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut files: Vec<std::path::PathBuf> = if path.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(path).map_err(io_err)? {
                let entry = entry.map_err(|source| FixtureError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let p = entry.path();
                if p.extension().is_some_and(|e| e == "json") {
                    found.push(p);
                }
            }
            found.sort();
            found
        } else {
            vec![path.to_path_buf()]
        };

        let mut backend = FixtureBackend::default();
        for file in files.drain(..) {
            let text = std::fs::read_to_string(&file).map_err(|source| FixtureError::Io {
                path: file.display().to_string(),
                source,
            })?;
            backend.merge_json(&text, &file.display().to_string())?;
        }
        Ok(backend)
    }

    /// Parses fixture JSON from a string (used by tests and by `load`).
    pub fn from_json_str(text: &str) -> Result<Self, FixtureError> {
        let mut backend = FixtureBackend::default();
        backend.merge_json(text, "<inline>")?;
        Ok(backend)
    }

    fn merge_json(&mut self, text: &str, path: &str) -> Result<(), FixtureError> {
        let raw: BTreeMap<String, RawEntry> =
            serde_json::from_str(text).map_err(|source| FixtureError::Json {
                path: path.to_string(),
                source,
            })?;
        for (key, entry) in raw {
            let invalid = |reason: String| FixtureError::Invalid {
                path: path.to_string(),
                key: key.clone(),
                reason,
            };
            let (name_part, type_part) = key
                .rsplit_once(' ')
                .ok_or_else(|| invalid("key must be \"name TYPE\"".to_string()))?;
            let name = DomainName::new(name_part).map_err(|e| invalid(e.to_string()))?;
            let rrtype: RecordType = type_part.parse().map_err(invalid)?;
            let status = parse_status(&entry.status)
                .ok_or_else(|| invalid(format!("unknown status {:?}", entry.status)))?;

            if status == LookupStatus::Ok && entry.records.is_empty() {
                return Err(invalid(
                    "status OK requires at least one record".to_string(),
                ));
            }
            if status != LookupStatus::Ok && !entry.records.is_empty() {
                return Err(invalid(format!(
                    "status {:?} must not carry records",
                    entry.status
                )));
            }
            for rdata in &entry.records {
                validate_rdata(rrtype, rdata).map_err(invalid)?;
            }

            let fixture_entry = FixtureEntry {
                status,
                ttl: entry.ttl,
                records: entry.records,
                is_cname: entry.cname,
            };
            if self.entries.insert((name, rrtype), fixture_entry).is_some() {
                return Err(invalid(
                    "key already defined by another fixture file".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Owner names that carry an MX entry (used to build simulator pools).
    pub fn mx_owner_names(&self) -> Vec<DomainName> {
        let mut names: Vec<DomainName> = self
            .entries
            .keys()
            .filter(|(_, t)| *t == RecordType::Mx)
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }
}

impl QueryBackend for FixtureBackend {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError> {
        match self.entries.get(&(name.clone(), rrtype)) {
            Some(entry) => Ok(QueryResult {
                status: entry.status,
                records: entry
                    .records
                    .iter()
                    .map(|r| (r.clone(), entry.ttl))
                    .collect(),
                is_cname: entry.is_cname,
            }),
            None => Ok(QueryResult::empty(LookupStatus::NxDomain)),
        }
    }
}
