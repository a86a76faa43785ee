//! Core domain types shared by the resolver, classifier, and statistics
//! layers. Everything here is immutable after construction and cheap to
//! clone across worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum length of a single DNS label, in octets.
const MAX_LABEL_LEN: usize = 63;
/// Maximum length of a stored name (canonical form, no trailing dot).
const MAX_NAME_LEN: usize = 253;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed domain name {name:?}: {reason}")]
    MalformedName { name: String, reason: String },
}

/// A canonical DNS name: lowercased, single trailing dot stripped, labels
/// validated for length. Underscores are accepted because real-world MX
/// data contains them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainName {
    name: String,
}

impl DomainName {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        let malformed = |reason: &str| ModelError::MalformedName {
            name: raw.to_string(),
            reason: reason.to_string(),
        };
        if raw.is_empty() {
            return Err(malformed("empty name"));
        }
        if !raw.is_ascii() {
            return Err(malformed("non-ASCII character"));
        }
        let mut name = raw.to_ascii_lowercase();
        if name.ends_with('.') {
            name.pop();
        }
        if name.is_empty() {
            return Err(malformed("empty name after stripping trailing dot"));
        }
        if name.len() > MAX_NAME_LEN {
            return Err(malformed("name longer than 253 octets"));
        }
        for label in name.split('.') {
            if label.is_empty() {
                return Err(malformed("empty label"));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(malformed("label longer than 63 octets"));
            }
            if !label
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
            {
                return Err(malformed("invalid character in label"));
            }
        }
        Ok(DomainName { name })
    }

    pub fn as_str(&self) -> &str {
        &self.name
    }

    /// Label iterator, most-specific first.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.name.split('.')
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl TryFrom<String> for DomainName {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        DomainName::new(&value)
    }
}

impl From<DomainName> for String {
    fn from(value: DomainName) -> Self {
        value.name
    }
}

impl std::str::FromStr for DomainName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainName::new(s)
    }
}

/// An MX target: either a regular exchanger name or the literal root
/// marker "." used by Null-MX records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Exchanger {
    Root,
    Name(DomainName),
}

impl Exchanger {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        if raw == "." {
            Ok(Exchanger::Root)
        } else {
            Ok(Exchanger::Name(DomainName::new(raw)?))
        }
    }

    pub fn name(&self) -> Option<&DomainName> {
        match self {
            Exchanger::Root => None,
            Exchanger::Name(n) => Some(n),
        }
    }
}

impl fmt::Display for Exchanger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exchanger::Root => f.write_str("."),
            Exchanger::Name(n) => f.write_str(n.as_str()),
        }
    }
}

impl TryFrom<String> for Exchanger {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Exchanger::parse(&value)
    }
}

impl From<Exchanger> for String {
    fn from(value: Exchanger) -> Self {
        value.to_string()
    }
}

/// One MX resource record as returned by the resolver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MxRecord {
    pub preference: u16,
    pub exchanger: Exchanger,
    pub ttl: u32,
}

/// A domain's MX RRset in answer order. `n_m` always equals the record
/// count (and `n_p` by construction, since each record carries its own
/// preference).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MxRecordSet {
    pub records: Vec<MxRecord>,
    pub n_m: u32,
}

impl MxRecordSet {
    pub fn new(records: Vec<MxRecord>) -> Self {
        let n_m = records.len() as u32;
        MxRecordSet { records, n_m }
    }

    pub fn empty() -> Self {
        MxRecordSet::new(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct exchanger names in first-appearance order; the root
    /// marker is never a resolvable name and is skipped.
    pub fn distinct_exchanger_names(&self) -> Vec<DomainName> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for rec in &self.records {
            if let Exchanger::Name(name) = &rec.exchanger {
                if seen.insert(name.clone()) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    /// Preference values in record order.
    pub fn preferences(&self) -> Vec<u16> {
        self.records.iter().map(|r| r.preference).collect()
    }

    /// Effective cache lifetime of the set: the minimum TTL across records.
    pub fn min_ttl(&self) -> Option<u32> {
        self.records.iter().map(|r| r.ttl).min()
    }
}

/// Resolution status of a single lookup, also reused for the per-family
/// address statuses on an exchanger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LookupStatus {
    Ok,
    NxDomain,
    NoRecords,
    Timeout,
    ServFail,
}

impl LookupStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, LookupStatus::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PtrStatus {
    Found,
    NotFound,
    Error,
}

/// Outcome of one reverse lookup. `forward_confirmed` is true only when
/// the lookup succeeded and some returned name equals the owning
/// exchanger's canonical name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtrOutcome {
    pub status: PtrStatus,
    pub names: Vec<DomainName>,
    pub forward_confirmed: bool,
}

/// One exchanger name with everything step 2 and step 3 learned about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedExchanger {
    pub exchanger: DomainName,
    pub ipv4: Vec<Ipv4Addr>,
    pub ipv6: Vec<Ipv6Addr>,
    pub ptr: BTreeMap<IpAddr, PtrOutcome>,
    pub a_status: LookupStatus,
    pub aaaa_status: LookupStatus,
    pub is_cname_target: bool,
}

impl ResolvedExchanger {
    /// All addresses of both families, IPv4 first, in answer order.
    pub fn addresses(&self) -> impl Iterator<Item = IpAddr> + '_ {
        self.ipv4
            .iter()
            .copied()
            .map(IpAddr::V4)
            .chain(self.ipv6.iter().copied().map(IpAddr::V6))
    }
}

/// Audit findings of the misconfiguration detectors; all default to
/// false/empty and are independently settable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFlags {
    pub has_spf: bool,
    pub spf_deny_all: bool,
    pub hosting: BTreeSet<String>,
    pub has_nxdomain_exchanger: bool,
    pub has_private_or_local_address: bool,
    pub has_missing_ptr_v4: bool,
    pub has_missing_ptr_v6: bool,
    pub has_duplicate_addresses: bool,
    pub has_cname_exchanger: bool,
}

/// The nine-way configuration label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Classification {
    NoMx,
    NullMx,
    PlainV4Only,
    PlainV6Only,
    PlainDualStack,
    RoundRobin,
    MxBalancing,
    Hybrid,
    NonIdentified,
}

impl Classification {
    /// Labels that enter the analyzed sample (everything except the
    /// excluded NoMx/NullMx buckets).
    pub fn is_analyzed(self) -> bool {
        !matches!(self, Classification::NoMx | Classification::NullMx)
    }

    pub const ANALYZED: [Classification; 7] = [
        Classification::PlainV4Only,
        Classification::PlainV6Only,
        Classification::PlainDualStack,
        Classification::RoundRobin,
        Classification::MxBalancing,
        Classification::Hybrid,
        Classification::NonIdentified,
    ];
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Classification::NoMx => "NoMx",
            Classification::NullMx => "NullMx",
            Classification::PlainV4Only => "PlainV4Only",
            Classification::PlainV6Only => "PlainV6Only",
            Classification::PlainDualStack => "PlainDualStack",
            Classification::RoundRobin => "RoundRobin",
            Classification::MxBalancing => "MxBalancing",
            Classification::Hybrid => "Hybrid",
            Classification::NonIdentified => "NonIdentified",
        };
        f.write_str(label)
    }
}

/// Complete per-domain measurement. `classification` is `None` until the
/// audit pass runs, and stays `None` for errored domains (which carry the
/// failure in `error` instead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub domain: DomainName,
    pub median_rank: Option<f64>,
    pub mx: MxRecordSet,
    pub exchangers: Vec<ResolvedExchanger>,
    pub txt: Vec<String>,
    pub n_a: u32,
    pub n_abar: u32,
    pub classification: Option<Classification>,
    pub flags: AuditFlags,
    pub error: Option<String>,
}

impl DomainProfile {
    /// An empty profile for a domain whose MX query failed outright.
    pub fn errored(domain: DomainName, error: String) -> Self {
        DomainProfile {
            domain,
            median_rank: None,
            mx: MxRecordSet::empty(),
            exchangers: Vec::new(),
            txt: Vec::new(),
            n_a: 0,
            n_abar: 0,
            classification: None,
            flags: AuditFlags::default(),
            error: Some(error),
        }
    }

    pub fn is_errored(&self) -> bool {
        self.error.is_some()
    }

    /// All resolved addresses across exchangers, duplicates included.
    pub fn addresses(&self) -> impl Iterator<Item = IpAddr> + '_ {
        self.exchangers.iter().flat_map(|e| e.addresses())
    }
}

/// Recomputes `(n_m, n_a, n_abar)` from the raw record data. Addresses
/// duplicated across different exchangers are counted each time they
/// appear; duplication itself is reported by a separate audit flag.
pub fn derive_counts(profile: &DomainProfile) -> (u32, u32, u32) {
    let n_m = profile.mx.n_m;
    let n_a = profile.exchangers.iter().map(|e| e.ipv4.len() as u32).sum();
    let n_abar = profile.exchangers.iter().map(|e| e.ipv6.len() as u32).sum();
    (n_m, n_a, n_abar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonicalize_lowercases_and_strips_dot() {
        let n = DomainName::new("MX.Domain.TLD.").unwrap();
        assert_eq!(n.as_str(), "mx.domain.tld");
        let id = DomainName::new("domain.tld").unwrap();
        assert_eq!(id.as_str(), "domain.tld");
    }

    #[test]
    fn canonicalize_rejects_bad_names() {
        assert!(DomainName::new("a..b").is_err());
        assert!(DomainName::new("").is_err());
        assert!(DomainName::new(".").is_err());
        assert!(DomainName::new(&format!("{}.tld", "x".repeat(64))).is_err());
        let long = std::iter::repeat_n("abcdefgh", 32)
            .collect::<Vec<_>>()
            .join(".");
        assert!(long.len() > 253);
        assert!(DomainName::new(&long).is_err());
        assert!(DomainName::new("bad name.tld").is_err());
        assert!(DomainName::new("ünïcode.tld").is_err());
    }

    #[test]
    fn canonicalize_accepts_underscores() {
        assert!(DomainName::new("_dmarc.domain.tld").is_ok());
        assert!(DomainName::new("mx_backup.domain.tld").is_ok());
    }

    #[test]
    fn exchanger_root_marker() {
        assert_eq!(Exchanger::parse(".").unwrap(), Exchanger::Root);
        let e = Exchanger::parse("mx.domain.tld.").unwrap();
        assert_eq!(e.name().unwrap().as_str(), "mx.domain.tld");
    }

    fn exchanger(name: &str, v4: &[&str], v6: &[&str]) -> ResolvedExchanger {
        let ipv4: Vec<Ipv4Addr> = v4.iter().map(|a| a.parse().unwrap()).collect();
        let ipv6: Vec<Ipv6Addr> = v6.iter().map(|a| a.parse().unwrap()).collect();
        let mut ptr = BTreeMap::new();
        for a in ipv4
            .iter()
            .copied()
            .map(IpAddr::V4)
            .chain(ipv6.iter().copied().map(IpAddr::V6))
        {
            ptr.insert(
                a,
                PtrOutcome {
                    status: PtrStatus::Found,
                    names: vec![DomainName::new(name).unwrap()],
                    forward_confirmed: true,
                },
            );
        }
        ResolvedExchanger {
            exchanger: DomainName::new(name).unwrap(),
            a_status: if ipv4.is_empty() {
                LookupStatus::NoRecords
            } else {
                LookupStatus::Ok
            },
            aaaa_status: if ipv6.is_empty() {
                LookupStatus::NoRecords
            } else {
                LookupStatus::Ok
            },
            ipv4,
            ipv6,
            ptr,
            is_cname_target: false,
        }
    }

    fn profile_with(mx_names: &[(u16, &str)], exchangers: Vec<ResolvedExchanger>) -> DomainProfile {
        let records = mx_names
            .iter()
            .map(|(pref, name)| MxRecord {
                preference: *pref,
                exchanger: Exchanger::parse(name).unwrap(),
                ttl: 3600,
            })
            .collect();
        let mut p = DomainProfile {
            domain: DomainName::new("domain.tld").unwrap(),
            median_rank: None,
            mx: MxRecordSet::new(records),
            exchangers,
            txt: Vec::new(),
            n_a: 0,
            n_abar: 0,
            classification: None,
            flags: AuditFlags::default(),
            error: None,
        };
        let (_, n_a, n_abar) = derive_counts(&p);
        p.n_a = n_a;
        p.n_abar = n_abar;
        p
    }

    #[test]
    fn derive_counts_basic_shape() {
        // one MX resolving to two A records and no AAAA
        let p = profile_with(
            &[(10, "mx.domain.tld")],
            vec![exchanger("mx.domain.tld", &["1.2.3.4", "1.2.3.5"], &[])],
        );
        assert_eq!(derive_counts(&p), (1, 2, 0));
    }

    #[test]
    fn derive_counts_hybrid_shape() {
        // two MX records; one maps to a single A, the other to two
        let p = profile_with(
            &[(20, "mx1.domain.tld"), (10, "mx2.domain.tld")],
            vec![
                exchanger("mx1.domain.tld", &["1.2.3.6"], &[]),
                exchanger("mx2.domain.tld", &["1.2.3.4", "1.2.3.5"], &[]),
            ],
        );
        assert_eq!(derive_counts(&p), (2, 3, 0));
    }

    #[test]
    fn derive_counts_many_records() {
        // 17 exchangers resolving to 173 A records in total
        let mut mx = Vec::new();
        let mut exchangers = Vec::new();
        let mut left = 173usize;
        for i in 0..17 {
            let name = format!("mx{i}.big.tld");
            mx.push((10u16, name.clone()));
            let take = if i == 16 { left } else { 173 / 17 };
            left -= take;
            let addrs: Vec<String> = (0..take)
                .map(|j| format!("10.{i}.{}.{}", j / 250, j % 250))
                .collect();
            let refs: Vec<&str> = addrs.iter().map(|s| s.as_str()).collect();
            exchangers.push(exchanger(&name, &refs, &[]));
        }
        let mx_refs: Vec<(u16, &str)> = mx.iter().map(|(p, n)| (*p, n.as_str())).collect();
        let p = profile_with(&mx_refs, exchangers);
        assert_eq!(derive_counts(&p), (17, 173, 0));
    }

    #[test]
    fn derive_counts_order_independent() {
        let a = exchanger("mx1.domain.tld", &["1.2.3.4"], &["2001:db8::1"]);
        let b = exchanger("mx2.domain.tld", &["1.2.3.5", "1.2.3.6"], &[]);
        let p1 = profile_with(
            &[(10, "mx1.domain.tld"), (20, "mx2.domain.tld")],
            vec![a.clone(), b.clone()],
        );
        let p2 = profile_with(
            &[(10, "mx1.domain.tld"), (20, "mx2.domain.tld")],
            vec![b, a],
        );
        assert_eq!(derive_counts(&p1), derive_counts(&p2));
    }

    #[test]
    fn duplicate_mx_names_collapse_but_records_remain() {
        let set = MxRecordSet::new(vec![
            MxRecord {
                preference: 10,
                exchanger: Exchanger::parse("mx.d.tld").unwrap(),
                ttl: 60,
            },
            MxRecord {
                preference: 20,
                exchanger: Exchanger::parse("MX.D.TLD.").unwrap(),
                ttl: 60,
            },
        ]);
        assert_eq!(set.n_m, 2);
        assert_eq!(set.distinct_exchanger_names().len(), 1);
    }

    #[test]
    fn min_ttl_over_set() {
        let set = MxRecordSet::new(vec![
            MxRecord {
                preference: 10,
                exchanger: Exchanger::parse("a.tld").unwrap(),
                ttl: 900,
            },
            MxRecord {
                preference: 20,
                exchanger: Exchanger::parse("b.tld").unwrap(),
                ttl: 300,
            },
        ]);
        assert_eq!(set.min_ttl(), Some(300));
        assert_eq!(MxRecordSet::empty().min_ttl(), None);
    }

    #[test]
    fn classification_serializes_to_exact_labels() {
        assert_eq!(
            serde_json::to_string(&Classification::PlainV4Only).unwrap(),
            "\"PlainV4Only\""
        );
        assert_eq!(
            serde_json::to_string(&Classification::NullMx).unwrap(),
            "\"NullMx\""
        );
        assert_eq!(Classification::RoundRobin.to_string(), "RoundRobin");
    }

    fn arb_label() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-z0-9_][a-z0-9_-]{0,14}").unwrap()
    }

    fn arb_domain() -> impl Strategy<Value = DomainName> {
        proptest::collection::vec(arb_label(), 1..5)
            .prop_map(|labels| DomainName::new(&labels.join(".")).unwrap())
    }

    fn arb_ptr(
        v4: Vec<Ipv4Addr>,
        v6: Vec<Ipv6Addr>,
        owner: DomainName,
    ) -> BTreeMap<IpAddr, PtrOutcome> {
        let mut ptr = BTreeMap::new();
        for a in v4
            .into_iter()
            .map(IpAddr::V4)
            .chain(v6.into_iter().map(IpAddr::V6))
        {
            ptr.insert(
                a,
                PtrOutcome {
                    status: PtrStatus::Found,
                    names: vec![owner.clone()],
                    forward_confirmed: true,
                },
            );
        }
        ptr
    }

    fn arb_profile() -> impl Strategy<Value = DomainProfile> {
        (
            arb_domain(),
            proptest::option::of(1u32..1_000_000u32),
            proptest::collection::vec((0u16..100, arb_domain(), 0u32..86400), 0..4),
            proptest::collection::vec(any::<[u8; 4]>(), 0..3),
            proptest::collection::vec(any::<[u8; 16]>(), 0..3),
            proptest::collection::vec("[ -~]{0,40}", 0..3),
        )
            .prop_map(|(domain, rank, mx, v4raw, v6raw, txt)| {
                let records: Vec<MxRecord> = mx
                    .into_iter()
                    .map(|(preference, exchanger, ttl)| MxRecord {
                        preference,
                        exchanger: Exchanger::Name(exchanger),
                        ttl,
                    })
                    .collect();
                let set = MxRecordSet::new(records);
                let exchangers: Vec<ResolvedExchanger> = set
                    .distinct_exchanger_names()
                    .into_iter()
                    .map(|name| {
                        let v4: Vec<Ipv4Addr> = v4raw.iter().map(|b| Ipv4Addr::from(*b)).collect();
                        let v6: Vec<Ipv6Addr> = v6raw.iter().map(|b| Ipv6Addr::from(*b)).collect();
                        ResolvedExchanger {
                            a_status: if v4.is_empty() {
                                LookupStatus::NoRecords
                            } else {
                                LookupStatus::Ok
                            },
                            aaaa_status: if v6.is_empty() {
                                LookupStatus::NoRecords
                            } else {
                                LookupStatus::Ok
                            },
                            ptr: arb_ptr(v4.clone(), v6.clone(), name.clone()),
                            exchanger: name,
                            ipv4: v4,
                            ipv6: v6,
                            is_cname_target: false,
                        }
                    })
                    .collect();
                let mut p = DomainProfile {
                    domain,
                    median_rank: rank.map(|r| r as f64),
                    mx: set,
                    exchangers,
                    txt,
                    n_a: 0,
                    n_abar: 0,
                    classification: Some(Classification::NonIdentified),
                    flags: AuditFlags::default(),
                    error: None,
                };
                let (_, n_a, n_abar) = derive_counts(&p);
                p.n_a = n_a;
                p.n_abar = n_abar;
                p
            })
    }

    proptest! {
        #[test]
        fn profile_json_round_trips(profile in arb_profile()) {
            let line = serde_json::to_string(&profile).unwrap();
            let back: DomainProfile = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(&back, &profile);
            // and the serialized form is stable, byte for byte
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), line);
        }

        #[test]
        fn canonicalization_is_idempotent(labels in proptest::collection::vec("[A-Za-z0-9_-]{1,20}", 1..5)) {
            let raw = labels.join(".");
            if let Ok(once) = DomainName::new(&raw) {
                let twice = DomainName::new(once.as_str()).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
