//! Configuration taxonomy and misconfiguration detectors.
//!
//! Everything here is a pure function over an immutable profile, so the
//! audit pass can run from any number of worker threads.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Classification, DomainName, DomainProfile, Exchanger, MxRecordSet, PtrStatus, ResolvedExchanger,
};

#[derive(Debug, Error)]
pub enum HostingRulesError {
    #[error("cannot read hosting rules {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse hosting rules {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A hosting provider identified by MX suffix. Matching is on whole
/// labels: the exchanger either equals a suffix or ends with "." + suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostingRule {
    pub provider: String,
    pub suffixes: Vec<DomainName>,
}

/// The two providers the measurement tabulates by default.
pub fn default_hosting_rules() -> Vec<HostingRule> {
    let suffix = |s: &str| DomainName::new(s).unwrap();
    vec![
        HostingRule {
            provider: "Microsoft".to_string(),
            suffixes: vec![suffix("outlook.com")],
        },
        HostingRule {
            provider: "Google".to_string(),
            suffixes: vec![suffix("google.com"), suffix("googlemail.com")],
        },
    ]
}

pub fn load_hosting_rules(path: &Path) -> Result<Vec<HostingRule>, HostingRulesError> {
    let text = std::fs::read_to_string(path).map_err(|source| HostingRulesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| HostingRulesError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// True iff the set is exactly one record with preference 0 and the root
/// marker as its exchanger.
pub fn is_null_mx(mx: &MxRecordSet) -> bool {
    if mx.n_m != 1 {
        return false;
    }
    let rec = &mx.records[0];
    rec.preference == 0 && rec.exchanger == Exchanger::Root
}

/// Total nine-way labeling from the record counts alone. The plain rules
/// run before round-robin so that (1,1,1) lands in PlainDualStack, and a
/// multi-MX domain with nothing resolvable falls through to NonIdentified.
pub fn classify(n_m: u32, n_a: u32, n_abar: u32) -> Classification {
    if n_m == 0 {
        return Classification::NoMx;
    }
    if n_m == 1 {
        return if n_a == 1 && n_abar == 0 {
            Classification::PlainV4Only
        } else if n_a == 0 && n_abar == 1 {
            Classification::PlainV6Only
        } else if n_a == 1 && n_abar == 1 {
            Classification::PlainDualStack
        } else if n_a > 1 || n_abar > 1 {
            Classification::RoundRobin
        } else {
            Classification::NonIdentified
        };
    }
    if n_a == n_m || n_abar == n_m {
        Classification::MxBalancing
    } else if n_a + n_abar > 0 {
        Classification::Hybrid
    } else {
        Classification::NonIdentified
    }
}

/// SPF presence probed from TXT records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpfProbe {
    /// Case-insensitive "v=spf" substring match.
    pub has_spf: bool,
    /// Literal "v=spf1" prefix match, for comparability with a
    /// case-sensitive search.
    pub has_spf_strict: bool,
    /// A record that, after whitespace normalization, equals "v=spf1 -all".
    pub deny_all: bool,
}

pub fn detect_spf(txt: &[String]) -> SpfProbe {
    let mut probe = SpfProbe::default();
    for record in txt {
        if record.to_ascii_lowercase().contains("v=spf") {
            probe.has_spf = true;
        }
        if record.starts_with("v=spf1") {
            probe.has_spf_strict = true;
        }
        let normalized = record.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.eq_ignore_ascii_case("v=spf1 -all") {
            probe.deny_all = true;
        }
    }
    probe
}

fn matches_suffix(exchanger: &DomainName, suffix: &DomainName) -> bool {
    let name = exchanger.as_str();
    let sfx = suffix.as_str();
    name == sfx
        || (name.len() > sfx.len()
            && name.ends_with(sfx)
            && name.as_bytes()[name.len() - sfx.len() - 1] == b'.')
}

/// Providers with at least one exchanger under one of their suffixes.
pub fn detect_hosting(mx: &MxRecordSet, rules: &[HostingRule]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for name in mx.distinct_exchanger_names() {
        for rule in rules {
            if rule.suffixes.iter().any(|s| matches_suffix(&name, s)) {
                out.insert(rule.provider.clone());
            }
        }
    }
    out
}

fn is_private_or_local_v4(a: Ipv4Addr) -> bool {
    let o = a.octets();
    o[0] == 10
        || (o[0] == 172 && (16..=31).contains(&o[1]))
        || (o[0] == 192 && o[1] == 168)
        || o[0] == 127
}

fn is_private_or_local_v6(a: Ipv6Addr) -> bool {
    // fc00::/7 (unique local) or the loopback ::1
    (a.segments()[0] & 0xfe00) == 0xfc00 || a == Ipv6Addr::LOCALHOST
}

/// True iff any address is in a private network range or is a local host.
pub fn detect_private_or_local(addresses: impl IntoIterator<Item = IpAddr>) -> bool {
    addresses.into_iter().any(|a| match a {
        IpAddr::V4(v4) => is_private_or_local_v4(v4),
        IpAddr::V6(v6) => is_private_or_local_v6(v6),
    })
}

/// True iff some address appears under two distinct exchanger names.
pub fn detect_duplicates(exchangers: &[ResolvedExchanger]) -> bool {
    let mut seen: BTreeSet<IpAddr> = BTreeSet::new();
    for e in exchangers {
        let own: BTreeSet<IpAddr> = e.addresses().collect();
        if own.iter().any(|a| seen.contains(a)) {
            return true;
        }
        seen.extend(own);
    }
    false
}

fn ptr_missing(exchanger: &ResolvedExchanger, addr: IpAddr) -> bool {
    exchanger
        .ptr
        .get(&addr)
        .is_none_or(|o| o.status != PtrStatus::Found)
}

/// Full audit pass: sets the classification and every flag on the profile.
/// Errored profiles pass through untouched.
pub fn audit(mut profile: DomainProfile, rules: &[HostingRule]) -> DomainProfile {
    if profile.is_errored() {
        return profile;
    }

    let spf = detect_spf(&profile.txt);
    profile.flags.has_spf = spf.has_spf;
    profile.flags.spf_deny_all = spf.deny_all;

    if is_null_mx(&profile.mx) {
        profile.classification = Some(Classification::NullMx);
        return profile;
    }

    profile.classification = Some(classify(profile.mx.n_m, profile.n_a, profile.n_abar));
    profile.flags.hosting = detect_hosting(&profile.mx, rules);
    profile.flags.has_nxdomain_exchanger = profile
        .exchangers
        .iter()
        .any(|e| !e.a_status.is_ok() && !e.aaaa_status.is_ok());
    profile.flags.has_private_or_local_address = detect_private_or_local(profile.addresses());
    profile.flags.has_missing_ptr_v4 = profile
        .exchangers
        .iter()
        .any(|e| e.ipv4.iter().any(|a| ptr_missing(e, IpAddr::V4(*a))));
    profile.flags.has_missing_ptr_v6 = profile
        .exchangers
        .iter()
        .any(|e| e.ipv6.iter().any(|a| ptr_missing(e, IpAddr::V6(*a))));
    profile.flags.has_duplicate_addresses = detect_duplicates(&profile.exchangers);
    profile.flags.has_cname_exchanger = profile.exchangers.iter().any(|e| e.is_cname_target);
    profile
}
