//! Three-step resolution pipeline over a pluggable query backend: MX and
//! TXT for the domain, A/AAAA for each distinct exchanger, then PTR for
//! every address received. A run-scoped memo guarantees no duplicate
//! (name, type) query is ever issued to the backend.

pub mod fixture;
pub mod live;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::model::{
    DomainName, DomainProfile, Exchanger, LookupStatus, MxRecord, MxRecordSet, PtrOutcome,
    PtrStatus, ResolvedExchanger,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordType {
    Mx,
    A,
    Aaaa,
    Txt,
    Ptr,
}

impl RecordType {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordType::Mx => "MX",
            RecordType::A => "A",
            RecordType::Aaaa => "AAAA",
            RecordType::Txt => "TXT",
            RecordType::Ptr => "PTR",
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RecordType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MX" => Ok(RecordType::Mx),
            "A" => Ok(RecordType::A),
            "AAAA" => Ok(RecordType::Aaaa),
            "TXT" => Ok(RecordType::Txt),
            "PTR" => Ok(RecordType::Ptr),
            other => Err(format!("unknown record type {other:?}")),
        }
    }
}

/// Outcome of one query. `records` holds (rdata, ttl) pairs and is
/// non-empty exactly when the status is Ok; `is_cname` marks answers that
/// arrived through a CNAME chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub status: LookupStatus,
    pub records: Vec<(String, u32)>,
    pub is_cname: bool,
}

impl QueryResult {
    pub fn empty(status: LookupStatus) -> Self {
        QueryResult {
            status,
            records: Vec::new(),
            is_cname: false,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// A DNS query source; implementations must tolerate concurrent calls
/// from many workers. Per-record failures are statuses inside
/// `QueryResult`, never errors — `BackendError` means the transport
/// itself is down.
pub trait QueryBackend: Send + Sync {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError>;
}

impl<B: QueryBackend + ?Sized> QueryBackend for Box<B> {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError> {
        (**self).query(name, rrtype)
    }
}

/// Resolution policy; the defaults reproduce a single-pass run.
#[derive(Debug, Clone)]
pub struct ResolverPolicy {
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_concurrency: usize,
}

impl Default for ResolverPolicy {
    fn default() -> Self {
        ResolverPolicy {
            timeout_ms: 5000,
            retries: 0,
            max_concurrency: 64,
        }
    }
}

type MemoCell = Arc<OnceLock<Result<QueryResult, BackendError>>>;

/// Run-scoped memo with first-writer-wins semantics: for any
/// (name, type), the underlying backend sees at most one query, even when
/// workers race on the same key.
pub struct MemoBackend<B> {
    inner: B,
    cells: Mutex<HashMap<(DomainName, RecordType), MemoCell>>,
}

impl<B: QueryBackend> MemoBackend<B> {
    pub fn new(inner: B) -> Self {
        MemoBackend {
            inner,
            cells: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: QueryBackend> QueryBackend for MemoBackend<B> {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError> {
        let cell = {
            let mut cells = self.cells.lock().unwrap();
            cells.entry((name.clone(), rrtype)).or_default().clone()
        };
        // losers of the race block here until the winner has an answer
        cell.get_or_init(|| self.inner.query(name, rrtype)).clone()
    }
}

/// Records every query reaching the wrapped backend; wrap the *inner*
/// backend with this and the memo outside to observe real traffic.
pub struct CountingBackend<B> {
    inner: B,
    log: Mutex<Vec<(DomainName, RecordType)>>,
}

impl<B: QueryBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn queries(&self) -> Vec<(DomainName, RecordType)> {
        self.log.lock().unwrap().clone()
    }

    pub fn query_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl<B: QueryBackend> QueryBackend for CountingBackend<B> {
    fn query(&self, name: &DomainName, rrtype: RecordType) -> Result<QueryResult, BackendError> {
        self.log.lock().unwrap().push((name.clone(), rrtype));
        self.inner.query(name, rrtype)
    }
}

/// The reverse-lookup name for an address: in-addr.arpa for IPv4,
/// nibble-expanded ip6.arpa for IPv6.
pub fn reverse_name(address: IpAddr) -> DomainName {
    let name = match address {
        IpAddr::V4(v4) => {
            let o = v4.octets();
            format!("{}.{}.{}.{}.in-addr.arpa", o[3], o[2], o[1], o[0])
        }
        IpAddr::V6(v6) => {
            let mut labels = Vec::with_capacity(32);
            for byte in v6.octets().iter().rev() {
                labels.push(format!("{:x}", byte & 0x0f));
                labels.push(format!("{:x}", byte >> 4));
            }
            format!("{}.ip6.arpa", labels.join("."))
        }
    };
    DomainName::new(&name).expect("reverse names are always valid")
}

/// Step 3 for one address: queries the PTR of its reverse name and checks
/// forward confirmation against the owning exchanger by canonical-name
/// equality (case differences vanish during canonicalization).
pub fn ptr_lookup<B: QueryBackend + ?Sized>(
    address: IpAddr,
    owner: &DomainName,
    backend: &B,
) -> Result<PtrOutcome, BackendError> {
    let rev = reverse_name(address);
    let result = backend.query(&rev, RecordType::Ptr)?;
    let outcome = match result.status {
        LookupStatus::Ok => {
            let names: Vec<DomainName> = result
                .records
                .iter()
                .filter_map(|(rdata, _)| DomainName::new(rdata).ok())
                .collect();
            let forward_confirmed = names.iter().any(|n| n == owner);
            PtrOutcome {
                status: PtrStatus::Found,
                names,
                forward_confirmed,
            }
        }
        LookupStatus::NxDomain | LookupStatus::NoRecords => PtrOutcome {
            status: PtrStatus::NotFound,
            names: Vec::new(),
            forward_confirmed: false,
        },
        LookupStatus::Timeout | LookupStatus::ServFail => PtrOutcome {
            status: PtrStatus::Error,
            names: Vec::new(),
            forward_confirmed: false,
        },
    };
    Ok(outcome)
}

fn parse_mx_rdata(rdata: &str) -> Option<(u16, Exchanger)> {
    let mut parts = rdata.split_whitespace();
    let pref: u16 = parts.next()?.parse().ok()?;
    let exchanger = Exchanger::parse(parts.next()?).ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((pref, exchanger))
}

/// Resolves one domain through the three-step pipeline. The returned
/// profile has no classification yet; an MX-level failure yields an
/// errored profile and skips steps 2 and 3 entirely.
pub fn resolve_domain<B: QueryBackend + ?Sized>(
    domain: &DomainName,
    backend: &B,
) -> Result<DomainProfile, BackendError> {
    // step 1: MX and TXT
    let mx_result = backend.query(domain, RecordType::Mx)?;
    let txt_result = backend.query(domain, RecordType::Txt)?;

    match mx_result.status {
        LookupStatus::NxDomain | LookupStatus::Timeout | LookupStatus::ServFail => {
            return Ok(DomainProfile::errored(
                domain.clone(),
                format!("MX query failed: {:?}", mx_result.status),
            ));
        }
        LookupStatus::Ok | LookupStatus::NoRecords => {}
    }

    let mut records = Vec::with_capacity(mx_result.records.len());
    for (rdata, ttl) in &mx_result.records {
        match parse_mx_rdata(rdata) {
            Some((preference, exchanger)) => records.push(MxRecord {
                preference,
                exchanger,
                ttl: *ttl,
            }),
            None => {
                return Ok(DomainProfile::errored(
                    domain.clone(),
                    format!("malformed MX rdata {rdata:?}"),
                ))
            }
        }
    }
    let mx = MxRecordSet::new(records);

    let txt: Vec<String> = match txt_result.status {
        LookupStatus::Ok => txt_result
            .records
            .into_iter()
            .map(|(rdata, _)| rdata)
            .collect(),
        // TXT failures never exclude a domain; SPF flags simply stay false
        _ => Vec::new(),
    };

    // step 2 + 3: per distinct exchanger name; the "." root marker is
    // never queried
    let mut exchangers = Vec::new();
    for name in mx.distinct_exchanger_names() {
        let a = backend.query(&name, RecordType::A)?;
        let aaaa = backend.query(&name, RecordType::Aaaa)?;
        let ipv4: Vec<Ipv4Addr> = a
            .records
            .iter()
            .filter_map(|(rdata, _)| rdata.parse().ok())
            .collect();
        let ipv6: Vec<Ipv6Addr> = aaaa
            .records
            .iter()
            .filter_map(|(rdata, _)| rdata.parse().ok())
            .collect();

        let unique: BTreeSet<IpAddr> = ipv4
            .iter()
            .copied()
            .map(IpAddr::V4)
            .chain(ipv6.iter().copied().map(IpAddr::V6))
            .collect();
        let mut ptr = BTreeMap::new();
        for addr in unique {
            ptr.insert(addr, ptr_lookup(addr, &name, backend)?);
        }

        exchangers.push(ResolvedExchanger {
            exchanger: name,
            ipv4,
            ipv6,
            ptr,
            a_status: a.status,
            aaaa_status: aaaa.status,
            is_cname_target: a.is_cname || aaaa.is_cname,
        });
    }

    let mut profile = DomainProfile {
        domain: domain.clone(),
        median_rank: None,
        mx,
        exchangers,
        txt,
        n_a: 0,
        n_abar: 0,
        classification: None,
        flags: Default::default(),
        error: None,
    };
    let (_, n_a, n_abar) = crate::model::derive_counts(&profile);
    profile.n_a = n_a;
    profile.n_abar = n_abar;
    Ok(profile)
}
