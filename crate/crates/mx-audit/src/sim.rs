//! Client-side MTA exchanger selection and server-side round-robin
//! rotation, simulated to validate the load-distribution and fail-over
//! semantics the taxonomy presumes.

use std::collections::BTreeMap;
use std::net::IpAddr;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DomainName;
use crate::resolver::fixture::FixtureBackend;
use crate::resolver::{QueryBackend, RecordType};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// One exchanger in a pool with per-address availability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub exchanger: DomainName,
    pub preference: u16,
    pub addresses: Vec<IpAddr>,
    pub available: Vec<bool>,
}

impl PoolEntry {
    pub fn new(exchanger: DomainName, preference: u16, addresses: Vec<IpAddr>) -> Self {
        let available = vec![true; addresses.len()];
        PoolEntry {
            exchanger,
            preference,
            addresses,
            available,
        }
    }
}

/// A server pool: the MX RRset plus the address lists behind it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerPool {
    entries: Vec<PoolEntry>,
}

impl ServerPool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<Self, SimError> {
        if entries.is_empty() {
            return Err(SimError::InvalidPool("no entries".into()));
        }
        for e in &entries {
            if e.addresses.is_empty() {
                return Err(SimError::InvalidPool(format!(
                    "exchanger {} has no addresses",
                    e.exchanger
                )));
            }
            if e.available.len() != e.addresses.len() {
                return Err(SimError::InvalidPool(format!(
                    "exchanger {} availability length mismatch",
                    e.exchanger
                )));
            }
        }
        Ok(ServerPool { entries })
    }

    /// Builds a pool from resolver fixtures: one MX RRset plus the
    /// A/AAAA RRsets of its exchangers. All addresses start available.
    pub fn from_fixture(backend: &FixtureBackend, domain: &DomainName) -> Result<Self, SimError> {
        let mx = backend
            .query(domain, RecordType::Mx)
            .map_err(|e| SimError::Fixture(e.to_string()))?;
        if mx.records.is_empty() {
            return Err(SimError::InvalidPool(format!("no MX records for {domain}")));
        }
        let mut entries = Vec::new();
        for (rdata, _ttl) in &mx.records {
            let mut parts = rdata.split_whitespace();
            let preference: u16 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| SimError::InvalidPool(format!("bad MX rdata {rdata:?}")))?;
            let raw_name = parts
                .next()
                .ok_or_else(|| SimError::InvalidPool(format!("bad MX rdata {rdata:?}")))?;
            if raw_name == "." {
                return Err(SimError::InvalidPool(format!(
                    "{domain} is a Null-MX domain"
                )));
            }
            let exchanger =
                DomainName::new(raw_name).map_err(|e| SimError::InvalidPool(e.to_string()))?;

            let mut addresses: Vec<IpAddr> = Vec::new();
            for rrtype in [RecordType::A, RecordType::Aaaa] {
                let result = backend
                    .query(&exchanger, rrtype)
                    .map_err(|e| SimError::Fixture(e.to_string()))?;
                addresses.extend(
                    result
                        .records
                        .iter()
                        .filter_map(|(r, _)| r.parse::<IpAddr>().ok()),
                );
            }
            if addresses.is_empty() {
                return Err(SimError::InvalidPool(format!(
                    "exchanger {exchanger} resolves to no addresses"
                )));
            }
            entries.push(PoolEntry::new(exchanger, preference, addresses));
        }
        ServerPool::new(entries)
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn mark_unavailable(&mut self, address: IpAddr) {
        for e in &mut self.entries {
            for (addr, avail) in e.addresses.iter().zip(&mut e.available) {
                if *addr == address {
                    *avail = false;
                }
            }
        }
    }
}

/// Candidate ordering a client MTA derives from the pool: ascending
/// preference, equal-preference exchangers in a seeded uniform random
/// order, each exchanger's addresses kept in served order.
pub fn mta_select(pool: &ServerPool, rng_seed: u64) -> Vec<(DomainName, IpAddr)> {
    let mut rng = StdRng::seed_from_u64(rng_seed);
    mta_select_with(pool, &mut rng)
}

fn mta_select_with(pool: &ServerPool, rng: &mut StdRng) -> Vec<(DomainName, IpAddr)> {
    let mut order: Vec<usize> = (0..pool.entries.len()).collect();
    // stable sort keeps served order inside groups before the shuffle
    order.sort_by_key(|&i| pool.entries[i].preference);

    let mut out = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let pref = pool.entries[order[start]].preference;
        let mut end = start;
        while end < order.len() && pool.entries[order[end]].preference == pref {
            end += 1;
        }
        order[start..end].shuffle(rng);
        for &i in &order[start..end] {
            let entry = &pool.entries[i];
            for addr in &entry.addresses {
                out.push((entry.exchanger.clone(), *addr));
            }
        }
        start = end;
    }
    out
}

/// Server-side round-robin state: the answer order rotates left by one
/// after every query, so `order` is always a permutation of the original
/// address list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRobinState {
    pub order: Vec<IpAddr>,
    pub rotation_index: u64,
}

impl RoundRobinState {
    pub fn new(addresses: Vec<IpAddr>) -> Self {
        RoundRobinState {
            order: addresses,
            rotation_index: 0,
        }
    }
}

/// Answers with the current order, then rotates for the next query.
pub fn round_robin_answer(state: &RoundRobinState) -> (Vec<IpAddr>, RoundRobinState) {
    let answer = state.order.clone();
    let mut next = state.order.clone();
    if !next.is_empty() {
        next.rotate_left(1);
    }
    (
        answer,
        RoundRobinState {
            order: next,
            rotation_index: state.rotation_index + 1,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientPolicy {
    /// Take the first address returned, moving on only on failure.
    FirstAddress,
    /// Pick among the returned candidates in random order.
    RandomAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServerPolicy {
    /// Rotate the answer by one position per query.
    Rotate,
    /// Return a fresh random permutation per query.
    RandomPermutation,
}

/// Result of a simulation run; selection counts plus failures always sum
/// to the trial count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: u64,
    pub selection_counts: BTreeMap<IpAddr, u64>,
    pub failed_deliveries: u64,
}

impl TrialReport {
    /// Deliveries that landed on any address of the given exchanger.
    pub fn count_for_exchanger(&self, pool: &ServerPool, exchanger: &DomainName) -> u64 {
        pool.entries
            .iter()
            .filter(|e| &e.exchanger == exchanger)
            .flat_map(|e| e.addresses.iter())
            .map(|a| self.selection_counts.get(a).copied().unwrap_or(0))
            .sum()
    }
}

/// Runs repeated delivery attempts against the pool. Single-exchanger
/// pools answer through server-side rotation (or random permutation);
/// multi-exchanger pools order candidates per trial via `mta_select`. The
/// client walks its candidate list skipping unavailable addresses and
/// records the delivered address, or a failed delivery when everything is
/// down.
pub fn run_trials(
    pool: &ServerPool,
    client_policy: ClientPolicy,
    server_policy: ServerPolicy,
    n_trials: u64,
    seed: u64,
) -> TrialReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut counts: BTreeMap<IpAddr, u64> = BTreeMap::new();
    let mut failed = 0u64;

    let availability: BTreeMap<IpAddr, bool> = pool
        .entries
        .iter()
        .flat_map(|e| e.addresses.iter().copied().zip(e.available.iter().copied()))
        .collect();

    let single = pool.entries.len() == 1;
    let mut rr_state = RoundRobinState::new(pool.entries[0].addresses.clone());

    for _ in 0..n_trials {
        let mut candidates: Vec<IpAddr> = if single {
            match server_policy {
                ServerPolicy::Rotate => {
                    let (answer, next) = round_robin_answer(&rr_state);
                    rr_state = next;
                    answer
                }
                ServerPolicy::RandomPermutation => {
                    let mut answer = pool.entries[0].addresses.clone();
                    answer.shuffle(&mut rng);
                    answer
                }
            }
        } else {
            let trial_seed = rng.random::<u64>();
            mta_select(pool, trial_seed)
                .into_iter()
                .map(|(_, a)| a)
                .collect()
        };

        if client_policy == ClientPolicy::RandomAddress {
            candidates.shuffle(&mut rng);
        }

        match candidates
            .iter()
            .find(|a| availability.get(a).copied().unwrap_or(false))
        {
            Some(addr) => *counts.entry(*addr).or_insert(0) += 1,
            None => failed += 1,
        }
    }

    TrialReport {
        trials: n_trials,
        selection_counts: counts,
        failed_deliveries: failed,
    }
}
