//! mx-audit resolves DNS email-delivery records for a corpus of domains,
//! classifies each domain's basic load-balancing/fail-over configuration,
//! detects misconfigurations, and aggregates corpus statistics. A small
//! simulator validates the MTA-selection and round-robin semantics the
//! classification presumes.
//!
//! The pipeline runs in three steps per domain: MX and TXT for the domain
//! itself, A/AAAA for each distinct exchanger, then PTR for every address
//! received. Backends are pluggable — a live stub resolver for
//! measurement runs, JSON fixtures for deterministic offline runs — and a
//! run-scoped memo guarantees that no (name, type) query is issued twice.

pub mod classifier;
pub mod cli;
pub mod model;
pub mod resolver;
pub mod sim;
pub mod stats;

pub use classifier::{audit, classify, is_null_mx};
pub use model::{Classification, DomainName, DomainProfile};
pub use resolver::{resolve_domain, QueryBackend, ResolverPolicy};
pub use stats::{summarize, CorpusSummary};
