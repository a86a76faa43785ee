//! Operator entry point: list ingestion with median-rank merging, the
//! concurrent scan pipeline, and the output files (profiles.jsonl,
//! summary.json, histogram CSVs, run_meta.json).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::classifier::{self, HostingRule};
use crate::model::{Classification, DomainName, DomainProfile};
use crate::resolver::fixture::FixtureBackend;
use crate::resolver::live::UdpBackend;
use crate::resolver::{MemoBackend, QueryBackend, ResolverPolicy};
use crate::stats::{self, SummaryOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}:{line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no domains ingested from the input files")]
    EmptyInput,
    #[error(transparent)]
    Fixture(#[from] crate::resolver::fixture::FixtureError),
    #[error(transparent)]
    HostingRules(#[from] crate::classifier::HostingRulesError),
    #[error(transparent)]
    Backend(#[from] crate::resolver::BackendError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Plain,
    RankedCsv,
}

/// Exactly one query source is active per run.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    Resolver(String),
    Fixtures(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_paths: Vec<PathBuf>,
    pub input_format: InputFormat,
    pub backend: BackendChoice,
    pub concurrency: usize,
    pub timeout_ms: u64,
    pub output_dir: PathBuf,
    pub hosting_rules_path: Option<PathBuf>,
}

/// Reads the input files into unique canonical domains. For ranked CSV
/// input ("rank,domain" lines) each domain gets the median of its ranks
/// across all files it appears in; duplicate mentions within one file
/// collapse silently to the first.
pub fn ingest(
    paths: &[PathBuf],
    format: InputFormat,
) -> Result<Vec<(DomainName, Option<f64>)>, CliError> {
    let mut ranks: BTreeMap<DomainName, Vec<u64>> = BTreeMap::new();

    for path in paths {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: file.clone(),
            source,
        })?;
        let mut seen_in_file = std::collections::BTreeSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| CliError::Parse {
                file: file.clone(),
                line: idx + 1,
                reason,
            };
            let (domain, rank) = match format {
                InputFormat::Plain => {
                    let domain = DomainName::new(line).map_err(|e| parse_err(e.to_string()))?;
                    (domain, None)
                }
                InputFormat::RankedCsv => {
                    let (rank_part, domain_part) = line
                        .split_once(',')
                        .ok_or_else(|| parse_err("expected \"rank,domain\"".to_string()))?;
                    let rank: u64 = rank_part
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("bad rank {rank_part:?}")))?;
                    if rank == 0 {
                        return Err(parse_err("rank must be positive".to_string()));
                    }
                    let domain = DomainName::new(domain_part.trim())
                        .map_err(|e| parse_err(e.to_string()))?;
                    (domain, Some(rank))
                }
            };
            if !seen_in_file.insert(domain.clone()) {
                continue;
            }
            let entry = ranks.entry(domain).or_default();
            if let Some(r) = rank {
                entry.push(r);
            }
        }
    }

    Ok(ranks
        .into_iter()
        .map(|(domain, rs)| {
            let median = if rs.is_empty() {
                None
            } else {
                Some(stats::median_rank(&rs))
            };
            (domain, median)
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct ConfigEcho {
    input_paths: Vec<String>,
    input_format: InputFormat,
    resolver_address: Option<String>,
    fixture_dir: Option<String>,
    concurrency: usize,
    timeout_ms: u64,
    output_dir: String,
    hosting_rules_path: Option<String>,
}

#[derive(Debug, Serialize)]
struct RunMeta {
    timestamp_unix: Option<u64>,
    config: ConfigEcho,
    k_q: u64,
    k_w: u64,
    k_nullmx: u64,
    k: u64,
    errored: u64,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes())
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Resolves and audits every domain with a bounded worker pool, then
/// writes the output files. Per-domain failures never abort the run.
fn scan_domains(
    domains: &[(DomainName, Option<f64>)],
    backend: &dyn QueryBackend,
    rules: &[HostingRule],
    concurrency: usize,
) -> Vec<DomainProfile> {
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<DomainProfile>>> = Mutex::new(vec![None; domains.len()]);
    let workers = concurrency.clamp(1, domains.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::Relaxed);
                if idx >= domains.len() {
                    break;
                }
                let (domain, rank) = &domains[idx];
                let mut profile = match crate::resolver::resolve_domain(domain, backend) {
                    Ok(p) => p,
                    Err(e) => DomainProfile::errored(domain.clone(), e.to_string()),
                };
                profile.median_rank = *rank;
                let profile = classifier::audit(profile, rules);
                slots.lock().unwrap()[idx] = Some(profile);
            });
        }
    });

    // input order is sorted by domain, so output order is too
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("worker filled every slot"))
        .collect()
}

fn run_inner(config: &RunConfig) -> Result<i32, CliError> {
    let domains = ingest(&config.input_paths, config.input_format)?;
    if domains.is_empty() {
        return Err(CliError::EmptyInput);
    }

    let rules = match &config.hosting_rules_path {
        Some(path) => classifier::load_hosting_rules(path)?,
        None => classifier::default_hosting_rules(),
    };

    let policy = ResolverPolicy {
        timeout_ms: config.timeout_ms,
        retries: 0,
        max_concurrency: config.concurrency,
    };
    let (backend, live_mode): (MemoBackend<Box<dyn QueryBackend>>, bool) = match &config.backend {
        BackendChoice::Fixtures(dir) => {
            let fixture = FixtureBackend::load(dir)?;
            (MemoBackend::new(Box::new(fixture)), false)
        }
        BackendChoice::Resolver(addr) => {
            let udp = UdpBackend::from_resolver_addr(addr, &policy)?;
            (MemoBackend::new(Box::new(udp)), true)
        }
    };

    let profiles = scan_domains(&domains, &backend, &rules, policy.max_concurrency);
    let errored = profiles.iter().filter(|p| p.is_errored()).count() as u64;

    let summary = stats::summarize(&profiles, &SummaryOptions::default())?;

    std::fs::create_dir_all(&config.output_dir).map_err(|source| CliError::Io {
        path: config.output_dir.display().to_string(),
        source,
    })?;
    let out = |name: &str| config.output_dir.join(name);

    let mut jsonl = String::new();
    for profile in &profiles {
        jsonl.push_str(&serde_json::to_string(profile).expect("profile serializes"));
        jsonl.push('\n');
    }
    write_file(&out("profiles.jsonl"), &jsonl)?;

    let mut summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    write_file(&out("summary.json"), &summary_json)?;

    write_file(&out("hist_mx.csv"), &summary.mx_count_hist.to_csv())?;
    write_file(&out("hist_a.csv"), &summary.a_count_hist.to_csv())?;
    write_file(&out("hist_aaaa.csv"), &summary.aaaa_count_hist.to_csv())?;
    write_file(
        &out("hist_pref_stddev.csv"),
        &summary.pref_stddev_hist.to_csv(),
    )?;
    write_file(&out("hist_ttl.csv"), &summary.ttl_hist.to_csv())?;

    // wall-clock time only in live mode, so fixture runs stay byte-stable
    let timestamp_unix = live_mode.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let (resolver_address, fixture_dir) = match &config.backend {
        BackendChoice::Resolver(addr) => (Some(addr.clone()), None),
        BackendChoice::Fixtures(dir) => (None, Some(dir.display().to_string())),
    };
    let meta = RunMeta {
        timestamp_unix,
        config: ConfigEcho {
            input_paths: config
                .input_paths
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            input_format: config.input_format,
            resolver_address,
            fixture_dir,
            concurrency: config.concurrency,
            timeout_ms: config.timeout_ms,
            output_dir: config.output_dir.display().to_string(),
            hosting_rules_path: config
                .hosting_rules_path
                .as_ref()
                .map(|p| p.display().to_string()),
        },
        k_q: summary.k_q,
        k_w: summary.k_w,
        k_nullmx: summary.k_nullmx,
        k: summary.k,
        errored,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    write_file(&out("run_meta.json"), &meta_json)?;

    if errored * 2 > profiles.len() as u64 {
        return Ok(2);
    }
    Ok(0)
}

/// Full scan: exit 0 on success, 1 on fatal config/IO errors, 2 when more
/// than half of the domains errored.
pub fn run(config: &RunConfig) -> i32 {
    match run_inner(config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mx-audit: {e}");
            1
        }
    }
}

/// The `classify` subcommand: counts in, label out.
pub fn classify_label(n_m: u32, n_a: u32, n_abar: u32) -> Classification {
    classifier::classify(n_m, n_a, n_abar)
}
