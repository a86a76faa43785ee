//! Acceptance suite: one test per criterion, each printing a pass line
//! (visible with `cargo test --test acceptance -- --nocapture`).

use std::collections::BTreeSet;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mx_audit::classifier::{
    classify, default_hosting_rules, detect_hosting, detect_private_or_local, is_null_mx,
};
use mx_audit::cli::{self, BackendChoice, InputFormat, RunConfig};
use mx_audit::model::{Classification, DomainName, Exchanger, MxRecord, MxRecordSet};
use mx_audit::resolver::fixture::FixtureBackend;
use mx_audit::resolver::{ptr_lookup, resolve_domain, CountingBackend, MemoBackend, RecordType};
use mx_audit::sim::{run_trials, ClientPolicy, PoolEntry, ServerPolicy, ServerPool};
use mx_audit::stats::{chi2, kruskal_wallis, pearson, pref_stddev};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_config(out: &Path) -> RunConfig {
    RunConfig {
        input_paths: vec![
            fixtures_dir().join("ranks_week1.csv"),
            fixtures_dir().join("ranks_week2.csv"),
        ],
        input_format: InputFormat::RankedCsv,
        backend: BackendChoice::Fixtures(fixtures_dir().join("zones.json")),
        concurrency: 8,
        timeout_ms: 1000,
        output_dir: out.to_path_buf(),
        hosting_rules_path: None,
    }
}

/// Rule-table oracle written independently of the classifier: evaluates
/// all six configuration definitions as predicates, checks they are
/// pairwise disjoint, and falls through to NonIdentified.
fn taxonomy_oracle(n_m: u32, n_a: u32, n_abar: u32) -> Classification {
    if n_m == 0 {
        return Classification::NoMx;
    }
    let definitions: [(Classification, bool); 6] = [
        (
            Classification::PlainV4Only,
            n_m == 1 && n_a == 1 && n_abar == 0,
        ),
        (
            Classification::PlainV6Only,
            n_m == 1 && n_a == 0 && n_abar == 1,
        ),
        (
            Classification::PlainDualStack,
            n_m == 1 && n_a == 1 && n_abar == 1,
        ),
        (
            Classification::RoundRobin,
            n_m == 1 && (n_a > 1 || n_abar > 1),
        ),
        (
            Classification::MxBalancing,
            n_m > 1 && (n_a == n_m || n_abar == n_m),
        ),
        (
            Classification::Hybrid,
            n_m > 1 && !(n_a == n_m || n_abar == n_m) && n_a + n_abar > 0,
        ),
    ];
    let matches: Vec<Classification> = definitions
        .iter()
        .filter(|(_, fires)| *fires)
        .map(|(label, _)| *label)
        .collect();
    assert!(
        matches.len() <= 1,
        "definitions overlap at ({n_m}, {n_a}, {n_abar}): {matches:?}"
    );
    matches
        .first()
        .copied()
        .unwrap_or(Classification::NonIdentified)
}

#[test]
fn criterion_1_taxonomy_oracle() {
    let start = Instant::now();
    for n_m in 0..=20 {
        for n_a in 0..=20 {
            for n_abar in 0..=20 {
                assert_eq!(
                    classify(n_m, n_a, n_abar),
                    taxonomy_oracle(n_m, n_a, n_abar),
                    "divergence at ({n_m}, {n_a}, {n_abar})"
                );
            }
        }
    }
    assert_eq!(classify(1, 2, 0), Classification::RoundRobin);
    assert_eq!(classify(2, 3, 0), Classification::Hybrid);
    assert_eq!(classify(17, 173, 0), Classification::Hybrid);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "sweep took {elapsed:?}");
    println!("[PASS] criterion 1: taxonomy sweep [0,20]^3 matches rule-table oracle ({elapsed:?})");
}

#[test]
fn criterion_2_null_mx_rule() {
    let regular = |pref: u16| MxRecord {
        preference: pref,
        exchanger: Exchanger::parse("mx.x.tld").unwrap(),
        ttl: 60,
    };
    let combo = |single: bool, pref_zero: bool, root: bool| {
        let pref = if pref_zero { 0 } else { 10 };
        let exchanger = if root {
            Exchanger::Root
        } else {
            Exchanger::parse("mx.x.tld").unwrap()
        };
        let mut records = vec![MxRecord {
            preference: pref,
            exchanger,
            ttl: 60,
        }];
        if !single {
            records.push(regular(20));
        }
        MxRecordSet::new(records)
    };
    for single in [false, true] {
        for pref_zero in [false, true] {
            for root in [false, true] {
                let expected = single && pref_zero && root;
                let set = combo(single, pref_zero, root);
                assert_eq!(
                    is_null_mx(&set),
                    expected,
                    "combo single={single} pref_zero={pref_zero} root={root}"
                );
            }
        }
    }
    println!("[PASS] criterion 2: Null-MX rule correct on all 8 boolean combinations");
}

#[test]
fn criterion_3_golden_corpus() {
    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    assert_eq!(cli::run(&golden_config(out.path())), 0);

    for file in ["profiles.jsonl", "summary.json"] {
        let actual = std::fs::read(out.path().join(file)).unwrap();
        let golden = std::fs::read(golden_dir().join(file)).unwrap();
        assert_eq!(
            actual, golden,
            "{file} deviates from the frozen golden copy"
        );
    }

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("run_meta.json")).unwrap())
            .unwrap();
    let (k_q, k_w, k_nullmx, k) = (
        meta["k_q"].as_u64().unwrap(),
        meta["k_w"].as_u64().unwrap(),
        meta["k_nullmx"].as_u64().unwrap(),
        meta["k"].as_u64().unwrap(),
    );
    assert_eq!(k, k_q - (k_w + k_nullmx), "sample identity violated");
    assert_eq!((k_q, k_w, k_nullmx, k), (40, 4, 3, 33));

    // line accounting: every ingested domain appears exactly once
    let jsonl = std::fs::read_to_string(out.path().join("profiles.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = jsonl
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len() as u64, k_q);
    let errored = lines.iter().filter(|l| !l["error"].is_null()).count() as u64;
    let no_mx = lines
        .iter()
        .filter(|l| l["classification"] == "NoMx")
        .count() as u64;
    let null_mx = lines
        .iter()
        .filter(|l| l["classification"] == "NullMx")
        .count() as u64;
    let analyzed = lines.len() as u64 - errored - no_mx - null_mx;
    assert_eq!(analyzed, k);
    assert_eq!(meta["errored"].as_u64().unwrap(), errored);

    // every category appears at least three times
    for class in [
        "PlainV4Only",
        "PlainV6Only",
        "PlainDualStack",
        "RoundRobin",
        "MxBalancing",
        "Hybrid",
        "NonIdentified",
        "NoMx",
        "NullMx",
    ] {
        let n = lines
            .iter()
            .filter(|l| l["classification"] == class)
            .count();
        assert!(n >= 3, "{class} appears only {n} times");
    }

    // aggregates recomputed by an independent implementation before the
    // goldens were frozen
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap())
            .unwrap();
    let close = |v: &serde_json::Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-9;
    assert!(close(&summary["corr_mx_a"], 0.5806199131253279));
    assert!(close(&summary["corr_mx_aaaa"], -0.09958172070926556));
    assert!(close(&summary["equal_pref_share"], 3.0 / 13.0));
    assert!(close(&summary["ttl_below_2000_share"], 17.0 / 33.0));
    assert!(close(&summary["kruskal_wallis"]["h"], 28.045161290322582));
    assert!(close(&summary["rank_medians"]["PlainV4Only"], 352.75));
    assert!(close(
        &summary["hosting_crosstab"]["MxBalancing"]["hosting"],
        1.0 / 3.0
    ));
    assert!(close(&summary["audit_shares"]["ipv6_enabled"], 9.0 / 33.0));
    assert!(close(&summary["audit_shares"]["has_spf"], 8.0 / 33.0));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "golden run took {elapsed:?}");
    println!("[PASS] criterion 3: golden 40-domain corpus byte-identical, k-identity exact ({elapsed:?})");
}

#[test]
fn criterion_4_statistics_oracles() {
    // brute-force covariance oracle, straight from the definition
    fn pearson_by_definition(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let cov = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - mean_x) * (b - mean_y))
            .sum::<f64>()
            / n;
        let sd_x = (x.iter().map(|a| (a - mean_x).powi(2)).sum::<f64>() / n).sqrt();
        let sd_y = (y.iter().map(|b| (b - mean_y).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sd_x * sd_y)
    }

    let mut rng = StdRng::seed_from_u64(20191104);
    for trial in 0..100 {
        let len = rng.random_range(2..60);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-50.0..50.0)).collect();
        match pearson(&x, &y) {
            Ok(r) => {
                let expected = pearson_by_definition(&x, &y);
                assert!(
                    (r - expected).abs() < 1e-12,
                    "trial {trial}: {r} vs {expected}"
                );
            }
            Err(_) => panic!("random continuous vectors cannot be constant"),
        }
    }

    let kw = kruskal_wallis(&[
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ])
    .unwrap();
    assert!((kw.h - 7.2).abs() < 1e-9, "H = {}", kw.h);

    // monotone transform invariance (rank-based statistic)
    let transformed: Vec<Vec<f64>> = [[1.0f64, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
        .iter()
        .map(|g| g.iter().map(|v| (v / 2.0).exp()).collect())
        .collect();
    let kw_t = kruskal_wallis(&transformed).unwrap();
    assert!((kw_t.h - kw.h).abs() < 1e-9);

    assert_eq!(pref_stddev(&[10, 20]), 5.0);
    println!("[PASS] criterion 4: pearson/kruskal-wallis/pref-stddev match independent oracles");
}

#[test]
fn criterion_5_simulator_distribution() {
    let start = Instant::now();
    let name = |s: &str| DomainName::new(s).unwrap();
    let addr = |s: &str| s.parse::<IpAddr>().unwrap();

    // 4 equal-preference exchangers, 100k trials
    let pool = ServerPool::new(vec![
        PoolEntry::new(name("mx1.eq.tld"), 10, vec![addr("10.0.0.1")]),
        PoolEntry::new(name("mx2.eq.tld"), 10, vec![addr("10.0.0.2")]),
        PoolEntry::new(name("mx3.eq.tld"), 10, vec![addr("10.0.0.3")]),
        PoolEntry::new(name("mx4.eq.tld"), 10, vec![addr("10.0.0.4")]),
    ])
    .unwrap();
    let trials = 100_000u64;
    let report = run_trials(
        &pool,
        ClientPolicy::FirstAddress,
        ServerPolicy::Rotate,
        trials,
        42,
    );
    assert_eq!(report.failed_deliveries, 0);
    let mut chi2_stat = 0.0;
    let expected = trials as f64 / 4.0;
    for entry in pool.entries() {
        let count = report.count_for_exchanger(&pool, &entry.exchanger);
        let share = count as f64 / trials as f64;
        assert!(
            (share - 0.25).abs() <= 0.01,
            "{} got share {share}",
            entry.exchanger
        );
        chi2_stat += (count as f64 - expected).powi(2) / expected;
    }
    let p = chi2::chi_square_sf(chi2_stat, 3.0);
    assert!(p > 0.001, "chi-square GOF p = {p} (stat {chi2_stat})");

    // strict preferences: the lowest value takes everything
    let strict = ServerPool::new(vec![
        PoolEntry::new(name("backup.tld"), 20, vec![addr("10.1.0.1")]),
        PoolEntry::new(name("primary.tld"), 5, vec![addr("10.1.0.2")]),
        PoolEntry::new(name("tertiary.tld"), 30, vec![addr("10.1.0.3")]),
    ])
    .unwrap();
    for seed in [0, 1, 99] {
        let report = run_trials(
            &strict,
            ClientPolicy::FirstAddress,
            ServerPolicy::Rotate,
            10_000,
            seed,
        );
        assert_eq!(
            report.count_for_exchanger(&strict, &name("primary.tld")),
            10_000
        );
    }

    // round-robin rotation splits a two-address pool exactly
    let rr = ServerPool::new(vec![PoolEntry::new(
        name("mx.rr.tld"),
        10,
        vec![addr("10.2.0.1"), addr("10.2.0.2")],
    )])
    .unwrap();
    let report = run_trials(
        &rr,
        ClientPolicy::FirstAddress,
        ServerPolicy::Rotate,
        10_000,
        7,
    );
    assert_eq!(report.selection_counts[&addr("10.2.0.1")], 5000);
    assert_eq!(report.selection_counts[&addr("10.2.0.2")], 5000);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "simulation took {elapsed:?}");
    println!("[PASS] criterion 5: simulator distributions within bounds ({elapsed:?})");
}

#[test]
fn criterion_6_detector_suite() {
    // documented ranges at their boundaries
    let in_range = [
        "10.0.0.0",
        "172.16.0.0",
        "192.168.0.0",
        "127.0.0.1",
        "fc00::",
        "fd00::1",
        "::1",
    ];
    for a in in_range {
        assert!(
            detect_private_or_local([a.parse::<IpAddr>().unwrap()]),
            "{a} should match"
        );
    }
    let out_of_range = [
        "9.255.255.255",
        "172.32.0.0",
        "11.0.0.0",
        "172.15.255.255",
        "192.169.0.0",
        "fe00::",
        "fbff::ffff",
        "::2",
        "8.8.8.8",
    ];
    for a in out_of_range {
        assert!(
            !detect_private_or_local([a.parse::<IpAddr>().unwrap()]),
            "{a} must not match"
        );
    }

    // PTR forward-confirmation is case-insensitive
    let backend = FixtureBackend::from_json_str(
        r#"{"4.3.2.1.in-addr.arpa PTR": {"status": "OK", "ttl": 60, "records": ["MX.Domain.TLD."]}}"#,
    )
    .unwrap();
    let outcome = ptr_lookup(
        "1.2.3.4".parse().unwrap(),
        &DomainName::new("mx.domain.tld").unwrap(),
        &backend,
    )
    .unwrap();
    assert!(
        outcome.forward_confirmed,
        "case difference broke forward confirmation"
    );

    // hosting never fires on non-label-boundary suffixes
    let rules = default_hosting_rules();
    let mut rng = StdRng::seed_from_u64(5321);
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz0123456789-".chars().collect();
    for _ in 0..1000 {
        let len = rng.random_range(1..12);
        let mut prefix: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        if prefix.starts_with('-') {
            prefix.insert(0, 'x');
        }
        let suffix = ["google.com", "googlemail.com", "outlook.com"][rng.random_range(0..3)];
        let glued = format!("{prefix}{suffix}");
        let set = MxRecordSet::new(vec![MxRecord {
            preference: 10,
            exchanger: Exchanger::parse(&glued).unwrap(),
            ttl: 60,
        }]);
        assert!(
            detect_hosting(&set, &rules).is_empty(),
            "{glued} matched on a partial label"
        );
        // the same name with a label boundary must match
        let bounded = format!("{prefix}.{suffix}");
        let set = MxRecordSet::new(vec![MxRecord {
            preference: 10,
            exchanger: Exchanger::parse(&bounded).unwrap(),
            ttl: 60,
        }]);
        assert!(
            !detect_hosting(&set, &rules).is_empty(),
            "{bounded} should match"
        );
    }
    println!(
        "[PASS] criterion 6: boundary addresses, case-insensitive PTR, label-boundary hosting"
    );
}

#[test]
fn criterion_7_pipeline_frugality() {
    let fixtures = FixtureBackend::load(&fixtures_dir().join("zones.json")).unwrap();

    // ground truth taken straight from the fixture data
    let mut exchanger_names: BTreeSet<DomainName> = BTreeSet::new();
    let mut served_reverse_names: BTreeSet<DomainName> = BTreeSet::new();
    let mut domains: Vec<DomainName> = Vec::new();
    for owner in fixtures.mx_owner_names() {
        domains.push(owner.clone());
        let mx =
            mx_audit::resolver::QueryBackend::query(&fixtures, &owner, RecordType::Mx).unwrap();
        for (rdata, _) in &mx.records {
            let exch = rdata.split_whitespace().nth(1).unwrap();
            if exch != "." {
                exchanger_names.insert(DomainName::new(exch).unwrap());
            }
        }
    }
    for name in &exchanger_names {
        for rrtype in [RecordType::A, RecordType::Aaaa] {
            let result = mx_audit::resolver::QueryBackend::query(&fixtures, name, rrtype).unwrap();
            for (rdata, _) in &result.records {
                let addr: IpAddr = rdata.parse().unwrap();
                served_reverse_names.insert(mx_audit::resolver::reverse_name(addr));
            }
        }
    }

    let backend = MemoBackend::new(CountingBackend::new(fixtures));
    for domain in &domains {
        resolve_domain(domain, &backend).unwrap();
    }

    let log = backend.inner().queries();
    // no duplicate (name, type) pair ever reaches the backend
    let unique: BTreeSet<_> = log.iter().cloned().collect();
    assert_eq!(unique.len(), log.len(), "duplicate backend queries issued");

    for (name, rrtype) in &log {
        match rrtype {
            RecordType::A | RecordType::Aaaa => {
                assert!(
                    exchanger_names.contains(name),
                    "step-2 query for non-exchanger {name} (root marker must never be queried)"
                );
            }
            RecordType::Ptr => {
                assert!(
                    served_reverse_names.contains(name),
                    "step-3 query for unreceived address reverse {name}"
                );
            }
            RecordType::Mx | RecordType::Txt => {
                assert!(
                    domains.contains(name),
                    "step-1 query for unknown domain {name}"
                );
            }
        }
    }
    println!(
        "[PASS] criterion 7: {} backend queries, all unique, none for '.' or unreceived addresses",
        log.len()
    );
}

#[test]
fn criterion_8_determinism() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_config(out.path());
    let files = [
        "profiles.jsonl",
        "summary.json",
        "run_meta.json",
        "hist_mx.csv",
        "hist_a.csv",
        "hist_aaaa.csv",
        "hist_pref_stddev.csv",
        "hist_ttl.csv",
    ];

    assert_eq!(cli::run(&config), 0);
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| std::fs::read(out.path().join(f)).unwrap())
        .collect();

    assert_eq!(cli::run(&config), 0);
    for (file, before) in files.iter().zip(&first) {
        let after = std::fs::read(out.path().join(file)).unwrap();
        assert_eq!(&after, before, "{file} changed between consecutive runs");
    }

    // JSONL order is sorted by domain
    let jsonl = std::fs::read_to_string(out.path().join("profiles.jsonl")).unwrap();
    let domains: Vec<String> = jsonl
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["domain"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    let mut sorted = domains.clone();
    sorted.sort();
    assert_eq!(domains, sorted, "profiles.jsonl is not sorted by domain");
    println!("[PASS] criterion 8: consecutive fixture runs byte-identical, JSONL sorted");
}
