//! Corpus-level aggregates: class counts and shares, record-count and TTL
//! histograms, Pearson correlations, preference-stddev distribution, the
//! hosting cross-tabulation, median popularity ranks, and the
//! Kruskal-Wallis rank test.

pub mod chi2;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::detect_spf;
use crate::model::{Classification, DomainProfile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Pearson product-moment correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::DegenerateInput("length mismatch".into()));
    }
    if x.len() < 2 {
        return Err(StatsError::DegenerateInput(
            "need at least two points".into(),
        ));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(StatsError::DegenerateInput("constant vector".into()));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Population standard deviation (divisor n) of a preference vector.
pub fn pref_stddev(prefs: &[u16]) -> f64 {
    if prefs.is_empty() {
        return 0.0;
    }
    let n = prefs.len() as f64;
    let mean = prefs.iter().map(|p| *p as f64).sum::<f64>() / n;
    let ss = prefs
        .iter()
        .map(|p| (*p as f64 - mean).powi(2))
        .sum::<f64>();
    (ss / n).sqrt()
}

/// Median of a non-empty list; even-length lists average the two middle
/// values, so the result may be a half-integer.
pub fn median_rank(ranks: &[u64]) -> f64 {
    assert!(!ranks.is_empty(), "median of empty list");
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    median_sorted_f64(&sorted.iter().map(|r| *r as f64).collect::<Vec<_>>())
}

fn median_sorted_f64(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p_value: f64,
}

/// Midranks of the pooled observations, ties averaged.
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let n = pooled.len();
    let mut index: Vec<usize> = (0..n).collect();
    index.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).expect("NaN in rank data"));
    let mut ranks = vec![0.0; n];
    let mut tie_sum = 0.0; // Σ (t³ − t) over tie groups
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[index[j]] == pooled[index[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0; // mean of ranks i+1 ..= j
        for k in i..j {
            ranks[index[k]] = avg;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    (ranks, tie_sum)
}

/// Kruskal-Wallis H test with midrank tie handling and the standard tie
/// correction; the p-value comes from the chi-square upper tail with
/// (groups − 1) degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::DegenerateInput(
            "need at least two groups".into(),
        ));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::DegenerateInput("empty group".into()));
    }
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    if n_total < 3 {
        return Err(StatsError::DegenerateInput(
            "need at least three observations".into(),
        ));
    }

    let mut pooled = Vec::with_capacity(n_total);
    let mut labels = Vec::with_capacity(n_total);
    for (gi, g) in groups.iter().enumerate() {
        for &v in g {
            pooled.push(v);
            labels.push(gi);
        }
    }
    let (ranks, tie_sum) = midranks(&pooled);

    let mut rank_sums = vec![0.0; groups.len()];
    for (rank, &gi) in ranks.iter().zip(&labels) {
        rank_sums[gi] += rank;
    }

    let n = n_total as f64;
    let mut h = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        h += rank_sums[gi] * rank_sums[gi] / g.len() as f64;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

    let correction = 1.0 - tie_sum / (n * n * n - n);
    if correction == 0.0 {
        return Err(StatsError::DegenerateInput(
            "all observations identical".into(),
        ));
    }
    h /= correction;

    let df = (groups.len() - 1) as f64;
    Ok(KruskalWallis {
        h,
        p_value: chi2::chi_square_sf(h, df),
    })
}

/// A histogram over half-open bins [e_i, e_{i+1}); the last edge may be
/// infinite. Observations outside the edge span are clamped into the
/// boundary bins so counts always conserve the observation total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    #[serde(with = "edge_serde")]
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_edges: Vec<f64>) -> Self {
        assert!(bin_edges.len() >= 2, "need at least two edges");
        assert!(
            bin_edges.windows(2).all(|w| w[0] < w[1]),
            "edges must be strictly increasing"
        );
        let counts = vec![0; bin_edges.len() - 1];
        Histogram { bin_edges, counts }
    }

    pub fn observe(&mut self, value: f64) {
        let last = self.counts.len() - 1;
        let idx = match self.bin_edges.iter().rposition(|&e| e <= value) {
            None => 0,                   // below the first edge
            Some(i) if i > last => last, // at or above the last edge
            Some(i) => i,
        };
        self.counts[idx] += 1;
    }

    pub fn build(bin_edges: Vec<f64>, values: impl IntoIterator<Item = f64>) -> Self {
        let mut hist = Histogram::new(bin_edges);
        for v in values {
            hist.observe(v);
        }
        hist
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// "bin_low,bin_high,count" rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_edge(self.bin_edges[i]),
                fmt_edge(self.bin_edges[i + 1]),
                count
            );
        }
        out
    }
}

fn fmt_edge(e: f64) -> String {
    if e == f64::INFINITY {
        "inf".to_string()
    } else if e == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if e.fract() == 0.0 && e.abs() < 1e15 {
        format!("{}", e as i64)
    } else {
        format!("{e}")
    }
}

/// JSON cannot carry IEEE infinities, so infinite edges serialize as the
/// strings "inf" / "-inf".
mod edge_serde {
    use serde::de::Error as _;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(edges: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(edges.len()))?;
        for &e in edges {
            if e == f64::INFINITY {
                seq.serialize_element("inf")?;
            } else if e == f64::NEG_INFINITY {
                seq.serialize_element("-inf")?;
            } else {
                seq.serialize_element(&e)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Edge {
            Num(f64),
            Label(String),
        }
        let raw = Vec::<Edge>::deserialize(d)?;
        raw.into_iter()
            .map(|e| match e {
                Edge::Num(v) => Ok(v),
                Edge::Label(s) if s == "inf" => Ok(f64::INFINITY),
                Edge::Label(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Edge::Label(s) => Err(D::Error::custom(format!("bad edge {s:?}"))),
            })
            .collect()
    }
}

/// Pooled configuration groups of the hosting cross-tabulation: the three
/// plain classes collapse into "Simple".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassGroup {
    Simple,
    RoundRobin,
    MxBalancing,
    Hybrid,
}

impl ClassGroup {
    pub fn of(class: Classification) -> Option<ClassGroup> {
        match class {
            Classification::PlainV4Only
            | Classification::PlainV6Only
            | Classification::PlainDualStack => Some(ClassGroup::Simple),
            Classification::RoundRobin => Some(ClassGroup::RoundRobin),
            Classification::MxBalancing => Some(ClassGroup::MxBalancing),
            Classification::Hybrid => Some(ClassGroup::Hybrid),
            _ => None,
        }
    }
}

/// Column-wise split of one cross-tab group: hosted share plus the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostingSplit {
    pub hosting: f64,
    pub others: f64,
}

/// Shares of analyzed domains with each audit finding set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditShares {
    pub has_spf: f64,
    pub has_spf_strict: f64,
    pub spf_deny_all: f64,
    pub ipv6_enabled: f64,
    pub hosting: f64,
    pub nxdomain_exchanger: f64,
    pub private_or_local_address: f64,
    pub missing_ptr_v4: f64,
    pub missing_ptr_v6: f64,
    pub duplicate_addresses: f64,
    pub cname_exchanger: f64,
}

/// Histogram binnings; the defaults cover the record-count, TTL, and
/// preference-stddev distributions and can all be overridden.
#[derive(Debug, Clone)]
pub struct SummaryOptions {
    pub mx_count_edges: Vec<f64>,
    pub addr_count_edges: Vec<f64>,
    pub pref_stddev_edges: Vec<f64>,
    pub ttl_edges: Vec<f64>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        let mut mx_count_edges: Vec<f64> = (1..=20).map(f64::from).collect();
        mx_count_edges.push(f64::INFINITY);
        let mut addr_count_edges: Vec<f64> = (0..=20).map(f64::from).collect();
        addr_count_edges.push(f64::INFINITY);
        let mut pref_stddev_edges: Vec<f64> = (0..=10).map(|i| 5.0 * i as f64).collect();
        pref_stddev_edges.push(f64::INFINITY);
        let ttl_edges = vec![
            0.0,
            300.0,
            600.0,
            2000.0,
            3600.0,
            14400.0,
            86400.0,
            f64::INFINITY,
        ];
        SummaryOptions {
            mx_count_edges,
            addr_count_edges,
            pref_stddev_edges,
            ttl_edges,
        }
    }
}

/// Every corpus-level aggregate, serializable as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub k_q: u64,
    pub k_w: u64,
    pub k_nullmx: u64,
    pub k: u64,
    pub class_counts: BTreeMap<Classification, u64>,
    pub class_shares: BTreeMap<Classification, f64>,
    pub corr_mx_a: Option<f64>,
    pub corr_mx_aaaa: Option<f64>,
    pub mx_count_hist: Histogram,
    pub a_count_hist: Histogram,
    pub aaaa_count_hist: Histogram,
    pub pref_stddev_hist: Histogram,
    pub equal_pref_share: Option<f64>,
    pub ttl_hist: Histogram,
    pub ttl_below_2000_share: f64,
    pub hosting_crosstab: BTreeMap<ClassGroup, HostingSplit>,
    pub rank_medians: BTreeMap<Classification, f64>,
    pub kruskal_wallis: Option<KruskalWallis>,
    pub audit_shares: AuditShares,
}

/// Folds fully audited profiles (errored ones included) into the corpus
/// summary. Domains whose MX query failed count into `k_w` together with
/// the no-MX domains, since neither contributes MX data to the sample.
pub fn summarize(
    profiles: &[DomainProfile],
    opts: &SummaryOptions,
) -> Result<CorpusSummary, StatsError> {
    if profiles.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }

    let mut errored = 0u64;
    let mut no_mx = 0u64;
    let mut null_mx = 0u64;
    let mut analyzed: Vec<&DomainProfile> = Vec::new();
    for p in profiles {
        if p.is_errored() {
            errored += 1;
        } else {
            match p.classification {
                Some(Classification::NoMx) => no_mx += 1,
                Some(Classification::NullMx) => null_mx += 1,
                Some(_) => analyzed.push(p),
                None => {
                    return Err(StatsError::DegenerateInput(format!(
                        "profile {} is not audited",
                        p.domain
                    )))
                }
            }
        }
    }

    let k_q = profiles.len() as u64;
    let k_w = no_mx + errored;
    let k = analyzed.len() as u64;
    debug_assert_eq!(k, k_q - (k_w + null_mx));

    let mut class_counts: BTreeMap<Classification, u64> =
        Classification::ANALYZED.iter().map(|c| (*c, 0)).collect();
    for p in &analyzed {
        *class_counts.get_mut(&p.classification.unwrap()).unwrap() += 1;
    }
    let class_shares: BTreeMap<Classification, f64> = class_counts
        .iter()
        .map(|(c, count)| (*c, if k > 0 { *count as f64 / k as f64 } else { 0.0 }))
        .collect();

    let nm: Vec<f64> = analyzed.iter().map(|p| p.mx.n_m as f64).collect();
    let na: Vec<f64> = analyzed.iter().map(|p| p.n_a as f64).collect();
    let nabar: Vec<f64> = analyzed.iter().map(|p| p.n_abar as f64).collect();
    let corr_mx_a = pearson(&nm, &na).ok();
    let corr_mx_aaaa = pearson(&nm, &nabar).ok();

    let mx_count_hist = Histogram::build(opts.mx_count_edges.clone(), nm.iter().copied());
    let a_count_hist = Histogram::build(opts.addr_count_edges.clone(), na.iter().copied());
    let aaaa_count_hist = Histogram::build(opts.addr_count_edges.clone(), nabar.iter().copied());

    let stddevs: Vec<f64> = analyzed
        .iter()
        .filter(|p| p.mx.n_m > 1)
        .map(|p| pref_stddev(&p.mx.preferences()))
        .collect();
    let pref_stddev_hist =
        Histogram::build(opts.pref_stddev_edges.clone(), stddevs.iter().copied());
    let equal_pref_share = if stddevs.is_empty() {
        None
    } else {
        Some(stddevs.iter().filter(|s| **s == 0.0).count() as f64 / stddevs.len() as f64)
    };

    let ttls: Vec<f64> = analyzed
        .iter()
        .filter_map(|p| p.mx.min_ttl())
        .map(f64::from)
        .collect();
    let ttl_hist = Histogram::build(opts.ttl_edges.clone(), ttls.iter().copied());
    let ttl_below_2000_share = if ttls.is_empty() {
        0.0
    } else {
        ttls.iter().filter(|t| **t < 2000.0).count() as f64 / ttls.len() as f64
    };

    let mut group_totals: BTreeMap<ClassGroup, (u64, u64)> = BTreeMap::new();
    for p in &analyzed {
        if let Some(group) = ClassGroup::of(p.classification.unwrap()) {
            let entry = group_totals.entry(group).or_insert((0, 0));
            entry.0 += 1;
            if !p.flags.hosting.is_empty() {
                entry.1 += 1;
            }
        }
    }
    let hosting_crosstab: BTreeMap<ClassGroup, HostingSplit> = group_totals
        .into_iter()
        .map(|(group, (total, hosted))| {
            let hosting = hosted as f64 / total as f64;
            (
                group,
                HostingSplit {
                    hosting,
                    others: 1.0 - hosting,
                },
            )
        })
        .collect();

    let rank_groups: Vec<(Classification, Vec<f64>)> = Classification::ANALYZED
        .iter()
        .filter(|c| **c != Classification::NonIdentified)
        .map(|c| {
            let ranks: Vec<f64> = analyzed
                .iter()
                .filter(|p| p.classification == Some(*c))
                .filter_map(|p| p.median_rank)
                .collect();
            (*c, ranks)
        })
        .collect();
    let mut rank_medians = BTreeMap::new();
    for (class, ranks) in &rank_groups {
        if !ranks.is_empty() {
            let mut sorted = ranks.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            rank_medians.insert(*class, median_sorted_f64(&sorted));
        }
    }
    let kw_input: Vec<Vec<f64>> = rank_groups
        .into_iter()
        .map(|(_, ranks)| ranks)
        .filter(|r| !r.is_empty())
        .collect();
    let kruskal = kruskal_wallis(&kw_input).ok();

    let share = |count: u64| if k > 0 { count as f64 / k as f64 } else { 0.0 };
    let count_where =
        |f: &dyn Fn(&DomainProfile) -> bool| analyzed.iter().filter(|p| f(p)).count() as u64;
    let audit_shares = AuditShares {
        has_spf: share(count_where(&|p| p.flags.has_spf)),
        has_spf_strict: share(count_where(&|p| detect_spf(&p.txt).has_spf_strict)),
        spf_deny_all: share(count_where(&|p| p.flags.spf_deny_all)),
        ipv6_enabled: share(count_where(&|p| p.n_abar > 0)),
        hosting: share(count_where(&|p| !p.flags.hosting.is_empty())),
        nxdomain_exchanger: share(count_where(&|p| p.flags.has_nxdomain_exchanger)),
        private_or_local_address: share(count_where(&|p| p.flags.has_private_or_local_address)),
        missing_ptr_v4: share(count_where(&|p| p.flags.has_missing_ptr_v4)),
        missing_ptr_v6: share(count_where(&|p| p.flags.has_missing_ptr_v6)),
        duplicate_addresses: share(count_where(&|p| p.flags.has_duplicate_addresses)),
        cname_exchanger: share(count_where(&|p| p.flags.has_cname_exchanger)),
    };

    Ok(CorpusSummary {
        k_q,
        k_w,
        k_nullmx: null_mx,
        k,
        class_counts,
        class_shares,
        corr_mx_a,
        corr_mx_aaaa,
        mx_count_hist,
        a_count_hist,
        aaaa_count_hist,
        pref_stddev_hist,
        equal_pref_share,
        ttl_hist,
        ttl_below_2000_share,
        hosting_crosstab,
        rank_medians,
        kruskal_wallis: kruskal,
        audit_shares,
    })
}
