use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mx_audit::cli::{self, BackendChoice, InputFormat, RunConfig};
use mx_audit::model::DomainName;
use mx_audit::resolver::fixture::FixtureBackend;
use mx_audit::sim::{self, ClientPolicy, ServerPolicy, ServerPool};

#[derive(Parser)]
#[command(
    name = "mx-audit",
    version,
    about = "DNS MX measurement and audit toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    #[value(name = "ranked_csv")]
    RankedCsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientArg {
    First,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServerArg {
    Rotate,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve, classify, and summarize a corpus of domains.
    Scan {
        /// Input file(s); repeatable.
        #[arg(long = "input", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "plain")]
        format: FormatArg,
        /// Upstream recursive resolver ("ip" or "ip:port").
        #[arg(long)]
        resolver: Option<String>,
        /// Fixture file or directory for offline runs.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        concurrency: usize,
        #[arg(long = "timeout-ms", default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long = "out", default_value = "out")]
        out: PathBuf,
        #[arg(long = "hosting-rules")]
        hosting_rules: Option<PathBuf>,
    },
    /// Print the configuration label for a count triple.
    Classify {
        #[arg(long)]
        nm: u32,
        #[arg(long)]
        na: u32,
        #[arg(long)]
        naaaa: u32,
    },
    /// Simulate MTA selection and delivery against a fixture-defined pool.
    Simulate {
        /// Fixture file or directory defining the pool (an MX RRset plus
        /// the A/AAAA RRsets of its exchangers).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "first")]
        client: ClientArg,
        /// Pool root; needed when the fixtures define several MX RRsets.
        #[arg(long)]
        domain: Option<String>,
        #[arg(long = "server-policy", value_enum, default_value = "rotate")]
        server_policy: ServerArg,
    },
}

#[allow(clippy::too_many_arguments)]
fn scan(
    input: Vec<PathBuf>,
    format: FormatArg,
    resolver: Option<String>,
    fixtures: Option<PathBuf>,
    concurrency: usize,
    timeout_ms: u64,
    out: PathBuf,
    hosting_rules: Option<PathBuf>,
) -> u8 {
    // the environment variable overrides --resolver; an explicit
    // --fixtures keeps fixture mode regardless
    let resolver = std::env::var("MX_AUDIT_RESOLVER").ok().or(resolver);
    let backend = match (&fixtures, &resolver) {
        (Some(dir), None) => BackendChoice::Fixtures(dir.clone()),
        (Some(_), Some(_)) if std::env::var("MX_AUDIT_RESOLVER").is_ok() => {
            BackendChoice::Fixtures(fixtures.unwrap())
        }
        (None, Some(addr)) => BackendChoice::Resolver(addr.clone()),
        (Some(_), Some(_)) => {
            eprintln!("mx-audit: --resolver and --fixtures are mutually exclusive");
            return 1;
        }
        (None, None) => {
            eprintln!("mx-audit: one of --resolver, --fixtures, or MX_AUDIT_RESOLVER is required");
            return 1;
        }
    };
    let config = RunConfig {
        input_paths: input,
        input_format: match format {
            FormatArg::Plain => InputFormat::Plain,
            FormatArg::RankedCsv => InputFormat::RankedCsv,
        },
        backend,
        concurrency: concurrency.max(1),
        timeout_ms,
        output_dir: out,
        hosting_rules_path: hosting_rules,
    };
    cli::run(&config) as u8
}

fn simulate(
    pool_path: PathBuf,
    trials: u64,
    seed: u64,
    client: ClientArg,
    domain: Option<String>,
    server_policy: ServerArg,
) -> u8 {
    let backend = match FixtureBackend::load(&pool_path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("mx-audit: {e}");
            return 1;
        }
    };
    let root = match domain {
        Some(raw) => match DomainName::new(&raw) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("mx-audit: {e}");
                return 1;
            }
        },
        None => {
            let owners = backend.mx_owner_names();
            match owners.len() {
                1 => owners.into_iter().next().unwrap(),
                0 => {
                    eprintln!("mx-audit: pool fixtures define no MX RRset");
                    return 1;
                }
                n => {
                    eprintln!(
                        "mx-audit: pool fixtures define {n} MX RRsets; pick one with --domain"
                    );
                    return 1;
                }
            }
        }
    };
    let pool = match ServerPool::from_fixture(&backend, &root) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("mx-audit: {e}");
            return 1;
        }
    };
    if trials == 0 {
        eprintln!("mx-audit: --trials must be positive");
        return 1;
    }
    let report = sim::run_trials(
        &pool,
        match client {
            ClientArg::First => ClientPolicy::FirstAddress,
            ClientArg::Random => ClientPolicy::RandomAddress,
        },
        match server_policy {
            ServerArg::Rotate => ServerPolicy::Rotate,
            ServerArg::Random => ServerPolicy::RandomPermutation,
        },
        trials,
        seed,
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Scan {
            input,
            format,
            resolver,
            fixtures,
            concurrency,
            timeout_ms,
            out,
            hosting_rules,
        } => scan(
            input,
            format,
            resolver,
            fixtures,
            concurrency,
            timeout_ms,
            out,
            hosting_rules,
        ),
        Command::Classify { nm, na, naaaa } => {
            println!("{}", cli::classify_label(nm, na, naaaa));
            0
        }
        Command::Simulate {
            pool,
            trials,
            seed,
            client,
            domain,
            server_policy,
        } => simulate(pool, trials, seed, client, domain, server_policy),
    };
    ExitCode::from(code)
}
