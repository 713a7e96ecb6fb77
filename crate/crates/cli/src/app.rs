//! Command-line surface: argument parsing, file output, journaling and exit
//! codes.
//!
//! Exit codes: `0` success, `1` a property check failed, `2` bad arguments,
//! unreadable inputs or I/O errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use doubling_lab_core::grid::write_atomic;
use doubling_lab_core::model_spaces::HyperbolicNormalization;
use doubling_lab_core::search::SearchConfig;
use doubling_lab_core::{Error, GridSpec, HopfGrid, SetSpec};
use serde::Serialize;

use crate::commands::{
    run_ball_scan, run_bm, run_cap_scan, run_grid_build, run_hyperbolic, run_product, run_search, BallScanConfig,
    BmConfig, CapScanConfig, GridBuildConfig, HyperbolicConfig, Outcome, ProductConfig,
};
use crate::journal::{self, sha256_hex, ExperimentRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker count; `0` means automatic.
pub const THREADS_ENV: &str = "DOUBLING_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "doubling-lab", version, about = "Measure doubling experiments on SO(3)")]
pub struct Cli {
    /// Append-only JSON-lines journal receiving one record per experiment.
    #[arg(long, global = true, default_value = "journal.jsonl")]
    pub journal: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cap preimages: closed-form doubling against Monte Carlo.
    CapScan(CapScanArgs),
    /// Metric balls: closed-form doubling against Monte Carlo.
    BallScan(BallScanArgs),
    /// Growth report of a pair of sets from Monte Carlo and a cached grid.
    Product(ProductArgs),
    /// Build a Hopf grid and write its cache file.
    GridBuild(GridBuildArgs),
    /// Solve for the Brunn–Minkowski exponent.
    Bm(BmArgs),
    /// Nelder–Mead search over a set family.
    Search(SearchArgs),
    /// Hyperbolic-plane doubling identity over a radius range.
    Hyperbolic(HyperbolicArgs),
    /// Rerun journal records and compare report digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct CapScanArgs {
    #[arg(long)]
    pub theta_min: f64,
    #[arg(long)]
    pub theta_max: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BallScanArgs {
    #[arg(long)]
    pub r_min: f64,
    #[arg(long)]
    pub r_max: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProductArgs {
    /// SetSpec JSON file for A.
    #[arg(long)]
    pub a: PathBuf,
    /// SetSpec JSON file for B.
    #[arg(long)]
    pub b: PathBuf,
    /// Grid cache written by `grid-build`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub witnesses: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// GrowthReport JSON output.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridBuildArgs {
    #[arg(long)]
    pub n_eta: u32,
    #[arg(long)]
    pub n_xi1: u32,
    #[arg(long)]
    pub n_xi2: u32,
    #[arg(long)]
    pub cache: PathBuf,
}

#[derive(Debug, Args)]
pub struct BmArgs {
    #[arg(long)]
    pub mu_a: f64,
    #[arg(long)]
    pub mu_b: f64,
    #[arg(long)]
    pub mu_ab: f64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Search configuration JSON; every field is required.
    #[arg(long)]
    pub config: PathBuf,
    /// SearchResult JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormalizationArg {
    Corrected,
    Integral,
}

#[derive(Debug, Args)]
pub struct HyperbolicArgs {
    #[arg(long)]
    pub r_min: f64,
    #[arg(long)]
    pub r_max: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "corrected")]
    pub normalization: NormalizationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Journal to replay; defaults to the global `--journal`.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// 1-based line to replay; all lines when absent.
    #[arg(long)]
    pub line: Option<usize>,
}

/// A failure mapped to an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoSolution(_) | Error::Infeasible(_) | Error::ConjectureAnomaly(_) => EXIT_PROPERTY,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Configures the global worker pool from [`THREADS_ENV`].
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_ENV}={value:?} is not a nonnegative integer")))?;
    if n > 0 {
        // A pool may already exist when embedded in tests; the first wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn read_spec(path: &Path) -> Result<SetSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    SetSpec::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Where a report goes.
enum Output<'p> {
    File(&'p Path),
    Stdout,
    /// Already persisted by the command, or not meant for display.
    Nowhere,
}

impl<'p> Output<'p> {
    fn file_or_stdout(path: Option<&'p Path>) -> Self {
        path.map_or(Output::Stdout, Output::File)
    }
}

/// Writes the report, journals the run and maps the verdict.
fn finish<C: Serialize>(
    journal: &Path,
    subcommand: &str,
    config: &C,
    outcome: &Outcome,
    out: Output<'_>,
    started: Instant,
) -> Result<i32, Failure> {
    match out {
        Output::File(path) => write_atomic(path, &outcome.report)?,
        Output::Stdout => print!("{}", String::from_utf8_lossy(&outcome.report)),
        Output::Nowhere => {}
    }
    let record = ExperimentRecord::new(
        subcommand,
        serde_json::to_value(config).map_err(Error::from)?,
        outcome.summary.clone(),
        &outcome.report,
        started.elapsed().as_secs_f64(),
    );
    journal::append(journal, &record)?;
    eprintln!("{subcommand}: {}", outcome.message);
    Ok(if outcome.passed { EXIT_OK } else { EXIT_PROPERTY })
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let started = Instant::now();
    let journal = cli.journal.as_path();
    match cli.command {
        Command::CapScan(a) => {
            let c = CapScanConfig {
                theta_min: a.theta_min,
                theta_max: a.theta_max,
                steps: a.steps,
                samples: a.samples,
                seed: a.seed,
            };
            let out = run_cap_scan(&c)?;
            finish(
                journal,
                "cap-scan",
                &c,
                &out,
                Output::file_or_stdout(a.out.as_deref()),
                started,
            )
        }
        Command::BallScan(a) => {
            let c = BallScanConfig {
                r_min: a.r_min,
                r_max: a.r_max,
                steps: a.steps,
                samples: a.samples,
                seed: a.seed,
            };
            let out = run_ball_scan(&c)?;
            finish(
                journal,
                "ball-scan",
                &c,
                &out,
                Output::file_or_stdout(a.out.as_deref()),
                started,
            )
        }
        Command::Product(a) => {
            let (spec_a, spec_b) = (read_spec(&a.a)?, read_spec(&a.b)?);
            let grid = HopfGrid::load(&a.grid)?;
            let c = ProductConfig {
                a: spec_a,
                b: spec_b,
                grid: grid.spec(),
                witnesses: a.witnesses,
                samples: a.samples,
                seed: a.seed,
            };
            let out = run_product(&c, &grid)?;
            finish(journal, "product", &c, &out, Output::File(&a.report), started)
        }
        Command::GridBuild(a) => {
            let c = GridBuildConfig {
                grid: GridSpec::new(a.n_eta, a.n_xi1, a.n_xi2),
            };
            let (grid, mut out) = run_grid_build(&c)?;
            grid.save(&a.cache)?;
            let reloaded = HopfGrid::load(&a.cache)?;
            out.passed = reloaded.cache_bytes() == out.report;
            if !out.passed {
                out.message.push_str(" — RELOAD MISMATCH");
            }
            finish(journal, "grid-build", &c, &out, Output::Nowhere, started)
        }
        Command::Bm(a) => {
            let c = BmConfig {
                mu_a: a.mu_a,
                mu_b: a.mu_b,
                mu_ab: a.mu_ab,
            };
            let out = run_bm(&c)?;
            println!("{}", out.message);
            finish(journal, "bm", &c, &out, Output::Nowhere, started)
        }
        Command::Search(a) => {
            let text = std::fs::read_to_string(&a.config)
                .map_err(|e| usage(format!("cannot read {}: {e}", a.config.display())))?;
            let c = SearchConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
            let out = run_search(&c)?;
            finish(
                journal,
                "search",
                &c,
                &out,
                Output::file_or_stdout(a.out.as_deref()),
                started,
            )
        }
        Command::Hyperbolic(a) => {
            let normalization = match a.normalization {
                NormalizationArg::Corrected => HyperbolicNormalization::Corrected,
                NormalizationArg::Integral => HyperbolicNormalization::Integral,
            };
            let c = HyperbolicConfig {
                r_min: a.r_min,
                r_max: a.r_max,
                steps: a.steps,
                normalization,
            };
            let out = run_hyperbolic(&c)?;
            finish(
                journal,
                "hyperbolic",
                &c,
                &out,
                Output::file_or_stdout(a.out.as_deref()),
                started,
            )
        }
        Command::Replay(a) => replay(a.from.as_deref().unwrap_or(journal), a.line),
    }
}

/// Recomputes a record's report from its configuration.
pub fn rerun(record: &ExperimentRecord) -> Result<Outcome, Failure> {
    let config = record.config.clone();
    let parse = |e: serde_json::Error| usage(format!("record config for {}: {e}", record.subcommand));
    Ok(match record.subcommand.as_str() {
        "cap-scan" => run_cap_scan(&serde_json::from_value(config).map_err(parse)?)?,
        "ball-scan" => run_ball_scan(&serde_json::from_value(config).map_err(parse)?)?,
        "product" => {
            let c: ProductConfig = serde_json::from_value(config).map_err(parse)?;
            run_product(&c, &HopfGrid::build(c.grid)?)?
        }
        "grid-build" => run_grid_build(&serde_json::from_value(config).map_err(parse)?)?.1,
        "bm" => run_bm(&serde_json::from_value(config).map_err(parse)?)?,
        "search" => run_search(&serde_json::from_value(config).map_err(parse)?)?,
        "hyperbolic" => run_hyperbolic(&serde_json::from_value(config).map_err(parse)?)?,
        other => return Err(usage(format!("unknown subcommand {other:?} in journal"))),
    })
}

fn replay(path: &Path, line: Option<usize>) -> Result<i32, Failure> {
    let records = journal::read(path)?;
    let selected: Vec<(usize, &ExperimentRecord)> = match line {
        Some(n) if n >= 1 && n <= records.len() => vec![(n, &records[n - 1])],
        Some(n) => return Err(usage(format!("line {n} outside 1..={}", records.len()))),
        None => records.iter().enumerate().map(|(i, r)| (i + 1, r)).collect(),
    };
    let mut all_identical = true;
    for (n, record) in selected {
        let outcome = rerun(record)?;
        let identical = sha256_hex(&outcome.report) == record.report_sha256
            && outcome.summary == record.result
            && record.content_hash() == record.content_sha256;
        all_identical &= identical;
        println!(
            "line {n}: {} {}",
            record.subcommand,
            if identical { "identical" } else { "DIFFERS" }
        );
    }
    Ok(if all_identical { EXIT_OK } else { EXIT_PROPERTY })
}
