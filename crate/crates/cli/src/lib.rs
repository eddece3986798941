//! Command-line front end: `run`, `sweep` and `verify`.
//!
//! Every command is a pure function of its arguments, the config file and
//! the `SEAL_*` environment, so the same invocation always writes the same
//! bytes.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seal_core::baselines::{run_on_instance, BaselineParams, Scheme, SchemeReport};
use seal_core::exchange::ledger::LoggedTx;
use seal_core::exchange::{run_protocol, ProtocolReport, TaskVerdict};
use seal_core::experiment::{axis_values, sweep, Axis, SweepRow};
use seal_core::scenario::{build_location, derive_seed, ScenarioConfig};
use seal_core::verify::{run_suite, Suite, SuiteReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Prefix of environment overrides, e.g. `SEAL_LOCATIONS=5`.
pub const ENV_PREFIX: &str = "SEAL_";

/// Seed stream used for the per-location exchange round.
const PROTOCOL_STREAM: u64 = 5;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or a bad config. Exit code 2.
    Usage(String),
    /// I/O or serialization failure while writing results. Exit code 2.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<seal_core::Error> for CliError {
    fn from(e: seal_core::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "seal", version, about = "UAV offloading auctions with a simulated fair exchange")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run SEAL and the exchange at every location of one mission.
    Run(RunArgs),
    /// Sweep one parameter over a range for several schemes and seeds.
    Sweep(SweepArgs),
    /// Run a property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; missing keys take the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub axis: String,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long)]
    pub step: f64,
    /// Comma-separated scheme names, or `all`.
    #[arg(long, default_value = "all")]
    pub schemes: String,
    /// `1,2,5`, `1..21` (exclusive) or `1..=20`.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------- config

/// Parses an override value as TOML (`5`, `0.3`, `[1, 2]`, `"x"`), falling
/// back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Loads the config file (if any), applies `SEAL_*` overrides from `env`,
/// and validates. Errors name the offending field.
pub fn load_config<I, K, V>(path: Option<&Path>, env: I) -> Result<ScenarioConfig, CliError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in env {
        if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
            if !key.is_empty() {
                table.insert(key.to_ascii_lowercase(), override_value(v.as_ref()));
            }
        }
    }
    let config: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let field = e.path().to_string();
        CliError::Usage(format!("config field `{field}`: {}", e.inner()))
    })?;
    config.validate()?;
    Ok(config)
}

// ------------------------------------------------------------------- run

/// One row of `locations.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub location: usize,
    pub tasks: usize,
    pub vehicles: usize,
    pub bidders: usize,
    pub vehicle_tasks: usize,
    pub cloud_tasks: usize,
    pub deadline_misses: usize,
    pub fly_speed: f64,
    pub uav_cost: f64,
    pub energy: f64,
    pub flight_energy: f64,
    pub task_energy: f64,
    pub total_payment: f64,
    pub mean_delay: f64,
    pub max_delay: f64,
    /// Exchange transactions; 0 when the exchange is disabled.
    pub exchange_txs: usize,
    pub delivered: usize,
    pub penalised: usize,
    pub violations: usize,
    pub conserved: bool,
}

pub const RUN_HEADER: [&str; 21] = [
    "seed",
    "location",
    "tasks",
    "vehicles",
    "bidders",
    "vehicle_tasks",
    "cloud_tasks",
    "deadline_misses",
    "fly_speed",
    "uav_cost",
    "energy",
    "flight_energy",
    "task_energy",
    "total_payment",
    "mean_delay",
    "max_delay",
    "exchange_txs",
    "delivered",
    "penalised",
    "violations",
    "conserved",
];

/// One line of `report.jsonl`. The exchange log lives in `ledger.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub seed: u64,
    pub location: usize,
    pub vehicles: usize,
    pub seal: SchemeReport,
    pub exchange: Option<ProtocolReport>,
}

/// One line of `ledger.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub location: usize,
    pub tx: LoggedTx,
}

pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub reports: Vec<LocationReport>,
    pub ledger: Vec<LedgerLine>,
}

impl RunOutput {
    pub fn violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations + usize::from(!r.conserved)).sum()
    }
}

fn run_location(config: &ScenarioConfig, seed: u64, n: usize) -> Result<(RunRow, LocationReport, Vec<LedgerLine>), CliError> {
    let params = BaselineParams::from_config(config);
    let inst = build_location(config, seed, n)?;
    let seal = run_on_instance(Scheme::Seal, &inst, &params)?;
    let mut exchange = if config.run_exchange {
        let script = config.script()?;
        let pseed = derive_seed(seed, n, PROTOCOL_STREAM);
        let r = run_protocol(&inst.tasks, &inst.bids, &inst.env, &config.exchange(), &script, pseed)
            .map_err(|e| CliError::Usage(format!("location {n}: {e}")))?;
        Some(r)
    } else {
        None
    };
    let log = exchange.as_mut().map(|r| std::mem::take(&mut r.log)).unwrap_or_default();
    let count = |v: TaskVerdict| exchange.as_ref().map_or(0, |r| r.verdicts.values().filter(|x| **x == v).count());
    let row = RunRow {
        seed,
        location: n,
        tasks: inst.tasks.len(),
        vehicles: inst.vehicles.len(),
        bidders: inst.bids.len(),
        vehicle_tasks: seal.vehicle_tasks(),
        cloud_tasks: seal.served_by.len() - seal.vehicle_tasks(),
        deadline_misses: seal.deadline_misses,
        fly_speed: seal.fly_speed,
        uav_cost: seal.uav_cost,
        energy: seal.energy,
        flight_energy: seal.flight_energy,
        task_energy: seal.task_energy,
        total_payment: seal.total_payment,
        mean_delay: seal.mean_delay(),
        max_delay: seal.max_delay(),
        exchange_txs: log.len(),
        delivered: count(TaskVerdict::DeliveredAndPaid),
        penalised: count(TaskVerdict::NeitherWithPenalty),
        violations: exchange.as_ref().map_or(0, ProtocolReport::violations),
        conserved: exchange.as_ref().map_or(true, |r| r.conserved),
    };
    let ledger = log.into_iter().map(|tx| LedgerLine { location: n, tx }).collect();
    let report = LocationReport { seed, location: n, vehicles: inst.vehicles.len(), seal, exchange };
    Ok((row, report, ledger))
}

/// Runs every location; results are in location order.
pub fn run_mission(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, CliError> {
    let parts: Vec<_> = (0..config.locations).into_par_iter().map(|n| run_location(config, seed, n)).collect();
    let mut out = RunOutput { rows: Vec::new(), reports: Vec::new(), ledger: Vec::new() };
    for p in parts {
        let (row, report, ledger) = p?;
        out.rows.push(row);
        out.reports.push(report);
        out.ledger.extend(ledger);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(io::BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `locations.csv`, `report.jsonl`, `ledger.jsonl` and the resolved
/// `config.toml` into `dir`.
pub fn write_run(dir: &Path, config: &ScenarioConfig, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join("locations.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(&csv_path)?);
    w.write_record(RUN_HEADER).map_err(|e| io_err(&csv_path, e))?;
    for r in &out.rows {
        w.serialize(r).map_err(|e| io_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| io_err(&csv_path, e))?;
    write_jsonl(&dir.join("report.jsonl"), &out.reports)?;
    write_jsonl(&dir.join("ledger.jsonl"), &out.ledger)?;
    let cfg_path = dir.join("config.toml");
    let text = toml::to_string(config).map_err(|e| io_err(&cfg_path, e))?;
    fs::write(&cfg_path, text).map_err(|e| io_err(&cfg_path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Replay loader for `report.jsonl`.
pub fn load_report(path: &Path) -> Result<Vec<LocationReport>, CliError> {
    read_jsonl(path)
}

/// Replay loader for `ledger.jsonl`.
pub fn load_ledger(path: &Path) -> Result<Vec<LedgerLine>, CliError> {
    read_jsonl(path)
}

/// Reads `locations.csv` back.
pub fn load_locations(path: &Path) -> Result<Vec<RunRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

// ----------------------------------------------------------------- sweep

pub const SWEEP_HEADER: [&str; 6] = ["axis", "axis_value", "scheme", "seed", "metric", "value"];

/// Metrics emitted per sweep row, in column order.
pub const SWEEP_METRICS: [&str; 9] = [
    "mean_uav_cost",
    "total_energy",
    "mean_energy",
    "mean_task_energy",
    "total_payment",
    "mean_delay",
    "journey_time",
    "vehicle_tasks",
    "fallbacks",
];

fn metric_values(r: &SweepRow) -> [f64; 9] {
    [
        r.mean_uav_cost,
        r.total_energy,
        r.mean_energy,
        r.mean_task_energy,
        r.total_payment,
        r.mean_delay,
        r.journey_time,
        r.vehicle_tasks as f64,
        r.fallbacks as f64,
    ]
}

/// One row of the long-format sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub axis: Axis,
    pub axis_value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub fn long_rows(rows: &[SweepRow]) -> Vec<LongRow> {
    rows.iter()
        .flat_map(|r| {
            SWEEP_METRICS.iter().zip(metric_values(r)).map(move |(m, v)| LongRow {
                axis: r.axis,
                axis_value: r.value,
                scheme: r.scheme,
                seed: r.seed,
                metric: (*m).to_string(),
                value: v,
            })
        })
        .collect()
}

pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>, CliError> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Scheme::ALL.to_vec());
    }
    let mut out: Vec<Scheme> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let scheme: Scheme = part.parse()?;
        if !out.contains(&scheme) {
            out.push(scheme);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no schemes given".into()));
    }
    Ok(out)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = |m: String| CliError::Usage(format!("seeds `{s}`: {m}"));
    let num = |x: &str| x.trim().parse::<u64>().map_err(|e| bad(e.to_string()));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').filter(|p| !p.trim().is_empty()).map(num).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad("empty".into()));
    }
    Ok(seeds)
}

pub fn write_long_csv<W: Write>(w: W, rows: &[LongRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let e = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(SWEEP_HEADER).map_err(e)?;
    for r in rows {
        w.serialize(r).map_err(e)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn load_long_csv(path: &Path) -> Result<Vec<LongRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------- verify

pub fn summary_line(r: &SuiteReport) -> String {
    let mut s = format!(
        "{} {}: trials={} seed={} checks={} violations={}",
        if r.passed() { "PASS" } else { "FAIL" },
        r.suite,
        r.trials,
        r.seed,
        r.checks,
        r.violations
    );
    for (k, v) in &r.metrics {
        s.push_str(&format!(" {k}={v}"));
    }
    s
}

// --------------------------------------------------------------- driver

fn cmd_run<E, K, V>(a: &RunArgs, env: E) -> Result<i32, CliError>
where
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let config = load_config(a.config.as_deref(), env)?;
    let seed = a.seed.unwrap_or(config.seed);
    let out = run_mission(&config, seed)?;
    write_run(&a.out, &config, &out)?;
    let violations = out.violations();
    eprintln!("{} locations written to {} ({violations} exchange violations)", out.rows.len(), a.out.display());
    Ok(if violations == 0 { EXIT_OK } else { EXIT_VIOLATION })
}

fn cmd_sweep<E, K, V>(a: &SweepArgs, env: E) -> Result<i32, CliError>
where
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let config = load_config(a.config.as_deref(), env)?;
    let axis: Axis = a.axis.parse()?;
    let values = axis_values(a.from, a.to, a.step)?;
    let schemes = parse_schemes(&a.schemes)?;
    let seeds = parse_seeds(&a.seeds)?;
    let rows = long_rows(&sweep(&config, axis, &values, &schemes, &seeds)?);
    match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            write_long_csv(create(p)?, &rows)?
        }
        None => write_long_csv(io::stdout().lock(), &rows)?,
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32, CliError> {
    let suite: Suite = a.suite.parse()?;
    let report = run_suite(suite, a.trials, a.seed)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{}", summary_line(&report));
    println!("{json}");
    if let Some(p) = &a.out {
        fs::write(p, &json).map_err(|e| io_err(p, e))?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_VIOLATION })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<A, T, E, K, V>(args: A, env: E) -> i32
where
    A: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, env),
        Command::Sweep(a) => cmd_sweep(a, env),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            EXIT_USAGE
        }
    }
}
