//! `utxo-cohort`: ingest outputs into a partition store, build daily cohort
//! tables, export them and check them.

mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use utxo_cohort::chart::{chart_spec, ChartKind};
use utxo_cohort::diff::diff_files;
use utxo_cohort::engine::{build_tables, EngineOptions, DEFAULT_CHUNK_DAYS};
use utxo_cohort::export::{
    export_series_csv, export_stxo_csv, export_utxo_csv, import_tables, stxo_file_name, utxo_file_name,
};
use utxo_cohort::ingest::{
    join_inputs_outputs, parse_derived_file, read_raw_inputs, read_raw_outputs, DerivedFormat, DerivedReader,
    JoinOptions,
};
use utxo_cohort::oracle::oracle_tables;
use utxo_cohort::store::{BuildOptions, DayBatch, PartitionStore};
use utxo_cohort::synth::{generate, ChainConfig, Preset};
use utxo_cohort::validation::{run_all, HalvingSchedule};
use utxo_cohort::{Amount, Calendar, CohortTables, DayIndex, OutputRecord};

use error::CliError;

const STXO_TABLE: &str = "stxo.csv";
const UTXO_TABLE: &str = "utxo.csv";
const TABLES_META: &str = "meta.json";

#[derive(Parser)]
#[command(name = "utxo-cohort", version, about = "Daily UTXO cohort tables for UTXO-based chains")]
struct Cli {
    /// TOML or JSON file with `[engine]`, `[halving]` and `[chain]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Days per window of the age computation.
    #[arg(long, global = true)]
    chunk_days: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load outputs into a partition store, from a derived table or by joining raw outputs and inputs.
    Ingest(IngestArgs),
    /// Compute the STXO and UTXO tables from a store.
    Build(BuildArgs),
    /// Append the next day to a store.
    Update(UpdateArgs),
    /// Write a table or the derived series as CSV.
    Export(ExportArgs),
    /// Run the consistency checks on a table set.
    Validate(ValidateArgs),
    /// Generate a synthetic chain.
    Synth(SynthArgs),
    /// Compute tables by brute force straight from a derived table.
    Oracle(OracleArgs),
    /// Emit a Vega-Lite chart spec.
    Chart(ChartArgs),
    /// Compare two CSV files and report the first differing cell.
    Diff(DiffArgs),
}

#[derive(Args)]
struct DerivedInput {
    /// Derived table (CSV or NDJSON) with value, block_timestamp, spent_block_timestamp.
    #[arg(long)]
    derived: Option<PathBuf>,
    /// Format of --derived; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<DerivedFormat>,
}

impl DerivedInput {
    fn format(&self, path: &Path) -> DerivedFormat {
        self.format.unwrap_or_else(|| DerivedFormat::from_path(path))
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    input: DerivedInput,
    /// Raw outputs CSV (tx_id, output_index, value, block_timestamp).
    #[arg(long, requires = "inputs", conflicts_with = "derived")]
    outputs: Option<PathBuf>,
    /// Raw inputs CSV (spent_tx_id, spent_output_index, spent_block_timestamp).
    #[arg(long, requires = "outputs")]
    inputs: Option<PathBuf>,
    #[arg(long)]
    genesis: Option<NaiveDate>,
    /// Last complete day of the store; later outputs are dropped and later spends treated as unspent.
    #[arg(long)]
    last_day: Option<NaiveDate>,
    #[arg(long)]
    spill_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    store: PathBuf,
    /// Output directory for the table set.
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
}

#[derive(Args)]
struct UpdateArgs {
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    input: DerivedInput,
    /// Day to append; must be the day after the store's last day.
    #[arg(long)]
    day: Option<NaiveDate>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Stxo,
    Utxo,
    Series,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(value_enum)]
    kind: ExportKind,
    #[arg(long)]
    tables: PathBuf,
    #[arg(long, conflicts_with = "out_dir", required_unless_present = "out_dir")]
    out: Option<PathBuf>,
    /// Directory for conventionally named files, e.g. `bitcoinResultSTXO2021-02-10.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Chain name used in file names; defaults to the one recorded with the tables.
    #[arg(long)]
    chain: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    tables: PathBuf,
    /// Initial block subsidy in BTC; enables the halving check.
    #[arg(long)]
    initial_subsidy: Option<String>,
    #[arg(long, default_value_t = 210_000)]
    halving_interval: u64,
    #[arg(long, default_value_t = 144)]
    blocks_per_day: u64,
    /// Demand an exact subsidy match instead of allowing one block of slack per day.
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Derived CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    block_interval: Option<u64>,
    #[arg(long)]
    halving_interval: Option<u64>,
    /// Initial block subsidy in BTC.
    #[arg(long)]
    initial_subsidy: Option<String>,
    #[arg(long)]
    spend_probability: Option<f64>,
    #[arg(long)]
    fee_fraction: Option<f64>,
    /// Also write raw outputs and inputs files for the join path.
    #[arg(long, requires = "raw_inputs")]
    raw_outputs: Option<PathBuf>,
    #[arg(long, requires = "raw_outputs")]
    raw_inputs: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    input: DerivedInput,
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    genesis: Option<NaiveDate>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    chain: Option<String>,
}

#[derive(Args)]
struct ChartArgs {
    #[arg(long)]
    tables: PathBuf,
    /// lifespan-share, age-stack, supply-reward, wal or velocity.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffArgs {
    left: PathBuf,
    right: PathBuf,
    /// Absolute tolerance for numeric cells; exact when omitted.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EngineSection {
    jobs: Option<usize>,
    chunk_days: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    genesis: Option<NaiveDate>,
    engine: EngineSection,
    halving: Option<HalvingSchedule>,
    chain: Option<ChainConfig>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::input("config", format!("{}: {e}", path.display())))
    }
}

struct Context {
    file: FileConfig,
    engine: EngineOptions,
}

impl Context {
    fn genesis(&self, flag: Option<NaiveDate>) -> Calendar {
        flag.or(self.file.genesis).map(Calendar::new).unwrap_or_else(Calendar::bitcoin)
    }
}

/// Recorded next to `stxo.csv` and `utxo.csv`.
#[derive(Serialize, Deserialize)]
struct TablesMeta {
    genesis: NaiveDate,
    chain: String,
}

fn day_of(calendar: &Calendar, date: NaiveDate) -> Result<DayIndex, CliError> {
    calendar.day_of_date(date).map_err(|e| CliError::input("date", e))
}

fn write_tables(tables: &CohortTables, dir: &Path, chain: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    export_stxo_csv(tables, dir.join(STXO_TABLE))?;
    export_utxo_csv(tables, dir.join(UTXO_TABLE))?;
    let meta = TablesMeta { genesis: tables.calendar.genesis(), chain: chain.into() };
    fs::write(dir.join(TABLES_META), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    Ok(())
}

fn read_tables(dir: &Path) -> Result<(CohortTables, TablesMeta), CliError> {
    let meta_path = dir.join(TABLES_META);
    let meta: TablesMeta = match fs::read_to_string(&meta_path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| CliError::input("tables", format!("{}: {e}", meta_path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            TablesMeta { genesis: Calendar::bitcoin().genesis(), chain: "bitcoin".into() }
        }
        Err(e) => return Err(CliError::io(format!("{}: {e}", meta_path.display()))),
    };
    let tables = import_tables(dir.join(STXO_TABLE), dir.join(UTXO_TABLE), Calendar::new(meta.genesis))?;
    Ok((tables, meta))
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn ingest(ctx: &Context, a: IngestArgs) -> Result<(), CliError> {
    let calendar = ctx.genesis(a.genesis);
    let last_day = a.last_day.map(|d| day_of(&calendar, d)).transpose()?;
    let opts = BuildOptions { last_day, ..BuildOptions::default() };
    let horizon = last_day.map(|d| calendar.end_of(d));
    let cut = move |r: OutputRecord| match horizon {
        Some(h) => r.as_of(h),
        None => Some(r),
    };
    let (store, summary) = match (&a.input.derived, &a.outputs, &a.inputs) {
        (Some(path), _, _) => {
            let mut reader = DerivedReader::open(path, a.input.format(path))?;
            let records = reader.by_ref().filter_map(|r| r.map(cut).transpose());
            let store = PartitionStore::build_fallible(records, calendar, &a.store, &opts)?;
            let stats = reader.into_stats();
            (store, json!({"accepted": stats.accepted, "rejected": stats.rejected}))
        }
        (None, Some(outputs), Some(inputs)) => {
            let join = JoinOptions { spill_dir: a.spill_dir.clone(), ..JoinOptions::default() };
            let mut records = Vec::new();
            let report = join_inputs_outputs(read_raw_outputs(outputs)?, read_raw_inputs(inputs)?, &join, |r| {
                records.extend(cut(r));
                Ok(())
            })?;
            let store = PartitionStore::build(records, calendar, &a.store, &opts)?;
            (store, json!({"records": report.records, "spent": report.spent, "dangling_inputs": report.dangling_inputs}))
        }
        _ => return Err(CliError::input("arguments", "ingest needs --derived or both --outputs and --inputs")),
    };
    let m = store.manifest();
    print(json!({
        "command": "ingest",
        "store": a.store,
        "day_count": m.day_count,
        "last_complete_day": m.last_complete_day,
        "total_records": m.total_records,
        "input": summary,
    }));
    Ok(())
}

fn build(ctx: &Context, a: BuildArgs) -> Result<(), CliError> {
    let store = PartitionStore::open(&a.store)?;
    let calendar = *store.calendar();
    let Some(last) = store.last_day() else {
        return Err(CliError::input("store", "store holds no complete day"));
    };
    let from = a.from.map(|d| day_of(&calendar, d)).transpose()?.unwrap_or_default();
    let to = a.to.map(|d| day_of(&calendar, d)).transpose()?.unwrap_or(last);
    let tables = build_tables(&store, from, to, &ctx.engine)?;
    let chain = ctx.file.chain.as_ref().map_or("bitcoin", |c| c.name.as_str());
    write_tables(&tables, &a.tables, chain)?;
    print(json!({"command": "build", "tables": a.tables, "rows": tables.len(),
        "from": calendar.date_of(from), "to": calendar.date_of(to)}));
    Ok(())
}

fn update(_ctx: &Context, a: UpdateArgs) -> Result<(), CliError> {
    let mut store = PartitionStore::open(&a.store)?;
    let calendar = *store.calendar();
    let day = match a.day {
        Some(d) => day_of(&calendar, d)?,
        None => DayIndex(store.day_count()),
    };
    let Some(path) = &a.input.derived else {
        return Err(CliError::input("arguments", "update needs --derived"));
    };
    let parsed = parse_derived_file(path, a.input.format(path))?;
    let batch = DayBatch::from_records(&calendar, day, &parsed.records).map_err(|e| CliError::input("records", e))?;
    store.append_day(&batch)?;
    print(json!({"command": "update", "day": calendar.date_of(day), "births": batch.births.len(),
        "spends": batch.spends.len()}));
    Ok(())
}

fn export(_ctx: &Context, a: ExportArgs) -> Result<(), CliError> {
    let (tables, meta) = read_tables(&a.tables)?;
    let chain = a.chain.unwrap_or(meta.chain);
    let path = match (&a.out, &a.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            fs::create_dir_all(dir)?;
            let end = tables
                .last_day()
                .map(|d| tables.calendar.date_of(d))
                .ok_or_else(|| CliError::input("tables", "table set is empty"))?;
            dir.join(match a.kind {
                ExportKind::Stxo => stxo_file_name(&chain, end),
                ExportKind::Utxo => utxo_file_name(&chain, end),
                ExportKind::Series => format!("{chain}Series{}.csv", end.format("%Y-%m-%d")),
            })
        }
        (None, None) => unreachable!("clap requires --out or --out-dir"),
    };
    match a.kind {
        ExportKind::Stxo => export_stxo_csv(&tables, &path)?,
        ExportKind::Utxo => export_utxo_csv(&tables, &path)?,
        ExportKind::Series => export_series_csv(&tables, &path)?,
    }
    print(json!({"command": "export", "out": path, "rows": tables.len()}));
    Ok(())
}

fn parse_btc(s: &str) -> Result<Amount, CliError> {
    Amount::parse_btc(s).map_err(|e| CliError::input("arguments", e))
}

fn validate(ctx: &Context, a: ValidateArgs) -> Result<(), CliError> {
    let (tables, _) = read_tables(&a.tables)?;
    let mut schedule = match &a.initial_subsidy {
        Some(s) => Some(HalvingSchedule::new(parse_btc(s)?, a.halving_interval, a.blocks_per_day)),
        None => ctx.file.halving,
    };
    if a.exact {
        schedule = schedule.map(HalvingSchedule::exact);
    }
    let reports = run_all(&tables, schedule.as_ref());
    for r in &reports {
        println!("{}", r.to_json());
        log::info!("{r}");
    }
    match reports.iter().find(|r| !r.passed()) {
        Some(r) => Err(CliError::check_failed("validation", r)),
        None => Ok(()),
    }
}

fn synth(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = match (a.preset, &ctx.file.chain) {
        (Some(p), _) => ChainConfig::preset(p),
        (None, Some(c)) => c.clone(),
        (None, None) => ChainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.days {
        cfg.total_days = v;
    }
    if let Some(v) = a.block_interval {
        cfg.block_interval_secs = v;
    }
    if let Some(v) = a.halving_interval {
        cfg.halving_interval = v;
    }
    if let Some(v) = &a.initial_subsidy {
        cfg.initial_subsidy = parse_btc(v)?;
    }
    if let Some(v) = a.spend_probability {
        cfg.spend.daily_probability = v;
    }
    if let Some(v) = a.fee_fraction {
        cfg.spend.fee_fraction = v;
    }
    let chain = generate(&cfg)?;
    chain.write_derived_csv(&a.out)?;
    if let (Some(o), Some(i)) = (&a.raw_outputs, &a.raw_inputs) {
        chain.write_raw(o, i)?;
    }
    print(json!({"command": "synth", "out": a.out, "records": chain.len(), "blocks": cfg.block_count(),
        "seed": cfg.seed}));
    Ok(())
}

fn oracle(ctx: &Context, a: OracleArgs) -> Result<(), CliError> {
    let Some(path) = &a.input.derived else {
        return Err(CliError::input("arguments", "oracle needs --derived"));
    };
    let calendar = ctx.genesis(a.genesis);
    let parsed = parse_derived_file(path, a.input.format(path))?;
    let latest = parsed
        .records
        .iter()
        .flat_map(|r| [Some(r.born), r.spent])
        .flatten()
        .max()
        .ok_or_else(|| CliError::input("records", "no records"))?;
    let to = match a.to {
        Some(d) => day_of(&calendar, d)?,
        None => calendar.day_index(latest).map_err(|e| CliError::input("records", e))?,
    };
    let from = a.from.map(|d| day_of(&calendar, d)).transpose()?.unwrap_or_default();
    if from > to {
        return Err(CliError::input("arguments", "--from is after --to"));
    }
    let tables = oracle_tables(&parsed.records, calendar, from, to);
    write_tables(&tables, &a.tables, a.chain.as_deref().unwrap_or("bitcoin"))?;
    print(json!({"command": "oracle", "tables": a.tables, "rows": tables.len()}));
    Ok(())
}

fn chart(_ctx: &Context, a: ChartArgs) -> Result<(), CliError> {
    let kind: ChartKind = a.kind.parse()?;
    let (tables, _) = read_tables(&a.tables)?;
    let spec = chart_spec(&tables, kind)?;
    fs::write(&a.out, serde_json::to_string_pretty(&spec).expect("spec serializes"))?;
    print(json!({"command": "chart", "kind": kind.name(), "out": a.out}));
    Ok(())
}

fn diff(_ctx: &Context, a: DiffArgs) -> Result<(), CliError> {
    let report = diff_files(&a.left, &a.right, a.tolerance)?;
    print(serde_json::to_value(&report).expect("report serializes"));
    match &report.first {
        None => Ok(()),
        Some(c) => Err(CliError::check_failed(
            "difference",
            format!("{} differing cells; first at row {} column {}: {} vs {}", report.differing_cells, c.row, c.column, c.left, c.right),
        )),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let chunk_days = cli.chunk_days.or(file.engine.chunk_days).unwrap_or(DEFAULT_CHUNK_DAYS);
    if chunk_days == 0 {
        return Err(CliError::input("arguments", "--chunk-days must be positive"));
    }
    let engine = EngineOptions { chunk_days, jobs: cli.jobs.or(file.engine.jobs) };
    let ctx = Context { file, engine };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Build(a) => build(&ctx, a),
        Command::Update(a) => update(&ctx, a),
        Command::Export(a) => export(&ctx, a),
        Command::Validate(a) => validate(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Oracle(a) => oracle(&ctx, a),
        Command::Chart(a) => chart(&ctx, a),
        Command::Diff(a) => diff(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
