//! The `tvbarc` command line: ingest, fit, changepoint, acf and simulate.
//!
//! Every command computes all of its outputs in memory, stages them in a
//! temporary directory next to the output directory and moves them into
//! place only once everything succeeded. Each output directory gets a
//! `manifest.json` recording the command, input digests and resolved
//! configuration. Wall-clock time goes to stderr so that reruns produce
//! byte-identical trees.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::classical::{detect_changepoint_with, sample_acf, DEFAULT_MIN_SEGMENT};
use crate::data_io::{self, KeywordClassMap};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ModelSpec, DEFAULT_DEGREE, DEFAULT_NUM_BASIS, DEFAULT_PRIOR_VARIANCE};
use crate::posterior::{default_grid, trend_summary_pooled, write_trend_csv, TrendTarget, DEFAULT_GRID_POINTS};
use crate::sampler::{run_chains, write_chain_csv, ChainMetadata, Proposal, SamplerConfig};
use crate::spline::BasisSpec;
use crate::synthgen::{simulate, GeneratorSpec};

pub const OUT_DIR_ENV: &str = "TVBARC_OUT_DIR";
pub const MANIFEST_NAME: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tvbarc", version, about = "Time-varying Bayesian autoregressive count models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate timestamped keyword records into daily counts per class.
    Ingest(IngestArgs),
    /// Fit the model to a daily counts file and export trend summaries.
    Fit(FitArgs),
    /// Least-squares single mean-shift changepoint.
    Changepoint(ChangepointArgs),
    /// Sample autocorrelation function.
    Acf(AcfArgs),
    /// Simulate a counts file from a generator spec (JSON).
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "tvbarc-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Records as CSV (id,timestamp,keyword) or JSON lines (.jsonl).
    pub records: PathBuf,
    /// Class map JSON; the bundled CY/ON/TW map when omitted.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value = "2020-01-01")]
    pub start: NaiveDate,
    #[arg(long, default_value = "2020-06-07")]
    pub end: NaiveDate,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProposalArg {
    RandomWalk,
    GradientInformed,
}

impl From<ProposalArg> for Proposal {
    fn from(p: ProposalArg) -> Self {
        match p {
            ProposalArg::RandomWalk => Proposal::RandomWalk,
            ProposalArg::GradientInformed => Proposal::GradientInformed,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Counts CSV with header date,count.
    pub counts: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Basis size for the trend.
    #[arg(long, default_value_t = DEFAULT_NUM_BASIS)]
    pub k1: usize,
    /// Basis size for the lag coefficients.
    #[arg(long, default_value_t = DEFAULT_NUM_BASIS)]
    pub k2: usize,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Prior variance of delta.
    #[arg(long, default_value_t = DEFAULT_PRIOR_VARIANCE)]
    pub c1: f64,
    /// Prior variance of beta.
    #[arg(long, default_value_t = DEFAULT_PRIOR_VARIANCE)]
    pub c2: f64,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    /// Post-burn-in iterations per chain.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Credible level of the pointwise bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Independent chains, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, value_enum, default_value = "random-walk")]
    pub proposal: ProposalArg,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid: usize,
    /// Run chains one after another instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ChangepointArgs {
    pub counts: PathBuf,
    /// Smallest allowed segment length.
    #[arg(long, default_value_t = DEFAULT_MIN_SEGMENT)]
    pub min_seg: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AcfArgs {
    pub counts: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub max_lag: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub genspec: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Files produced by one command, written together by [`commit`].
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Serialize)]
struct InputRecord {
    file: String,
    sha256: String,
}

fn input_record(path: &Path, bytes: &[u8]) -> InputRecord {
    InputRecord {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

fn read_input(path: &Path) -> Result<(Vec<u8>, InputRecord)> {
    let bytes = std::fs::read(path)?;
    let rec = input_record(path, &bytes);
    Ok((bytes, rec))
}

fn manifest(command: &str, inputs: Vec<InputRecord>, config: Value, warnings: Vec<String>, outputs: &Outputs) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "inputs": inputs,
        "config": config,
        "warnings": warnings,
        "outputs": outputs.names(),
    })
}

/// Stages every file in a sibling temporary directory, then renames into
/// `out`. A fresh `out` is created by a single directory rename.
fn commit(out: &Path, mut outputs: Outputs, manifest: Value) -> Result<()> {
    outputs.add_json(MANIFEST_NAME, &manifest)?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".tvbarc-staging-").tempdir_in(&parent)?;
    for (name, bytes) in &outputs.files {
        std::fs::write(staging.path().join(name), bytes)?;
    }
    if !out.exists() {
        let staged = staging.keep();
        if let Err(e) = std::fs::rename(&staged, out) {
            let _ = std::fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        return Ok(());
    }
    if !out.is_dir() {
        return Err(Error::InvalidArgument(format!("{} exists and is not a directory", out.display())));
    }
    for (name, _) in &outputs.files {
        std::fs::rename(staging.path().join(name), out.join(name))?;
    }
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<String> {
    let (_, records_in) = read_input(&args.records)?;
    let mut inputs = vec![records_in];
    let classes = match &args.classes {
        Some(path) => {
            let (bytes, rec) = read_input(path)?;
            inputs.push(rec);
            let text = String::from_utf8(bytes).map_err(|e| Error::parse(0, e.to_string()).with_path(path))?;
            KeywordClassMap::from_json(&text)?
        }
        None => KeywordClassMap::bundled(),
    };
    let batch = data_io::read_records(&args.records)?;
    let agg = data_io::aggregate_daily(&batch.records, args.start, args.end, &classes, Execution::default())?;

    let mut warnings = Vec::new();
    if batch.records.is_empty() && batch.rejected() == 0 {
        warnings.push("record file is empty; all counts are zero".to_string());
    }
    if batch.rejected() > 0 {
        warnings.push(format!("{} records rejected for malformed timestamps", batch.rejected()));
    }

    let mut outputs = Outputs::new();
    for (label, series) in &agg.series {
        let mut buf = Vec::new();
        data_io::write_counts(series, &mut buf)?;
        outputs.add(format!("{label}.csv"), buf);
    }
    let config = json!({
        "start": args.start,
        "end": args.end,
        "classes": classes,
        "records_read": batch.records.len(),
        "rejected_timestamps": batch.rejected(),
        "rejected_lines": batch.rejected_lines,
        "duplicates_dropped": agg.duplicates,
        "out_of_range_dropped": agg.out_of_range,
    });
    let m = manifest("ingest", inputs, config, warnings, &outputs);
    commit(&args.out.out, outputs, m)?;
    Ok(format!(
        "ingested {} records into {} series of {} days",
        batch.records.len(),
        agg.series.len(),
        (args.end - args.start).num_days() + 1
    ))
}

fn cmd_fit(args: &FitArgs) -> Result<String> {
    let (_, counts_in) = read_input(&args.counts)?;
    let series = data_io::read_counts_csv(&args.counts)?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::InvalidArgument(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    if args.grid < 2 {
        return Err(Error::InvalidArgument("--grid needs at least 2 points".into()));
    }
    let spec = ModelSpec::new(
        args.p,
        BasisSpec::uniform(args.k1, args.degree)?,
        BasisSpec::uniform(args.k2, args.degree)?,
        args.c1,
        args.c2,
    )?;
    let config = SamplerConfig {
        burn_in: args.burnin,
        retained: args.samples,
        thin: args.thin,
        seed: args.seed,
        proposal: args.proposal.into(),
        ..SamplerConfig::default()
    };
    config.validate()?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let chains = run_chains(&series, &spec, &config, args.chains, exec)?;

    let grid = default_grid(args.grid);
    let mut outputs = Outputs::new();
    let mut summaries = Vec::with_capacity(args.p + 1);
    for target in std::iter::once(TrendTarget::Mu).chain((1..=args.p).map(TrendTarget::Ar)) {
        let summary = trend_summary_pooled(&chains, target, &grid, args.level, exec)?;
        let mut buf = Vec::new();
        write_trend_csv(&summary, &mut buf)?;
        outputs.add(format!("{}_trend.csv", target.name()), buf);
        summaries.push(summary);
    }
    outputs.add_json(
        "trends.json",
        &json!({ "series": series.label(), "level": args.level, "trends": summaries }),
    )?;
    let mut buf = Vec::new();
    write_chain_csv(&chains, &mut buf)?;
    outputs.add("chain.csv", buf);
    outputs.add_json("chain_meta.json", &ChainMetadata::from_chains(&chains)?)?;

    let resolved = json!({
        "model_spec": spec,
        "sampler_config": config,
        "chains": args.chains,
        "level": args.level,
        "grid_points": args.grid,
        "execution": exec,
    });
    let m = manifest("fit", vec![counts_in], resolved, Vec::new(), &outputs);
    commit(&args.out.out, outputs, m)?;
    Ok(format!(
        "fit p = {} to {} days: {} chain(s) x {} draws",
        args.p,
        series.len(),
        chains.len(),
        config.num_draws()
    ))
}

fn cmd_changepoint(args: &ChangepointArgs) -> Result<String> {
    let (_, counts_in) = read_input(&args.counts)?;
    let series = data_io::read_counts_csv(&args.counts)?;
    let r = detect_changepoint_with(series.counts(), args.min_seg, Execution::default())?;
    let result = json!({
        "series": series.label(),
        "series_len": series.len(),
        "tau_hat": r.tau_hat,
        "date_at_tau": series.date_at(r.tau_hat),
        "base_mean": r.base_mean,
        "shift": r.shift,
        "sse_reduction": r.sse_reduction,
    });
    let mut outputs = Outputs::new();
    outputs.add_json("changepoint.json", &result)?;
    let m = manifest(
        "changepoint",
        vec![counts_in],
        json!({ "min_seg": args.min_seg }),
        Vec::new(),
        &outputs,
    );
    commit(&args.out.out, outputs, m)?;
    Ok(format!(
        "tau_hat = {} ({}), shift = {}",
        r.tau_hat,
        series.date_at(r.tau_hat),
        r.shift
    ))
}

fn cmd_acf(args: &AcfArgs) -> Result<String> {
    let (_, counts_in) = read_input(&args.counts)?;
    let series = data_io::read_counts_csv(&args.counts)?;
    let rho = sample_acf(&series, args.max_lag)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lag", "rho"])?;
    for (h, r) in rho.iter().enumerate() {
        w.write_record([h.to_string(), r.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut outputs = Outputs::new();
    outputs.add("acf.csv", bytes);
    let m = manifest("acf", vec![counts_in], json!({ "max_lag": args.max_lag }), Vec::new(), &outputs);
    commit(&args.out.out, outputs, m)?;
    Ok(format!("acf up to lag {}: rho(1) = {:.4}", args.max_lag, rho[1]))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let (bytes, spec_in) = read_input(&args.genspec)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(0, e.to_string()).with_path(&args.genspec))?;
    let mut spec = GeneratorSpec::from_json(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let series = simulate(&spec)?;
    let mut buf = Vec::new();
    data_io::write_counts(&series, &mut buf)?;
    let mut outputs = Outputs::new();
    outputs.add("counts.csv", buf);
    let m = manifest("simulate", vec![spec_in], serde_json::to_value(&spec)?, Vec::new(), &outputs);
    commit(&args.out.out, outputs, m)?;
    Ok(format!("simulated {} days (seed {})", series.len(), spec.seed))
}

/// Exit code for a library error: bad flag values are usage errors,
/// sampler breakdowns are numerical, everything else is a data error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::InvalidBasis(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Changepoint(a) => cmd_changepoint(a),
        Command::Acf(a) => cmd_acf(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let started = Instant::now();
    match execute(&cli.command) {
        Ok(summary) => {
            eprintln!("{summary} [{:.2}s]", started.elapsed().as_secs_f64());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fit_defaults() {
        let cli = Cli::try_parse_from(["tvbarc", "fit", "x.csv", "--out", "o"]).unwrap();
        let Command::Fit(f) = cli.command else { panic!() };
        assert_eq!((f.p, f.k1, f.k2, f.degree), (1, 6, 6, 3));
        assert_eq!((f.burnin, f.samples, f.level), (10_000, 20_000, 0.95));
        assert_eq!((f.c1, f.c2), (100.0, 100.0));
        assert_eq!(f.proposal, ProposalArg::RandomWalk);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::parse(3, "x")), EXIT_DATA);
        assert_eq!(run(["tvbarc", "fit", "--p", "nope"]), EXIT_USAGE);
        assert_eq!(run(["tvbarc"]), EXIT_USAGE);
    }

    #[test]
    fn commit_into_existing_dir() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        std::fs::create_dir(&out).unwrap();
        std::fs::write(out.join("keep.txt"), "k").unwrap();
        let mut o = Outputs::new();
        o.add("a.txt", b"a".to_vec());
        commit(&out, o, json!({})).unwrap();
        assert_eq!(std::fs::read_to_string(out.join("a.txt")).unwrap(), "a");
        assert!(out.join("keep.txt").exists() && out.join(MANIFEST_NAME).exists());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
