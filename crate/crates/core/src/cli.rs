//! Command-line front end.
//!
//! Every run reads one JSON config document, resolves the master seed
//! (`--seed`, then `MFS_SEED`, then the document's own `seed`, then 0) and
//! writes its outputs atomically into `--out`. Each output file starts with
//! `# config_hash=<sha256 of the document> seed=<seed>`.
//!
//! Exit codes: 0 success, 1 config or validation error, 2 runtime failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::harness::{
    fuse_report_csv, results_csv, run_trial_detailed, sweep_network_size, trial_seed, CaptureExperiment, Case,
    ScenarioConfig,
};
use crate::mmpp::NhppProfile;
use crate::mvl::{analyze_faults, fault_report_csv, MvlFunction};
use crate::rng::derive_seed;
use crate::traffic::{compose_counts, simulate_nhpp_counts, simulate_onoff, OnOffSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    /// Per-sensor decision event traces and optional NHPP slot counts.
    Trace,
    /// Two-sensor capture demonstration.
    Capture,
    /// Spectral stuck-at fault analysis of a truth table.
    Mvl,
    /// One multi-epoch fusion run.
    Fuse,
    /// Error probability versus network size.
    Sweep,
}

/// Parsed command line.
#[derive(Debug, Clone, Parser)]
#[command(name = "mfs", version, about = "Multi-valued decision fusion simulator")]
pub struct CliConfig {
    #[arg(value_enum)]
    pub subcommand: Subcommand,
    /// JSON config document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed override.
    #[arg(long, env = "MFS_SEED")]
    pub seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn default_trace_horizon() -> f64 {
    1_000.0
}

fn default_trace_sources() -> Vec<OnOffSource> {
    CaptureExperiment::default().sources
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NhppSection {
    pub profile: NhppProfile,
    pub slot_width: f64,
    /// Event-driven per-slot changes added to the normal counts; slots past
    /// the end of the list get no change.
    #[serde(default)]
    pub change: Vec<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    #[serde(default = "default_trace_sources")]
    pub sources: Vec<OnOffSource>,
    #[serde(default = "default_trace_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub nhpp: Option<NhppSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvlConfig {
    /// Truth-table file, relative to the config document.
    #[serde(default)]
    pub table_file: Option<PathBuf>,
    #[serde(default)]
    pub g: Option<u32>,
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub table: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub scenario: ScenarioConfig,
    pub sizes: Vec<usize>,
    #[serde(default = "all_cases")]
    pub cases: Vec<Case>,
}

fn all_cases() -> Vec<Case> {
    Case::ALL.to_vec()
}

/// Output collected in memory and written once the run succeeded.
struct Outputs {
    header: String,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(config_text: &str, seed: u64) -> Self {
        let hash = Sha256::digest(config_text.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            header: format!("# config_hash={hex} seed={seed}\n"),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }

    fn write(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, body) in self.files {
            let path = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .map_err(|e| runtime_err(format!("cannot write into {}: {e}", dir.display())))?;
            tmp.write_all(self.header.as_bytes())
                .and_then(|_| tmp.write_all(body.as_bytes()))
                .and_then(|_| tmp.flush())
                .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
            tmp.persist(&path)
                .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn parse_doc<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

/// Validation failures surface as config errors, everything else as runtime.
fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidParameter(_)
        | Error::NonErgodic
        | Error::EmptyComponents
        | Error::Parse { .. }
        | Error::Json(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn run_trace(text: &str, cfg: &CliConfig, out: &mut Outputs, seed: u64) -> Result<(), CliError> {
    let doc: TraceConfig = parse_doc(text, &cfg.config)?;
    if doc.sources.is_empty() {
        return Err(config_err("trace needs at least one source"));
    }
    for s in &doc.sources {
        s.validate().map_err(classify)?;
    }
    if !(doc.horizon >= 0.0) || !doc.horizon.is_finite() {
        return Err(config_err(format!("horizon must be finite and >= 0, got {}", doc.horizon)));
    }
    if let Some(n) = &doc.nhpp {
        n.profile.validate().map_err(classify)?;
    }
    for s in &doc.sources {
        let trace = simulate_onoff(s, doc.horizon, derive_seed(seed, u64::from(s.sensor_id))).map_err(classify)?;
        info!("sensor {}: {} events", s.sensor_id, trace.len());
        out.add(format!("sensor_{}.csv", s.sensor_id), trace.to_csv());
    }
    if let Some(n) = &doc.nhpp {
        let normal = simulate_nhpp_counts(&n.profile, n.slot_width, doc.horizon, derive_seed(seed, u64::MAX))
            .map_err(classify)?;
        if n.change.len() > normal.counts.len() {
            return Err(config_err(format!(
                "change has {} entries but the horizon holds {} slots",
                n.change.len(),
                normal.counts.len()
            )));
        }
        // unlisted slots carry no change
        let mut change = n.change.clone();
        change.resize(normal.counts.len(), 0);
        let total = compose_counts(&normal, &change).map_err(classify)?;
        let mut csv = String::from("slot,normal,change,total\n");
        for (i, ((y_n, y_c), y)) in normal.counts.iter().zip(&change).zip(&total.counts).enumerate() {
            csv.push_str(&format!("{i},{y_n},{y_c},{y}\n"));
        }
        out.add("nhpp_counts.csv", csv);
    }
    Ok(())
}

fn run_capture_cmd(text: &str, cfg: &CliConfig, out: &mut Outputs, seed: u64) -> Result<(), CliError> {
    let mut doc: CaptureExperiment = parse_doc(text, &cfg.config)?;
    doc.seed = seed;
    for s in &doc.sources {
        s.validate().map_err(classify)?;
    }
    doc.model().map_err(classify)?;
    let demo = doc.run().map_err(classify)?;
    for (src, trace) in doc.sources.iter().zip(&demo.sensor_traces) {
        out.add(format!("sensor_{}.csv", src.sensor_id), trace.to_csv());
    }
    out.add("captured.csv", demo.mmpp.captured.to_csv());
    out.add("capture_report.csv", demo.mmpp.report_csv());
    out.add("baseline_report.csv", demo.poisson.report_csv());
    info!(
        "capture ratio {:.4} (equal-budget mean-rate baseline {:.4})",
        demo.mmpp.ratio, demo.poisson.ratio
    );
    Ok(())
}

fn run_mvl(text: &str, cfg: &CliConfig, out: &mut Outputs) -> Result<(), CliError> {
    let doc: MvlConfig = parse_doc(text, &cfg.config)?;
    let f = match (&doc.table_file, doc.g, doc.n, &doc.table) {
        (Some(file), None, None, None) => {
            let path = cfg.config.parent().unwrap_or(Path::new(".")).join(file);
            let body = fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            MvlFunction::parse(&body).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        (None, Some(g), Some(n), Some(table)) => MvlFunction::new(g, n, table.clone()).map_err(classify)?,
        _ => return Err(config_err("give either table_file or all of g, n and table")),
    };
    let verdicts = analyze_faults(&f);
    info!(
        "{} of {} stuck faults syndrome-testable",
        verdicts.iter().filter(|v| v.testable).count(),
        verdicts.len()
    );
    out.add("mvl_report.csv", fault_report_csv(&verdicts));
    Ok(())
}

fn run_fuse(text: &str, cfg: &CliConfig, out: &mut Outputs, seed: u64) -> Result<(), CliError> {
    let mut doc: ScenarioConfig = parse_doc(text, &cfg.config)?;
    doc.seed = seed;
    doc.validate().map_err(classify)?;
    let run = run_trial_detailed(&doc, trial_seed(seed, 0)).map_err(classify)?;
    let errors = run.epochs.iter().filter(|e| e.fused != e.truth).count();
    info!("{errors} of {} epochs fused wrongly", run.epochs.len());
    out.add("fuse_report.csv", fuse_report_csv(&run.epochs));
    Ok(())
}

fn run_sweep(text: &str, cfg: &CliConfig, out: &mut Outputs, seed: u64) -> Result<(), CliError> {
    let mut doc: SweepConfig = parse_doc(text, &cfg.config)?;
    doc.scenario.seed = seed;
    if doc.sizes.is_empty() || doc.cases.is_empty() {
        return Err(config_err("sizes and cases must be nonempty"));
    }
    for &n in &doc.sizes {
        ScenarioConfig { n_sensors: n, ..doc.scenario.clone() }.validate().map_err(classify)?;
    }
    let rows = sweep_network_size(&doc.scenario, &doc.sizes, &doc.cases).map_err(classify)?;
    for r in &rows {
        info!("n={} {}: p_e={:.4}", r.n, r.case, r.estimate.p_e);
    }
    out.add("results.csv", results_csv(&rows));
    Ok(())
}

/// Seed recorded in the document, if any.
fn document_seed(text: &str) -> Option<u64> {
    let value: serde_json::Value = serde_json::from_str(text).ok()?;
    let direct = value.get("seed").and_then(|s| s.as_u64());
    direct.or_else(|| value.get("scenario")?.get("seed")?.as_u64())
}

/// Runs one subcommand and returns the written files.
pub fn execute(cfg: &CliConfig) -> Result<Vec<PathBuf>, CliError> {
    let text = fs::read_to_string(&cfg.config)
        .map_err(|e| config_err(format!("cannot read {}: {e}", cfg.config.display())))?;
    let seed = cfg.seed.or_else(|| document_seed(&text)).unwrap_or(0);
    let mut out = Outputs::new(&text, seed);
    match cfg.subcommand {
        Subcommand::Trace => run_trace(&text, cfg, &mut out, seed)?,
        Subcommand::Capture => run_capture_cmd(&text, cfg, &mut out, seed)?,
        Subcommand::Mvl => run_mvl(&text, cfg, &mut out)?,
        Subcommand::Fuse => run_fuse(&text, cfg, &mut out, seed)?,
        Subcommand::Sweep => run_sweep(&text, cfg, &mut out, seed)?,
    }
    out.write(&cfg.out)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cfg.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MFS_LOG")
        .format_timestamp(None)
        .try_init();
    match execute(&cfg) {
        Ok(files) => {
            for f in files {
                info!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("mfs: {e}");
            e.exit_code()
        }
    }
}
