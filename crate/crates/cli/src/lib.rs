pub mod bench;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use kprism_analysis::{track, write_plot_data, Direction, KpiSeries, MetricIndex, TrackingReport};
use kprism_collector::{
    CollectError, LiveBackend, LossyPolicy, ProcFs, Session, SessionConfig, SystemClock, Target,
};
use kprism_core::Store;
use kprism_replay::{generate, replay_to_store, ScenarioKind, ScenarioSpec, Trace};
use thiserror::Error;

use crate::bench::{bench_overhead, BenchError, LiveInstrumenter};

#[derive(Debug, Parser)]
#[command(
    name = "kprism",
    version,
    about = "Per-second thread-level kernel metrics and degradation analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a live session against the loaded kernel probes.
    Record(RecordArgs),
    /// Generate a synthetic scenario trace with its KPI and ground truth.
    Generate(GenerateArgs),
    /// Replay a trace into a metric store.
    Replay(ReplayArgs),
    /// Correlate a metric store with a KPI and track dependencies.
    Analyze(AnalyzeArgs),
    /// Pretty-print a tracking report.
    Report(ReportArgs),
    /// Measure the latency a live session adds to a benchmark.
    BenchOverhead(BenchArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["tgid", "comm"])))]
pub struct RecordArgs {
    #[arg(long)]
    pub tgid: Option<u32>,
    #[arg(long)]
    pub comm: Option<String>,
    #[arg(long, value_name = "SEC")]
    pub duration: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mark", value_parser = parse_policy)]
    pub lossy_policy: LossyPolicy,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: ScenarioKind,
    #[arg(long)]
    pub threads: u32,
    #[arg(long, value_name = "SEC")]
    pub duration: u64,
    #[arg(long)]
    pub seed: u64,
    /// Trace path; the KPI and ground truth are written next to it as
    /// `<out>.kpi.csv` and `<out>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    /// CSV with header `ts,value`; higher values are worse.
    #[arg(long)]
    pub kpi: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Inclusive wall-clock seconds `START,END`.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<(u64, u64)>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Workload command line, split on whitespace.
    #[arg(long)]
    pub cmd: String,
    #[arg(long)]
    pub reps: u32,
    /// Target the spawned workload's tgid instead of its command name.
    #[arg(long)]
    pub tgid_from_child: bool,
}

fn parse_policy(s: &str) -> Result<LossyPolicy, String> {
    s.parse()
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    s.parse()
        .map_err(|e: kprism_replay::GenerateError| e.to_string())
}

fn parse_window(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected START,END, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("window start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("window end: {e}"))?;
    if a > b {
        return Err(format!("window start {a} after end {b}"));
    }
    Ok((a, b))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Privilege(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Privilege(_) => 3,
        }
    }
}

impl From<CollectError> for CliError {
    fn from(e: CollectError) -> Self {
        match e {
            CollectError::Config(_) | CollectError::TargetNotFound(_) => {
                CliError::Validation(e.to_string())
            }
            CollectError::Privilege(_) => CliError::Privilege(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::NoReps | BenchError::EmptyCommand => CliError::Validation(e.to_string()),
            BenchError::Collect(c) => c.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(context: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", context.display()))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn kpi_path(trace_out: &Path) -> PathBuf {
    sidecar(trace_out, ".kpi.csv")
}

pub fn truth_path(trace_out: &Path) -> PathBuf {
    sidecar(trace_out, ".truth.json")
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| runtime(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| runtime(path, e))
}

fn record(args: RecordArgs) -> Result<(), CliError> {
    let target = match (args.tgid, args.comm) {
        (Some(t), None) => Target::Tgid(t),
        (None, Some(c)) => Target::Comm(c),
        _ => unreachable!("clap enforces exactly one target"),
    };
    let cfg = SessionConfig {
        target,
        duration_s: args.duration,
        output_path: args.out,
        lossy_policy: args.lossy_policy,
    };
    cfg.validate()?;
    let session = Session::start(
        cfg,
        &ProcFs::default(),
        LiveBackend::from_env(),
        SystemClock::default(),
    )?;
    let report = session.run()?;
    eprintln!(
        "recorded {} intervals, {} samples, {} lossy; scope {:?}",
        report.intervals,
        report.samples,
        report.lossy_intervals.len(),
        report.scope.iter().map(|e| e.tgid).collect::<Vec<_>>()
    );
    Ok(())
}

fn generate_cmd(args: GenerateArgs) -> Result<(), CliError> {
    let g = generate(&ScenarioSpec {
        kind: args.scenario,
        threads: args.threads,
        duration_s: args.duration,
        seed: args.seed,
    })
    .map_err(|e| CliError::Validation(e.to_string()))?;
    write_file(&args.out, |w| g.trace.write(w))?;
    let kpi = kpi_path(&args.out);
    fs::write(&kpi, g.kpi_csv()).map_err(|e| runtime(&kpi, e))?;
    let truth = truth_path(&args.out);
    write_file(&truth, |w| {
        serde_json::to_writer_pretty(&mut *w, &g.truth)?;
        w.write_all(b"\n")
    })?;
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> Result<(), CliError> {
    let trace = Trace::open(&args.trace).map_err(|e| runtime(&args.trace, e))?;
    let file = File::create(&args.out).map_err(|e| runtime(&args.out, e))?;
    let mut w = BufWriter::new(file);
    let summary = replay_to_store(&trace, &mut w).map_err(|e| runtime(&args.trace, e))?;
    w.flush().map_err(|e| runtime(&args.out, e))?;
    let c = &summary.counters;
    log::info!(
        "replayed {} intervals, {} samples",
        summary.intervals,
        summary.samples
    );
    if c.late + c.out_of_order + c.unmatched_exits > 0 {
        log::warn!("event anomalies: {c:?}");
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Validation(format!(
            "threshold {} outside [0, 1]",
            args.threshold
        )));
    }
    let store = Store::open(&args.metrics).map_err(|e| runtime(&args.metrics, e))?;
    let kpi =
        KpiSeries::open(&args.kpi, Direction::HigherIsWorse).map_err(|e| runtime(&args.kpi, e))?;
    let index = MetricIndex::new(&store);
    let report = track(&index, &kpi, args.threshold, args.window)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&args.report, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        w.write_all(b"\n")
    })?;
    if let Some(dir) = &args.plot_dir {
        write_plot_data(dir, &index, &kpi, args.window, &report.candidates)
            .map_err(|e| runtime(dir, e))?;
    }
    Ok(())
}

/// Human-readable rendering of a tracking report.
pub fn render_report(r: &TrackingReport) -> String {
    use std::fmt::Write as _;
    let thread = |t: &kprism_analysis::ThreadInfo| format!("{}/{} {}", t.tgid, t.tid, t.comm);
    let mut s = String::new();
    let _ = writeln!(s, "{}", r.schema);
    let _ = writeln!(
        s,
        "window {}..={} ({} s), threshold {}",
        r.window.0, r.window.1, r.seconds, r.threshold
    );
    if !r.lossy_seconds.is_empty() {
        let _ = writeln!(s, "lossy seconds: {:?}", r.lossy_seconds);
    }
    let _ = writeln!(s, "\nentrypoints:");
    for t in &r.entrypoints {
        let _ = writeln!(s, "  {}", thread(t));
    }
    let _ = writeln!(s, "\niterations: {}", r.iterations);
    for (i, added) in r.frontier_history.iter().enumerate() {
        let names: Vec<String> = added.iter().map(thread).collect();
        let _ = writeln!(
            s,
            "  {}: {}",
            i + 1,
            if names.is_empty() {
                "-".into()
            } else {
                names.join(", ")
            }
        );
    }
    let _ = writeln!(s, "\ncandidates:");
    for c in &r.candidates {
        let _ = writeln!(
            s,
            "  {:+.3}  {:<24} {:<18} {}",
            c.score,
            thread(&c.subject),
            c.metric.as_str(),
            c.resource.as_deref().unwrap_or("-")
        );
    }
    let _ = writeln!(s, "\nedges:");
    for e in &r.edges {
        let _ = writeln!(
            s,
            "  {} -> {}  {:?} on {} ({})",
            thread(&e.from),
            thread(&e.to),
            e.mechanism,
            e.resource,
            e.metric.as_str()
        );
    }
    s
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.report).map_err(|e| runtime(&args.report, e))?;
    let report: TrackingReport =
        serde_json::from_str(&text).map_err(|e| runtime(&args.report, e))?;
    print!("{}", render_report(&report));
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<(), CliError> {
    let program = args.cmd.split_whitespace().next().unwrap_or_default();
    let comm = Path::new(program)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut inst = LiveInstrumenter::new(&comm, args.tgid_from_child);
    let summary = bench_overhead(&args.cmd, args.reps, &mut inst)?;
    println!("{summary}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Record(a) => record(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report_cmd(a),
        Command::BenchOverhead(a) => bench_cmd(a),
    }
}
