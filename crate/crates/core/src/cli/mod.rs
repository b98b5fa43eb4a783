//! Command-line front end: margin runs, sweeps over load compositions and
//! plot-ready CSV output.
//!
//! Every subcommand writes its artifacts into `--out`. Artifacts are
//! byte-identical for identical inputs; the wall-clock timestamp and the
//! resolved settings go to a separate `metadata.json`.

mod sweep;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cases::{builtin_parallel_twobus, builtin_two_area, builtin_twobus, load_case, SystemCase, TwoAreaLoadMix};
use crate::error::{Error, Result};
use crate::margins::{
    binary_search_sol, compute_pcll, compute_sol, sample_pv_curve, sol_operating_point, write_margin_table,
    MarginResult, MarginRow, StabilityCriterion, StressSchedule,
};
use crate::simulator::{SimOptions, Simulator, StopPolicy, VerdictReason};

pub use sweep::{cmd_sweep, LoadOverride, SweepSpec};

/// Exit code for invalid input: schema or invariant violations, unknown
/// contingency labels, bad flags.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code when a result is dominated by solver divergence.
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable holding the default sweep worker count.
pub const WORKERS_ENV: &str = "SECMARGIN_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "secmargin",
    version,
    about = "PCLL and SOL security margins from dynamic simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Post-contingency loadability limit.
    Pcll(MarginArgs),
    /// Secure operating limit.
    Sol(SolArgs),
    /// PCLL and SOL over a grid of load compositions and contingencies.
    Sweep(SweepArgs),
    /// P-V curves of the monitored buses from a margin scan.
    PvCurve(PvArgs),
    /// Load and validate a case file.
    Validate {
        /// Case file, or `builtin:twobus`, `builtin:parallel-twobus`,
        /// `builtin:two-area`.
        case: String,
    },
}

/// Stress schedule and stability criterion flags shared by all runs.
/// Unset values fall back to the sweep spec, then to the defaults shown.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Stress step after the coarse phase, MW [default: 1].
    #[arg(long)]
    pub fine_step: Option<f64>,
    /// Stress step of the coarse phase, MW [default: 5].
    #[arg(long)]
    pub coarse_step: Option<f64>,
    /// Stress where the coarse phase ends, MW [default: 300].
    #[arg(long)]
    pub coarse_until: Option<f64>,
    /// Simulated horizon of every stability run, s [default: 1000].
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Integration step, s [default: 0.0005].
    #[arg(long)]
    pub dt: Option<f64>,
    /// End-of-horizon voltage floor, pu [default: 0.9].
    #[arg(long)]
    pub v_final: Option<f64>,
    /// Early-stop voltage floor, pu [default: 0.7].
    #[arg(long)]
    pub v_early: Option<f64>,
    /// Time after the disturbance before the early stop is armed, s
    /// [default: 20].
    #[arg(long)]
    pub grace: Option<f64>,
    /// Longest settle after one PCLL increment, s [default: 300].
    #[arg(long)]
    pub settle_cap: Option<f64>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub fine_step: f64,
    pub coarse_step: f64,
    pub coarse_until: f64,
    pub t_end: f64,
    pub dt: f64,
    pub v_final: f64,
    pub v_early: f64,
    pub grace: f64,
    pub settle_cap: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let c = StabilityCriterion::default();
        Settings {
            fine_step: 1.0,
            coarse_step: 5.0,
            coarse_until: 300.0,
            t_end: c.t_end,
            dt: c.sim.dt,
            v_final: c.stop.v_final,
            v_early: c.stop.v_early,
            grace: c.stop.grace,
            settle_cap: c.settle_cap,
        }
    }
}

impl RunFlags {
    /// Flags over `lower`.
    pub fn resolve(&self, lower: &Settings) -> Settings {
        Settings {
            fine_step: self.fine_step.unwrap_or(lower.fine_step),
            coarse_step: self.coarse_step.unwrap_or(lower.coarse_step),
            coarse_until: self.coarse_until.unwrap_or(lower.coarse_until),
            t_end: self.t_end.unwrap_or(lower.t_end),
            dt: self.dt.unwrap_or(lower.dt),
            v_final: self.v_final.unwrap_or(lower.v_final),
            v_early: self.v_early.unwrap_or(lower.v_early),
            grace: self.grace.unwrap_or(lower.grace),
            settle_cap: self.settle_cap.unwrap_or(lower.settle_cap),
        }
    }
}

impl Settings {
    pub fn schedule(&self, case: &SystemCase) -> Result<StressSchedule> {
        let mut s = StressSchedule::for_case(case)?;
        s.fine_step = self.fine_step;
        s.coarse_step = self.coarse_step;
        s.coarse_until = self.coarse_until;
        s.validate()?;
        Ok(s)
    }

    pub fn criterion(&self) -> Result<StabilityCriterion> {
        let mut bad = Vec::new();
        for (name, v) in [("dt", self.dt), ("t-end", self.t_end), ("settle-cap", self.settle_cap)] {
            if !(v > 0.0) {
                bad.push(format!("--{name} {v} must be positive"));
            }
        }
        if !(self.grace >= 0.0) {
            bad.push(format!("--grace {} must be >= 0", self.grace));
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let base = StabilityCriterion::default();
        Ok(StabilityCriterion {
            stop: StopPolicy {
                v_final: self.v_final,
                v_early: self.v_early,
                grace: self.grace,
            },
            t_end: self.t_end,
            settle_cap: self.settle_cap,
            sim: SimOptions {
                dt: self.dt,
                ..base.sim
            },
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct MarginArgs {
    /// Case file or `builtin:<name>`.
    pub case: String,
    /// Contingency label defined in the case.
    pub contingency: String,
    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SolArgs {
    #[command(flatten)]
    pub margin: MarginArgs,
    /// Bisection instead of the linear scan.
    #[arg(long)]
    pub binary_search: bool,
    /// Bisection tolerance, MW.
    #[arg(long, default_value_t = 1.0)]
    pub tol: f64,
    /// Initial upper bracket for bisection, MW (widened while stable).
    #[arg(long, default_value_t = 100.0)]
    pub hi: f64,
    /// Also write the full trajectory of the contingency run from this
    /// stress level, MW.
    #[arg(long)]
    pub trace_at: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Case file or `builtin:<name>`.
    pub case: String,
    /// Sweep specification (JSON).
    pub spec: PathBuf,
    /// Parallel cells; defaults to the CPU count.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PvMethod {
    Pcll,
    Sol,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct PvArgs {
    #[command(flatten)]
    pub margin: MarginArgs,
    #[arg(long, value_enum, default_value_t = PvMethod::Both)]
    pub method: PvMethod,
    /// Only this bus (default: every monitored bus).
    #[arg(long)]
    pub bus: Option<u32>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let out = match cli.command {
        Command::Pcll(a) => cmd_pcll(&a),
        Command::Sol(a) => cmd_sol(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::PvCurve(a) => cmd_pv_curve(&a),
        Command::Validate { case } => cmd_validate(&case),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Diverged { .. } | Error::Initialization(_) => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

/// A case file path, or one of the built-in systems.
pub fn resolve_case(spec: &str) -> Result<SystemCase> {
    match spec.strip_prefix("builtin:") {
        Some("twobus") => Ok(builtin_twobus()),
        Some("parallel-twobus") => Ok(builtin_parallel_twobus()),
        Some("two-area") => Ok(builtin_two_area(TwoAreaLoadMix::default())),
        Some(other) => Err(Error::Validation(vec![format!(
            "unknown built-in case '{other}' (twobus, parallel-twobus, two-area)"
        )])),
        None => load_case(spec),
    }
}

/// A result counts as divergence-dominated when not even the base level
/// survived and the reason was a failed solve.
pub fn divergence_dominated(r: &MarginResult) -> bool {
    !r.levels.iter().any(|l| l.verdict.stable)
        && r.levels
            .iter()
            .any(|l| l.verdict.reason == VerdictReason::NumericalDivergence)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path.display().to_string(), e.into()))?;
    writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Serialize)]
struct Metadata<'a, T: Serialize> {
    command: &'a str,
    case: &'a str,
    unix_time: u64,
    /// Settings precedence, highest first.
    precedence: [&'static str; 4],
    settings: T,
}

pub(crate) fn write_metadata(out: &Path, command: &str, case: &str, settings: impl Serialize) -> Result<()> {
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &out.join("metadata.json"),
        &Metadata {
            command,
            case,
            unix_time,
            precedence: ["flags", "sweep spec", "case file", "defaults"],
            settings,
        },
    )
}

/// Per-level verdicts as CSV.
fn write_levels(path: &Path, r: &MarginResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e.to_string()));
    let mut header = vec![
        "stress_MW".to_string(),
        "stable".to_string(),
        "reason".to_string(),
        "t_violation".to_string(),
        "min_V_pu".to_string(),
    ];
    header.extend(r.monitored.iter().map(|b| format!("V{b}_pu")));
    w.write_record(&header).map_err(io)?;
    for l in &r.levels {
        let mut row = vec![
            l.stress_mw.to_string(),
            l.verdict.stable.to_string(),
            l.verdict.reason.as_str().to_string(),
            l.verdict.t_violation.map(|t| t.to_string()).unwrap_or_default(),
            l.verdict.min_voltage.to_string(),
        ];
        row.extend(l.voltages.iter().map(|v| v.to_string()));
        // failed levels carry no settled voltages
        row.resize(header.len(), String::new());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_pv(out: &Path, r: &MarginResult, bus: Option<u32>) -> Result<()> {
    let buses = match bus {
        Some(b) => vec![b],
        None => r.monitored.clone(),
    };
    let tag = r.method.as_str().to_lowercase();
    for b in buses {
        let curve = sample_pv_curve(r, b)?;
        let path = out.join(format!("pv_{tag}_{b}.csv"));
        curve.write_csv(create(&path)?)?;
    }
    Ok(())
}

/// Result artifacts: one-row margin table, per-level CSV, full JSON and
/// P-V curves.
fn write_result(out: &Path, r: &MarginResult) -> Result<()> {
    let tag = r.method.as_str().to_lowercase();
    let path = out.join(format!("{tag}_margin.csv"));
    write_margin_table(&[MarginRow::from_result("case", r)], create(&path)?)?;
    write_levels(&out.join(format!("{tag}_levels.csv")), r)?;
    write_json(&out.join(format!("{tag}_result.json")), r)?;
    write_pv(out, r, None)
}

fn report(r: &MarginResult) -> i32 {
    println!(
        "{} {}: {} MW ({})",
        r.method.as_str(),
        r.contingency,
        r.margin_mw,
        r.limiting_reason.as_deref().unwrap_or("-")
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    if divergence_dominated(r) {
        EXIT_DIVERGENCE
    } else {
        0
    }
}

pub fn cmd_pcll(a: &MarginArgs) -> Result<i32> {
    let case = resolve_case(&a.case)?;
    let contingency = case.contingency(&a.contingency)?.clone();
    let settings = a.flags.resolve(&Settings::default());
    let schedule = settings.schedule(&case)?;
    let criterion = settings.criterion()?;
    let r = compute_pcll(&case, &contingency, &schedule, &criterion)?;
    write_result(&a.flags.out, &r)?;
    write_metadata(
        &a.flags.out,
        "pcll",
        &a.case,
        serde_json::json!({ "contingency": a.contingency, "resolved": settings }),
    )?;
    Ok(report(&r))
}

#[derive(Serialize)]
struct SolSettings<'a> {
    contingency: &'a str,
    binary_search: bool,
    tol: f64,
    hi: f64,
    trace_at: Option<f64>,
    resolved: &'a Settings,
}

pub fn cmd_sol(a: &SolArgs) -> Result<i32> {
    let m = &a.margin;
    let case = resolve_case(&m.case)?;
    let contingency = case.contingency(&m.contingency)?.clone();
    let settings = m.flags.resolve(&Settings::default());
    let schedule = settings.schedule(&case)?;
    let criterion = settings.criterion()?;
    let r = if a.binary_search {
        binary_search_sol(&case, &contingency, 0.0, a.hi, a.tol, &schedule, &criterion)?
    } else {
        compute_sol(&case, &contingency, &schedule, &criterion)?
    };
    write_result(&m.flags.out, &r)?;
    if let Some(stress) = a.trace_at {
        let (stressed, state) = sol_operating_point(&case, &schedule, stress)?;
        let opts = SimOptions {
            record: true,
            ..criterion.sim.clone()
        };
        let mut sim = Simulator::new(&stressed, state, opts)?;
        sim.run(Some(&contingency), criterion.t_end, &criterion.stop);
        let trace = sim.trace();
        trace.write_csv(create(&m.flags.out.join("trace.csv"))?)?;
        trace.write_events_jsonl(create(&m.flags.out.join("events.jsonl"))?)?;
    }
    write_metadata(
        &m.flags.out,
        "sol",
        &m.case,
        SolSettings {
            contingency: &m.contingency,
            binary_search: a.binary_search,
            tol: a.tol,
            hi: a.hi,
            trace_at: a.trace_at,
            resolved: &settings,
        },
    )?;
    Ok(report(&r))
}

pub fn cmd_pv_curve(a: &PvArgs) -> Result<i32> {
    let m = &a.margin;
    let case = resolve_case(&m.case)?;
    let contingency = case.contingency(&m.contingency)?.clone();
    let settings = m.flags.resolve(&Settings::default());
    let schedule = settings.schedule(&case)?;
    let criterion = settings.criterion()?;
    let mut code = 0;
    if matches!(a.method, PvMethod::Pcll | PvMethod::Both) {
        let r = compute_pcll(&case, &contingency, &schedule, &criterion)?;
        write_pv(&m.flags.out, &r, a.bus)?;
        code = code.max(report(&r));
    }
    if matches!(a.method, PvMethod::Sol | PvMethod::Both) {
        let r = compute_sol(&case, &contingency, &schedule, &criterion)?;
        write_pv(&m.flags.out, &r, a.bus)?;
        code = code.max(report(&r));
    }
    write_metadata(
        &m.flags.out,
        "pv-curve",
        &m.case,
        serde_json::json!({ "contingency": m.contingency, "method": a.method, "bus": a.bus, "resolved": settings }),
    )?;
    Ok(code)
}

pub fn cmd_validate(case: &str) -> Result<i32> {
    let c = resolve_case(case)?;
    c.validate()?;
    let labels: Vec<&str> = c.contingencies.iter().map(|c| c.label.as_str()).collect();
    println!(
        "ok: {} buses, {} branches, {} generators, {} loads; contingencies: {}",
        c.buses.len(),
        c.branches.len(),
        c.generators.len(),
        c.loads.len(),
        labels.join(", ")
    );
    Ok(0)
}
