//! `qconic`: generate, solve, benchmark, export, and sanity-check
//! congestion-aware facility-location instances from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 infeasible or unstable input,
//! 4 verification mismatch, 5 stopped by a time or node limit.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use qconic::instgen::{self, GenSpec};
use qconic::location::{
    brute_force, evaluate_parts, instance_from_json, instance_to_json, Assignment,
    CostBreakdown, LocationError, LocationInstance,
};
use qconic::model::export_cbf;
use qconic::queue::{metric, MetricKind, QueueParams, ServiceDist, SimEstimate};
use qconic::reform::{build_with_options, extract, BuildReceipt, FormulationId, ReformError};
use qconic::solver::{
    solve, Branching, NodeSelection, SolveResult, SolveStatus, SolverConfig, SolverError,
};

/// Relative tolerance for the independent objective re-evaluation.
const VERIFY_TOL: f64 = 1e-6;
/// Relative tolerance when flagging root-bound ordering violations.
const BOUND_FLAG_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "qconic",
    version,
    about = "Congestion-aware facility location as mixed-integer conic programs",
    after_help = "Exit codes: 0 ok, 2 usage, 3 infeasible/unstable, \
                  4 verification mismatch, 5 time or node limit.\n\
                  QCONIC_THREADS sets the default solver thread count; \
                  --threads overrides it."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a benchmark instance file from a preset or a spec file.
    Gen(GenArgs),
    /// Solve one instance with one formulation and verify the optimum.
    Solve(SolveArgs),
    /// Exhaustively enumerate a small instance.
    Oracle(OracleArgs),
    /// Benchmark formulations across instance files (text and CSV).
    Bench(BenchArgs),
    /// Write a conic interchange file for external cross-checking.
    Export(ExportArgs),
    /// Compare closed-form queue metrics against a simulation.
    Simulate(SimArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Named preset: desk-small, vj-large, or holmberg-large.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Generation spec as a JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; defaults to `<name>-s<seed>.json`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Formulation: 1, 2, 3, or 4.
    #[arg(short, long, value_parser = parse_formulation)]
    formulation: FormulationId,
    /// Relative optimality gap target.
    #[arg(long)]
    gap: Option<f64>,
    /// Absolute optimality gap target.
    #[arg(long)]
    abs_gap: Option<f64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Node limit; 0 reports only the root bound.
    #[arg(long)]
    node_limit: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Shuffles exact branching ties deterministically.
    #[arg(long)]
    seed: Option<u64>,
    /// Dive on the newest node instead of the weakest bound.
    #[arg(long)]
    depth_first: bool,
    /// Branch by observed bound movement instead of fractionality.
    #[arg(long)]
    pseudo_cost: bool,
    /// Solve the continuous relaxation (x and y on [0, 1]).
    #[arg(long)]
    relax_binaries: bool,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    instance: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Instance files, reported in this order.
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    /// Comma-separated formulations, e.g. "1,4".
    #[arg(long, default_value = "1,2,3,4")]
    formulations: String,
    /// Per-(instance, formulation) wall-clock limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// Relative optimality gap target.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Rows solved concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write CSV to this path; "-" replaces the table on stdout.
    #[arg(long)]
    csv: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    instance: PathBuf,
    /// Formulation: 1, 2, 3, or 4.
    #[arg(short, long, value_parser = parse_formulation)]
    formulation: FormulationId,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    /// Arrival rate.
    #[arg(long)]
    arrival: f64,
    /// Service rate; the mean service time is its inverse.
    #[arg(long)]
    service_rate: f64,
    /// exponential, deterministic, uniform, or two-point.
    #[arg(long, default_value = "exponential")]
    dist: String,
    /// Service-time standard deviation (required for uniform/two-point).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    customers: u64,
    /// Arrivals discarded before statistics; defaults to 10%.
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Infeasible(String),
    Verification(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m)
            | Failure::Infeasible(m)
            | Failure::Verification(m)
            | Failure::Internal(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Gen(a) => run_gen(a),
        Cmd::Solve(a) => run_solve(a),
        Cmd::Oracle(a) => run_oracle(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Export(a) => run_export(a),
        Cmd::Simulate(a) => run_simulate(a),
    };
    match run {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn parse_formulation(s: &str) -> Result<FormulationId, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "m1" => Ok(FormulationId::M1),
        "2" | "m2" => Ok(FormulationId::M2),
        "3" | "m3" => Ok(FormulationId::M3),
        "4" | "m4" => Ok(FormulationId::M4),
        other => Err(format!("expected a formulation in 1..4, got {other:?}")),
    }
}

fn default_threads() -> usize {
    match std::env::var("QCONIC_THREADS") {
        Ok(s) => match s.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                log::warn!("ignoring unusable QCONIC_THREADS={s:?}");
                1
            }
        },
        Err(_) => 1,
    }
}

fn read_instance(path: &Path) -> Result<LocationInstance, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    instance_from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn reform_failure(e: ReformError) -> Failure {
    match e {
        ReformError::BinaryRequired(_) => Failure::Usage(e.to_string()),
        other => Failure::Internal(other.to_string()),
    }
}

fn solver_failure(e: SolverError) -> Failure {
    match e {
        SolverError::InfeasibleRelaxation => Failure::Infeasible(e.to_string()),
        other => Failure::Internal(other.to_string()),
    }
}

fn kv(name: &str, value: impl Display) {
    println!("{name:<14} {value}");
}

fn run_gen(a: GenArgs) -> Result<u8, Failure> {
    let (name, mut spec) = match (&a.preset, &a.spec) {
        (Some(p), None) => (
            p.clone(),
            instgen::preset(p).map_err(|e| Failure::Usage(e.to_string()))?,
        ),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let spec: GenSpec = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into());
            (stem, spec)
        }
        _ => return Err(Failure::Usage("pass exactly one of --preset or --spec".into())),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let mut inst = instgen::generate(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    inst.metadata.insert("preset".into(), name.clone());
    let out = a
        .output
        .unwrap_or_else(|| PathBuf::from(instgen::suggested_filename(&name, spec.seed)));
    std::fs::write(&out, instance_to_json(&inst))
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", out.display())))?;
    println!("{}", out.display());
    Ok(0)
}

fn solver_config(a: &SolveArgs) -> SolverConfig {
    let mut cfg = SolverConfig {
        threads: a.threads.unwrap_or_else(default_threads),
        ..SolverConfig::default()
    };
    if let Some(g) = a.gap {
        cfg.rel_gap = g;
    }
    if let Some(g) = a.abs_gap {
        cfg.abs_gap = g;
    }
    if let Some(s) = a.time_limit {
        cfg.time_limit = Some(Duration::from_secs_f64(s));
    }
    if let Some(n) = a.node_limit {
        cfg.node_limit = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.depth_first {
        cfg.node_selection = NodeSelection::DepthFirst;
    }
    if a.pseudo_cost {
        cfg.branching = Branching::PseudoCost;
    }
    cfg
}

/// Open pairs and the per-customer service pair, for compact reports.
fn assignment_pairs(a: &Assignment) -> (Vec<[usize; 2]>, Vec<[usize; 2]>) {
    let mut open = Vec::new();
    let mut serve = Vec::new();
    for (i, row) in a.x.iter().enumerate() {
        for (k, &bit) in row.iter().enumerate() {
            if bit {
                open.push([i, k]);
            }
        }
    }
    let customers = a.y[0][0].len();
    for j in 0..customers {
        'found: for (i, levels) in a.y.iter().enumerate() {
            for (k, served) in levels.iter().enumerate() {
                if served[j] {
                    serve.push([i, k]);
                    break 'found;
                }
            }
        }
    }
    (open, serve)
}

fn pct(part: f64, total: f64) -> f64 {
    100.0 * part / total
}

/// Re-derive the incumbent's cost directly from the instance; `None` when
/// there is nothing to verify (no incumbent, or a relaxed solve).
fn verify_incumbent(
    inst: &LocationInstance,
    receipt: &BuildReceipt,
    r: &SolveResult,
    relaxed: bool,
) -> Result<Option<(Assignment, CostBreakdown)>, Failure> {
    if relaxed {
        return Ok(None);
    }
    let Some(point) = &r.best_point else {
        return Ok(None);
    };
    let ex = extract(receipt, inst, point)
        .map_err(|e| Failure::Verification(format!("incumbent extraction failed: {e}")))?;
    let parts = evaluate_parts(inst, &ex.assignment)
        .map_err(|e| Failure::Verification(format!("incumbent assignment rejected: {e}")))?;
    Ok(Some((ex.assignment, parts)))
}

fn run_solve(a: SolveArgs) -> Result<u8, Failure> {
    let inst = read_instance(&a.instance)?;
    // The file parser already checked the data, so a validation failure
    // here is the aggregate capacity test: no assignment can be stable.
    inst.validate()
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let receipt =
        build_with_options(&inst, a.formulation, a.relax_binaries).map_err(reform_failure)?;
    let cfg = solver_config(&a);
    let r = solve(&receipt.model, &cfg).map_err(solver_failure)?;
    let checked = verify_incumbent(&inst, &receipt, &r, a.relax_binaries)?;

    let verified = checked.as_ref().map(|(_, parts)| parts.total());
    if a.json {
        let breakdown = checked.as_ref().map(|(_, p)| {
            let t = p.total();
            serde_json::json!({
                "establish": p.establish,
                "waiting": p.waiting,
                "traveling": p.traveling,
                "establish_pct": pct(p.establish, t),
                "waiting_pct": pct(p.waiting, t),
                "traveling_pct": pct(p.traveling, t),
            })
        });
        let pairs = checked.as_ref().map(|(asg, _)| assignment_pairs(asg));
        let mut doc = r.summary_json();
        let obj = doc.as_object_mut().expect("summary is an object");
        obj.insert("instance".into(), a.instance.display().to_string().into());
        obj.insert("formulation".into(), a.formulation.to_string().into());
        obj.insert("relaxed_binaries".into(), a.relax_binaries.into());
        obj.insert("verified_objective".into(), serde_json::json!(verified));
        obj.insert("breakdown".into(), serde_json::json!(breakdown));
        obj.insert(
            "open".into(),
            serde_json::json!(pairs.as_ref().map(|(o, _)| o)),
        );
        obj.insert(
            "serve".into(),
            serde_json::json!(pairs.as_ref().map(|(_, s)| s)),
        );
        println!("{}", serde_json::to_string_pretty(&doc).expect("valid JSON"));
    } else {
        kv("instance", a.instance.display());
        kv(
            "shape",
            format!(
                "{} facilities x {} levels, {} customers",
                inst.facilities, inst.levels, inst.customers
            ),
        );
        kv("formulation", a.formulation);
        if a.relax_binaries {
            kv("mode", "continuous relaxation");
        }
        kv("status", r.status);
        match r.objective {
            Some(obj) => kv("objective", format!("{obj:.9}")),
            None => kv("objective", "-"),
        }
        if let Some(v) = verified {
            kv("re-evaluated", format!("{v:.9}"));
        }
        kv("bound", format!("{:.9}", r.bound));
        kv("root bound", format!("{:.9}", r.root_bound));
        match r.gap {
            Some(g) => kv("gap", format!("{g:.3e}")),
            None => kv("gap", "-"),
        }
        kv("nodes", r.nodes);
        kv("cuts", r.cuts);
        kv("lp iterations", r.lp_iterations);
        kv("wall time", format!("{:.3} s", r.wall_time.as_secs_f64()));
        if let Some((_, parts)) = &checked {
            let t = parts.total();
            kv("establish %", format!("{:.2}", pct(parts.establish, t)));
            kv("waiting %", format!("{:.2}", pct(parts.waiting, t)));
            kv("traveling %", format!("{:.2}", pct(parts.traveling, t)));
        }
    }

    if let (Some(obj), Some(v)) = (r.objective, verified) {
        if (obj - v).abs() > VERIFY_TOL * v.abs().max(1.0) {
            return Err(Failure::Verification(format!(
                "solver objective {obj} disagrees with the re-evaluated cost {v}"
            )));
        }
    }
    match r.status {
        SolveStatus::Optimal => Ok(0),
        SolveStatus::GapLimit | SolveStatus::TimeLimit => Ok(5),
        SolveStatus::Infeasible => {
            Err(Failure::Infeasible("no feasible assignment exists".into()))
        }
    }
}

fn run_oracle(a: OracleArgs) -> Result<u8, Failure> {
    let inst = read_instance(&a.instance)?;
    let r = brute_force(&inst).map_err(|e| match e {
        LocationError::TooLarge(_) => Failure::Usage(e.to_string()),
        LocationError::NoFeasibleAssignment => Failure::Infeasible(e.to_string()),
        other => Failure::Internal(other.to_string()),
    })?;
    let parts = evaluate_parts(&inst, &r.best)
        .map_err(|e| Failure::Internal(format!("oracle produced a rejected assignment: {e}")))?;
    let (open, serve) = assignment_pairs(&r.best);
    if a.json {
        let doc = serde_json::json!({
            "instance": a.instance.display().to_string(),
            "value": r.value,
            "enumerated": r.enumerated,
            "establish": parts.establish,
            "waiting": parts.waiting,
            "traveling": parts.traveling,
            "open": open,
            "serve": serve,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("valid JSON"));
    } else {
        kv("instance", a.instance.display());
        kv("value", format!("{:.9}", r.value));
        kv("enumerated", r.enumerated);
        let open_s: Vec<String> = open
            .iter()
            .map(|[i, k]| format!("site {i} level {k}"))
            .collect();
        kv("open", open_s.join(", "));
        for (j, [i, k]) in serve.iter().enumerate() {
            kv(&format!("customer {j}"), format!("site {i} level {k}"));
        }
    }
    Ok(0)
}

struct BenchRow {
    instance: String,
    formulation: FormulationId,
    status: String,
    total_cost: Option<f64>,
    establish_pct: Option<f64>,
    waiting_pct: Option<f64>,
    traveling_pct: Option<f64>,
    root_bound: Option<f64>,
    nodes: Option<u64>,
    cuts: Option<u64>,
    wall_time_s: Option<f64>,
    gap: Option<f64>,
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl BenchRow {
    const CSV_HEADER: &'static str = "instance,formulation,status,total_cost,establish_pct,\
                                      waiting_pct,traveling_pct,root_bound,nodes,cuts,\
                                      wall_time_s,gap";

    fn failed(instance: &str, formulation: FormulationId, status: &str) -> BenchRow {
        BenchRow {
            instance: instance.into(),
            formulation,
            status: status.into(),
            total_cost: None,
            establish_pct: None,
            waiting_pct: None,
            traveling_pct: None,
            root_bound: None,
            nodes: None,
            cuts: None,
            wall_time_s: None,
            gap: None,
        }
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.instance,
            self.formulation,
            self.status,
            opt(&self.total_cost),
            opt(&self.establish_pct),
            opt(&self.waiting_pct),
            opt(&self.traveling_pct),
            opt(&self.root_bound),
            opt(&self.nodes),
            opt(&self.cuts),
            opt(&self.wall_time_s),
            opt(&self.gap),
        )
    }

    fn table_line(&self) -> String {
        let num = |v: &Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let p = |v: &Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        format!(
            "{:<18} {:<4} {:<12} {:>14} {:>7} {:>7} {:>7} {:>14} {:>8} {:>8} {:>9} {:>10}",
            self.instance,
            self.formulation.to_string(),
            self.status,
            num(&self.total_cost),
            p(&self.establish_pct),
            p(&self.waiting_pct),
            p(&self.traveling_pct),
            num(&self.root_bound),
            opt(&self.nodes),
            opt(&self.cuts),
            num(&self.wall_time_s),
            self.gap.map(|g| format!("{g:.2e}")).unwrap_or_else(|| "-".into()),
        )
    }
}

fn bench_row(
    name: &str,
    inst: &LocationInstance,
    which: FormulationId,
    cfg: &SolverConfig,
) -> BenchRow {
    if inst.validate().is_err() {
        return BenchRow::failed(name, which, "infeasible");
    }
    let receipt = match build_with_options(inst, which, false) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{name}/{which}: build failed: {e}");
            return BenchRow::failed(name, which, "error");
        }
    };
    let r = match solve(&receipt.model, cfg) {
        Ok(r) => r,
        Err(SolverError::InfeasibleRelaxation) => {
            return BenchRow::failed(name, which, "infeasible")
        }
        Err(e) => {
            log::warn!("{name}/{which}: solve failed: {e}");
            return BenchRow::failed(name, which, "error");
        }
    };
    let mut row = BenchRow::failed(name, which, &r.status.to_string());
    row.root_bound = r.root_bound.is_finite().then_some(r.root_bound);
    row.nodes = Some(r.nodes);
    row.cuts = Some(r.cuts);
    row.wall_time_s = Some(r.wall_time.as_secs_f64());
    row.gap = r.gap;
    if let Some(obj) = r.objective {
        match verify_incumbent(inst, &receipt, &r, false) {
            Ok(Some((_, parts))) => {
                let total = parts.total();
                if (obj - total).abs() > VERIFY_TOL * total.abs().max(1.0) {
                    log::warn!("{name}/{which}: objective {obj} vs re-evaluated {total}");
                    row.status = "verify-failed".into();
                } else {
                    row.total_cost = Some(total);
                    row.establish_pct = Some(pct(parts.establish, total));
                    row.waiting_pct = Some(pct(parts.waiting, total));
                    row.traveling_pct = Some(pct(parts.traveling, total));
                }
            }
            Ok(None) => {}
            Err(f) => {
                log::warn!("{name}/{which}: {}", f.message());
                row.status = "verify-failed".into();
            }
        }
    }
    row
}

fn run_bench(a: BenchArgs) -> Result<u8, Failure> {
    let mut formulations = Vec::new();
    for part in a.formulations.split(',') {
        formulations.push(parse_formulation(part).map_err(Failure::Usage)?);
    }
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    if !(a.time_limit > 0.0) {
        return Err(Failure::Usage("--time-limit must be positive".into()));
    }
    let cfg = SolverConfig {
        threads: a.threads.unwrap_or_else(default_threads),
        time_limit: Some(Duration::from_secs_f64(a.time_limit)),
        rel_gap: a.gap.unwrap_or(SolverConfig::default().rel_gap),
        ..SolverConfig::default()
    };

    // Read every instance up front; per-file failures become rows.
    let loaded: Vec<(String, Result<LocationInstance, Failure>)> = a
        .instances
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            (name, read_instance(p))
        })
        .collect();

    let tasks: Vec<(usize, FormulationId)> = (0..loaded.len())
        .flat_map(|i| formulations.iter().map(move |&f| (i, f)))
        .collect();
    let results: Mutex<Vec<Option<BenchRow>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(tasks.len()) {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                if t >= tasks.len() {
                    break;
                }
                let (idx, which) = tasks[t];
                let (name, inst) = &loaded[idx];
                let row = match inst {
                    Ok(inst) => bench_row(name, inst, which, &cfg),
                    Err(f) => {
                        log::warn!("{name}: {}", f.message());
                        BenchRow::failed(name, which, "error")
                    }
                };
                results.lock().unwrap()[t] = Some(row);
            });
        }
    });
    let rows: Vec<BenchRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every task produces a row"))
        .collect();

    let csv_to_stdout = a.csv.as_deref() == Some("-");
    if csv_to_stdout {
        println!("{}", BenchRow::CSV_HEADER);
        for row in &rows {
            println!("{}", row.csv());
        }
    } else {
        println!(
            "{:<18} {:<4} {:<12} {:>14} {:>7} {:>7} {:>7} {:>14} {:>8} {:>8} {:>9} {:>10}",
            "instance", "form", "status", "total", "est%", "wait%", "trav%", "root bound",
            "nodes", "cuts", "time s", "gap"
        );
        for row in &rows {
            println!("{}", row.table_line());
        }
        if let Some(path) = &a.csv {
            let mut text = String::from(BenchRow::CSV_HEADER);
            text.push('\n');
            for row in &rows {
                text.push_str(&row.csv());
                text.push('\n');
            }
            std::fs::write(path, text)
                .map_err(|e| Failure::Usage(format!("cannot write {path}: {e}")))?;
        }
    }

    // Root-bound ordering checks across formulations of each instance.
    let mut flagged = Vec::new();
    for (idx, _) in loaded.iter().enumerate() {
        let bound = |which: FormulationId| {
            rows.iter()
                .find(|r| {
                    r.instance == loaded[idx].0 && r.formulation == which
                })
                .and_then(|r| r.root_bound)
        };
        let (m1, m2, m4) = (
            bound(FormulationId::M1),
            bound(FormulationId::M2),
            bound(FormulationId::M4),
        );
        if let (Some(r1), Some(r4)) = (m1, m4) {
            if (r1 - r4).abs() > BOUND_FLAG_TOL * r1.abs().max(1.0) {
                flagged.push(format!(
                    "bound-check: {}: root(M1) = {r1} and root(M4) = {r4} should agree",
                    loaded[idx].0
                ));
            }
        }
        if let (Some(r1), Some(r2)) = (m1, m2) {
            if r1 < r2 - BOUND_FLAG_TOL * r1.abs().max(1.0) {
                flagged.push(format!(
                    "bound-check: {}: root(M1) = {r1} is below root(M2) = {r2}",
                    loaded[idx].0
                ));
            }
        }
    }
    // Keep the stdout stream pure CSV in "-" mode.
    if csv_to_stdout {
        for line in &flagged {
            eprintln!("{line}");
        }
    } else {
        for line in &flagged {
            println!("{line}");
        }
        println!(
            "bound-check: {} violation(s) across {} instance(s)",
            flagged.len(),
            loaded.len()
        );
    }
    Ok(0)
}

fn run_export(a: ExportArgs) -> Result<u8, Failure> {
    let inst = read_instance(&a.instance)?;
    inst.validate()
        .map_err(|e| Failure::Infeasible(e.to_string()))?;
    let receipt = build_with_options(&inst, a.formulation, false).map_err(reform_failure)?;
    let text = export_cbf(&receipt.model);
    std::fs::write(&a.output, text)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", a.output.display())))?;
    println!("{}", a.output.display());
    Ok(0)
}

fn service_dist(a: &SimArgs) -> Result<ServiceDist, Failure> {
    let usage = |m: String| Failure::Usage(m);
    if !(a.service_rate > 0.0) || !a.service_rate.is_finite() {
        return Err(usage(format!(
            "service rate must be positive, got {}",
            a.service_rate
        )));
    }
    let mean = 1.0 / a.service_rate;
    match a.dist.as_str() {
        "exponential" => {
            if let Some(s) = a.sigma {
                if (s - mean).abs() > 1e-9 * mean {
                    return Err(usage(format!(
                        "an exponential service law fixes sigma at 1/mu = {mean}, got {s}"
                    )));
                }
            }
            Ok(ServiceDist::exponential_with_mean(mean))
        }
        "deterministic" => {
            if a.sigma.is_some_and(|s| s != 0.0) {
                return Err(usage("a deterministic service law has sigma = 0".into()));
            }
            Ok(ServiceDist::Deterministic { value: mean })
        }
        "uniform" => {
            let sd = a
                .sigma
                .ok_or_else(|| usage("--sigma is required for a uniform service law".into()))?;
            ServiceDist::uniform_with_moments(mean, sd).map_err(|e| usage(e.to_string()))
        }
        "two-point" => {
            let sd = a
                .sigma
                .ok_or_else(|| usage("--sigma is required for a two-point service law".into()))?;
            if !(sd > 0.0) {
                return Err(usage(format!("sigma must be positive, got {sd}")));
            }
            Ok(ServiceDist::two_point_with_moments(mean, sd))
        }
        other => Err(usage(format!(
            "unknown service law {other:?}; use exponential, deterministic, uniform, or two-point"
        ))),
    }
}

fn run_simulate(a: SimArgs) -> Result<u8, Failure> {
    let dist = service_dist(&a)?;
    let p = QueueParams::new(a.arrival, a.service_rate, dist.sd())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    // Closed forms first: they reject unstable parameters.
    let mut formulas = Vec::new();
    for kind in MetricKind::ALL {
        let v = metric(kind, &p).map_err(|e| Failure::Infeasible(e.to_string()))?;
        formulas.push((kind, v));
    }
    let estimates = qconic::queue::simulate(&p, &dist, a.customers, a.warmup, a.seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let inside = |f: f64, e: &SimEstimate| (f - e.mean).abs() <= e.half_width;
    if a.json {
        let rows: Vec<serde_json::Value> = formulas
            .iter()
            .map(|&(kind, f)| {
                let e = &estimates[&kind];
                serde_json::json!({
                    "metric": kind.to_string(),
                    "formula": f,
                    "simulated": e.mean,
                    "half_width": e.half_width,
                    "samples": e.samples,
                    "inside": inside(f, e),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "arrival": a.arrival,
            "service_rate": a.service_rate,
            "sigma": dist.sd(),
            "dist": a.dist,
            "customers": a.customers,
            "seed": a.seed,
            "metrics": rows,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("valid JSON"));
    } else {
        println!(
            "{:<6} {:>14} {:>14} {:>14} {:>7}",
            "metric", "formula", "simulated", "half-width", "inside"
        );
        for &(kind, f) in &formulas {
            let e = &estimates[&kind];
            println!(
                "{:<6} {:>14.6} {:>14.6} {:>14.6} {:>7}",
                kind.to_string(),
                f,
                e.mean,
                e.half_width,
                if inside(f, e) { "yes" } else { "no" }
            );
        }
    }
    Ok(0)
}
