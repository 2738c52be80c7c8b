//! Command-line surface: validate and solve instances, build tables, run
//! simulations and benchmarks, verify the analysis bounds, and generate or
//! ingest instances.
//!
//! Exit codes: 0 success, 2 flag errors, 3 contract/input errors, 4 failed
//! checks (an invalid instance or a failed bound report). All randomness
//! flows from `--seed`; `OMLA_LOG` controls logging.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::model::Instance;
use crate::policies::{build_policy, OmlaPolicy, Policy, PolicyName};
use crate::sim::{monte_carlo, SimSummary};
use crate::tables::Tables;
use crate::{gen, ingest, lp, verify, Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "omla",
    about = "Online machine and level assignment: offline relaxation, value tables, \
             online policy, benchmarks, simulator and bound checks",
    version
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check an instance file against the model invariants.
    Validate {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Solve the offline relaxation and report its objective.
    SolveLp {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = lp::DEFAULT_TOL)]
        tol: f64,
        /// Write the solution (objective and nonzeros) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the constraint matrix in the sparse text format.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compute value tables and write R as `delta,u,t,R` CSV.
    Tables {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = lp::DEFAULT_TOL)]
        tol: f64,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimates for chosen policies.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        /// Comma-separated policy list: omla,random,ug,eg,ug+,eg+.
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_policy)]
        policy: Vec<PolicyName>,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = lp::DEFAULT_TOL)]
        tol: f64,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All six policies under common random numbers, with ratios to the
    /// relaxation objective and the theoretical bound.
    Bench {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 250)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = lp::DEFAULT_TOL)]
        tol: f64,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a bar chart of the mean ratios.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run every bound check and print the report.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = verify::DEFAULT_TOL)]
        tol: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic instance.
    Gen(GenArgs),
    /// Generate the two-slot spike instance.
    Hardness {
        #[arg(long)]
        eps: f64,
        /// Instance JSON destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an instance from a trip-record CSV.
    Ingest(IngestArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    machines: usize,
    #[arg(long, default_value_t = 25)]
    tasks: usize,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, default_value_t = 6)]
    levels: usize,
    #[arg(long, default_value_t = 0.1)]
    edge_prob: f64,
    /// Budgets are drawn from {1..=cap}; see --unlimited.
    #[arg(long, default_value_t = 20, conflicts_with = "unlimited")]
    budget_cap: u32,
    /// Make every machine unlimited instead of drawing budgets.
    #[arg(long)]
    unlimited: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-slot arrival mass range.
    #[arg(long, default_value_t = 0.3)]
    arrival_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    arrival_hi: f64,
    /// Instance JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct IngestArgs {
    /// Trip CSV with the fixed header.
    #[arg(long)]
    trips: PathBuf,
    #[arg(long)]
    lon_min: f64,
    #[arg(long)]
    lon_max: f64,
    #[arg(long)]
    lat_min: f64,
    #[arg(long)]
    lat_max: f64,
    #[arg(long, default_value_t = 0.02)]
    cell: f64,
    #[arg(long, default_value_t = 1)]
    slot_minutes: u32,
    #[arg(long, default_value_t = 60)]
    slots: usize,
    #[arg(long)]
    days: u32,
    /// Time of day the slot window starts at (HH:MM or HH:MM:SS).
    #[arg(long, default_value = "00:00", value_parser = parse_time)]
    window_start: chrono::NaiveTime,
    #[arg(long, default_value_t = 6)]
    min_trips: usize,
    /// Strictly descending toll per level.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4.8, 2.2, 0.0])]
    tolls: Vec<f64>,
    /// Rejection penalty per level.
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 10])]
    theta: Vec<u32>,
    /// Draw finite budgets from {1..=cap}; omitted = unlimited machines.
    #[arg(long)]
    budget_cap: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-level scale on the empirical duration histogram.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.85, 0.92, 1.0])]
    delay_scales: Vec<f64>,
    /// JSON file with one duration-slot weight array per level, overriding
    /// the scaled histograms.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Instance JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write load/build accounting as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyName, String> {
    PolicyName::from_str(s).map_err(|e| e.to_string())
}

fn parse_time(s: &str) -> std::result::Result<chrono::NaiveTime, String> {
    chrono::NaiveTime::parse_from_str(s, "%H:%M:%S")
        .or_else(|_| chrono::NaiveTime::parse_from_str(s, "%H:%M"))
        .map_err(|e| format!("invalid time {s:?}: {e}"))
}

/// Entry point behind the binary: parse, dispatch, map errors to exit
/// codes (2 flags, 3 contract, 4 failed checks).
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("OMLA_LOG")).try_init();
    let config = match RunConfig::try_parse() {
        Ok(config) => config,
        Err(err) => err.exit(),
    };
    match dispatch(config.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            3
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Validate { instance } => cmd_validate(&instance),
        Command::SolveLp {
            instance,
            tol,
            out,
            dump,
        } => cmd_solve_lp(&instance, tol, out, dump),
        Command::Tables { instance, tol, out } => cmd_tables(&instance, tol, out),
        Command::Simulate {
            instance,
            policy,
            n,
            seed,
            jobs,
            tol,
            out,
        } => {
            configure_jobs(jobs)?;
            cmd_simulate(&instance, &policy, n, seed, tol, out)
        }
        Command::Bench {
            instance,
            n,
            seed,
            jobs,
            tol,
            out,
            svg,
        } => {
            configure_jobs(jobs)?;
            cmd_bench(&instance, n, seed, tol, out, svg)
        }
        Command::Verify {
            instance,
            tol,
            json,
        } => cmd_verify(&instance, tol, json),
        Command::Gen(args) => cmd_gen(args),
        Command::Hardness { eps, out } => {
            let instance = gen::hardness(eps)?;
            write_instance(&instance, out.as_deref())?;
            Ok(0)
        }
        Command::Ingest(args) => cmd_ingest(args),
    }
}

fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidArgument(
            "--jobs must be at least 1".to_string(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn load_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path)?;
    Instance::from_json(serde_json::from_str(&text)?)
}

fn instance_id(path: &Path) -> String {
    path.file_stem().map_or_else(
        || "instance".to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_instance(instance: &Instance, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&instance.to_json())?;
    text.push('\n');
    write_text(out, &text)
}

fn cmd_validate(path: &Path) -> Result<i32> {
    let instance = load_instance(path)?;
    let report = instance.validate();
    if report.violations.is_empty() {
        println!(
            "ok: {} machines, {} tasks, {} edges, T={}, L={}",
            instance.num_machines(),
            instance.num_tasks(),
            instance.num_edges(),
            instance.horizon(),
            instance.num_levels()
        );
        Ok(0)
    } else {
        for violation in &report.violations {
            println!("violation: {violation}");
        }
        Ok(4)
    }
}

fn cmd_solve_lp(path: &Path, tol: f64, out: Option<PathBuf>, dump: Option<PathBuf>) -> Result<i32> {
    let instance = load_instance(path)?;
    let (problem, solution) = lp::solve_off(&instance, tol)?;
    if let Some(dump) = dump {
        let mut buf = Vec::new();
        problem.write_sparse(&mut buf)?;
        fs::write(dump, buf)?;
    }
    println!(
        "objective {} ({} rows, {} cols, {} nonzero x)",
        solution.objective,
        problem.num_rows(),
        problem.num_cols(),
        solution.x.iter().filter(|&&x| x != 0.0).count()
    );
    if let Some(out) = out {
        let mut nonzeros = Vec::new();
        for e in 0..instance.num_edges() {
            for l in 1..=instance.num_levels() {
                for t in 1..=instance.horizon() {
                    let x = solution.x(e, l, t);
                    if x != 0.0 {
                        nonzeros.push(serde_json::json!({
                            "edge": e, "level": l, "t": t, "x": x
                        }));
                    }
                }
            }
        }
        let json = serde_json::json!({
            "objective": solution.objective,
            "status": "optimal",
            "nonzeros": nonzeros,
        });
        fs::write(out, format!("{}\n", serde_json::to_string_pretty(&json)?))?;
    }
    Ok(0)
}

fn cmd_tables(path: &Path, tol: f64, out: Option<PathBuf>) -> Result<i32> {
    let instance = load_instance(path)?;
    let (_, solution) = lp::solve_off(&instance, tol)?;
    let tables = crate::tables::compute_for(&instance, &solution)?;
    eprintln!(
        "initial value sum_u R_u1 = {}",
        tables.initial_value(&instance)
    );
    if let Tables::Limited(limited) = &tables {
        if let Some((delta, u, t, gap)) = limited.budget_monotonicity_violation() {
            eprintln!(
                "warning: R not monotone in budget at delta={delta}, u={u}, t={t} (gap {gap:e})"
            );
        }
    }
    let mut buf = Vec::new();
    tables.write_r_csv(&mut buf)?;
    write_text(
        out.as_deref(),
        std::str::from_utf8(&buf).expect("csv is utf-8"),
    )?;
    Ok(0)
}

fn cmd_simulate(
    path: &Path,
    policies: &[PolicyName],
    n: u64,
    seed: u64,
    tol: f64,
    out: Option<PathBuf>,
) -> Result<i32> {
    let instance = load_instance(path)?;
    let id = instance_id(path);
    let mut csv = String::from("instance_id,policy,n,seed,mean,stderr\n");
    for &name in policies {
        let policy = build_policy(&instance, name, tol)?;
        let summary = monte_carlo(&instance, policy.as_ref(), n, seed)?;
        writeln!(
            csv,
            "{id},{},{},{},{},{}",
            summary.policy, summary.n, summary.seed, summary.mean, summary.stderr
        )
        .expect("string write");
    }
    write_text(out.as_deref(), &csv)?;
    Ok(0)
}

/// The theoretical guarantee of the instance's budget regime, and the
/// budget column value for the results CSV.
fn bound_for(instance: &Instance) -> (f64, String) {
    match instance.max_finite_budget() {
        Some(delta) => (verify::limited_ratio(delta), delta.to_string()),
        None => (verify::UNLIMITED_RATIO, "inf".to_string()),
    }
}

fn cmd_bench(
    path: &Path,
    n: u64,
    seed: u64,
    tol: f64,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
) -> Result<i32> {
    let instance = load_instance(path)?;
    let id = instance_id(path);
    let (_, solution) = lp::solve_off(&instance, tol)?;
    let lp_off = solution.objective;
    let (bound, delta_label) = bound_for(&instance);

    let mut csv =
        String::from("instance_id,policy,delta_max,L,n,seed,mean,stderr,lp_off,ratio,bound\n");
    let mut ratios = Vec::new();
    for name in PolicyName::ALL {
        let policy: Box<dyn Policy> = match name {
            PolicyName::Omla => Box::new(OmlaPolicy::from_solution(
                "omla",
                &instance,
                solution.clone(),
            )?),
            other => build_policy(&instance, other, tol)?,
        };
        let summary = monte_carlo(&instance, policy.as_ref(), n, seed)?;
        let ratio = if lp_off > 0.0 {
            summary.mean / lp_off
        } else {
            0.0
        };
        writeln!(
            csv,
            "{id},{},{delta_label},{},{},{},{},{},{lp_off},{ratio},{bound}",
            summary.policy,
            instance.num_levels(),
            summary.n,
            summary.seed,
            summary.mean,
            summary.stderr
        )
        .expect("string write");
        ratios.push((summary, ratio));
    }
    write_text(out.as_deref(), &csv)?;
    if let Some(svg) = svg {
        fs::write(svg, ratio_chart_svg(&id, &ratios, bound))?;
    }
    Ok(0)
}

/// Minimal self-contained bar chart of mean reward ratios, with the
/// theoretical bound as a dashed line. The CSV remains the source of truth.
fn ratio_chart_svg(id: &str, rows: &[(SimSummary, f64)], bound: f64) -> String {
    let (width, height) = (640.0, 360.0);
    let (left, right, top, bottom) = (50.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let max_value = rows.iter().map(|(_, r)| *r).fold(bound, f64::max).max(1e-9) * 1.15;
    let scale = |v: f64| top + plot_h * (1.0 - v / max_value);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{width}" height="{height}" fill="white"/><text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">reward / relaxation objective: {id}</text>"#,
        width / 2.0
    );
    let slot = plot_w / rows.len() as f64;
    for (i, (summary, ratio)) in rows.iter().enumerate() {
        let x = left + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let y = scale(*ratio);
        let _ = write!(
            svg,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="#4878a8"/>"##,
            top + plot_h - y
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{:.3}</text>"#,
            x + w / 2.0,
            y - 5.0,
            ratio
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            x + w / 2.0,
            height - bottom + 18.0,
            summary.policy
        );
    }
    let by = scale(bound);
    let _ = write!(
        svg,
        r##"<line x1="{left}" y1="{by:.1}" x2="{:.1}" y2="{by:.1}" stroke="#a84848" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="12" fill="#a84848">bound {bound:.3}</text>"##,
        width - right,
        width - right,
        by - 5.0
    );
    let _ = write!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/></svg>"#,
        top + plot_h,
        top + plot_h,
        width - right,
        top + plot_h
    );
    svg.push('\n');
    svg
}

fn cmd_verify(path: &Path, tol: f64, json: Option<PathBuf>) -> Result<i32> {
    let instance = load_instance(path)?;
    let report = verify::check_all(&instance, tol)?;
    print!("{}", report.render_table());
    if let Some(json_path) = json {
        fs::write(json_path, format!("{}\n", report.to_json()?))?;
    }
    Ok(if report.pass { 0 } else { 4 })
}

fn cmd_gen(args: GenArgs) -> Result<i32> {
    let config = gen::SyntheticConfig {
        num_machines: args.machines,
        num_tasks: args.tasks,
        horizon: args.horizon,
        num_levels: args.levels,
        edge_prob: args.edge_prob,
        budget_cap: if args.unlimited {
            None
        } else {
            Some(args.budget_cap)
        },
        seed: args.seed,
        arrival_mass: (args.arrival_lo, args.arrival_hi),
    };
    let instance = gen::synthetic(&config)?;
    write_instance(&instance, args.out.as_deref())?;
    Ok(0)
}

fn cmd_ingest(args: IngestArgs) -> Result<i32> {
    let grid = ingest::GridConfig {
        lon_min: args.lon_min,
        lon_max: args.lon_max,
        lat_min: args.lat_min,
        lat_max: args.lat_max,
        cell_degrees: args.cell,
        slot_minutes: args.slot_minutes,
        slot_count: args.slots,
        day_count: args.days,
        window_start: args.window_start,
        min_trips: args.min_trips,
    };
    let spec = ingest::TollLevelSpec {
        tolls: args.tolls,
        theta: args.theta,
        budget_cap: args.budget_cap,
        seed: args.seed,
        delay_scales: args.delay_scales,
        sidecar: args.sidecar,
    };
    let (trips, stats) = ingest::load_trips(&args.trips, &grid)?;
    let (instance, report) = ingest::build_instance(&trips, &grid, &spec)?;
    eprintln!(
        "read {} rows, kept {} trips; {} machines, {} tasks, {} edges, rescale {}",
        stats.read, stats.kept, report.machines, report.tasks, report.edges, report.rescale_factor
    );
    write_instance(&instance, args.out.as_deref())?;
    if let Some(path) = args.report {
        let json = serde_json::json!({ "load": stats, "build": report });
        fs::write(path, format!("{}\n", serde_json::to_string_pretty(&json)?))?;
    }
    Ok(0)
}
