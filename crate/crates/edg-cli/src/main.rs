//! `edg` — generate, sample, and reconstruct point configurations from
//! partial pairwise distances, plus the experiment harness around the
//! solver. Exit codes: 0 ok, 1 I/O or argument failure, 2 solver
//! non-convergence (outputs are still written).

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use edg_core::basis::{pair_count, SampleSet};
use edg_core::dataio::{
    gen_gaussian, gen_ill_conditioned, oversampling_to_m, sample_and_observe,
};
use edg_core::experiments::{
    bench, bench_csv, phase_transition, phase_transition_csv, rip_probe, ExperimentGrid,
};
use edg_core::geometry::{procrustes_distance, PointCloud};
use edg_core::irls::{matrix_irls, IrlsConfig, TraceRow, WlsMode};

#[derive(Parser)]
#[command(name = "edg", version, about = "Euclidean distance geometry toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic point cloud as CSV.
    Gen(GenArgs),
    /// Sample pairwise squared distances from a cloud file.
    Sample(SampleArgs),
    /// Reconstruct a configuration from a sample file.
    Solve(SolveArgs),
    /// Success-probability grid over (rank, oversampling).
    PhaseTransition(PhaseArgs),
    /// Per-iteration convergence trace on one synthetic instance.
    Trace(TraceArgs),
    /// Wall-clock scaling over a list of problem sizes.
    Bench(BenchArgs),
    /// Sampling-operator isometry measurement on a tangent space.
    RipProbe(RipArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance family: gaussian | ill-conditioned.
    #[arg(long, default_value = "gaussian")]
    kind: String,
    /// Condition number of the Gram spectrum (ill-conditioned only).
    #[arg(long, default_value_t = 1e5)]
    kappa: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Point-cloud CSV to sample from.
    #[arg(long)]
    cloud: PathBuf,
    /// Oversampling factor ρ = m / dof; ignored when --m is given.
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    /// Explicit sample count, overriding --rho.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    with_replacement: bool,
    /// Rank used to convert ρ into a sample count; defaults to the
    /// cloud's dimension.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Sample file produced by `edg sample`.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value = "tangent")]
    mode: String,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Reference cloud for the relative error report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output prefix; writes <out>.points.csv, <out>.trace.csv,
    /// <out>.summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Comma-separated ranks, e.g. 2,3,4,5.
    #[arg(long, default_value = "2,3,4,5")]
    rank_list: String,
    /// Oversampling sweep start:end:step.
    #[arg(long, default_value = "1.0:4.0:0.5")]
    rho_range: String,
    #[arg(long, default_value_t = 8)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tangent")]
    mode: String,
    /// Success threshold on the relative reconstruction error.
    #[arg(long, default_value_t = 1e-3)]
    tol_rec: f64,
    /// Run the full-size protocol (n=500, 24 instances per cell).
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tangent")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated problem sizes, e.g. 100,200,500.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 5)]
    r: usize,
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tangent")]
    mode: String,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RipArgs {
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Sample count; defaults to 8·n·r·ln n rounded.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SolveSummary {
    relative_error: Option<f64>,
    iterations: usize,
    wall_ms: f64,
    converged: bool,
    underdetermined: bool,
}

fn fail(msg: impl std::fmt::Display) -> i32 {
    eprintln!("edg: {msg}");
    1
}

fn write_text(path: &Path, text: &str) -> Result<(), i32> {
    std::fs::write(path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn parse_mode(s: &str) -> Result<WlsMode, i32> {
    WlsMode::from_str(s).map_err(|e| fail(e))
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, i32>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|tok| tok.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(format!("bad {what} list {s:?}: {e}")))
}

fn parse_range(s: &str) -> Result<Vec<f64>, i32> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(fail(format!("bad range {s:?} (expected start:end:step)")));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(format!("bad range {s:?}: {e}")))?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || end < start {
        return Err(fail(format!("bad range {s:?} (need end ≥ start, step > 0)")));
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let v = start + step * k as f64;
        if v > end + step * 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    Ok(out)
}

fn cmd_gen(a: GenArgs) -> Result<i32, i32> {
    let cloud = match a.kind.as_str() {
        "gaussian" => gen_gaussian(a.n, a.r, a.seed),
        "ill-conditioned" => gen_ill_conditioned(a.n, a.r, a.kappa, a.seed),
        other => return Err(fail(format!("unknown instance kind {other:?}"))),
    }
    .map_err(fail)?;
    cloud.write_csv(&a.out).map_err(fail)?;
    Ok(0)
}

fn cmd_sample(a: SampleArgs) -> Result<i32, i32> {
    let cloud = PointCloud::read_csv(&a.cloud).map_err(fail)?;
    let r = a.r.unwrap_or_else(|| cloud.r());
    let m = a.m.unwrap_or_else(|| oversampling_to_m(a.rho, cloud.n(), r));
    let s = sample_and_observe(&cloud, m, a.seed, a.with_replacement).map_err(fail)?;
    s.write_file(&a.out).map_err(fail)?;
    Ok(0)
}

fn cmd_solve(a: SolveArgs) -> Result<i32, i32> {
    let s = SampleSet::read_file(&a.samples).map_err(fail)?;
    let truth = match &a.truth {
        Some(p) => Some(PointCloud::read_csv(p).map_err(fail)?),
        None => None,
    };
    let mut cfg = IrlsConfig::new(a.r);
    cfg.mode = parse_mode(&a.mode)?;
    if let Some(mo) = a.max_outer {
        cfg.max_outer = mo;
    }
    let t0 = Instant::now();
    let out = matrix_irls(&s, &cfg, truth.as_ref()).map_err(fail)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;

    let points = out.recovered_points(a.r).map_err(fail)?;
    let relative_error = match &truth {
        Some(t) => Some(procrustes_distance(&points, t).map_err(fail)?),
        None => None,
    };

    let prefix = a.out.as_os_str().to_string_lossy().into_owned();
    points
        .write_csv(Path::new(&format!("{prefix}.points.csv")))
        .map_err(fail)?;
    let mut trace = String::from(TraceRow::csv_header());
    trace.push('\n');
    for row in &out.trace {
        trace.push_str(&row.to_csv_row());
        trace.push('\n');
    }
    write_text(Path::new(&format!("{prefix}.trace.csv")), &trace)?;
    let summary = SolveSummary {
        relative_error,
        iterations: out.outer_iters,
        wall_ms,
        converged: out.converged,
        underdetermined: out.underdetermined,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(fail)?;
    write_text(Path::new(&format!("{prefix}.summary.json")), &json)?;

    Ok(if out.converged { 0 } else { 2 })
}

fn cmd_phase(a: PhaseArgs) -> Result<i32, i32> {
    let ranks: Vec<usize> = parse_list(&a.rank_list, "rank")?;
    let rhos = parse_range(&a.rho_range)?;
    let (n, instances) = if a.paper_scale {
        (500, 24)
    } else {
        (a.n, a.instances)
    };
    let mut grid = ExperimentGrid::new(n, ranks, rhos, instances, a.seed);
    grid.tol_rec = a.tol_rec;
    grid.mode = parse_mode(&a.mode)?;
    let cells = phase_transition(&grid).map_err(fail)?;
    let text = match a.format.as_str() {
        "csv" => phase_transition_csv(&cells),
        "json" => serde_json::to_string_pretty(&cells).map_err(fail)?,
        other => return Err(fail(format!("unknown format {other:?}"))),
    };
    write_text(&a.out, &text)?;
    Ok(0)
}

fn cmd_trace(a: TraceArgs) -> Result<i32, i32> {
    let cloud = gen_gaussian(a.n, a.r, a.seed).map_err(fail)?;
    let m = oversampling_to_m(a.rho, a.n, a.r);
    let s = sample_and_observe(&cloud, m, a.seed.wrapping_add(1), false).map_err(fail)?;
    let mut cfg = IrlsConfig::new(a.r);
    cfg.mode = parse_mode(&a.mode)?;
    let out = matrix_irls(&s, &cfg, Some(&cloud)).map_err(fail)?;
    let mut text = String::from(TraceRow::csv_header());
    text.push('\n');
    for row in &out.trace {
        text.push_str(&row.to_csv_row());
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    Ok(if out.converged { 0 } else { 2 })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, i32> {
    let sizes: Vec<usize> = parse_list(&a.sizes, "size")?;
    let rows = bench(&sizes, a.r, a.rho, a.seed, parse_mode(&a.mode)?).map_err(fail)?;
    let text = match a.format.as_str() {
        "csv" => bench_csv(&rows),
        "json" => serde_json::to_string_pretty(&rows).map_err(fail)?,
        other => return Err(fail(format!("unknown format {other:?}"))),
    };
    write_text(&a.out, &text)?;
    Ok(0)
}

fn cmd_rip(a: RipArgs) -> Result<i32, i32> {
    let m = a.m.unwrap_or_else(|| {
        (8.0 * a.n as f64 * a.r as f64 * (a.n as f64).ln()).round() as usize
    });
    if a.n >= 2 && m > pair_count(a.n) * 64 {
        return Err(fail(format!("sample count {m} is unreasonably large")));
    }
    let probe = rip_probe(a.n, a.r, m, a.trials, a.seed).map_err(fail)?;
    let json = serde_json::to_string_pretty(&probe).map_err(fail)?;
    write_text(&a.out, &json)?;
    Ok(0)
}

fn main() -> std::process::ExitCode {
    if let Ok(v) = std::env::var("EDG_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            _ => {
                eprintln!("edg: ignoring invalid EDG_THREADS={v:?}");
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return std::process::ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::PhaseTransition(a) => cmd_phase(a),
        Cmd::Trace(a) => cmd_trace(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::RipProbe(a) => cmd_rip(a),
    };
    std::process::ExitCode::from(match res {
        Ok(code) => code as u8,
        Err(code) => code as u8,
    })
}
