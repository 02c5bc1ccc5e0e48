//! The `wulff-lab` command-line front end: `geom`, `solve` and `verify`.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};
use crate::diagnostics::{self, Pohozaev, VerifyReport};
use crate::error::Error;
use crate::finsler::WulffBall;
use crate::geom::Point;
use crate::isoperimetry;
use crate::mesh::{generate_mesh, Mesh};
use crate::solver::{self, ConditionBCertificate, Solution, SolverMeta};
use crate::svg;

pub const EXIT_PASS: i32 = 0;
/// I/O or other unexpected failure.
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_DIAGNOSTICS: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "wulff-lab", version, about = "Anisotropic p-Laplace solver and Wulff-symmetry diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Isoperimetry suite: optimal constant, random-set margins, Wulff fits.
    Geom(RunArgs),
    /// Mesh and solve; writes mesh and solution CSV files.
    Solve(RunArgs),
    /// Level-set diagnostics of a stored or freshly computed solution.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DegenerateArgument(_)
            | Error::InvalidSpec(_)
            | Error::OutsideCone { .. }
            | Error::ConditionB(_)
            | Error::Mesh(_)
            | Error::Json(_) => EXIT_CONFIG,
            Error::NonSimplePolygon(_) | Error::ZeroVolume | Error::Geometry(_) => EXIT_GEOMETRY,
            Error::NonConvergence { .. } => EXIT_SOLVER,
            Error::EmptyLevel(_) | Error::DegenerateSolution(_) | Error::InsufficientData(_) => EXIT_DIAGNOSTICS,
            Error::Io { .. } | Error::Csv(_) => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Parses the command line, runs the command and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Err(f) = configure_threads() {
        eprintln!("error: {f}");
        return f.code;
    }
    let (args, which) = match &cli.command {
        Command::Geom(a) => (a, "geom"),
        Command::Solve(a) => (a, "solve"),
        Command::Verify(a) => (a, "verify"),
    };
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("error: {f}");
            return f.code;
        }
    };
    let out = cfg.output.directory.clone();
    let result = match which {
        "geom" => cmd_geom(&cfg, &out).map(|s| {
            println!(
                "optimal constant c = {:.6}; {} random sets, min margin {:.3e}·c; Wulff sector |margin| ≤ {:.3e}·c",
                s.constant, s.sets, s.min_relative_margin, s.sector_margin_max
            );
        }),
        "solve" => cmd_solve(&cfg, &out).map(|s| {
            println!(
                "M = {:.6}; iterations = {}; residual = {:.3e}",
                s.m, s.meta.iterations, s.weak_residual
            );
        }),
        _ => cmd_verify(&cfg, &out).map(|s| {
            println!(
                "M = {:.6}; pohozaev {:.3e}; gauss_green_max {:.3e}; holder_worst {:.3e}; quotient_worst {:.3e}; grad_cv_max {:.3e}; K_increment_max {:.3e}; center_drift {:.3e}",
                s.report.m,
                s.report.pohozaev,
                s.report.gauss_green_max,
                s.report.holder_worst,
                s.report.quotient_worst,
                s.report.grad_cv_max,
                s.report.k_increment_max,
                s.report.center_drift
            );
            println!("all diagnostics within tolerance");
        }),
    };
    match result {
        Ok(()) => EXIT_PASS,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

fn configure_threads() -> CmdResult<()> {
    let Ok(v) = std::env::var("WULFF_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("WULFF_LAB_THREADS = {v:?} is not a positive integer")))?;
    // A pool that is already initialized keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn load_config(args: &RunArgs) -> CmdResult<RunConfig> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| match e {
        Error::Io { .. } => Failure::new(EXIT_CONFIG, e.to_string()),
        other => other.into(),
    })?;
    if let Some(out) = &args.out {
        cfg.output.directory = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))
}

/// Writes pretty JSON, refusing values that would not be finite numbers.
fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let v = serde_json::to_value(value).map_err(Error::from)?;
    if let Some(key) = first_null(&v, "") {
        return Err(Failure::new(EXIT_INTERNAL, format!("non-finite value at {key} in {}", path.display())));
    }
    let mut text = serde_json::to_string_pretty(&v).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::from(Error::io(path, e)))
}

fn first_null(v: &serde_json::Value, at: &str) -> Option<String> {
    match v {
        serde_json::Value::Null => Some(at.to_string()),
        serde_json::Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| first_null(x, &format!("{at}[{i}]"))),
        serde_json::Value::Object(m) => m.iter().find_map(|(k, x)| first_null(x, &format!("{at}.{k}"))),
        _ => None,
    }
}

/// Summary written by `geom` to `geom.json`.
#[derive(Debug, Clone, Serialize)]
pub struct GeomSummary {
    pub dimension: f64,
    pub constant: f64,
    /// `D·w(Σ∩B)^{1/D}`.
    pub crosscheck: f64,
    pub perimeter: f64,
    pub volume: f64,
    /// `|P − D·V|/P` for the unit Wulff sector.
    pub perimeter_volume_residual: f64,
    pub seed: u64,
    pub sets: usize,
    /// Smallest `(Q − c)/c` over the random sets.
    pub min_relative_margin: f64,
    pub violations: usize,
    /// Largest `|Q − c|/c` over the tested Wulff sectors.
    pub sector_margin_max: f64,
    pub sector_fit_center: Point,
    pub sector_fit_radius: f64,
    pub sector_fit_deviation: f64,
    pub fit_certified: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SetRow {
    index: usize,
    amplitude: f64,
    quotient: f64,
    margin: f64,
    relative_margin: f64,
    center_x: Option<f64>,
    center_y: Option<f64>,
    radius: Option<f64>,
    fit_deviation: Option<f64>,
}

const SECTOR_POINTS: usize = 4096;

pub fn cmd_geom(cfg: &RunConfig, out: &Path) -> CmdResult<GeomSummary> {
    let pr = &cfg.problem;
    let (norm, w, cone) = (&pr.norm, &pr.weight, &pr.cone);
    let oc = isoperimetry::optimal_constant(norm, w, cone)?;
    let c = oc.constant;

    let mut sector_margin_max: f64 = 0.0;
    let mut centers = vec![[0.0, 0.0]];
    if cone.lineality().k > 0 {
        centers.push(cone.project_to_lineality([0.3, -0.2]));
    }
    for center in &centers {
        for r in [0.5, 1.0, 2.0] {
            let set = isoperimetry::wulff_sector(norm, cone, *center, r, SECTOR_POINTS)?;
            let q = isoperimetry::quotient(norm, w, cone, &set)?;
            sector_margin_max = sector_margin_max.max((q - c).abs() / c);
        }
    }
    let unit = isoperimetry::wulff_sector(norm, cone, [0.0, 0.0], 1.0, SECTOR_POINTS)?;
    let fit = isoperimetry::characterize_minimizer(norm, w, cone, &unit)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dc = &cfg.diagnostics;
    let sets = (0..dc.random_sets)
        .map(|_| {
            let amp = rng.random_range(0.0..=dc.max_amplitude);
            isoperimetry::random_star_set(norm, cone, &mut rng, amp, dc.set_points).map(|s| (amp, s))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let rows = sets
        .par_iter()
        .enumerate()
        .map(|(index, (amp, set))| {
            let r = isoperimetry::verify_against(norm, w, cone, set, c)?;
            Ok(SetRow {
                index,
                amplitude: *amp,
                quotient: r.quotient,
                margin: r.margin,
                relative_margin: r.margin / c,
                center_x: r.center.map(|p| p[0]),
                center_y: r.center.map(|p| p[1]),
                radius: r.radius,
                fit_deviation: r.deviation,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let violations = rows
        .iter()
        .filter(|r| r.margin < -isoperimetry::INEQUALITY_TOLERANCE * c)
        .count();
    let summary = GeomSummary {
        dimension: oc.dimension,
        constant: c,
        crosscheck: oc.crosscheck,
        perimeter: oc.perimeter,
        volume: oc.volume,
        perimeter_volume_residual: (oc.perimeter - oc.dimension * oc.volume).abs() / oc.perimeter,
        seed: cfg.seed,
        sets: rows.len(),
        min_relative_margin: rows.iter().map(|r| r.relative_margin).fold(f64::INFINITY, f64::min),
        violations,
        sector_margin_max,
        sector_fit_center: fit.ball.center,
        sector_fit_radius: fit.ball.radius,
        sector_fit_deviation: fit.deviation,
        fit_certified: fit.certified,
    };
    create_dir(out)?;
    if cfg.output.wants(Format::Csv) {
        let path = out.join("isoperimetry_sets.csv");
        let mut wr = csv::Writer::from_path(&path).map_err(Error::from)?;
        for r in &rows {
            wr.serialize(r).map_err(Error::from)?;
        }
        wr.flush().map_err(|e| Failure::from(Error::io(&path, e)))?;
    }
    if cfg.output.wants(Format::Json) {
        write_json(&out.join("geom.json"), &summary)?;
    }
    if violations > 0 {
        return Err(Failure::new(
            EXIT_GEOMETRY,
            format!(
                "isoperimetric inequality violated by {violations} of {} sets (min margin {:.3e}·c)",
                rows.len(),
                summary.min_relative_margin
            ),
        ));
    }
    Ok(summary)
}

/// Contents of `solve.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    /// Canonical problem, mesh and solver blocks the files were produced from.
    pub fingerprint: String,
    #[serde(rename = "M")]
    pub m: f64,
    pub min_u: f64,
    pub weak_residual: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub meta: SolverMeta,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub condition_b: Option<ConditionBCertificate>,
}

fn mesh_for(cfg: &RunConfig) -> CmdResult<Mesh> {
    let pr = &cfg.problem;
    Ok(generate_mesh(&pr.cone, &pr.norm, pr.radius, cfg.mesh.h, cfg.mesh.grading)?)
}

fn solve_and_store(cfg: &RunConfig, out: &Path) -> CmdResult<(Mesh, Solution, SolveSummary)> {
    let pr = &cfg.problem;
    let condition_b = if pr.declares_condition_b() {
        Some(solver::validate_condition_b(pr, pr.dimension())?)
    } else {
        None
    };
    let mesh = mesh_for(cfg)?;
    create_dir(out)?;
    let sol = match solver::solve(pr, &mesh, &cfg.solver) {
        Ok(s) => s,
        Err(Error::NonConvergence { reason, last }) => {
            if cfg.output.wants(Format::Csv) {
                last.save_csv(&mesh, &out.join("solution_unconverged.csv"))?;
            }
            return Err(Failure::new(
                EXIT_SOLVER,
                format!("solver did not converge: {reason} (last iterate M = {:.6})", last.max()),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let summary = SolveSummary {
        fingerprint: cfg.fingerprint(),
        m: sol.max(),
        min_u: sol.min(),
        weak_residual: solver::weak_residual(pr, &mesh, &sol)?,
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        meta: sol.meta.clone(),
        condition_b,
    };
    if cfg.output.wants(Format::Csv) {
        mesh.save_csv(&out.join("mesh"))?;
        sol.save_csv(&mesh, &out.join("solution.csv"))?;
    }
    if cfg.output.wants(Format::Json) {
        write_json(&out.join("solve.json"), &summary)?;
    }
    Ok((mesh, sol, summary))
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> CmdResult<SolveSummary> {
    solve_and_store(cfg, out).map(|(_, _, s)| s)
}

/// Loads `mesh/`, `solution.csv` and `solve.json` from `out` if they were
/// produced from the same configuration.
fn stored_solution(cfg: &RunConfig, out: &Path) -> Option<(Mesh, Solution)> {
    let text = std::fs::read_to_string(out.join("solve.json")).ok()?;
    let summary: SolveSummary = serde_json::from_str(&text).ok()?;
    if summary.fingerprint != cfg.fingerprint() {
        return None;
    }
    let mut mesh = Mesh::load_csv(&out.join("mesh")).ok()?;
    mesh.h = cfg.mesh.h;
    let mut sol = Solution::load_csv(&mesh, &out.join("solution.csv")).ok()?;
    sol.meta = summary.meta;
    Some((mesh, sol))
}

/// Contents of `verify.json`: the diagnostic report plus supporting values.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    #[serde(flatten)]
    pub report: VerifyReport,
    pub pohozaev_terms: Pohozaev,
    pub min_u: f64,
    pub weak_residual: f64,
    /// Knots `(ρ, u)` of the fitted radial profile.
    pub radial_profile: Vec<[f64; 2]>,
}

/// Lowest admissible value of `u` for nonnegative sources.
const MAX_PRINCIPLE_FLOOR: f64 = -1e-10;

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> CmdResult<VerifySummary> {
    let pr = &cfg.problem;
    let (mesh, sol) = match stored_solution(cfg, out) {
        Some(found) => found,
        None => {
            let (m, s, _) = solve_and_store(cfg, out)?;
            (m, s)
        }
    };
    let dc = &cfg.diagnostics;
    let (table, mut report) = diagnostics::verify(pr, &mesh, &sol, dc.n_levels, dc.gradient, &dc.tolerances)?;
    let poh = diagnostics::pohozaev_residual(pr, &mesh, &sol)?;
    let fit = diagnostics::radial_fit(pr, &mesh, &sol, &table)?;
    let min_u = sol.min();
    if min_u < MAX_PRINCIPLE_FLOOR {
        report.failing.push("maximum_principle".into());
    }
    let summary = VerifySummary {
        report,
        pohozaev_terms: poh,
        min_u,
        weak_residual: solver::weak_residual(pr, &mesh, &sol)?,
        radial_profile: fit.knots.clone(),
    };
    create_dir(out)?;
    if cfg.output.wants(Format::Csv) {
        table.save_csv(&out.join("levels.csv"))?;
    }
    if cfg.output.wants(Format::Json) {
        write_json(&out.join("verify.json"), &summary)?;
    }
    if cfg.output.wants(Format::Svg) {
        let balls: Vec<WulffBall> = table
            .records
            .iter()
            .step_by(4)
            .filter_map(|r| WulffBall::new(pr.norm.clone(), r.center, r.rho).ok())
            .collect();
        let path = out.join("contours.svg");
        std::fs::write(&path, svg::contour_plot(&mesh, &sol, 16, &balls))
            .map_err(|e| Failure::from(Error::io(&path, e)))?;
    }
    if !summary.report.failing.is_empty() {
        return Err(Failure::new(
            EXIT_DIAGNOSTICS,
            format!("diagnostics out of tolerance: {}", summary.report.failing.join(", ")),
        ));
    }
    Ok(summary)
}
