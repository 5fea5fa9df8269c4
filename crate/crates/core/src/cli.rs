//! The `twolayer` command-line tool.
//!
//! Exit codes: 0 success, 1 a `verify` check failed, 2 Newton failure,
//! 3 inadmissible interface, 4 I/O, configuration or usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::continuation::{
    attach_field_diagnostics, classify_termination, extend_branch_with, start_events, sweep_with, Branch, BranchPoint,
    ClassifyOptions, ContinuationPolicy, StopReason, SweepCell, TerminationReport,
};
use crate::error::{Error, Result};
use crate::fields::{self, FieldEvaluator, FieldGrid, StagnationKind};
use crate::io::{self, BranchHeader, BranchWriter, FlowFigure, SolutionRecord};
use crate::model::PhysParams;
use crate::residual::{admissibility, ClosureSpec, System};
use crate::solver::NewtonOptions;
use crate::state::CollocationGrid;

/// Environment variable that overrides the output directory when `--out` is absent.
pub const OUT_ENV: &str = "TWOLAYER_OUT";

#[derive(Debug, Parser)]
#[command(name = "twolayer", version, about = "Steady periodic waves between two constant-vorticity layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config and the TWOLAYER_OUT variable).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for one wave at the configured amplitude.
    Solve(Common),
    /// Trace a branch, diagnose its points and classify how it ends.
    Branch {
        #[command(flatten)]
        common: Common,
        /// Continue an existing branch file instead of starting afresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Classify branch endings over a grid of (H, omega0).
    Sweep(Common),
    /// Velocity, stream function, streamlines and stagnation points of a solution.
    Fields {
        #[command(flatten)]
        common: Common,
        /// Grid size as NX,NY.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        /// Solution record to use instead of solving from the config.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Check a solution record and report each check with its numbers.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Grid size for the field checks, as NX,NY.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        #[arg(long)]
        solution: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected NX,NY, got {s:?}"))?;
    let nx = a.trim().parse().map_err(|_| format!("bad NX in {s:?}"))?;
    let ny = b.trim().parse().map_err(|_| format!("bad NY in {s:?}"))?;
    Ok((nx, ny))
}

fn default_resolution() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "H")]
    pub depths: Vec<f64>,
    pub omega0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsConfig {
    pub grid: [usize; 2],
    /// Number of evenly spaced stream-function levels to draw.
    pub streamlines: usize,
    /// Solution record, relative to the config file.
    pub solution: Option<PathBuf>,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        FieldsConfig { grid: [64, 64], streamlines: 24, solution: None }
    }
}

/// Run configuration: one JSON object with explicit keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: PhysParams,
    /// Fourier modes of the first solve.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Signed wave amplitude for `solve`; zero gives the shear flow.
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub continuation: ContinuationPolicy,
    #[serde(default)]
    pub classify: ClassifyOptions,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub fields: FieldsConfig,
    /// Worker threads for `sweep`; all cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = io::read_json(path)?;
        if let Some(sol) = &cfg.fields.solution {
            if sol.is_relative() {
                cfg.fields.solution = Some(path.parent().unwrap_or(Path::new(".")).join(sol));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.newton.validate()?;
        if self.resolution < 8 {
            return Err(Error::Format(format!("resolution must be at least 8, got {}", self.resolution)));
        }
        self.policy().validate()?;
        if !self.amplitude.is_finite() {
            return Err(Error::Format("amplitude must be finite".into()));
        }
        let [nx, ny] = self.fields.grid;
        if nx < 32 || ny < 32 {
            return Err(Error::Format("fields.grid must be at least [32, 32]".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Format("workers must be positive".into()));
        }
        Ok(())
    }

    /// The continuation policy with the top-level resolution and Newton options applied.
    pub fn policy(&self) -> ContinuationPolicy {
        ContinuationPolicy {
            initial_resolution: self.resolution,
            max_resolution: self.continuation.max_resolution.max(self.resolution),
            newton: self.newton.clone(),
            ..self.continuation.clone()
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::SingularJacobian(_) | Error::PoleProximity | Error::Stalled { .. } => 2,
        Error::Inadmissible(_) => 3,
        _ => 4,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(c) => {
            let cfg = require_config(c)?;
            let out = out_dir(c, Some(&cfg))?;
            cmd_solve(&cfg, &out).map(|_| 0)
        }
        Command::Branch { common, resume } => {
            let cfg = match &common.config {
                Some(p) => Some(RunConfig::load(p)?),
                None if resume.is_some() => None,
                None => return Err(usage("branch needs --config or --resume")),
            };
            let out = out_dir(common, cfg.as_ref())?;
            let classify = cfg.as_ref().map(|c| c.classify.clone()).unwrap_or_default();
            let outcome = match resume {
                Some(file) => cmd_branch_resume(file, &classify, &out)?,
                None => cmd_branch(cfg.as_ref().expect("config checked above"), &out)?,
            };
            print!("{}", outcome.text);
            Ok(0)
        }
        Command::Sweep(c) => {
            let cfg = require_config(c)?;
            let out = out_dir(c, Some(&cfg))?;
            cmd_sweep(&cfg, &out).map(|_| 0)
        }
        Command::Fields { common, grid, solution } => {
            let cfg = load_optional(common)?;
            let out = out_dir(common, cfg.as_ref())?;
            let (record, _) = source_record(solution.as_deref(), cfg.as_ref(), &out)?;
            let grid = grid.or(cfg.as_ref().map(|c| (c.fields.grid[0], c.fields.grid[1]))).unwrap_or((64, 64));
            let levels = cfg.as_ref().map_or(FieldsConfig::default().streamlines, |c| c.fields.streamlines);
            cmd_fields(&record, grid, levels, &out).map(|_| 0)
        }
        Command::Verify { common, grid, solution } => {
            let cfg = load_optional(common)?;
            let out = out_dir(common, cfg.as_ref())?;
            let (record, _) = source_record(solution.as_deref(), cfg.as_ref(), &out)?;
            let grid = grid.or(cfg.as_ref().map(|c| (c.fields.grid[0], c.fields.grid[1]))).unwrap_or((64, 64));
            let tol = cfg.as_ref().map_or(NewtonOptions::default().tol_residual, |c| c.newton.tol_residual);
            let report = cmd_verify(&record, grid, tol, &out)?;
            print!("{}", report.text());
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn usage(msg: &str) -> Error {
    Error::Format(format!("{msg}\nusage: twolayer <solve|branch|sweep|fields|verify> --config <file> --out <dir>"))
}

fn require_config(c: &Common) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p),
        None => Err(usage("--config is required")),
    }
}

fn load_optional(c: &Common) -> Result<Option<RunConfig>> {
    c.config.as_deref().map(RunConfig::load).transpose()
}

/// `--out`, then the environment override, then the config, then `twolayer-out`.
fn out_dir(c: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("twolayer-out"));
    fs::create_dir_all(&dir).map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// The record named on the command line or in the config, or else a fresh solve.
fn source_record(flag: Option<&Path>, cfg: Option<&RunConfig>, out: &Path) -> Result<(SolutionRecord, PathBuf)> {
    let path = flag.map(Path::to_path_buf).or_else(|| cfg.and_then(|c| c.fields.solution.clone()));
    match (path, cfg) {
        (Some(p), _) => Ok((io::read_record(&p)?, p)),
        (None, Some(c)) => {
            let p = cmd_solve(c, out)?;
            Ok((io::read_record(&p)?, p))
        }
        (None, None) => Err(usage("need --solution or --config")),
    }
}

/// Continues a branch to the configured amplitude and writes the final point.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let params = cfg.params;
    let a = cfg.amplitude;
    let point = if a == 0.0 {
        shear_point(cfg)?
    } else {
        let base = cfg.policy();
        let a0 = if a.abs() <= 0.01 { a } else { 0.01 * a.signum() };
        let policy = ContinuationPolicy { initial_amplitude: a0, target_amplitude: Some(a), max_points: usize::MAX, ..base };
        let mut branch = Branch::replay(&params, &policy, &start_events(&params, &policy)?)?;
        let stop = if branch.stop.is_some() { branch.stop.unwrap() } else { extend_branch_with(&mut branch, |_| Ok(()))? };
        match stop {
            StopReason::TargetReached => branch.last().clone(),
            StopReason::Inadmissible(r) => return Err(Error::Inadmissible(r)),
            stop => {
                return Err(Error::Stalled { reached: branch.last().diagnostics.amplitude, target: a, reason: format!("{stop:?}") });
            }
        }
    };
    let record = SolutionRecord::new(&point.solution, &params, Some(point.diagnostics.clone()));
    let path = out.join(format!("solution_{}.json", io::solution_tag(&params, a)));
    io::write_record(&path, &record)?;
    let d = &point.diagnostics;
    println!(
        "solved A = {:.6} at N = {}: residual {:.3e}, unused-row residual {:.3e}, {} Newton iterations on the last step",
        d.amplitude, d.resolution, d.final_residual, d.unused_residual, d.iterations
    );
    println!("wrote {}", path.display());
    Ok(path)
}

/// The shear flow at the bifurcation speed, passed through the solver for its diagnostics.
fn shear_point(cfg: &RunConfig) -> Result<BranchPoint> {
    let params = cfg.params;
    let sol = crate::model::linear_guess(&params, 0.0, cfg.resolution);
    let grid = CollocationGrid::new(cfg.resolution);
    let system = System::new(params, &grid, ClosureSpec::amplitude(0.0));
    let res = crate::solver::newton_solve(&system, &sol, &cfg.newton)?;
    let unused = system.residual_unchecked(&res.solution)?.max_unused();
    let m = crate::residual::admissibility_margins(&res.solution, &params);
    Ok(BranchPoint {
        diagnostics: crate::continuation::PointDiagnostics {
            amplitude: 0.0,
            arclength: res.solution.arclength,
            resolution: cfg.resolution,
            min_interface_speed: m.min_interface_speed,
            t_min_speed: m.t_min_speed,
            lower_clearance: m.lower_clearance,
            upper_clearance: m.upper_clearance,
            decay_metric: res.solution.decay_metric(),
            iterations: res.iterations,
            jacobian_builds: res.jacobian_builds,
            final_residual: res.final_residual,
            unused_residual: unused,
            closure: crate::continuation::ClosureKind::Amplitude,
            step: 0.0,
            field_checked: false,
            stagnation_gap: None,
        },
        solution: res.solution,
    })
}

/// What a branch run produced.
pub struct BranchOutcome {
    pub branch: Branch,
    pub report: std::result::Result<TerminationReport, String>,
    pub branch_file: PathBuf,
    pub text: String,
}

pub fn branch_file_name(params: &PhysParams) -> String {
    format!("branch_{}.jsonl", io::params_tag(params))
}

pub fn cmd_branch(cfg: &RunConfig, out: &Path) -> Result<BranchOutcome> {
    let policy = cfg.policy();
    let path = out.join(branch_file_name(&cfg.params));
    let events = start_events(&cfg.params, &policy)?;
    let mut writer = BranchWriter::create(&path, &BranchHeader::new(&cfg.params, &policy), &events)?;
    let mut branch = Branch::replay(&cfg.params, &policy, &events)?;
    if branch.stop.is_none() {
        extend_branch_with(&mut branch, |e| writer.append(e))?;
    }
    finish_branch(branch, &cfg.classify, path, out)
}

pub fn cmd_branch_resume(file: &Path, classify: &ClassifyOptions, out: &Path) -> Result<BranchOutcome> {
    let log = io::read_branch(file)?;
    let mut branch = log.branch()?;
    // Rewrite without the damaged tail so appends start on a fresh line.
    let mut writer = BranchWriter::create(file, &log.header, &log.events)?;
    if branch.stop.is_none() {
        extend_branch_with(&mut branch, |e| writer.append(e))?;
    }
    finish_branch(branch, classify, file.to_path_buf(), out)
}

fn finish_branch(mut branch: Branch, classify: &ClassifyOptions, branch_file: PathBuf, out: &Path) -> Result<BranchOutcome> {
    attach_field_diagnostics(&mut branch, classify.window.max(3));
    let report = classify_termination(&branch, classify).map_err(|e| e.to_string());
    let tag = io::params_tag(&branch.params);

    let mut table = String::from("amplitude,N,iterations,min_interface_speed,t_min_speed,lower_clearance,upper_clearance,decay_metric,final_residual,unused_residual,closure,stagnation_gap\n");
    for p in &branch.points {
        let d = &p.diagnostics;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{:?},{}",
            d.amplitude,
            d.resolution,
            d.iterations,
            d.min_interface_speed,
            d.t_min_speed,
            d.lower_clearance,
            d.upper_clearance,
            d.decay_metric,
            d.final_residual,
            d.unused_residual,
            d.closure,
            d.stagnation_gap.map_or(String::new(), |g| g.to_string())
        );
    }
    fs::write(out.join(format!("branch_{tag}_points.csv")), table)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        params: PhysParams,
        points: usize,
        max_amplitude: f64,
        stop: Option<StopReason>,
        verdict: String,
        report: Option<&'a TerminationReport>,
        note: Option<&'a str>,
    }
    let verdict = match &report {
        Ok(r) => r.verdict.label().to_string(),
        Err(_) => "Undetermined".to_string(),
    };
    let summary = Summary {
        params: branch.params,
        points: branch.points.len(),
        max_amplitude: branch.max_amplitude(),
        stop: branch.stop,
        verdict: verdict.clone(),
        report: report.as_ref().ok(),
        note: report.as_ref().err().map(String::as_str),
    };
    io::write_json(&out.join(format!("branch_{tag}_summary.json")), &summary)?;
    let last = branch.last();
    io::write_record(
        &out.join(format!("branch_{tag}_last.json")),
        &SolutionRecord::new(&last.solution, &branch.params, Some(last.diagnostics.clone())),
    )?;

    let mut text = String::new();
    let _ = writeln!(text, "points: {}", branch.points.len());
    let _ = writeln!(text, "max amplitude: {}", branch.max_amplitude());
    let _ = writeln!(text, "stop: {:?}", branch.stop);
    if let Err(note) = &report {
        let _ = writeln!(text, "note: {note}");
    }
    let _ = writeln!(text, "verdict: {verdict}");
    Ok(BranchOutcome { branch, report, branch_file, text })
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepCell>> {
    let grids = cfg.sweep.as_ref().ok_or_else(|| usage("sweep needs a \"sweep\": {\"H\": [...], \"omega0\": [...]} section"))?;
    if grids.depths.is_empty() || grids.omega0.is_empty() {
        return Err(usage("sweep grids must be nonempty"));
    }
    let k = cfg.params.k;
    let dir = out.join(format!("sweep_k{k}"));
    fs::create_dir_all(&dir)?;
    let policy = cfg.policy();
    let run_cell = |p: &PhysParams| -> Result<SweepCell> {
        let path = dir.join(branch_file_name(p));
        let mut branch;
        let mut writer;
        if path.exists() {
            let log = io::read_branch(&path)?;
            branch = log.branch()?;
            writer = BranchWriter::create(&path, &log.header, &log.events)?;
        } else {
            let events = start_events(p, &policy)?;
            writer = BranchWriter::create(&path, &BranchHeader::new(p, &policy), &events)?;
            branch = Branch::replay(p, &policy, &events)?;
        }
        if branch.stop.is_none() {
            extend_branch_with(&mut branch, |e| writer.append(e))?;
        }
        attach_field_diagnostics(&mut branch, cfg.classify.window.max(3));
        Ok(SweepCell::from_branch(&branch, classify_termination(&branch, &cfg.classify)))
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Format(e.to_string()))?;
    let cells = pool.install(|| sweep_with(k, &grids.depths, &grids.omega0, run_cell))?;
    let stem = format!("sweep_k{k}");
    fs::write(out.join(format!("{stem}.csv")), io::sweep_csv(&cells))?;
    fs::write(out.join(format!("{stem}.svg")), io::sweep_svg(k, &cells))?;
    for c in &cells {
        println!("H = {:<6} omega0 = {:<6} {:<16} max amplitude {:.5}", c.depth, c.omega0, c.verdict.label(), c.max_amplitude);
    }
    Ok(cells)
}

/// Stream-function levels for a figure: evenly spaced, plus those through saddles.
fn figure_levels(grid: &FieldGrid, saddles: &[f64], count: usize) -> Vec<f64> {
    let lo = grid.psi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut levels: Vec<f64> = (1..=count).map(|i| lo + (hi - lo) * i as f64 / (count + 1) as f64).collect();
    levels.extend_from_slice(saddles);
    levels
}

/// Bilinear interpolation of the grid stream function.
fn psi_at(grid: &FieldGrid, x: f64, y: f64) -> f64 {
    let fx = ((x - grid.x[0]) / grid.dx()).clamp(0.0, (grid.nx() - 1) as f64 - 1e-9);
    let fy = ((y - grid.y[0]) / grid.dy()).clamp(0.0, (grid.ny() - 1) as f64 - 1e-9);
    let (i, j) = (fx as usize, fy as usize);
    let (sx, sy) = (fx - i as f64, fy - j as f64);
    let p = |a, b| grid.psi[grid.idx(a, b)];
    (1.0 - sy) * ((1.0 - sx) * p(i, j) + sx * p(i + 1, j)) + sy * ((1.0 - sx) * p(i, j + 1) + sx * p(i + 1, j + 1))
}

pub fn cmd_fields(record: &SolutionRecord, grid: (usize, usize), levels: usize, out: &Path) -> Result<FlowFigure> {
    let params = record.params()?;
    let sol = record.solution()?;
    admissibility(&sol, &params).map_err(Error::Inadmissible)?;
    let ev = FieldEvaluator::new(&sol, &params)?;
    let field = fields::field_grid(&ev, grid.0, grid.1)?;
    let stagnation = fields::stagnation_points(&ev, &field)?;
    let saddles: Vec<f64> = stagnation.iter().filter(|s| s.kind == StagnationKind::Saddle).map(|s| psi_at(&field, s.x, s.y)).collect();
    let lines = fields::streamlines(&field, &figure_levels(&field, &saddles, levels));
    let fig = FlowFigure::new(&params, sol.amplitude(), fields::interface_polyline(&sol, &params, 512), lines, stagnation);
    let stem = format!("fields_{}", io::solution_tag(&params, record.amplitude));
    fs::write(out.join(format!("{stem}.csv")), io::field_csv(&field))?;
    io::write_json(&out.join(format!("{stem}_flow.json")), &fig)?;
    fs::write(out.join(format!("{stem}.svg")), io::flow_svg(&fig))?;
    println!("grid {} x {}, {} streamline segments", grid.0, grid.1, fig.streamlines.len());
    for s in &fig.stagnation {
        println!("{:?} {:?} at ({:.6}, {:.6})", s.layer, s.kind, s.x, s.y);
    }
    if fig.degenerate_stagnation > 0 {
        println!("{} degenerate stagnation points excluded", fig.degenerate_stagnation);
    }
    Ok(fig)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {} {:.3e} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.detail);
        }
        s
    }
}

/// Runs every check on a record. Checks that cannot be evaluated fail.
pub fn cmd_verify(record: &SolutionRecord, grid: (usize, usize), tol: f64, out: &Path) -> Result<VerifyReport> {
    let params = record.params()?;
    let sol = record.solution()?;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, value: f64, detail: String| {
        checks.push(Check { name: name.into(), passed, value, detail });
    };

    let admissible = admissibility(&sol, &params);
    push(
        "admissibility",
        admissible.is_ok(),
        crate::residual::admissibility_margins(&sol, &params).min_interface_speed,
        admissible.map_or_else(|r| r.to_string(), |_| "minimum interface speed".into()),
    );

    let cgrid = CollocationGrid::new(sol.resolution());
    let system = System::new(params, &cgrid, ClosureSpec::amplitude(sol.amplitude()));
    match system.residual_unchecked(&sol) {
        Ok(r) => {
            push("residual", r.max_abs <= tol, r.max_abs, format!("max enforced row, limit {tol:e}"));
            let unused = r.max_unused();
            let limit = 10.0 * r.max_abs.max(1e-12);
            push("unused_rows", unused <= limit, unused, format!("first-midpoint rows, limit {limit:.3e}"));
        }
        Err(e) => push("residual", false, f64::NAN, e.to_string()),
    }

    let field_checks = (|| -> Result<Vec<Check>> {
        let ev = FieldEvaluator::new(&sol, &params)?;
        let mut v = Vec::new();
        let inv = fields::invariants(&ev, &fields::stations(&params, 8))?;
        let spread = inv.spread_lower.max(inv.spread_upper).max(inv.spread_flow_force);
        v.push(Check {
            name: "invariants".into(),
            passed: spread <= 1e-6,
            value: spread,
            detail: format!(
                "relative spreads lower {:.2e}, upper {:.2e}, flow force {:.2e} over 8 stations",
                inv.spread_lower, inv.spread_upper, inv.spread_flow_force
            ),
        });
        let refinement = fields::pde_refinement(&ev, grid.0, grid.1)?;
        let (rd, rv) = refinement.ratios();
        let exact = refinement.coarse.0.max(refinement.coarse.1) <= 1e-10;
        let second_order = (3.0..=5.0).contains(&rd) && (3.0..=5.0).contains(&rv);
        v.push(Check {
            name: "pde_convergence".into(),
            passed: exact || second_order,
            value: rd.min(rv),
            detail: format!(
                "divergence {:.2e} -> {:.2e}, vorticity defect {:.2e} -> {:.2e}, ratios {rd:.2}, {rv:.2}",
                refinement.coarse.0, refinement.fine.0, refinement.coarse.1, refinement.fine.1
            ),
        });
        let field = fields::field_grid(&ev, grid.0, grid.1)?;
        let level = field.interface_spread();
        v.push(Check { name: "interface_level_set".into(), passed: level <= 1e-6, value: level, detail: "spread of Psi on the interface".into() });
        Ok(v)
    })();
    match field_checks {
        Ok(v) => checks.extend(v),
        Err(e) => checks.push(Check { name: "fields".into(), passed: false, value: f64::NAN, detail: e.to_string() }),
    }

    let report = VerifyReport { checks };
    let stem = format!("verify_{}", io::solution_tag(&params, record.amplitude));
    io::write_json(&out.join(format!("{stem}.json")), &report)?;
    Ok(report)
}
