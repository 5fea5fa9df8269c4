//! Branch tracing from the shear family.
//!
//! A branch starts from the linear-theory guess at small amplitude and is
//! extended by secant prediction and Newton correction. Amplitude is the
//! primary continuation parameter; after repeated failures the controller
//! falls back to a distance closure anchored at the last point. Resolution is
//! doubled whenever the Fourier tail of a converged point is too heavy.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InadmissibleReason, Result};
use crate::fields;
use crate::model::{linear_guess, PhysParams};
use crate::residual::{admissibility, admissibility_margins, ClosureSpec, KinematicGauge, System};
use crate::solver::{newton_solve, NewtonOptions, NewtonResult};
use crate::state::{CollocationGrid, SolutionVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationPolicy {
    /// Signed amplitude of the first point; its sign sets the direction.
    pub initial_amplitude: f64,
    pub initial_resolution: usize,
    /// Initial amplitude increment (magnitude).
    pub amplitude_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Stop once this amplitude has been reached exactly.
    pub target_amplitude: Option<f64>,
    pub max_points: usize,
    pub max_resolution: usize,
    /// Resolution is doubled when a converged point's decay metric exceeds this.
    pub decay_trigger: f64,
    /// Newton iteration count at or below which a step counts as easy.
    pub easy_iterations: usize,
    /// Consecutive easy steps before the step is doubled.
    pub easy_streak: usize,
    /// Amplitude-closure failures before switching to the distance closure.
    pub switch_after_failures: usize,
    pub max_consecutive_failures: usize,
    pub newton: NewtonOptions,
    pub gauge: KinematicGauge,
}

impl Default for ContinuationPolicy {
    fn default() -> Self {
        ContinuationPolicy {
            initial_amplitude: 0.01,
            initial_resolution: 64,
            amplitude_step: 0.02,
            min_step: 1e-4,
            max_step: 0.05,
            target_amplitude: None,
            max_points: 200,
            max_resolution: 1024,
            decay_trigger: 1e-9,
            easy_iterations: 4,
            easy_streak: 3,
            switch_after_failures: 2,
            max_consecutive_failures: 8,
            newton: NewtonOptions::default(),
            gauge: KinematicGauge::default(),
        }
    }
}

impl ContinuationPolicy {
    pub fn validate(&self) -> Result<()> {
        self.newton.validate()?;
        let a0 = self.initial_amplitude.abs();
        if !(a0 > 0.0 && a0 <= 0.05) {
            return Err(Error::Format(format!("initial amplitude must satisfy 0 < |A0| <= 0.05, got {}", self.initial_amplitude)));
        }
        if self.initial_resolution < 8 || self.initial_resolution > self.max_resolution {
            return Err(Error::Format("initial resolution must lie in [8, max_resolution]".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.amplitude_step && self.amplitude_step <= self.max_step) {
            return Err(Error::Format("need 0 < min_step <= amplitude_step <= max_step".into()));
        }
        if self.max_points == 0 || self.easy_streak == 0 || self.max_consecutive_failures == 0 {
            return Err(Error::Format("point, streak and failure limits must be positive".into()));
        }
        if let Some(t) = self.target_amplitude {
            if (t - self.initial_amplitude) * self.initial_amplitude < 0.0 {
                return Err(Error::Format("target amplitude lies behind the initial amplitude".into()));
            }
        }
        Ok(())
    }

    fn direction(&self) -> f64 {
        self.initial_amplitude.signum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureKind {
    Amplitude,
    Distance,
}

/// Step-size controller, persisted with every record so a branch can be resumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub mode: ClosureKind,
    /// Amplitude increment magnitude, or distance in coefficient space.
    pub step: f64,
    pub easy_count: usize,
    pub amplitude_failures: usize,
    pub consecutive_failures: usize,
}

impl Controller {
    fn new(policy: &ContinuationPolicy) -> Controller {
        Controller {
            mode: ClosureKind::Amplitude,
            step: policy.amplitude_step,
            easy_count: 0,
            amplitude_failures: 0,
            consecutive_failures: 0,
        }
    }
}

/// Per-point quantities used for termination diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub amplitude: f64,
    pub arclength: f64,
    pub resolution: usize,
    pub min_interface_speed: f64,
    /// Parameter value of the speed minimum: 0 is the crest, π the trough.
    pub t_min_speed: f64,
    pub lower_clearance: f64,
    pub upper_clearance: f64,
    pub decay_metric: f64,
    pub iterations: usize,
    pub jacobian_builds: usize,
    pub final_residual: f64,
    pub unused_residual: f64,
    pub closure: ClosureKind,
    pub step: f64,
    /// Whether the field scan below has been run.
    pub field_checked: bool,
    /// Distance from the interface to the nearest stagnation point on the
    /// symmetry lines, if there is one.
    pub stagnation_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub solution: SolutionVector,
    pub diagnostics: PointDiagnostics,
}

/// One attempted step, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub closure: ClosureKind,
    pub step: f64,
    pub target_amplitude: Option<f64>,
    pub resolution: usize,
    pub outcome: StepOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepOutcome {
    Accepted { iterations: usize },
    Refined { resolution: usize },
    Failed { message: String, inadmissible: Option<InadmissibleReason> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    MaxPoints,
    TargetReached,
    /// A converged point needed more modes than the cap allows.
    ResolutionLimit,
    /// Repeated failures, the last of which was an admissibility violation.
    Inadmissible(InadmissibleReason),
    /// Repeated failures without an admissibility violation.
    StepUnderflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub params: PhysParams,
    pub policy: ContinuationPolicy,
    pub points: Vec<BranchPoint>,
    pub step_log: Vec<StepRecord>,
    pub controller: Controller,
    pub stop: Option<StopReason>,
}

/// Something that happened while extending a branch, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BranchEvent {
    Point { point: BranchPoint, step: StepRecord, controller: Controller },
    Attempt { step: StepRecord, controller: Controller },
    Stop { reason: StopReason },
}

impl Branch {
    pub fn last(&self) -> &BranchPoint {
        self.points.last().expect("branch has at least one point")
    }

    pub fn max_amplitude(&self) -> f64 {
        self.points.iter().map(|p| p.diagnostics.amplitude.abs()).fold(0.0, f64::max)
    }

    /// Applies a recorded event. Replaying a branch's event stream rebuilds it.
    pub fn apply(&mut self, event: &BranchEvent) {
        match event {
            BranchEvent::Point { point, step, controller } => {
                self.points.push(point.clone());
                self.step_log.push(step.clone());
                self.controller = controller.clone();
                self.stop = None;
            }
            BranchEvent::Attempt { step, controller } => {
                self.step_log.push(step.clone());
                self.controller = controller.clone();
                self.stop = None;
            }
            BranchEvent::Stop { reason } => self.stop = Some(*reason),
        }
    }

    /// Rebuilds a branch from its event stream.
    pub fn replay<'a, I>(params: &PhysParams, policy: &ContinuationPolicy, events: I) -> Result<Branch>
    where
        I: IntoIterator<Item = &'a BranchEvent>,
    {
        let mut branch = Branch {
            params: *params,
            policy: policy.clone(),
            points: Vec::new(),
            step_log: Vec::new(),
            controller: Controller::new(policy),
            stop: None,
        };
        for ev in events {
            branch.apply(ev);
        }
        if branch.points.is_empty() {
            return Err(Error::Format("branch has no converged point".into()));
        }
        Ok(branch)
    }

    /// Checks the stored points against the tolerance and admissibility.
    pub fn check(&self) -> Result<()> {
        let tol = self.policy.newton.tol_residual;
        for (i, p) in self.points.iter().enumerate() {
            if !(p.diagnostics.final_residual <= tol) {
                return Err(Error::Format(format!("branch point {i} has residual {:e} above tolerance", p.diagnostics.final_residual)));
            }
            admissibility(&p.solution, &self.params).map_err(Error::Inadmissible)?;
        }
        Ok(())
    }
}

fn diagnose(
    params: &PhysParams,
    res: &NewtonResult,
    unused: f64,
    closure: ClosureKind,
    step: f64,
) -> PointDiagnostics {
    let sol = &res.solution;
    let m = admissibility_margins(sol, params);
    PointDiagnostics {
        amplitude: sol.amplitude(),
        arclength: sol.arclength,
        resolution: sol.resolution(),
        min_interface_speed: m.min_interface_speed,
        t_min_speed: m.t_min_speed,
        lower_clearance: m.lower_clearance,
        upper_clearance: m.upper_clearance,
        decay_metric: sol.decay_metric(),
        iterations: res.iterations,
        jacobian_builds: res.jacobian_builds,
        final_residual: res.final_residual,
        unused_residual: unused,
        closure,
        step,
        field_checked: false,
        stagnation_gap: None,
    }
}

fn solve_at(params: &PhysParams, policy: &ContinuationPolicy, closure: &ClosureSpec, guess: &SolutionVector) -> Result<(NewtonResult, f64)> {
    let grid = CollocationGrid::new(guess.resolution());
    let system = System::new(*params, &grid, closure.clone()).with_gauge(policy.gauge);
    let res = newton_solve(&system, guess, &policy.newton)?;
    let unused = system.residual_unchecked(&res.solution)?.max_unused();
    Ok((res, unused))
}

/// Result of one corrector call, including resolution refinement.
struct Corrected {
    res: NewtonResult,
    unused: f64,
    refinements: Vec<usize>,
    /// The point still needs more modes than the cap allows.
    under_resolved: bool,
}

fn correct(params: &PhysParams, policy: &ContinuationPolicy, closure: &ClosureSpec, guess: &SolutionVector) -> Result<Corrected> {
    let (mut res, mut unused) = solve_at(params, policy, closure, guess)?;
    let mut refinements = Vec::new();
    while res.solution.decay_metric() > policy.decay_trigger {
        let n = 2 * res.solution.resolution();
        if n > policy.max_resolution {
            return Ok(Corrected { res, unused, refinements, under_resolved: true });
        }
        let closure = match closure {
            ClosureSpec::Distance { anchor, distance } => {
                let a = SolutionVector::unflatten(anchor)?.resample(n).flatten();
                ClosureSpec::Distance { anchor: a, distance: *distance }
            }
            c => c.clone(),
        };
        // At least one step, so the new modes are actually solved for.
        let policy = ContinuationPolicy { newton: NewtonOptions { min_iterations: 1, ..policy.newton.clone() }, ..policy.clone() };
        (res, unused) = solve_at(params, &policy, &closure, &res.solution.resample(n))?;
        refinements.push(n);
    }
    Ok(Corrected { res, unused, refinements, under_resolved: false })
}

/// Events that open a branch: the first point, solved from the linear-theory guess.
pub fn start_events(params: &PhysParams, policy: &ContinuationPolicy) -> Result<Vec<BranchEvent>> {
    params.validate()?;
    policy.validate()?;
    let a0 = policy.initial_amplitude;
    let closure = ClosureSpec::amplitude(a0);
    let guess = linear_guess(params, a0, policy.initial_resolution);
    let c = correct(params, policy, &closure, &guess)?;
    let point = BranchPoint {
        diagnostics: diagnose(params, &c.res, c.unused, ClosureKind::Amplitude, a0),
        solution: c.res.solution,
    };
    let step = StepRecord {
        closure: ClosureKind::Amplitude,
        step: a0,
        target_amplitude: Some(a0),
        resolution: policy.initial_resolution,
        outcome: StepOutcome::Accepted { iterations: c.res.iterations },
    };
    let mut events = vec![BranchEvent::Point { point, step, controller: Controller::new(policy) }];
    if c.under_resolved {
        events.push(BranchEvent::Stop { reason: StopReason::ResolutionLimit });
    }
    Ok(events)
}

/// Solves for the first point of a branch.
pub fn start_branch(params: &PhysParams, policy: &ContinuationPolicy) -> Result<Branch> {
    Branch::replay(params, policy, &start_events(params, policy)?)
}

fn lerp(last: &[f64], prev: &[f64], r: f64) -> Vec<f64> {
    last.iter().zip(prev).map(|(a, b)| a + r * (a - b)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Prediction and closure for the next step.
fn predict(branch: &Branch) -> Result<(SolutionVector, ClosureSpec, Option<f64>)> {
    let policy = &branch.policy;
    let ctl = &branch.controller;
    let last = &branch.last().solution;
    let n = last.resolution();
    let lf = last.flatten();
    let prev = (branch.points.len() >= 2).then(|| branch.points[branch.points.len() - 2].solution.resample(n).flatten());
    match ctl.mode {
        ClosureKind::Amplitude => {
            let dir = policy.direction();
            let a_last = last.amplitude();
            let mut a_next = a_last + dir * ctl.step;
            if let Some(t) = policy.target_amplitude {
                if (a_next - t) * dir > 0.0 {
                    a_next = t;
                }
            }
            let guess = match &prev {
                Some(p) => {
                    let a_prev = SolutionVector::unflatten(p)?.amplitude();
                    let da = a_last - a_prev;
                    let r = if da != 0.0 { (a_next - a_last) / da } else { 0.0 };
                    SolutionVector::unflatten(&lerp(&lf, p, r))?
                }
                None => last.clone(),
            };
            Ok((guess, ClosureSpec::amplitude(a_next), Some(a_next)))
        }
        ClosureKind::Distance => {
            let p = prev.ok_or_else(|| Error::Format("distance closure needs two points".into()))?;
            let d = norm(&lf.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>());
            let r = if d > 0.0 { ctl.step / d } else { 0.0 };
            let guess = SolutionVector::unflatten(&lerp(&lf, &p, r))?;
            Ok((guess, ClosureSpec::distance(lf, ctl.step)?, None))
        }
    }
}

fn reached_target(branch: &Branch) -> bool {
    match branch.policy.target_amplitude {
        Some(t) => (branch.last().diagnostics.amplitude - t) * branch.policy.direction() >= 0.0,
        None => false,
    }
}

/// Attempts one continuation step and returns the events it produced.
pub fn step_branch(branch: &Branch) -> Vec<BranchEvent> {
    let policy = &branch.policy;
    let mut ctl = branch.controller.clone();
    let n = branch.last().solution.resolution();
    let (guess, closure, target) = match predict(branch) {
        Ok(x) => x,
        Err(e) => {
            ctl.consecutive_failures = policy.max_consecutive_failures;
            let step = StepRecord {
                closure: ctl.mode,
                step: ctl.step,
                target_amplitude: None,
                resolution: n,
                outcome: StepOutcome::Failed { message: e.to_string(), inadmissible: None },
            };
            return vec![BranchEvent::Attempt { step, controller: ctl }, BranchEvent::Stop { reason: StopReason::StepUnderflow }];
        }
    };
    let mut record = StepRecord { closure: ctl.mode, step: ctl.step, target_amplitude: target, resolution: n, outcome: StepOutcome::Accepted { iterations: 0 } };
    let outcome = admissibility(&guess, &branch.params)
        .map_err(Error::Inadmissible)
        .and_then(|_| correct(&branch.params, policy, &closure, &guess));
    match outcome {
        Ok(c) => {
            let mut events = Vec::new();
            for &r in &c.refinements {
                events.push(BranchEvent::Attempt {
                    step: StepRecord { outcome: StepOutcome::Refined { resolution: r }, ..record.clone() },
                    controller: ctl.clone(),
                });
            }
            let easy = c.res.iterations <= policy.easy_iterations && c.refinements.is_empty();
            let used = ctl.step;
            ctl.consecutive_failures = 0;
            ctl.amplitude_failures = 0;
            if easy {
                ctl.easy_count += 1;
                if ctl.easy_count >= policy.easy_streak {
                    ctl.step = (2.0 * ctl.step).min(policy.max_step);
                    ctl.easy_count = 0;
                }
            } else {
                ctl.easy_count = 0;
            }
            record.outcome = StepOutcome::Accepted { iterations: c.res.iterations };
            let point = BranchPoint {
                diagnostics: diagnose(&branch.params, &c.res, c.unused, record.closure, used),
                solution: c.res.solution,
            };
            events.push(BranchEvent::Point { point, step: record, controller: ctl });
            if c.under_resolved {
                events.push(BranchEvent::Stop { reason: StopReason::ResolutionLimit });
            }
            events
        }
        Err(e) => {
            let inadmissible = match e {
                Error::Inadmissible(r) => Some(r),
                _ => None,
            };
            record.outcome = StepOutcome::Failed { message: e.to_string(), inadmissible };
            ctl.easy_count = 0;
            ctl.consecutive_failures += 1;
            ctl.step /= 2.0;
            if ctl.mode == ClosureKind::Amplitude {
                ctl.amplitude_failures += 1;
                if ctl.amplitude_failures >= policy.switch_after_failures && branch.points.len() >= 2 {
                    // Same relative step, measured in coefficient space.
                    let pts = &branch.points;
                    let last = &pts[pts.len() - 1];
                    let prev = pts[pts.len() - 2].solution.resample(n).flatten();
                    let d = norm(&last.solution.flatten().iter().zip(&prev).map(|(a, b)| a - b).collect::<Vec<_>>());
                    let da = (last.diagnostics.amplitude - pts[pts.len() - 2].diagnostics.amplitude).abs();
                    ctl.mode = ClosureKind::Distance;
                    ctl.step = if da > 0.0 { d * ctl.step / da } else { ctl.step };
                }
            }
            let mut events = vec![BranchEvent::Attempt { step: record, controller: ctl.clone() }];
            if ctl.step < policy.min_step || ctl.consecutive_failures >= policy.max_consecutive_failures {
                let reason = match inadmissible {
                    Some(r) => StopReason::Inadmissible(r),
                    None => StopReason::StepUnderflow,
                };
                events.push(BranchEvent::Stop { reason });
            }
            events
        }
    }
}

/// Extends the branch until a stop condition, reporting every event to `sink`.
pub fn extend_branch_with<F>(branch: &mut Branch, mut sink: F) -> Result<StopReason>
where
    F: FnMut(&BranchEvent) -> Result<()>,
{
    branch.stop = None;
    loop {
        let stop = if branch.points.len() >= branch.policy.max_points {
            Some(StopReason::MaxPoints)
        } else if reached_target(branch) {
            Some(StopReason::TargetReached)
        } else {
            None
        };
        if let Some(reason) = stop {
            let ev = BranchEvent::Stop { reason };
            sink(&ev)?;
            branch.apply(&ev);
            return Ok(reason);
        }
        for ev in step_branch(branch) {
            sink(&ev)?;
            branch.apply(&ev);
        }
        if let Some(reason) = branch.stop {
            return Ok(reason);
        }
    }
}

/// Extends the branch in memory until a stop condition.
pub fn extend_branch(branch: &mut Branch) -> StopReason {
    extend_branch_with(branch, |_| Ok(())).expect("in-memory sink cannot fail")
}

/// Computes the stagnation gap of the trailing `count` points that lack one.
pub fn attach_field_diagnostics(branch: &mut Branch, count: usize) {
    let params = branch.params;
    let from = branch.points.len().saturating_sub(count);
    branch.points[from..].par_iter_mut().for_each(|p| {
        if !p.diagnostics.field_checked {
            p.diagnostics.stagnation_gap = fields::stagnation_gap(&p.solution, &params).ok().flatten();
            p.diagnostics.field_checked = true;
        }
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    TypeICrest,
    TypeITrough,
    TypeIIUpper,
    TypeIILower,
    Undetermined,
    ResolutionLimit,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::TypeICrest => "TypeI_crest",
            Verdict::TypeITrough => "TypeI_trough",
            Verdict::TypeIIUpper => "TypeII_upper",
            Verdict::TypeIILower => "TypeII_lower",
            Verdict::Undetermined => "Undetermined",
            Verdict::ResolutionLimit => "ResolutionLimit",
        }
    }

    pub fn from_label(label: &str) -> Option<Verdict> {
        [
            Verdict::TypeICrest,
            Verdict::TypeITrough,
            Verdict::TypeIIUpper,
            Verdict::TypeIILower,
            Verdict::Undetermined,
            Verdict::ResolutionLimit,
        ]
        .into_iter()
        .find(|v| v.label() == label)
    }

    /// The verdict of the channel turned upside down.
    pub fn reflected(&self) -> Verdict {
        match self {
            Verdict::TypeICrest => Verdict::TypeITrough,
            Verdict::TypeITrough => Verdict::TypeICrest,
            Verdict::TypeIIUpper => Verdict::TypeIILower,
            Verdict::TypeIILower => Verdict::TypeIIUpper,
            v => *v,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub speed_floor: f64,
    pub wall_floor: f64,
    /// Points in the trailing window used for trends.
    pub window: usize,
    /// Minimum shrink factor over the window for a trend towards zero.
    pub shrink: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { speed_floor: 0.05, wall_floor: 0.02, window: 5, shrink: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub amplitude: Vec<f64>,
    pub min_interface_speed: Vec<f64>,
    pub lower_clearance: Vec<f64>,
    pub upper_clearance: Vec<f64>,
    pub decay_metric: Vec<f64>,
    pub stagnation_gap: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub verdict: Verdict,
    pub terminal_amplitude: f64,
    pub stop: Option<StopReason>,
    pub evidence: Evidence,
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Whether a positive diagnostic is heading to zero along the window and
/// has ended below `floor`.
fn trends_below(progress: &[f64], series: &[f64], floor: f64, shrink: f64) -> bool {
    let (first, last) = (series[0], series[series.len() - 1]);
    slope(progress, series) < 0.0 && last < floor && first >= shrink * last
}

/// Decides how the branch ended from its trailing diagnostics.
pub fn classify_termination(branch: &Branch, opts: &ClassifyOptions) -> Result<TerminationReport> {
    let diag: Vec<&PointDiagnostics> = branch.points.iter().map(|p| &p.diagnostics).collect();
    let diagnosed = diag.iter().rev().take_while(|d| d.field_checked).count();
    if diagnosed < 3 {
        return Err(Error::InsufficientEvidence(diagnosed));
    }
    let tail = &diag[diag.len() - diagnosed.min(opts.window.max(3))..];
    let series = |f: fn(&PointDiagnostics) -> f64| tail.iter().map(|d| f(d)).collect::<Vec<f64>>();
    let progress = series(|d| d.amplitude.abs());
    let speed = series(|d| d.min_interface_speed);
    let lower = series(|d| d.lower_clearance);
    let upper = series(|d| d.upper_clearance);

    let speed_down = trends_below(&progress, &speed, opts.speed_floor, opts.shrink);
    let upper_down = trends_below(&progress, &upper, opts.wall_floor, opts.shrink);
    let lower_down = trends_below(&progress, &lower, opts.wall_floor, opts.shrink);
    let last = tail[tail.len() - 1];
    let verdict = match (speed_down, upper_down || lower_down) {
        (true, false) => {
            if last.t_min_speed < PI / 2.0 {
                Verdict::TypeICrest
            } else {
                Verdict::TypeITrough
            }
        }
        (false, true) => {
            if upper_down && (!lower_down || last.upper_clearance <= last.lower_clearance) {
                Verdict::TypeIIUpper
            } else {
                Verdict::TypeIILower
            }
        }
        (true, true) => Verdict::Undetermined,
        (false, false) => {
            if branch.stop == Some(StopReason::ResolutionLimit) {
                Verdict::ResolutionLimit
            } else {
                Verdict::Undetermined
            }
        }
    };
    Ok(TerminationReport {
        verdict,
        terminal_amplitude: last.amplitude,
        stop: branch.stop,
        evidence: Evidence {
            amplitude: tail.iter().map(|d| d.amplitude).collect(),
            min_interface_speed: speed,
            lower_clearance: lower,
            upper_clearance: upper,
            decay_metric: series(|d| d.decay_metric),
            stagnation_gap: tail.iter().map(|d| d.stagnation_gap).collect(),
        },
    })
}

/// Starts, extends, diagnoses and classifies one branch.
pub fn trace_and_classify(params: &PhysParams, policy: &ContinuationPolicy, opts: &ClassifyOptions) -> Result<(Branch, TerminationReport)> {
    let mut branch = start_branch(params, policy)?;
    extend_branch(&mut branch);
    attach_field_diagnostics(&mut branch, opts.window.max(3));
    let report = classify_termination(&branch, opts)?;
    Ok((branch, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(rename = "H")]
    pub depth: f64,
    pub omega0: f64,
    pub verdict: Verdict,
    pub max_amplitude: f64,
    pub points: usize,
    pub stop: Option<StopReason>,
    /// Why the cell could not be classified normally.
    pub note: Option<String>,
}

impl SweepCell {
    /// Summarises a finished branch; an unclassifiable one becomes `Undetermined` with a note.
    pub fn from_branch(branch: &Branch, report: Result<TerminationReport>) -> SweepCell {
        let (verdict, note) = match report {
            Ok(r) => (r.verdict, None),
            Err(e) => (Verdict::Undetermined, Some(e.to_string())),
        };
        SweepCell {
            depth: branch.params.depth,
            omega0: branch.params.omega0,
            verdict,
            max_amplitude: branch.max_amplitude(),
            points: branch.points.len(),
            stop: branch.stop,
            note,
        }
    }
}

/// Runs one branch per `(H, ω₀)` pair; cells are independent.
///
/// `run_cell` is called for every cell and may, for instance, resume from
/// persisted state. Failures become `Undetermined` cells with a note.
pub fn sweep_with<F>(k: f64, depths: &[f64], omegas: &[f64], run_cell: F) -> Result<Vec<SweepCell>>
where
    F: Fn(&PhysParams) -> Result<SweepCell> + Sync,
{
    if depths.is_empty() || omegas.is_empty() {
        return Err(Error::Format("sweep grids must be nonempty".into()));
    }
    let cells: Vec<(f64, f64)> = depths.iter().flat_map(|&h| omegas.iter().map(move |&w| (h, w))).collect();
    Ok(cells
        .par_iter()
        .map(|&(h, w)| {
            let failed = |note: String| SweepCell {
                depth: h,
                omega0: w,
                verdict: Verdict::Undetermined,
                max_amplitude: 0.0,
                points: 0,
                stop: None,
                note: Some(note),
            };
            match PhysParams::new(k, h, w).and_then(|p| run_cell(&p)) {
                Ok(cell) => cell,
                Err(e) => failed(e.to_string()),
            }
        })
        .collect())
}

/// Traces and classifies one cell in memory.
pub fn sweep_cell(params: &PhysParams, policy: &ContinuationPolicy, opts: &ClassifyOptions) -> Result<SweepCell> {
    let mut branch = start_branch(params, policy)?;
    extend_branch(&mut branch);
    attach_field_diagnostics(&mut branch, opts.window.max(3));
    let report = classify_termination(&branch, opts);
    Ok(SweepCell::from_branch(&branch, report))
}

/// In-memory sweep with a shared policy.
pub fn sweep(k: f64, depths: &[f64], omegas: &[f64], policy: &ContinuationPolicy, opts: &ClassifyOptions) -> Result<Vec<SweepCell>> {
    sweep_with(k, depths, omegas, |p| sweep_cell(p, policy, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_policy() -> ContinuationPolicy {
        ContinuationPolicy { initial_resolution: 32, amplitude_step: 0.03, max_points: 5, ..Default::default() }
    }

    fn params() -> PhysParams {
        PhysParams::new(2.0, 0.5, 0.3).unwrap()
    }

    #[test]
    fn policy_validation() {
        assert!(ContinuationPolicy::default().validate().is_ok());
        let bad = ContinuationPolicy { initial_amplitude: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ContinuationPolicy { min_step: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ContinuationPolicy { target_amplitude: Some(-0.3), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_point_has_requested_amplitude() {
        let b = start_branch(&params(), &quick_policy()).unwrap();
        assert_eq!(b.points.len(), 1);
        assert!((b.last().diagnostics.amplitude - 0.01).abs() < 1e-12);
        assert!(b.last().diagnostics.final_residual <= 1e-10);
        assert!(b.check().is_ok());
    }

    #[test]
    fn stops_exactly_at_target() {
        let policy = ContinuationPolicy { target_amplitude: Some(0.07), max_points: 50, ..quick_policy() };
        let mut b = start_branch(&params(), &policy).unwrap();
        assert_eq!(extend_branch(&mut b), StopReason::TargetReached);
        assert!((b.last().diagnostics.amplitude - 0.07).abs() < 1e-12);
        let amps: Vec<f64> = b.points.iter().map(|p| p.diagnostics.amplitude).collect();
        assert!(amps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn negative_direction() {
        let policy = ContinuationPolicy { initial_amplitude: -0.01, max_points: 3, ..quick_policy() };
        let mut b = start_branch(&params(), &policy).unwrap();
        extend_branch(&mut b);
        assert!(b.points.iter().all(|p| p.diagnostics.amplitude < 0.0));
        assert!(b.last().diagnostics.amplitude < -0.05);
    }

    #[test]
    fn replaying_events_resumes_identically() {
        let p = params();
        let policy = quick_policy();
        let mut full = start_branch(&p, &policy).unwrap();
        let mut events = Vec::new();
        extend_branch_with(&mut full, |e| {
            events.push(e.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(full.stop, Some(StopReason::MaxPoints));

        // Cut the event stream after the second accepted point and resume.
        let mut resumed = start_branch(&p, &policy).unwrap();
        let mut seen = 0;
        for e in &events {
            resumed.apply(e);
            if matches!(e, BranchEvent::Point { .. }) {
                seen += 1;
                if seen == 2 {
                    break;
                }
            }
        }
        extend_branch(&mut resumed);
        assert_eq!(resumed, full);
    }

    fn synthetic(speed: &[f64], upper: &[f64], t_min: f64, checked: bool) -> Branch {
        let p = params();
        let sol = crate::model::shear_solution(&p, 0.2, 8);
        let points = speed
            .iter()
            .zip(upper)
            .enumerate()
            .map(|(i, (&s, &u))| BranchPoint {
                solution: sol.clone(),
                diagnostics: PointDiagnostics {
                    amplitude: 0.1 + 0.01 * i as f64,
                    arclength: 1.0,
                    resolution: 8,
                    min_interface_speed: s,
                    t_min_speed: t_min,
                    lower_clearance: 0.3,
                    upper_clearance: u,
                    decay_metric: 1e-12,
                    iterations: 3,
                    jacobian_builds: 1,
                    final_residual: 1e-12,
                    unused_residual: 1e-12,
                    closure: ClosureKind::Amplitude,
                    step: 0.01,
                    field_checked: checked,
                    stagnation_gap: None,
                },
            })
            .collect();
        Branch {
            params: p,
            policy: ContinuationPolicy::default(),
            points,
            step_log: Vec::new(),
            controller: Controller::new(&ContinuationPolicy::default()),
            stop: Some(StopReason::StepUnderflow),
        }
    }

    #[test]
    fn classification_rules() {
        let o = ClassifyOptions::default();
        let falling = [0.2, 0.12, 0.07, 0.03, 0.01];
        let flat = [0.2, 0.2, 0.19, 0.19, 0.19];
        let v = |b: &Branch| classify_termination(b, &o).unwrap().verdict;
        assert_eq!(v(&synthetic(&falling, &flat, 0.0, true)), Verdict::TypeICrest);
        assert_eq!(v(&synthetic(&falling, &flat, PI, true)), Verdict::TypeITrough);
        assert_eq!(v(&synthetic(&flat, &falling, 0.0, true)), Verdict::TypeIIUpper);
        assert_eq!(v(&synthetic(&falling, &falling, 0.0, true)), Verdict::Undetermined);
        assert_eq!(v(&synthetic(&flat, &flat, 0.0, true)), Verdict::Undetermined);
        let mut b = synthetic(&flat, &flat, 0.0, true);
        b.stop = Some(StopReason::ResolutionLimit);
        assert_eq!(v(&b), Verdict::ResolutionLimit);
        // A decrease that has not yet reached the floor is not a trend.
        assert_eq!(v(&synthetic(&[0.9, 0.6, 0.4, 0.3, 0.2], &flat, 0.0, true)), Verdict::Undetermined);
    }

    #[test]
    fn needs_three_diagnosed_points() {
        let o = ClassifyOptions::default();
        let b = synthetic(&[0.2, 0.1], &[0.3, 0.3], 0.0, true);
        assert!(matches!(classify_termination(&b, &o), Err(Error::InsufficientEvidence(2))));
        let b = synthetic(&[0.2, 0.1, 0.05, 0.01], &[0.3; 4], 0.0, false);
        assert!(matches!(classify_termination(&b, &o), Err(Error::InsufficientEvidence(0))));
    }

    #[test]
    fn verdict_reflection_is_involution() {
        for v in [
            Verdict::TypeICrest,
            Verdict::TypeITrough,
            Verdict::TypeIIUpper,
            Verdict::TypeIILower,
            Verdict::Undetermined,
            Verdict::ResolutionLimit,
        ] {
            assert_eq!(v.reflected().reflected(), v);
        }
        assert_eq!(Verdict::TypeICrest.reflected(), Verdict::TypeITrough);
        assert_eq!(Verdict::TypeIIUpper.to_string(), "TypeII_upper");
    }

    #[test]
    fn empty_sweep_is_rejected() {
        let r = sweep_with(2.0, &[], &[0.0], |_| Err(Error::Format("unused".into())));
        assert!(r.is_err());
        let cells = sweep_with(2.0, &[0.5, 1.5], &[0.0], |_| Err(Error::Format("boom".into()))).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.verdict == Verdict::Undetermined && c.note.is_some()));
    }
}
