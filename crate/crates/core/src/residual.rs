//! The discrete system `G(φ̂) = 0` of size `4N − 1`.
//!
//! Rows, in order: real part of the lower-layer Cauchy identity at midpoints
//! `2..N`, the same for the upper layer, the differentiated kinematic
//! condition at midpoints `2..N`, constant parametrisation speed at all `N`
//! midpoints, the mean-depth constraint, and the closure equation. The three
//! point equations are also evaluated at the first midpoint, where they are
//! not enforced, as a consistency check.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InadmissibleReason, Result};
use crate::model::PhysParams;
use crate::state::{CollocationGrid, SolutionVector, Traces};

const POLE_TOL: f64 = 1e-13;

/// Form of the lower-layer velocity in the differentiated kinematic condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KinematicGauge {
    /// `X′ v + Y′ (u + ω₀(Y − H)) = 0`, consistent with `f₁ = f₀ + (Y − H)`.
    Centred,
    /// `X′ v + Y′ (u + ω₀Y) = 0`.
    Printed,
}

impl Default for KinematicGauge {
    #[cfg(not(feature = "printed-gauge"))]
    fn default() -> Self {
        KinematicGauge::Centred
    }

    #[cfg(feature = "printed-gauge")]
    fn default() -> Self {
        KinematicGauge::Printed
    }
}

/// The equation that squares the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ClosureSpec {
    /// `Y(0) − Y(π) = A`.
    Amplitude { target: f64 },
    /// `Σ (φ̂ₙ − θ̂ₙ)² = d²`.
    Distance { anchor: Vec<f64>, distance: f64 },
}

impl ClosureSpec {
    pub fn amplitude(target: f64) -> ClosureSpec {
        ClosureSpec::Amplitude { target }
    }

    pub fn distance(anchor: Vec<f64>, distance: f64) -> Result<ClosureSpec> {
        if !(distance > 0.0) {
            return Err(Error::Format(format!("distance closure needs d > 0, got {distance}")));
        }
        Ok(ClosureSpec::Distance { anchor, distance })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub vector: Vec<f64>,
    pub max_abs: f64,
    /// Lower identity, upper identity and kinematic residual at the first midpoint.
    pub unused_point_residual: [f64; 3],
}

impl ResidualReport {
    fn new(vector: Vec<f64>, unused: [f64; 3]) -> ResidualReport {
        let max_abs = inf_norm(&vector);
        ResidualReport { vector, max_abs, unused_point_residual: unused }
    }

    pub fn max_unused(&self) -> f64 {
        self.unused_point_residual.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// `g` in terms of `P = e^{ikz}` and `Q = e^{ikw}`:
/// `g = Q(P² − 1) / ((1 − PQ)(Q − P))`.
#[inline(always)]
pub(crate) fn g_from_exp(p: Complex64, p2m1: Complex64, q: Complex64) -> Result<Complex64> {
    let a = Complex64::new(1.0, 0.0) - p * q;
    let b = q - p;
    let den = a * b;
    if den.norm_sqr() < 1e-24 {
        let scale = POLE_TOL * (1.0 + p.norm_sqr());
        if a.norm() < scale || b.norm() < scale {
            return Err(Error::PoleProximity);
        }
    }
    Ok(q * p2m1 / den)
}

/// The periodic Cauchy-type kernel
/// `g(z,w) = 1/((e^{−ikz}−e^{ikw})(e^{−ikz}−e^{−ikw})) − 1/((e^{ikz}−e^{ikw})(e^{ikz}−e^{−ikw}))`.
pub fn kernel_g(z: Complex64, w: Complex64, k: f64) -> Result<Complex64> {
    let i = Complex64::i();
    let p = (i * k * z).exp();
    let q = (i * k * w).exp();
    g_from_exp(p, p * p - 1.0, q)
}

/// Kernel values times quadrature weight and `Z′` (or its conjugate), for
/// every (midpoint, mesh point) pair. Row-major in the midpoint index.
pub(crate) struct KernelCache {
    m: usize,
    lower_a: Vec<Complex64>,
    lower_b: Vec<Complex64>,
    upper_a: Vec<Complex64>,
    upper_b: Vec<Complex64>,
}

impl KernelCache {
    pub(crate) fn build(mesh: &Traces, mid: &Traces, weights: &[f64], k: f64) -> Result<KernelCache> {
        let i = Complex64::i();
        let m = mesh.len();
        let nmid = mid.len();
        // Per mesh point exponentials for z = Z, −conj Z, i − Z, i + conj Z.
        let mut pl = Vec::with_capacity(m);
        let mut pu = Vec::with_capacity(m);
        for idx in 0..m {
            let z = mesh.z(idx);
            let p = (i * k * z).exp();
            let pc = p.conj();
            let q1 = (i * k * (i - z)).exp();
            let q2 = (i * k * (i + z.conj())).exp();
            let wz = mesh.zp(idx) * weights[idx];
            pl.push((p, p * p - 1.0, pc, pc * pc - 1.0, wz));
            pu.push((q1, q1 * q1 - 1.0, q2, q2 * q2 - 1.0));
        }
        let len = m * nmid;
        let mut cache = KernelCache {
            m,
            lower_a: Vec::with_capacity(len),
            lower_b: Vec::with_capacity(len),
            upper_a: Vec::with_capacity(len),
            upper_b: Vec::with_capacity(len),
        };
        for j in 0..nmid {
            let w = mid.z(j);
            let ql = (i * k * w).exp();
            let qu = (i * k * (w - i)).exp();
            for idx in 0..m {
                let (p, p2, pc, pc2, wz) = pl[idx];
                let (p1, p12, p2u, p22u) = pu[idx];
                let wzc = wz.conj();
                cache.lower_a.push(g_from_exp(p, p2, ql)? * wz);
                cache.lower_b.push(g_from_exp(pc, pc2, ql)? * wzc);
                cache.upper_a.push(g_from_exp(p1, p12, qu)? * wz);
                cache.upper_b.push(g_from_exp(p2u, p22u, qu)? * wzc);
            }
        }
        Ok(cache)
    }

    /// Lower and upper identity defects at midpoint `j`.
    #[inline]
    fn identity_defects(&self, j: usize, mesh: &Traces, mid: &Traces, k: f64, depth: f64) -> (f64, f64) {
        let off = j * self.m;
        let la = &self.lower_a[off..off + self.m];
        let lb = &self.lower_b[off..off + self.m];
        let ua = &self.upper_a[off..off + self.m];
        let ub = &self.upper_b[off..off + self.m];
        let mut lower = 0.0;
        let mut upper = 0.0;
        for idx in 0..self.m {
            let (u, v) = (mesh.u[idx], mesh.v[idx]);
            // Re[F a + conj(F) b] = u Re(a + b) − v Im(a − b)
            lower += u * (la[idx].re + lb[idx].re) - v * (la[idx].im - lb[idx].im);
            let s = u + mesh.y[idx] - depth;
            upper += s * (ua[idx].re + ub[idx].re) - v * (ua[idx].im - ub[idx].im);
        }
        let c = k / PI;
        (mid.u[j] + c * lower, mid.u[j] + mid.y[j] - depth + c * upper)
    }
}

fn kinematic(mid: &Traces, j: usize, params: &PhysParams, gauge: KinematicGauge) -> f64 {
    let shift = match gauge {
        KinematicGauge::Centred => params.omega0 * (mid.y[j] - params.depth),
        KinematicGauge::Printed => params.omega0 * mid.y[j],
    };
    mid.xp[j] * mid.v[j] + mid.yp[j] * (mid.u[j] + shift)
}

fn speed(mid: &Traces, j: usize, arclength: f64) -> f64 {
    let l = arclength / PI;
    mid.xp[j] * mid.xp[j] + mid.yp[j] * mid.yp[j] - l * l
}

fn depth_defect(mesh: &Traces, weights: &[f64], params: &PhysParams) -> f64 {
    let s: f64 = (0..mesh.len()).map(|i| weights[i] * mesh.y[i] * mesh.xp[i]).sum();
    s - PI * params.depth / params.k
}

pub fn closure_residual(sol: &SolutionVector, closure: &ClosureSpec) -> Result<f64> {
    match closure {
        ClosureSpec::Amplitude { target } => Ok(sol.amplitude() - target),
        ClosureSpec::Distance { anchor, distance } => {
            if anchor.len() != sol.dim() {
                return Err(Error::Format(format!(
                    "distance anchor has length {}, expected {}",
                    anchor.len(),
                    sol.dim()
                )));
            }
            let flat = sol.flatten();
            let s: f64 = flat.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(s - distance * distance)
        }
    }
}

/// Everything needed to evaluate the system for one problem instance.
#[derive(Clone, Debug)]
pub struct System<'a> {
    pub params: PhysParams,
    pub grid: &'a CollocationGrid,
    pub closure: ClosureSpec,
    pub gauge: KinematicGauge,
}

/// Residual evaluation state that can be cheaply perturbed one coefficient
/// at a time.
pub(crate) struct Evaluation {
    pub(crate) sol: SolutionVector,
    pub(crate) mesh: Traces,
    pub(crate) mid: Traces,
    pub(crate) cache: KernelCache,
}

impl<'a> System<'a> {
    pub fn new(params: PhysParams, grid: &'a CollocationGrid, closure: ClosureSpec) -> System<'a> {
        System { params, grid, closure, gauge: KinematicGauge::default() }
    }

    pub fn with_gauge(mut self, gauge: KinematicGauge) -> System<'a> {
        self.gauge = gauge;
        self
    }

    pub fn dim(&self) -> usize {
        4 * self.grid.resolution() - 1
    }

    fn check_resolution(&self, sol: &SolutionVector) -> Result<()> {
        if sol.resolution() != self.grid.resolution() {
            return Err(Error::Format(format!(
                "solution resolution {} does not match grid resolution {}",
                sol.resolution(),
                self.grid.resolution()
            )));
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, sol: &SolutionVector) -> Result<Evaluation> {
        self.check_resolution(sol)?;
        let mesh = self.grid.mesh_traces(sol, self.params.k);
        let mid = self.grid.midpoint_traces(sol, self.params.k);
        let cache = KernelCache::build(&mesh, &mid, self.grid.weights(), self.params.k)?;
        Ok(Evaluation { sol: sol.clone(), mesh, mid, cache })
    }

    /// Fills `out` (length `4N − 1`) and returns the first-midpoint residuals.
    pub(crate) fn rows(&self, ev: &Evaluation, out: &mut [f64]) -> Result<[f64; 3]> {
        self.rows_from(&ev.sol, &ev.mesh, &ev.mid, &ev.cache, out)
    }

    pub(crate) fn rows_from(
        &self,
        sol: &SolutionVector,
        mesh: &Traces,
        mid: &Traces,
        cache: &KernelCache,
        out: &mut [f64],
    ) -> Result<[f64; 3]> {
        let n = self.grid.resolution();
        debug_assert_eq!(out.len(), 4 * n - 1);
        let k = self.params.k;
        let h = self.params.depth;
        let mut unused = [0.0; 3];
        for j in 0..n {
            let (lo, up) = cache.identity_defects(j, mesh, mid, k, h);
            let kin = kinematic(mid, j, &self.params, self.gauge);
            if j == 0 {
                unused = [lo, up, kin];
            } else {
                out[j - 1] = lo;
                out[n - 1 + j - 1] = up;
                out[2 * n - 2 + j - 1] = kin;
            }
            out[3 * n - 3 + j] = speed(mid, j, sol.arclength);
        }
        out[4 * n - 3] = depth_defect(mesh, self.grid.weights(), &self.params);
        out[4 * n - 2] = closure_residual(sol, &self.closure)?;
        Ok(unused)
    }

    /// Residual without the admissibility guard.
    pub fn residual_unchecked(&self, sol: &SolutionVector) -> Result<ResidualReport> {
        let ev = self.prepare(sol)?;
        let mut out = vec![0.0; self.dim()];
        let unused = self.rows(&ev, &mut out)?;
        Ok(ResidualReport::new(out, unused))
    }

    /// Residual of an admissible state.
    pub fn residual(&self, sol: &SolutionVector) -> Result<ResidualReport> {
        admissibility(sol, &self.params).map_err(Error::Inadmissible)?;
        self.residual_unchecked(sol)
    }
}

/// Stacks all rows for `sol` with the default kinematic gauge.
pub fn assemble_residual(
    sol: &SolutionVector,
    params: &PhysParams,
    grid: &CollocationGrid,
    closure: &ClosureSpec,
) -> Result<ResidualReport> {
    System::new(*params, grid, closure.clone()).residual(sol)
}

fn single_point(sol: &SolutionVector, params: &PhysParams, grid: &CollocationGrid, j: usize) -> Result<(f64, f64)> {
    let n = grid.resolution();
    if j == 0 || j > n {
        return Err(Error::Format(format!("midpoint index {j} outside 1..={n}")));
    }
    let mesh = grid.mesh_traces(sol, params.k);
    let t = grid.midpoints()[j - 1];
    let e = sol.evaluate(params.k, t);
    let mid = Traces {
        t: vec![t],
        x: vec![e.x],
        y: vec![e.y],
        xp: vec![e.xp],
        yp: vec![e.yp],
        u: vec![e.u],
        v: vec![e.v],
    };
    let cache = KernelCache::build(&mesh, &mid, grid.weights(), params.k)?;
    Ok(cache.identity_defects(0, &mesh, &mid, params.k, params.depth))
}

/// Real part of the lower-layer identity defect at midpoint `j` (1-based).
pub fn lower_identity_residual(
    sol: &SolutionVector,
    params: &PhysParams,
    grid: &CollocationGrid,
    j: usize,
) -> Result<f64> {
    single_point(sol, params, grid, j).map(|r| r.0)
}

/// Real part of the upper-layer identity defect at midpoint `j` (1-based).
pub fn upper_identity_residual(
    sol: &SolutionVector,
    params: &PhysParams,
    grid: &CollocationGrid,
    j: usize,
) -> Result<f64> {
    single_point(sol, params, grid, j).map(|r| r.1)
}

/// Differentiated kinematic condition at midpoint `j` (1-based).
pub fn kinematic_residual(sol: &SolutionVector, params: &PhysParams, grid: &CollocationGrid, j: usize) -> f64 {
    let tr = grid.midpoint_traces(sol, params.k);
    kinematic(&tr, j - 1, params, KinematicGauge::default())
}

/// Constant-speed condition at midpoint `j` (1-based).
pub fn speed_residual(sol: &SolutionVector, k: f64, grid: &CollocationGrid, j: usize) -> f64 {
    let tr = grid.midpoint_traces(sol, k);
    speed(&tr, j - 1, sol.arclength)
}

pub fn depth_residual(sol: &SolutionVector, params: &PhysParams, grid: &CollocationGrid) -> f64 {
    let tr = grid.mesh_traces(sol, params.k);
    depth_defect(&tr, grid.weights(), params)
}

/// Margins measured by [`admissibility`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityMargins {
    /// `min Y`.
    pub lower_clearance: f64,
    /// `1 − max Y`.
    pub upper_clearance: f64,
    /// `min |Z′|`.
    pub min_param_speed: f64,
    /// Minimum fluid speed on the interface.
    pub min_interface_speed: f64,
    /// Parameter value where the interface speed is smallest.
    pub t_min_speed: f64,
}

fn sample_count(sol: &SolutionVector) -> usize {
    8 * sol.resolution() + 1
}

pub fn admissibility_margins(sol: &SolutionVector, params: &PhysParams) -> AdmissibilityMargins {
    let m = sample_count(sol);
    let mut out = AdmissibilityMargins {
        lower_clearance: f64::INFINITY,
        upper_clearance: f64::INFINITY,
        min_param_speed: f64::INFINITY,
        min_interface_speed: f64::INFINITY,
        t_min_speed: 0.0,
    };
    for i in 0..m {
        let t = PI * i as f64 / (m - 1) as f64;
        let e = sol.evaluate(params.k, t);
        out.lower_clearance = out.lower_clearance.min(e.y);
        out.upper_clearance = out.upper_clearance.min(1.0 - e.y);
        out.min_param_speed = out.min_param_speed.min(e.xp.hypot(e.yp));
        let s = (e.u + params.omega0 * (e.y - params.depth)).hypot(e.v);
        if s < out.min_interface_speed {
            out.min_interface_speed = s;
            out.t_min_speed = t;
        }
    }
    out
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Discrete version of the non-vanishing divided difference condition: the
/// interface polyline over one period, together with its neighbouring
/// periods, has no crossing segments.
fn self_intersects(sol: &SolutionVector, k: f64) -> bool {
    let m = sample_count(sol);
    let half: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let e = sol.evaluate(k, PI * i as f64 / (m - 1) as f64);
            (e.x, e.y)
        })
        .collect();
    let mut pts: Vec<(f64, f64)> = half.iter().rev().map(|&(x, y)| (-x, y)).collect();
    pts.extend_from_slice(&half[1..]);
    if pts.windows(2).all(|w| w[1].0 > w[0].0) {
        return false;
    }
    let period = 2.0 * PI / k;
    let segs: Vec<((f64, f64), (f64, f64))> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let ns = segs.len();
    for shift in [0.0, period, -period] {
        for a in 0..ns {
            for b in 0..ns {
                if shift == 0.0 && (b <= a + 1) {
                    continue;
                }
                let (c, d) = segs[b];
                let c = (c.0 + shift, c.1);
                let d = (d.0 + shift, d.1);
                if segments_cross(segs[a].0, segs[a].1, c, d) {
                    return true;
                }
            }
        }
    }
    false
}

/// Checks, in order, finiteness, wall clearance, regular parametrisation,
/// absence of self-intersection and absence of interface stagnation.
pub fn admissibility(sol: &SolutionVector, params: &PhysParams) -> std::result::Result<(), InadmissibleReason> {
    if !sol.is_finite() || !(sol.arclength > 0.0) {
        return Err(InadmissibleReason::NonFinite);
    }
    let m = admissibility_margins(sol, params);
    if !(m.lower_clearance > 0.0 && m.upper_clearance > 0.0) {
        return Err(InadmissibleReason::Wall);
    }
    if !(m.min_param_speed > 0.0) {
        return Err(InadmissibleReason::DegenerateParametrisation);
    }
    if self_intersects(sol, params.k) {
        return Err(InadmissibleReason::SelfIntersection);
    }
    if !(m.min_interface_speed > 0.0) {
        return Err(InadmissibleReason::InterfaceStagnation);
    }
    Ok(())
}
