//! The flow away from the interface.
//!
//! In each layer the modified velocity is holomorphic and is recovered from
//! its interface trace by the interior form of the periodic Cauchy identity,
//! whose coefficient is twice the on-interface one. The trapezium rule is
//! refined according to the distance from the interface; closer than the
//! finest rule can resolve, a Taylor expansion about the nearest interface
//! point is used instead, built from derivatives of the Fourier trace.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhysParams;
use crate::residual::g_from_exp;
use crate::state::SolutionVector;

/// Points closer than this to the interface are rejected by [`velocity_at`].
pub const ON_INTERFACE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Lower,
    Upper,
}

impl Layer {
    pub fn vorticity(&self, params: &PhysParams) -> f64 {
        match self {
            Layer::Lower => params.omega0,
            Layer::Upper => params.omega1(),
        }
    }
}

/// Trapezium rule on `[0, π]` with `m` intervals, with everything the
/// interior sums need per node.
struct Rule {
    /// `e^{ikZ}`, `e^{ik(i−Z)}` and `e^{ik(i+conj Z)}` with their `p² − 1`.
    p: Vec<[Complex64; 6]>,
    /// Weight times `Z′`.
    wz: Vec<Complex64>,
    f_lower: Vec<Complex64>,
    f_upper: Vec<Complex64>,
}

impl Rule {
    fn build(sol: &SolutionVector, params: &PhysParams, m: usize) -> Rule {
        let i = Complex64::i();
        let k = params.k;
        let mut rule = Rule { p: Vec::with_capacity(m + 1), wz: Vec::with_capacity(m + 1), f_lower: Vec::new(), f_upper: Vec::new() };
        for idx in 0..=m {
            let t = PI * idx as f64 / m as f64;
            let s = sol.evaluate(k, t);
            let z = s.z();
            let p = (i * k * z).exp();
            let pu = (i * k * (i - z)).exp();
            let pv = (i * k * (i + z.conj())).exp();
            rule.p.push([p, p * p - 1.0, pu, pu * pu - 1.0, pv, pv * pv - 1.0]);
            let w = if idx == 0 || idx == m { 0.5 } else { 1.0 } * PI / m as f64;
            rule.wz.push(s.zp() * w);
            rule.f_lower.push(s.f());
            rule.f_upper.push(s.f() + (s.y - params.depth));
        }
        rule
    }

    fn eval(&self, layer: Layer, w: Complex64, k: f64) -> Result<Complex64> {
        let i = Complex64::i();
        let mut acc = Complex64::new(0.0, 0.0);
        match layer {
            Layer::Lower => {
                let q = (i * k * w).exp();
                for ((p, wz), f) in self.p.iter().zip(&self.wz).zip(&self.f_lower) {
                    let pc = p[0].conj();
                    let a = g_from_exp(p[0], p[1], q)?;
                    let b = g_from_exp(pc, pc * pc - 1.0, q)?;
                    acc += f * a * wz + f.conj() * b * wz.conj();
                }
            }
            Layer::Upper => {
                let q = (i * k * (w - i)).exp();
                for ((p, wz), f) in self.p.iter().zip(&self.wz).zip(&self.f_upper) {
                    let a = g_from_exp(p[2], p[3], q)?;
                    let b = g_from_exp(p[4], p[5], q)?;
                    acc += f * a * wz + f.conj() * b * wz.conj();
                }
            }
        }
        Ok(-acc * (k / (2.0 * PI)))
    }
}

/// Derivatives of order 0..=4 of the curve and of both layer traces.
struct Jet {
    z: [Complex64; 5],
    lower: [Complex64; 5],
    upper: [Complex64; 5],
}

fn jet(sol: &SolutionVector, params: &PhysParams, t: f64) -> Jet {
    let k = params.k;
    let zero = Complex64::new(0.0, 0.0);
    let mut z = [zero; 5];
    let mut f = [zero; 5];
    z[0] = Complex64::new(t / k, 0.0);
    z[1] = Complex64::new(1.0 / k, 0.0);
    for n in 0..sol.resolution() {
        let nf = n as f64;
        let mut pw = 1.0;
        for (d, (zd, fd)) in z.iter_mut().zip(f.iter_mut()).enumerate() {
            let phase = nf * t + d as f64 * PI / 2.0;
            let (s, c) = phase.sin_cos();
            zd.im += pw * sol.y_hat[n] * c;
            fd.re += pw * sol.u_hat[n] * c;
            if n > 0 {
                zd.re += pw * sol.x_hat[n - 1] * s;
                fd.im += pw * sol.v_hat[n - 1] * s;
            }
            pw *= nf;
        }
    }
    let mut upper = f;
    for d in 0..5 {
        upper[d] += z[d].im;
    }
    upper[0] -= params.depth;
    Jet { z, lower: f, upper }
}

/// Complex derivatives of `f` at `Z(t)` from the derivatives of `f(Z(t))`.
fn chain_inverse(z: &[Complex64; 5], g: &[Complex64; 5]) -> [Complex64; 5] {
    let (z1, z2, z3, z4) = (z[1], z[2], z[3], z[4]);
    let f1 = g[1] / z1;
    let f2 = (g[2] - f1 * z2) / (z1 * z1);
    let f3 = (g[3] - f2 * z1 * z2 * 3.0 - f1 * z3) / (z1 * z1 * z1);
    let f4 = (g[4] - f3 * z1 * z1 * z2 * 6.0 - f2 * (z2 * z2 * 3.0 + z1 * z3 * 4.0) - f1 * z4) / (z1 * z1 * z1 * z1);
    [g[0], f1, f2, f3, f4]
}

/// Reusable evaluator of the flow of one solution.
pub struct FieldEvaluator {
    sol: SolutionVector,
    params: PhysParams,
    /// Rules with `N·2^j` intervals, built on demand.
    rules: Vec<OnceLock<Rule>>,
    /// Dense samples `(t, x, y)` over `t ∈ [−π, π]`.
    curve: Vec<(f64, f64, f64)>,
    /// Distance below which the finest rule is not trusted.
    taylor_radius: f64,
}

impl FieldEvaluator {
    pub fn new(sol: &SolutionVector, params: &PhysParams) -> Result<FieldEvaluator> {
        params.validate()?;
        if !sol.is_finite() || !(sol.arclength > 0.0) {
            return Err(Error::Inadmissible(crate::error::InadmissibleReason::NonFinite));
        }
        let n = sol.resolution();
        let finest = (64 * n).max(32768);
        let mut levels = 0;
        while n << levels < finest {
            levels += 1;
        }
        let samples = 32 * n;
        let curve = (0..=samples)
            .map(|i| {
                let t = -PI + 2.0 * PI * i as f64 / samples as f64;
                let s = sol.evaluate(params.k, t);
                (t, s.x, s.y)
            })
            .collect();
        Ok(FieldEvaluator {
            sol: sol.clone(),
            params: *params,
            rules: (0..=levels).map(|_| OnceLock::new()).collect(),
            curve,
            taylor_radius: 5.5 * sol.arclength / (n << levels) as f64,
        })
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn solution(&self) -> &SolutionVector {
        &self.sol
    }

    pub fn wavelength(&self) -> f64 {
        self.params.wavelength()
    }

    fn rule(&self, level: usize) -> &Rule {
        self.rules[level].get_or_init(|| Rule::build(&self.sol, &self.params, self.sol.resolution() << level))
    }

    /// Heights where the vertical line through `x` meets the interface, ascending,
    /// with the curve parameter of each crossing.
    pub fn crossings(&self, x: f64) -> Vec<(f64, f64)> {
        let lambda = self.wavelength();
        let k = self.params.k;
        let xr = x - lambda * (x / lambda).round();
        let mut out: Vec<(f64, f64)> = Vec::new();
        for shift in [-lambda, 0.0, lambda] {
            let target = xr + shift;
            for w in self.curve.windows(2) {
                let (t0, x0, _) = w[0];
                let (t1, x1, _) = w[1];
                let (a, b) = (x0 - target, x1 - target);
                if a == 0.0 {
                    let y = self.sol.evaluate(k, t0).y;
                    if !out.iter().any(|&(_, yy)| (yy - y).abs() < 1e-12) {
                        out.push((t0, y));
                    }
                } else if a * b < 0.0 {
                    // Bisection then Newton on X(t) = target.
                    let (mut lo, mut hi, mut flo) = (t0, t1, a);
                    for _ in 0..30 {
                        let mid = 0.5 * (lo + hi);
                        let fm = self.sol.evaluate(k, mid).x - target;
                        if fm == 0.0 {
                            lo = mid;
                            hi = mid;
                            break;
                        }
                        if (fm < 0.0) == (flo < 0.0) {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    let mut t = 0.5 * (lo + hi);
                    for _ in 0..4 {
                        let s = self.sol.evaluate(k, t);
                        if s.xp == 0.0 {
                            break;
                        }
                        let dt = (s.x - target) / s.xp;
                        if dt.abs() > (t1 - t0) {
                            break;
                        }
                        t -= dt;
                    }
                    let y = self.sol.evaluate(k, t).y;
                    if !out.iter().any(|&(_, yy)| (yy - y).abs() < 1e-12) {
                        out.push((t, y));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }

    /// Layer containing `(x, y)`, by counting interface crossings above it.
    pub fn layer_of(&self, x: f64, y: f64) -> Layer {
        let above = self.crossings(x).iter().filter(|c| c.1 > y).count();
        if above % 2 == 1 {
            Layer::Lower
        } else {
            Layer::Upper
        }
    }

    /// Nearest interface point to `(x, y)`: its curve parameter, the
    /// period shift that brings it next to the point, and the distance.
    pub fn nearest(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let lambda = self.wavelength();
        let k = self.params.k;
        let shift0 = lambda * (x / lambda).round();
        let mut best = (0.0, 0.0, f64::INFINITY);
        for s in [-lambda, 0.0, lambda] {
            let shift = shift0 + s;
            for &(t, cx, cy) in &self.curve {
                let d = (cx + shift - x).hypot(cy - y);
                if d < best.2 {
                    best = (t, shift, d);
                }
            }
        }
        // Newton on the derivative of the squared distance.
        let (mut t, shift, _) = best;
        let dt_max = 4.0 * PI / (self.curve.len() - 1) as f64;
        let t_start = t;
        for _ in 0..8 {
            let j = jet(&self.sol, &self.params, t);
            let w = Complex64::new(x - shift, y);
            let d = j.z[0] - w;
            let g1 = (d * j.z[1].conj()).re;
            let g2 = j.z[1].norm_sqr() + (d * j.z[2].conj()).re;
            if !(g2 > 0.0) {
                break;
            }
            let step = g1 / g2;
            t = (t - step).clamp(t_start - dt_max, t_start + dt_max);
            if step.abs() < 1e-15 {
                break;
            }
        }
        let s = self.sol.evaluate(k, t);
        (t, shift, (s.x + shift - x).hypot(s.y - y))
    }

    fn check_domain(&self, x: f64, y: f64) -> Result<()> {
        if !(x.is_finite() && (0.0..=1.0).contains(&y)) {
            return Err(Error::OutOfDomain);
        }
        Ok(())
    }

    /// Holomorphic function of `layer` at `(x, y)`, with the layer taken on trust.
    pub fn holomorphic(&self, layer: Layer, x: f64, y: f64) -> Result<Complex64> {
        let (t, shift, d) = self.nearest(x, y);
        let k = self.params.k;
        if d < self.taylor_radius {
            let j = jet(&self.sol, &self.params, t);
            let g = match layer {
                Layer::Lower => &j.lower,
                Layer::Upper => &j.upper,
            };
            let f = chain_inverse(&j.z, g);
            let h = Complex64::new(x - shift, y) - j.z[0];
            let mut acc = f[4] / 24.0;
            acc = acc * h + f[3] / 6.0;
            acc = acc * h + f[2] / 2.0;
            acc = acc * h + f[1];
            return Ok(acc * h + f[0]);
        }
        let need = 5.5 * self.sol.arclength / d;
        let n = self.sol.resolution() as f64;
        let mut level = 0;
        while level + 1 < self.rules.len() && n * ((1usize << level) as f64) < need {
            level += 1;
        }
        self.rule(level).eval(layer, Complex64::new(x, y), k)
    }

    /// Physical velocity `(U, V)` in a given layer, without the interface guard.
    pub fn velocity_in(&self, layer: Layer, x: f64, y: f64) -> Result<(f64, f64)> {
        self.check_domain(x, y)?;
        let f = self.holomorphic(layer, x, y)?;
        Ok((f.re + layer.vorticity(&self.params) * (y - self.params.depth), -f.im))
    }

    /// Physical velocity at a point strictly off the interface.
    pub fn velocity(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.check_domain(x, y)?;
        if self.nearest(x, y).2 < ON_INTERFACE_TOL {
            return Err(Error::OnInterface);
        }
        self.velocity_in(self.layer_of(x, y), x, y)
    }

    /// Column integrals from the bottom wall of `U`, split at the interface.
    /// Returns `∫₀^{y} U` at each requested height and at each crossing.
    fn column(&self, x: f64, heights: &[f64], panels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let cross: Vec<f64> = self.crossings(x).iter().map(|c| c.1).collect();
        let mut breaks: Vec<f64> = heights.iter().chain(&cross).copied().chain([0.0, 1.0]).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let per = (panels / (breaks.len() - 1)).max(2).next_multiple_of(2);
        let mut cumulative = vec![0.0; breaks.len()];
        for s in 0..breaks.len() - 1 {
            let (a, b) = (breaks[s], breaks[s + 1]);
            let mid = 0.5 * (a + b);
            let above = cross.iter().filter(|&&c| c > mid).count();
            let layer = if above % 2 == 1 { Layer::Lower } else { Layer::Upper };
            let h = (b - a) / per as f64;
            let mut sum = 0.0;
            for q in 0..=per {
                let wq = if q == 0 || q == per {
                    1.0
                } else if q % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                sum += wq * self.velocity_in(layer, x, a + q as f64 * h)?.0;
            }
            cumulative[s + 1] = cumulative[s] + sum * h / 3.0;
        }
        let lookup = |y: f64| {
            let i = breaks.iter().position(|&b| (b - y).abs() < 1e-14).expect("height is a breakpoint");
            cumulative[i]
        };
        Ok((heights.iter().map(|&y| lookup(y)).collect(), cross.iter().map(|&y| lookup(y)).collect()))
    }
}

/// Physical velocity `(U, V)` at `(x, y)`.
pub fn velocity_at(sol: &SolutionVector, params: &PhysParams, point: (f64, f64)) -> Result<(f64, f64)> {
    FieldEvaluator::new(sol, params)?.velocity(point.0, point.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeTag {
    Lower,
    Upper,
    /// Within 1.5 cells of the interface.
    Band,
}

/// Velocity and stream function on a uniform grid over one wavelength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub params: PhysParams,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major in `y`: node `(i, j)` is at index `j * nx + i`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub layer: Vec<Layer>,
    pub tag: Vec<NodeTag>,
    /// Lower-layer mass flux used to anchor `Ψ`.
    pub lower_flux: f64,
    /// `Ψ` at every column's interface crossings, which should all vanish.
    pub interface_psi: Vec<f64>,
}

impl FieldGrid {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn ny(&self) -> usize {
        self.y.len()
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn dy(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    /// Spread of `Ψ` over the interface crossings.
    pub fn interface_spread(&self) -> f64 {
        let mx = self.interface_psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = self.interface_psi.iter().copied().fold(f64::INFINITY, f64::min);
        mx - mn
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Velocity and stream function on an `nx × ny` grid covering
/// `[0, 2π/k] × [0, 1]`.
pub fn stream_function_grid(sol: &SolutionVector, params: &PhysParams, nx: usize, ny: usize) -> Result<FieldGrid> {
    let ev = FieldEvaluator::new(sol, params)?;
    field_grid(&ev, nx, ny)
}

pub fn field_grid(ev: &FieldEvaluator, nx: usize, ny: usize) -> Result<FieldGrid> {
    if nx < 32 || ny < 32 {
        return Err(Error::Format(format!("field grid must be at least 32 x 32, got {nx} x {ny}")));
    }
    let params = *ev.params();
    let xs = linspace(0.0, ev.wavelength(), nx);
    let ys = linspace(0.0, 1.0, ny);
    let band = 1.5 * (xs[1] - xs[0]).max(ys[1] - ys[0]);
    struct Column {
        u: Vec<f64>,
        v: Vec<f64>,
        raw: Vec<f64>,
        cross: Vec<f64>,
        layer: Vec<Layer>,
        tag: Vec<NodeTag>,
    }
    let columns: Vec<Column> = xs
        .par_iter()
        .map(|&x| -> Result<Column> {
            let cross: Vec<f64> = ev.crossings(x).iter().map(|c| c.1).collect();
            let (raw, cross_raw) = ev.column(x, &ys, 256)?;
            let mut col = Column { u: vec![], v: vec![], raw, cross: cross_raw, layer: vec![], tag: vec![] };
            for &y in &ys {
                let above = cross.iter().filter(|&&c| c > y).count();
                let layer = if above % 2 == 1 { Layer::Lower } else { Layer::Upper };
                let (uu, vv) = ev.velocity_in(layer, x, y)?;
                let d = ev.nearest(x, y).2;
                col.u.push(uu);
                col.v.push(vv);
                col.layer.push(layer);
                col.tag.push(if d < band {
                    NodeTag::Band
                } else if layer == Layer::Lower {
                    NodeTag::Lower
                } else {
                    NodeTag::Upper
                });
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let all_cross: Vec<f64> = columns.iter().flat_map(|c| c.cross.iter().copied()).collect();
    let lower_flux = all_cross.iter().sum::<f64>() / all_cross.len().max(1) as f64;
    let (nx, ny) = (xs.len(), ys.len());
    let mut grid = FieldGrid {
        params,
        x: xs,
        y: ys,
        u: vec![0.0; nx * ny],
        v: vec![0.0; nx * ny],
        psi: vec![0.0; nx * ny],
        layer: vec![Layer::Lower; nx * ny],
        tag: vec![NodeTag::Lower; nx * ny],
        lower_flux,
        interface_psi: all_cross.iter().map(|c| c - lower_flux).collect(),
    };
    for (i, col) in columns.into_iter().enumerate() {
        for j in 0..ny {
            let id = j * nx + i;
            grid.u[id] = col.u[j];
            grid.v[id] = col.v[j];
            grid.psi[id] = col.raw[j] - lower_flux;
            grid.layer[id] = col.layer[j];
            grid.tag[id] = col.tag[j];
        }
    }
    Ok(grid)
}

/// Maximum divergence and vorticity defect by central differences, over
/// interior nodes whose stencil stays inside one layer and off the band.
pub fn pde_residual(field: &FieldGrid, params: &PhysParams) -> (f64, f64) {
    let nodes: Vec<(usize, usize)> = (1..field.ny() - 1).flat_map(|j| (1..field.nx() - 1).map(move |i| (i, j))).collect();
    pde_defects(field, params, &nodes, 1)
}

fn stencil_ok(field: &FieldGrid, i: usize, j: usize, s: usize) -> bool {
    if i < s || j < s || i + s >= field.nx() || j + s >= field.ny() {
        return false;
    }
    let c = field.idx(i, j);
    if field.tag[c] == NodeTag::Band {
        return false;
    }
    [(i - s, j), (i + s, j), (i, j - s), (i, j + s)].iter().all(|&(a, b)| field.tag[field.idx(a, b)] == field.tag[c])
}

/// Defects at `nodes`, differencing over `s` grid spacings.
fn pde_defects(field: &FieldGrid, params: &PhysParams, nodes: &[(usize, usize)], s: usize) -> (f64, f64) {
    let hx = s as f64 * field.dx();
    let hy = s as f64 * field.dy();
    let mut div = 0.0f64;
    let mut vort = 0.0f64;
    for &(i, j) in nodes {
        if !stencil_ok(field, i, j, s) {
            continue;
        }
        let at = |a: usize, b: usize| field.idx(a, b);
        let ux = (field.u[at(i + s, j)] - field.u[at(i - s, j)]) / (2.0 * hx);
        let uy = (field.u[at(i, j + s)] - field.u[at(i, j - s)]) / (2.0 * hy);
        let vx = (field.v[at(i + s, j)] - field.v[at(i - s, j)]) / (2.0 * hx);
        let vy = (field.v[at(i, j + s)] - field.v[at(i, j - s)]) / (2.0 * hy);
        let w = field.layer[at(i, j)].vorticity(params);
        div = div.max((ux + vy).abs());
        vort = vort.max((uy - vx - w).abs());
    }
    (div, vort)
}

/// PDE defects on an `nx × ny` grid and on its 2× refinement, compared on
/// the coarse nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeRefinement {
    pub coarse: (f64, f64),
    pub fine: (f64, f64),
}

impl PdeRefinement {
    pub fn ratios(&self) -> (f64, f64) {
        (self.coarse.0 / self.fine.0, self.coarse.1 / self.fine.1)
    }
}

pub fn pde_refinement(ev: &FieldEvaluator, nx: usize, ny: usize) -> Result<PdeRefinement> {
    let params = *ev.params();
    let coarse = field_grid(ev, nx, ny)?;
    let fine = field_grid(ev, 2 * nx - 1, 2 * ny - 1)?;
    let nodes: Vec<(usize, usize)> = (1..ny - 1)
        .flat_map(|j| (1..nx - 1).map(move |i| (i, j)))
        .filter(|&(i, j)| stencil_ok(&coarse, i, j, 1))
        .collect();
    let fine_nodes: Vec<(usize, usize)> = nodes.iter().map(|&(i, j)| (2 * i, 2 * j)).collect();
    // The fine stencil spans one fine spacing; its nodes lie inside the coarse stencil.
    let mut fine_field = fine;
    for id in 0..fine_field.tag.len() {
        fine_field.tag[id] = match fine_field.layer[id] {
            Layer::Lower => NodeTag::Lower,
            Layer::Upper => NodeTag::Upper,
        };
    }
    Ok(PdeRefinement { coarse: pde_defects(&coarse, &params, &nodes, 1), fine: pde_defects(&fine_field, &params, &fine_nodes, 1) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StagnationKind {
    Saddle,
    Centre,
    /// Singular velocity gradient, as on the zero line of a shear flow.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagnationPoint {
    pub x: f64,
    pub y: f64,
    pub layer: Layer,
    pub kind: StagnationKind,
    /// `[[U_x, U_y], [V_x, V_y]]`.
    pub gradient: [[f64; 2]; 2],
}

const DEGENERATE_DET: f64 = 1e-10;

fn gradient(ev: &FieldEvaluator, layer: Layer, x: f64, y: f64) -> Result<[[f64; 2]; 2]> {
    let h = 1e-5;
    let (yl, yh) = if y - h < 0.0 {
        (y, y + 2.0 * h)
    } else if y + h > 1.0 {
        (y - 2.0 * h, y)
    } else {
        (y - h, y + h)
    };
    let (u1, v1) = ev.velocity_in(layer, x + h, y)?;
    let (u0, v0) = ev.velocity_in(layer, x - h, y)?;
    let (u3, v3) = ev.velocity_in(layer, x, yh)?;
    let (u2, v2) = ev.velocity_in(layer, x, yl)?;
    Ok([[(u1 - u0) / (2.0 * h), (u3 - u2) / (yh - yl)], [(v1 - v0) / (2.0 * h), (v3 - v2) / (yh - yl)]])
}

/// Refines a stagnation candidate by damped Gauss–Newton on the exact velocity.
fn refine(ev: &FieldEvaluator, layer: Layer, x0: f64, y0: f64, reach: f64) -> Result<Option<StagnationPoint>> {
    let (mut x, mut y) = (x0, y0);
    let mut mu = 1e-12;
    let mut vel = ev.velocity_in(layer, x, y)?;
    for _ in 0..60 {
        if vel.0.hypot(vel.1) <= 1e-8 {
            break;
        }
        let g = gradient(ev, layer, x, y)?;
        // (JᵀJ + μI) δ = −Jᵀ r
        let a = g[0][0] * g[0][0] + g[1][0] * g[1][0] + mu;
        let b = g[0][0] * g[0][1] + g[1][0] * g[1][1];
        let d = g[0][1] * g[0][1] + g[1][1] * g[1][1] + mu;
        let r0 = -(g[0][0] * vel.0 + g[1][0] * vel.1);
        let r1 = -(g[0][1] * vel.0 + g[1][1] * vel.1);
        let det = a * d - b * b;
        if !(det.abs() > 0.0) {
            mu = mu.max(1e-12) * 10.0;
            continue;
        }
        let dx = (d * r0 - b * r1) / det;
        let dy = (a * r1 - b * r0) / det;
        let (nx, ny) = (x + dx, (y + dy).clamp(0.0, 1.0));
        if (nx - x0).hypot(ny - y0) > reach {
            return Ok(None);
        }
        let nv = match ev.velocity_in(layer, nx, ny) {
            Ok(v) => v,
            Err(Error::OutOfDomain) => return Ok(None),
            Err(e) => return Err(e),
        };
        if nv.0.hypot(nv.1) < vel.0.hypot(vel.1) {
            x = nx;
            y = ny;
            vel = nv;
            mu *= 0.1;
        } else {
            mu = mu.max(1e-12) * 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
    if vel.0.hypot(vel.1) > 1e-8 {
        return Ok(None);
    }
    if ev.layer_of(x, y) != layer {
        return Ok(None);
    }
    let g = gradient(ev, layer, x, y)?;
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let kind = if det.abs() < DEGENERATE_DET {
        StagnationKind::Degenerate
    } else if det < 0.0 {
        StagnationKind::Saddle
    } else {
        StagnationKind::Centre
    };
    let lambda = ev.wavelength();
    let mut x = x.rem_euclid(lambda);
    // Positions are good to about the velocity tolerance over the gradient.
    if lambda - x < 1e-6 * lambda {
        x = 0.0;
    }
    Ok(Some(StagnationPoint { x, y, layer, kind, gradient: g }))
}

/// Stagnation points found from sign changes of both velocity components on
/// the grid, refined on the exact field and deduplicated within a cell.
pub fn stagnation_points(ev: &FieldEvaluator, field: &FieldGrid) -> Result<Vec<StagnationPoint>> {
    let (nx, ny) = (field.nx(), field.ny());
    let mut cands = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let ids = [field.idx(i, j), field.idx(i + 1, j), field.idx(i, j + 1), field.idx(i + 1, j + 1)];
            let tag = field.tag[ids[0]];
            if tag == NodeTag::Band || ids.iter().any(|&id| field.tag[id] != tag) {
                continue;
            }
            let straddles = |f: &[f64]| {
                let lo = ids.iter().map(|&id| f[id]).fold(f64::INFINITY, f64::min);
                let hi = ids.iter().map(|&id| f[id]).fold(f64::NEG_INFINITY, f64::max);
                lo <= 0.0 && hi >= 0.0
            };
            if straddles(&field.u) && straddles(&field.v) {
                cands.push((i, j, field.layer[ids[0]]));
            }
        }
    }
    let (dx, dy) = (field.dx(), field.dy());
    let reach = 2.0 * dx.hypot(dy);
    let found: Vec<Option<StagnationPoint>> = cands
        .par_iter()
        .map(|&(i, j, layer)| refine(ev, layer, field.x[i] + 0.5 * dx, field.y[j] + 0.5 * dy, reach))
        .collect::<Result<_>>()?;
    let lambda = ev.wavelength();
    let mut out: Vec<StagnationPoint> = Vec::new();
    for p in found.into_iter().flatten() {
        let dup = out.iter().any(|q| {
            let ddx = (p.x - q.x).rem_euclid(lambda);
            let ddx = ddx.min(lambda - ddx);
            ddx <= dx && (p.y - q.y).abs() <= dy
        });
        if !dup {
            out.push(p);
        }
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    Ok(out)
}

/// Distance from the interface to the closest stagnation point on the two
/// symmetry lines `x = 0` and `x = π/k`, where `V` vanishes identically.
pub fn stagnation_gap(sol: &SolutionVector, params: &PhysParams) -> Result<Option<f64>> {
    let ev = FieldEvaluator::new(sol, params)?;
    let mut best: Option<f64> = None;
    for x in [0.0, PI / params.k] {
        let cross: Vec<f64> = ev.crossings(x).iter().map(|c| c.1).collect();
        let mut breaks = vec![0.0];
        breaks.extend(&cross);
        breaks.push(1.0);
        for s in 0..breaks.len() - 1 {
            let (a, b) = (breaks[s], breaks[s + 1]);
            let above = cross.iter().filter(|&&c| c > 0.5 * (a + b)).count();
            let layer = if above % 2 == 1 { Layer::Lower } else { Layer::Upper };
            let samples = 64;
            let u = |y: f64| ev.velocity_in(layer, x, y).map(|v| v.0);
            let mut prev = (a, u(a)?);
            for q in 1..=samples {
                let y = a + (b - a) * q as f64 / samples as f64;
                let cur = (y, u(y)?);
                if prev.1 == 0.0 || prev.1 * cur.1 < 0.0 {
                    let (mut lo, mut hi, mut flo) = (prev.0, cur.0, prev.1);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let fm = u(mid)?;
                        if (fm < 0.0) == (flo < 0.0) {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    let ys = 0.5 * (lo + hi);
                    let gap = cross.iter().map(|c| (c - ys).abs()).fold(f64::INFINITY, f64::min);
                    // Zeros sitting on the interface itself are interface stagnation.
                    if gap > 1e-9 {
                        best = Some(best.map_or(gap, |g: f64| g.min(gap)));
                    }
                }
                prev = cur;
            }
        }
    }
    Ok(best)
}

/// Layer fluxes and flow force on vertical lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub x_stations: Vec<f64>,
    pub m_lower: Vec<f64>,
    pub m_upper: Vec<f64>,
    pub flow_force: Vec<f64>,
    pub spread_lower: f64,
    pub spread_upper: f64,
    pub spread_flow_force: f64,
}

fn relative_spread(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        (mx - mn) / scale
    } else {
        0.0
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`, 8 points.
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

pub fn invariants(ev: &FieldEvaluator, stations: &[f64]) -> Result<InvariantReport> {
    if stations.len() < 3 {
        return Err(Error::Format("need at least 3 stations".into()));
    }
    let params = *ev.params();
    let rows: Vec<(f64, f64, f64)> = stations
        .par_iter()
        .map(|&x| -> Result<(f64, f64, f64)> {
            let cross: Vec<f64> = ev.crossings(x).iter().map(|c| c.1).collect();
            let (lo, hi) = match (cross.first(), cross.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(Error::Format("station misses the interface".into())),
            };
            let mut breaks = vec![0.0];
            breaks.extend(&cross);
            breaks.push(1.0);
            let (mut m0, mut m1, mut force) = (0.0, 0.0, 0.0);
            for s in 0..breaks.len() - 1 {
                let (a, b) = (breaks[s], breaks[s + 1]);
                let above = cross.iter().filter(|&&c| c > 0.5 * (a + b)).count();
                let layer = if above % 2 == 1 { Layer::Lower } else { Layer::Upper };
                let w = layer.vorticity(&params);
                let panels = 32;
                let h = (b - a) / panels as f64;
                for p in 0..panels {
                    let c = a + (p as f64 + 0.5) * h;
                    for &(xi, wi) in &GL8 {
                        let y = c + 0.5 * h * xi;
                        let (uu, vv) = ev.velocity_in(layer, x, y)?;
                        let wq = 0.5 * h * wi;
                        if b <= lo + 1e-15 {
                            m0 += wq * uu;
                        }
                        if a >= hi - 1e-15 {
                            m1 += wq * uu;
                        }
                        force += wq * (0.5 * (vv * vv - uu * uu) + w * y * uu);
                    }
                }
            }
            Ok((m0, m1, force))
        })
        .collect::<Result<_>>()?;
    let m_lower: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let m_upper: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let flow_force: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(InvariantReport {
        x_stations: stations.to_vec(),
        spread_lower: relative_spread(&m_lower),
        spread_upper: relative_spread(&m_upper),
        spread_flow_force: relative_spread(&flow_force),
        m_lower,
        m_upper,
        flow_force,
    })
}

/// `n` equally spaced stations over one wavelength.
pub fn stations(params: &PhysParams, n: usize) -> Vec<f64> {
    (0..n).map(|i| params.wavelength() * i as f64 / n as f64).collect()
}

/// Flow force of a shear flow, with the same integrand as [`invariants`].
pub fn shear_flow_force(flow: &crate::model::ShearFlow, omega0: f64) -> f64 {
    let mut force = 0.0;
    for (a, b) in [(0.0, flow.h), (flow.h, 1.0)] {
        let panels = 32;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * h;
            for &(xi, wi) in &GL8 {
                let y = c + 0.5 * h * xi;
                let w = if y <= flow.h { omega0 } else { omega0 - 1.0 };
                let u = flow.velocity(omega0, y);
                force += 0.5 * h * wi * (-0.5 * u * u + w * y * u);
            }
        }
    }
    force
}

/// Interface polyline over `[0, 2π/k]`.
pub fn interface_polyline(sol: &SolutionVector, params: &PhysParams, samples: usize) -> Vec<(f64, f64)> {
    (0..=samples)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / samples as f64;
            let s = sol.evaluate(params.k, t);
            (s.x, s.y)
        })
        .collect()
}

/// Contours of `Ψ` at each level, by marching squares.
pub fn streamlines(field: &FieldGrid, levels: &[f64]) -> Vec<(f64, Vec<(f64, f64)>)> {
    let mut out = Vec::new();
    for &level in levels {
        for line in contour(field, level) {
            out.push((level, line));
        }
    }
    out
}

/// Edge identifier: (i, j, 0) is the horizontal edge from node (i, j) to
/// (i+1, j); (i, j, 1) the vertical edge from (i, j) to (i, j+1).
type Edge = (usize, usize, u8);

fn contour(field: &FieldGrid, level: f64) -> Vec<Vec<(f64, f64)>> {
    let (nx, ny) = (field.nx(), field.ny());
    let val = |i: usize, j: usize| field.psi[field.idx(i, j)] - level;
    let point = |e: Edge| -> (f64, f64) {
        let (i, j, d) = e;
        let (i2, j2) = if d == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (val(i, j), val(i2, j2));
        let s = if a == b { 0.5 } else { a / (a - b) };
        (field.x[i] + s * (field.x[i2] - field.x[i]), field.y[j] + s * (field.y[j2] - field.y[j]))
    };
    let mut segs: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let mut case = 0u8;
            for (b, v) in c.iter().enumerate() {
                if *v > 0.0 {
                    case |= 1 << b;
                }
            }
            // Edges: bottom, right, top, left.
            let e = [(i, j, 0u8), (i + 1, j, 1u8), (i, j + 1, 0u8), (i, j, 1u8)];
            let pairs: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    let centre = c.iter().sum::<f64>() / 4.0;
                    if (centre > 0.0) == (case == 5) {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segs.push((e[a], e[b]));
            }
        }
    }
    // Chain segments through shared edges.
    let mut by_edge: std::collections::HashMap<Edge, Vec<usize>> = std::collections::HashMap::new();
    for (s, &(a, b)) in segs.iter().enumerate() {
        by_edge.entry(a).or_default().push(s);
        by_edge.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain: std::collections::VecDeque<Edge> = [segs[start].0, segs[start].1].into_iter().collect();
        for forward in [true, false] {
            loop {
                let end = if forward { *chain.back().unwrap() } else { *chain.front().unwrap() };
                let next = by_edge[&end].iter().copied().find(|&s| !used[s]);
                let Some(s) = next else { break };
                used[s] = true;
                let other = if segs[s].0 == end { segs[s].1 } else { segs[s].0 };
                if forward {
                    chain.push_back(other);
                } else {
                    chain.push_front(other);
                }
            }
        }
        lines.push(chain.into_iter().map(point).collect());
    }
    lines
}
