//! Fourier representation of the unknown interface and its velocity trace.
//!
//! The curve is `X(t) = t/k + Σ X̂ₙ sin nt`, `Y(t) = Σ Ŷₙ cos nt`, and the
//! modified velocity trace is `F(t) = u(t) + i v(t)` with
//! `u = Σ ûₙ cos nt`, `v = Σ v̂ₙ sin nt`. Parity is structural: only the
//! cosine coefficients of even functions and the sine coefficients of odd
//! ones are stored. The secular slope `t/k` is not stored; callers pass `k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhysParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionVector {
    /// `û₀ … û_{N−1}`.
    pub u_hat: Vec<f64>,
    /// `v̂₁ … v̂_{N−1}` (index 0 holds mode 1).
    pub v_hat: Vec<f64>,
    /// `X̂₁ … X̂_{N−1}` of the periodic part of `X` (index 0 holds mode 1).
    pub x_hat: Vec<f64>,
    /// `Ŷ₀ … Ŷ_{N−1}`.
    pub y_hat: Vec<f64>,
    /// Interface arclength over half a wavelength.
    pub arclength: f64,
}

/// One entry of the flattened unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coefficient {
    U(usize),
    V(usize),
    X(usize),
    Y(usize),
    Arclength,
}

impl Coefficient {
    /// Maps a flat index of a resolution-`n` vector to its coefficient.
    pub fn from_flat(n: usize, j: usize) -> Coefficient {
        if j < n {
            Coefficient::U(j)
        } else if j < 2 * n - 1 {
            Coefficient::V(j - n + 1)
        } else if j < 3 * n - 2 {
            Coefficient::X(j - (2 * n - 1) + 1)
        } else if j < 4 * n - 2 {
            Coefficient::Y(j - (3 * n - 2))
        } else {
            Coefficient::Arclength
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Coefficient::X(_) | Coefficient::Y(_) | Coefficient::Arclength)
    }
}

/// Values of the curve and trace at one parameter value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub xp: f64,
    pub yp: f64,
    pub u: f64,
    pub v: f64,
}

impl TraceSample {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    pub fn zp(&self) -> Complex64 {
        Complex64::new(self.xp, self.yp)
    }

    pub fn f(&self) -> Complex64 {
        Complex64::new(self.u, self.v)
    }
}

impl SolutionVector {
    pub fn zeros(n: usize, arclength: f64) -> SolutionVector {
        assert!(n >= 2, "resolution must be at least 2");
        SolutionVector {
            u_hat: vec![0.0; n],
            v_hat: vec![0.0; n - 1],
            x_hat: vec![0.0; n - 1],
            y_hat: vec![0.0; n],
            arclength,
        }
    }

    /// Truncation size `N`.
    pub fn resolution(&self) -> usize {
        self.u_hat.len()
    }

    /// Length `4N − 1` of the flattened unknown.
    pub fn dim(&self) -> usize {
        4 * self.resolution() - 1
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.u_hat);
        out.extend_from_slice(&self.v_hat);
        out.extend_from_slice(&self.x_hat);
        out.extend_from_slice(&self.y_hat);
        out.push(self.arclength);
        out
    }

    pub fn unflatten(flat: &[f64]) -> Result<SolutionVector> {
        if flat.len() < 7 || (flat.len() + 1) % 4 != 0 {
            return Err(Error::Format(format!("flat vector length {} is not 4N-1", flat.len())));
        }
        let n = (flat.len() + 1) / 4;
        let (u, rest) = flat.split_at(n);
        let (v, rest) = rest.split_at(n - 1);
        let (x, rest) = rest.split_at(n - 1);
        let (y, rest) = rest.split_at(n);
        Ok(SolutionVector {
            u_hat: u.to_vec(),
            v_hat: v.to_vec(),
            x_hat: x.to_vec(),
            y_hat: y.to_vec(),
            arclength: rest[0],
        })
    }

    pub fn get(&self, c: Coefficient) -> f64 {
        match c {
            Coefficient::U(n) => self.u_hat[n],
            Coefficient::V(n) => self.v_hat[n - 1],
            Coefficient::X(n) => self.x_hat[n - 1],
            Coefficient::Y(n) => self.y_hat[n],
            Coefficient::Arclength => self.arclength,
        }
    }

    pub fn get_mut(&mut self, c: Coefficient) -> &mut f64 {
        match c {
            Coefficient::U(n) => &mut self.u_hat[n],
            Coefficient::V(n) => &mut self.v_hat[n - 1],
            Coefficient::X(n) => &mut self.x_hat[n - 1],
            Coefficient::Y(n) => &mut self.y_hat[n],
            Coefficient::Arclength => &mut self.arclength,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u_hat
            .iter()
            .chain(&self.v_hat)
            .chain(&self.x_hat)
            .chain(&self.y_hat)
            .all(|x| x.is_finite())
            && self.arclength.is_finite()
    }

    /// Curve and trace at parameter `t`, for wavenumber `k`.
    pub fn evaluate(&self, k: f64, t: f64) -> TraceSample {
        let mut s = TraceSample { t, x: t / k, y: 0.0, xp: 1.0 / k, yp: 0.0, u: 0.0, v: 0.0 };
        for (n, (&uh, &yh)) in self.u_hat.iter().zip(&self.y_hat).enumerate() {
            let nf = n as f64;
            let (sn, cs) = (nf * t).sin_cos();
            s.u += uh * cs;
            s.y += yh * cs;
            s.yp -= nf * yh * sn;
            if n > 0 {
                let vh = self.v_hat[n - 1];
                let xh = self.x_hat[n - 1];
                s.v += vh * sn;
                s.x += xh * sn;
                s.xp += nf * xh * cs;
            }
        }
        s
    }

    /// `Y(0) − Y(π)`.
    pub fn amplitude(&self) -> f64 {
        2.0 * self.y_hat.iter().skip(1).step_by(2).sum::<f64>()
    }

    /// Solution of the channel turned upside down, with its parameters.
    ///
    /// The stream function maps as `Ψ(x, y) ↦ −Ψ(x, 1 − y)`, which sends
    /// `Y ↦ 1 − Y`, `u ↦ u + Y − H` and `v ↦ −v`.
    pub fn reflect(&self, params: &PhysParams) -> (SolutionVector, PhysParams) {
        let mut out = self.clone();
        for (u, y) in out.u_hat.iter_mut().zip(&self.y_hat) {
            *u += y;
        }
        out.u_hat[0] -= params.depth;
        out.v_hat.iter_mut().for_each(|v| *v = -*v);
        out.y_hat.iter_mut().for_each(|y| *y = -*y);
        out.y_hat[0] += 1.0;
        (out, params.reflected())
    }

    /// Zero-pads or truncates to resolution `n_new`.
    pub fn resample(&self, n_new: usize) -> SolutionVector {
        assert!(n_new >= 4, "resolution must be at least 4");
        let fit = |v: &[f64], len: usize| {
            let mut out = vec![0.0; len];
            let m = len.min(v.len());
            out[..m].copy_from_slice(&v[..m]);
            out
        };
        SolutionVector {
            u_hat: fit(&self.u_hat, n_new),
            v_hat: fit(&self.v_hat, n_new - 1),
            x_hat: fit(&self.x_hat, n_new - 1),
            y_hat: fit(&self.y_hat, n_new),
            arclength: self.arclength,
        }
    }

    /// Largest ratio, over the four coefficient families, of the biggest
    /// coefficient in the top quarter of mode indices to the biggest overall.
    pub fn decay_metric(&self) -> f64 {
        let n = self.resolution();
        let start = n - n / 4;
        // Families are indexed by mode number; v and X start at mode 1.
        let ratio = |coef: &[f64], first_mode: usize| {
            let all = coef.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1e-300);
            let tail = coef
                .iter()
                .enumerate()
                .filter(|(i, _)| i + first_mode >= start)
                .fold(0.0f64, |m, (_, c)| m.max(c.abs()));
            tail / all
        };
        ratio(&self.u_hat, 0)
            .max(ratio(&self.v_hat, 1))
            .max(ratio(&self.x_hat, 1))
            .max(ratio(&self.y_hat, 0))
    }
}

/// Mesh points and midpoints on `[0, π]` with cached trigonometric tables.
#[derive(Clone, Debug)]
pub struct CollocationGrid {
    n: usize,
    mesh: Vec<f64>,
    midpoints: Vec<f64>,
    weights: Vec<f64>,
    cos_mesh: Vec<f64>,
    sin_mesh: Vec<f64>,
    cos_mid: Vec<f64>,
    sin_mid: Vec<f64>,
}

fn trig_table(points: &[f64], modes: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = Vec::with_capacity(points.len() * modes);
    let mut s = Vec::with_capacity(points.len() * modes);
    for &t in points {
        for n in 0..modes {
            let (sn, cs) = (n as f64 * t).sin_cos();
            c.push(cs);
            s.push(sn);
        }
    }
    (c, s)
}

impl CollocationGrid {
    pub fn new(n: usize) -> CollocationGrid {
        assert!(n >= 2, "resolution must be at least 2");
        let h = PI / n as f64;
        let mesh: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let midpoints: Vec<f64> = (0..n).map(|j| (2 * j + 1) as f64 * PI / (2 * n) as f64).collect();
        let mut weights = vec![h; n + 1];
        weights[0] *= 0.5;
        weights[n] *= 0.5;
        let (cos_mesh, sin_mesh) = trig_table(&mesh, n + 1);
        let (cos_mid, sin_mid) = trig_table(&midpoints, n + 1);
        CollocationGrid { n, mesh, midpoints, weights, cos_mesh, sin_mesh, cos_mid, sin_mid }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    /// The `N + 1` points `(I − 1)π/N`.
    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    /// The `N` points `(2J − 1)π/(2N)`.
    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Trapezium weights on the mesh.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mesh_traces(&self, sol: &SolutionVector, k: f64) -> Traces {
        Traces::build(sol, k, &self.mesh, &self.cos_mesh, &self.sin_mesh, self.n + 1)
    }

    pub fn midpoint_traces(&self, sol: &SolutionVector, k: f64) -> Traces {
        Traces::build(sol, k, &self.midpoints, &self.cos_mid, &self.sin_mid, self.n + 1)
    }

    pub(crate) fn perturb_mesh(&self, tr: &mut Traces, c: Coefficient, delta: f64) {
        tr.perturb(c, delta, &self.cos_mesh, &self.sin_mesh, self.n + 1);
    }

    pub(crate) fn perturb_midpoints(&self, tr: &mut Traces, c: Coefficient, delta: f64) {
        tr.perturb(c, delta, &self.cos_mid, &self.sin_mid, self.n + 1);
    }
}

/// Curve and trace sampled on a fixed point set.
#[derive(Clone, Debug)]
pub struct Traces {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub xp: Vec<f64>,
    pub yp: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Traces {
    fn build(sol: &SolutionVector, k: f64, pts: &[f64], cos: &[f64], sin: &[f64], stride: usize) -> Traces {
        let n = sol.resolution();
        assert!(n <= stride, "solution resolution exceeds grid tables");
        let m = pts.len();
        let mut tr = Traces {
            t: pts.to_vec(),
            x: Vec::with_capacity(m),
            y: Vec::with_capacity(m),
            xp: Vec::with_capacity(m),
            yp: Vec::with_capacity(m),
            u: Vec::with_capacity(m),
            v: Vec::with_capacity(m),
        };
        for (i, &t) in pts.iter().enumerate() {
            let c = &cos[i * stride..i * stride + n];
            let s = &sin[i * stride..i * stride + n];
            let (mut x, mut y, mut xp, mut yp, mut u, mut v) = (t / k, 0.0, 1.0 / k, 0.0, 0.0, 0.0);
            for m in 0..n {
                let mf = m as f64;
                u += sol.u_hat[m] * c[m];
                y += sol.y_hat[m] * c[m];
                yp -= mf * sol.y_hat[m] * s[m];
                if m > 0 {
                    v += sol.v_hat[m - 1] * s[m];
                    x += sol.x_hat[m - 1] * s[m];
                    xp += mf * sol.x_hat[m - 1] * c[m];
                }
            }
            tr.x.push(x);
            tr.y.push(y);
            tr.xp.push(xp);
            tr.yp.push(yp);
            tr.u.push(u);
            tr.v.push(v);
        }
        tr
    }

    fn perturb(&mut self, c: Coefficient, delta: f64, cos: &[f64], sin: &[f64], stride: usize) {
        for i in 0..self.t.len() {
            match c {
                Coefficient::U(n) => self.u[i] += delta * cos[i * stride + n],
                Coefficient::V(n) => self.v[i] += delta * sin[i * stride + n],
                Coefficient::X(n) => {
                    self.x[i] += delta * sin[i * stride + n];
                    self.xp[i] += n as f64 * delta * cos[i * stride + n];
                }
                Coefficient::Y(n) => {
                    self.y[i] += delta * cos[i * stride + n];
                    self.yp[i] -= n as f64 * delta * sin[i * stride + n];
                }
                Coefficient::Arclength => {}
            }
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn z(&self, i: usize) -> Complex64 {
        Complex64::new(self.x[i], self.y[i])
    }

    pub fn zp(&self, i: usize) -> Complex64 {
        Complex64::new(self.xp[i], self.yp[i])
    }

    pub fn f(&self, i: usize) -> Complex64 {
        Complex64::new(self.u[i], self.v[i])
    }
}
