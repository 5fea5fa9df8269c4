//! Damped Newton iteration on the collocation system.
//!
//! The Jacobian is formed by one-sided differences, column by column, and
//! factorised with partial-pivoting LU. Columns for velocity coefficients
//! leave the interface geometry untouched and reuse the cached kernel
//! matrix; geometric columns rebuild it. Once the residual is small the
//! factorisation is frozen and reused.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residual::{admissibility, inf_norm, Evaluation, KernelCache, System};
use crate::state::{Coefficient, SolutionVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    pub tol_residual: f64,
    /// Residual norm below which the Jacobian is frozen.
    pub jacobian_reuse_threshold: f64,
    pub max_iterations: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Backtracking factor.
    pub damping: f64,
    pub max_backtracks: usize,
    /// Newton steps taken even when the initial guess already meets the tolerance.
    pub min_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol_residual: 1e-10,
            jacobian_reuse_threshold: 1e-4,
            max_iterations: 40,
            fd_step: 1e-8,
            damping: 0.5,
            max_backtracks: 8,
            min_iterations: 0,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0 && self.tol_residual < self.jacobian_reuse_threshold) {
            return Err(Error::Format("need 0 < tol_residual < jacobian_reuse_threshold".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Format("fd_step must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Format("damping must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonResult {
    pub solution: SolutionVector,
    pub iterations: usize,
    pub final_residual: f64,
    pub jacobian_builds: usize,
    /// Residual norm before the first and after every accepted step.
    pub history: Vec<f64>,
}

fn column_step(value: f64, opts: &NewtonOptions) -> f64 {
    opts.fd_step * value.abs().max(1.0)
}

fn fd_column(system: &System<'_>, base: &Evaluation, r0: &[f64], j: usize, h: f64) -> Result<Vec<f64>> {
    let n = system.grid.resolution();
    let c = Coefficient::from_flat(n, j);
    let mut sol = base.sol.clone();
    *sol.get_mut(c) += h;
    let h = sol.get(c) - base.sol.get(c);
    let mut mesh = base.mesh.clone();
    let mut mid = base.mid.clone();
    system.grid.perturb_mesh(&mut mesh, c, h);
    system.grid.perturb_midpoints(&mut mid, c, h);
    let mut out = vec![0.0; r0.len()];
    if matches!(c, Coefficient::X(_) | Coefficient::Y(_)) {
        let cache = KernelCache::build(&mesh, &mid, system.grid.weights(), system.params.k)?;
        system.rows_from(&sol, &mesh, &mid, &cache, &mut out)?;
    } else {
        // The kernel depends on geometry only.
        system.rows_from(&sol, &mesh, &mid, &base.cache, &mut out)?;
    }
    for (o, r) in out.iter_mut().zip(r0) {
        *o = (*o - r) / h;
    }
    Ok(out)
}

/// Forward-difference Jacobian of the system at `sol`.
pub fn fd_jacobian(system: &System<'_>, sol: &SolutionVector, opts: &NewtonOptions) -> Result<DMatrix<f64>> {
    let base = system.prepare(sol)?;
    let dim = system.dim();
    let mut r0 = vec![0.0; dim];
    system.rows(&base, &mut r0)?;
    let flat = sol.flatten();
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let h = column_step(flat[j], opts);
            fd_column(system, &base, &r0, j, h).or_else(|e| match e {
                Error::PoleProximity | Error::Inadmissible(_) => fd_column(system, &base, &r0, j, h / 10.0),
                other => Err(other),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(dim, dim, |i, j| cols[j][i]))
}

struct Factorised {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn factorise(jac: DMatrix<f64>) -> Result<Factorised> {
    let lu = jac.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let mx = diag.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mn = diag.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    let cond = if mn > 0.0 { mx / mn } else { f64::INFINITY };
    if !(cond <= 1e14) {
        return Err(Error::SingularJacobian(cond));
    }
    Ok(Factorised { lu })
}

/// Solves `G(φ̂) = 0` from `initial` by damped Newton with Jacobian reuse.
pub fn newton_solve(system: &System<'_>, initial: &SolutionVector, opts: &NewtonOptions) -> Result<NewtonResult> {
    opts.validate()?;
    admissibility(initial, &system.params).map_err(Error::Inadmissible)?;
    let mut current = initial.clone();
    let mut r = system.residual_unchecked(&current)?;
    let mut norm = r.max_abs;
    let mut history = vec![norm];
    let mut builds = 0;
    let mut iterations = 0;
    let mut factor: Option<Factorised> = None;
    let mut frozen = false;
    let mut slow_frozen_steps = 0;

    while !(norm <= opts.tol_residual) || iterations < opts.min_iterations {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations, best_norm: norm });
        }
        iterations += 1;
        if factor.is_none() || !frozen {
            factor = Some(factorise(fd_jacobian(system, &current, opts)?)?);
            builds += 1;
        }
        let fresh = !frozen;
        let step = factor
            .as_ref()
            .unwrap()
            .lu
            .solve(&DVector::from_vec(r.vector.clone()))
            .ok_or(Error::SingularJacobian(f64::INFINITY))?;
        let flat = current.flatten();
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut inadmissible = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = flat.iter().zip(step.iter()).map(|(x, d)| x - lambda * d).collect();
            let cand = SolutionVector::unflatten(&trial)?;
            match admissibility(&cand, &system.params) {
                Err(reason) => inadmissible = Some(reason),
                Ok(()) => match system.residual_unchecked(&cand) {
                    Ok(rc) if rc.max_abs < norm => {
                        accepted = Some((cand, rc));
                        break;
                    }
                    Ok(_) => {}
                    Err(Error::PoleProximity) => {}
                    Err(e) => return Err(e),
                },
            }
            lambda *= opts.damping;
        }
        match accepted {
            Some((cand, rc)) => {
                let ratio = rc.max_abs / norm;
                current = cand;
                r = rc;
                norm = r.max_abs;
                history.push(norm);
                if frozen {
                    if ratio > 0.9 {
                        slow_frozen_steps += 1;
                        if slow_frozen_steps >= 2 {
                            frozen = false;
                            slow_frozen_steps = 0;
                        }
                    } else {
                        slow_frozen_steps = 0;
                    }
                } else if norm < opts.jacobian_reuse_threshold {
                    frozen = true;
                }
            }
            None if norm <= opts.tol_residual => break,
            None if !fresh => {
                // The frozen Jacobian no longer gives descent; rebuild.
                frozen = false;
            }
            None => {
                return Err(match inadmissible {
                    Some(reason) => Error::Inadmissible(reason),
                    None => Error::NonConvergence { iterations, best_norm: norm },
                });
            }
        }
    }
    Ok(NewtonResult { solution: current, iterations, final_residual: norm, jacobian_builds: builds, history })
}

/// Convenience wrapper for inf-norm of a residual vector.
pub fn residual_norm(v: &[f64]) -> f64 {
    inf_norm(v)
}
