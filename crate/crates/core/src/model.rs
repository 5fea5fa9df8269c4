//! Closed-form objects attached to the shear family: the dispersion relation,
//! the kernel of the linearised problem, conjugate shear flows and the
//! linear-theory starting guess for a branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::SolutionVector;

/// Fixed parameters of a two-layer problem.
///
/// Time is scaled so that the vorticity jump across the interface is one,
/// hence `omega1 = omega0 - 1` is derived rather than stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// Wavenumber; the wavelength is `2π/k`.
    pub k: f64,
    /// Mean interface depth in `(0, 1)`.
    #[serde(rename = "H")]
    pub depth: f64,
    /// Lower-layer vorticity.
    pub omega0: f64,
}

impl PhysParams {
    pub fn new(k: f64, depth: f64, omega0: f64) -> Result<Self> {
        let p = PhysParams { k, depth, omega0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParams(format!("k must be positive, got {}", self.k)));
        }
        if !(self.depth > 0.0 && self.depth < 1.0) {
            return Err(Error::InvalidParams(format!("H must lie in (0,1), got {}", self.depth)));
        }
        if !self.omega0.is_finite() {
            return Err(Error::InvalidParams("omega0 must be finite".into()));
        }
        Ok(())
    }

    /// Upper-layer vorticity.
    pub fn omega1(&self) -> f64 {
        self.omega0 - 1.0
    }

    /// Vorticity of layer `0` (below the interface) or `1` (above).
    pub fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega0
        } else {
            self.omega1()
        }
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.k
    }

    /// Parameters of the solution obtained by turning the channel upside down.
    pub fn reflected(&self) -> PhysParams {
        PhysParams { k: self.k, depth: 1.0 - self.depth, omega0: 1.0 - self.omega0 }
    }
}

/// A flat-interface shear flow with interface height `h` and interface speed `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearFlow {
    pub h: f64,
    pub c: f64,
}

impl ShearFlow {
    /// Stream function of the shear flow, vanishing on the interface.
    pub fn stream_function(&self, omega0: f64, y: f64) -> f64 {
        let w = if y <= self.h { omega0 } else { omega0 - 1.0 };
        let s = y - self.h;
        0.5 * w * s * s + self.c * s
    }

    /// Horizontal velocity `Ψ_y` of the shear flow.
    pub fn velocity(&self, omega0: f64, y: f64) -> f64 {
        let w = if y <= self.h { omega0 } else { omega0 - 1.0 };
        w * (y - self.h) + self.c
    }

    /// The other member of a conjugate pair.
    pub fn conjugate(&self, omega0: f64) -> ShearFlow {
        let h = conjugate_height(self.h, omega0);
        ShearFlow { h, c: conjugate_speed(h, omega0) }
    }
}

/// Constants of the kernel vector at the `n`-th bifurcation point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenComponents {
    pub n: u32,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Critical value of the flux-like parameter `q`.
    pub q_n: f64,
}

fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

/// Bifurcation value `q_n` of the flux parameter for mode `n`.
pub fn dispersion(params: &PhysParams, n: u32) -> f64 {
    let nk = n as f64 * params.k;
    let h = params.depth;
    1.0 / (nk * (coth(nk * (1.0 - h)) + coth(nk * h))) - 0.5 * params.omega0 * h
}

/// Interface speed of the shear flow at the `n`-th bifurcation point.
pub fn bifurcation_speed(params: &PhysParams, n: u32) -> f64 {
    dispersion(params, n) + 0.5 * params.omega0 * params.depth
}

pub fn eigen_components(params: &PhysParams, n: u32) -> EigenComponents {
    let nf = n as f64;
    let k = params.k;
    let h = params.depth;
    let a = nf * h * k;
    let b = nf * (1.0 - h) * k;
    let s = coth(a) + coth(b);
    EigenComponents {
        n,
        c1: -1.0 / s,
        c2: a.sinh() / b.sinh(),
        c3: k * a.sinh() / nf.sinh() * s,
        c4: -a.sinh() / (b.sinh() * s),
        q_n: dispersion(params, n),
    }
}

/// The flat interface `Y ≡ H` with uniform interface speed `c`.
pub fn shear_solution(params: &PhysParams, c: f64, n: usize) -> SolutionVector {
    let mut sol = SolutionVector::zeros(n, std::f64::consts::PI / params.k);
    sol.u_hat[0] = c;
    sol.y_hat[0] = params.depth;
    sol
}

/// First-order solution near the primary bifurcation point with amplitude `amp`.
///
/// The interface traces of the kernel vector are rewritten in the
/// constant-speed parametrisation: at first order `X̂₁` vanishes and the
/// modified velocity trace is `u = c₀ + (A/2)c₁coth(kH)cos t`,
/// `v = −(A/2)c₁ sin t`.
pub fn linear_guess(params: &PhysParams, amp: f64, n: usize) -> SolutionVector {
    let mut sol = shear_solution(params, bifurcation_speed(params, 1), n);
    if amp == 0.0 {
        return sol;
    }
    let e = eigen_components(params, 1);
    let half = 0.5 * amp;
    sol.y_hat[1] = half;
    sol.u_hat[1] = half * e.c1 * coth(params.k * params.depth);
    sol.v_hat[0] = -half * e.c1;
    sol
}

/// Same amplitude as [`linear_guess`] but with only `Ŷ₁` perturbed.
pub fn crude_guess(params: &PhysParams, amp: f64, n: usize) -> SolutionVector {
    let mut sol = shear_solution(params, bifurcation_speed(params, 1), n);
    sol.y_hat[1] = 0.5 * amp;
    sol
}

/// Interface height of the shear flow conjugate to one at height `h`.
pub fn conjugate_height(h: f64, omega0: f64) -> f64 {
    -h + 2.0 / 3.0 * (2.0 - omega0)
}

/// Interface speed a shear flow at height `h` must have to possess a conjugate.
pub fn conjugate_speed(h: f64, omega0: f64) -> f64 {
    let t = 3.0 * h + omega0 - 2.0;
    t * t / 9.0 + h * (1.0 - h)
}

/// Lower bound on the amplitude of a periodic bore.
pub fn min_bore_amplitude(params: &PhysParams) -> f64 {
    2.0 * (params.depth - (2.0 - params.omega0) / 3.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dispersion_examples() {
        let p = PhysParams::new(2.0, 0.5, 0.0).unwrap();
        assert_relative_eq!(dispersion(&p, 1), 1f64.tanh() / 4.0, epsilon = 1e-15);
        let p = PhysParams::new(1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(dispersion(&p, 2), 1f64.tanh() / 4.0 - 0.25, epsilon = 1e-15);
        assert_relative_eq!(dispersion(&p, 2), -0.0596015, epsilon = 1e-7);
    }

    #[test]
    fn omega0_only_shifts_dispersion() {
        let a = PhysParams::new(1.3, 0.37, 0.0).unwrap();
        let b = PhysParams::new(1.3, 0.37, -2.4).unwrap();
        for n in 1..5 {
            assert_relative_eq!(
                dispersion(&a, n),
                dispersion(&b, n) + 0.5 * b.omega0 * b.depth,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn kernel_constants() {
        let p = PhysParams::new(2.0, 0.5, 0.0).unwrap();
        let e = eigen_components(&p, 1);
        assert_relative_eq!(e.c1, -1f64.tanh() / 2.0, epsilon = 1e-15);
        assert_relative_eq!(e.c1, -0.3807971, epsilon = 1e-7);
        assert_relative_eq!(e.c2, 1.0, epsilon = 1e-15);
        assert_relative_eq!(e.c4, e.c1, epsilon = 1e-15);
        for n in 1..6 {
            let e = eigen_components(&PhysParams::new(0.7, 0.2, 3.0).unwrap(), n);
            assert!(e.c1 < 0.0 && e.c2 > 0.0 && e.c3 > 0.0 && e.c4 < 0.0);
        }
    }

    #[test]
    fn shear_and_guess_construction() {
        let p = PhysParams::new(2.0, 0.4, 0.3).unwrap();
        let s = shear_solution(&p, 0.0, 8);
        assert!(s.u_hat.iter().all(|&x| x == 0.0));
        assert!(s.v_hat.iter().chain(&s.x_hat).all(|&x| x == 0.0));
        assert_eq!(s.y_hat[0], 0.4);
        assert!(s.y_hat[1..].iter().all(|&x| x == 0.0));
        assert_eq!(s.arclength, std::f64::consts::PI / 2.0);

        let c0 = bifurcation_speed(&p, 1);
        assert_eq!(linear_guess(&p, 0.0, 16), shear_solution(&p, c0, 16));
        assert_relative_eq!(linear_guess(&p, 0.037, 16).amplitude(), 0.037, epsilon = 1e-16);
    }

    #[test]
    fn conjugate_examples() {
        assert_relative_eq!(conjugate_height(0.861023, 0.525), 0.122310, epsilon = 5e-7);
        let h = (2.0 - 0.3) / 3.0;
        assert_relative_eq!(conjugate_height(h, 0.3), h, epsilon = 1e-15);
        assert_relative_eq!(conjugate_height(0.7, 0.0), 0.6333333333333333, epsilon = 1e-15);
        assert_relative_eq!(conjugate_speed(h, 0.3), h * (1.0 - h), epsilon = 1e-15);
        assert_relative_eq!(conjugate_speed(0.5, 2.0), 0.5, epsilon = 1e-15);
        for &(h, w) in &[(0.3, 0.1), (0.91, -2.0), (0.05, 4.0)] {
            assert_relative_eq!(conjugate_height(conjugate_height(h, w), w), h, epsilon = 1e-15);
        }
    }

    #[test]
    fn bore_amplitude_bound() {
        let p = PhysParams::new(1.0, 0.3, 0.525).unwrap();
        assert_relative_eq!(min_bore_amplitude(&p), 0.3833333333333333, epsilon = 1e-15);
        let p = PhysParams::new(1.0, 2.0 / 3.0, 0.0).unwrap();
        assert!(min_bore_amplitude(&p) < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PhysParams::new(0.0, 0.5, 0.0).is_err());
        assert!(PhysParams::new(1.0, 1.0, 0.0).is_err());
        assert!(PhysParams::new(1.0, 0.0, 0.0).is_err());
    }
}
