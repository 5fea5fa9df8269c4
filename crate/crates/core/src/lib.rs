//! Steady periodic waves on the interface between two constant-vorticity
//! layers in a channel of unit depth.
//!
//! The interface and the trace of a holomorphic modified velocity on it are
//! expanded in truncated Fourier series and determined by collocating two
//! periodic Cauchy-integral identities, the kinematic condition, a
//! constant-speed parametrisation and a mean-depth constraint. Branches are
//! traced from the shear family by Newton continuation, and the flow away
//! from the interface is rebuilt from the same integral representation.
//!
//! Module map:
//!
//! - [`model`]: shear flows, dispersion relation, conjugate flows, initial guesses.
//! - [`state`]: the Fourier unknown, its evaluation and symmetry maps.
//! - [`residual`]: the discrete system and admissibility guards.
//! - [`solver`]: finite-difference Newton.
//! - [`continuation`]: branch tracing, termination classification, sweeps.
//! - [`fields`]: interior velocity, stream function, stagnation points, invariants.
//! - [`io`]: JSON records, CSV tables and SVG figures.
//! - [`cli`]: the `twolayer` command-line front end.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod fields;
pub mod io;
pub mod model;
pub mod residual;
pub mod solver;
pub mod state;

pub use continuation::{Branch, ContinuationPolicy, Verdict};
pub use error::{Error, InadmissibleReason, Result};
pub use fields::FieldEvaluator;
pub use model::{PhysParams, ShearFlow};
pub use residual::{ClosureSpec, KinematicGauge, ResidualReport, System};
pub use solver::{newton_solve, NewtonOptions, NewtonResult};
pub use state::{CollocationGrid, SolutionVector};
