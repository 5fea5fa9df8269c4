use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a candidate interface was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InadmissibleReason {
    /// The interface touches or crosses a wall.
    Wall,
    /// `|Z'(t)|` vanishes somewhere.
    DegenerateParametrisation,
    /// The interface crosses itself.
    SelfIntersection,
    /// The fluid velocity vanishes on the interface.
    InterfaceStagnation,
    /// Non-finite coefficients or a non-positive arclength.
    NonFinite,
}

impl fmt::Display for InadmissibleReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InadmissibleReason::Wall => "interface reaches a wall",
            InadmissibleReason::DegenerateParametrisation => "degenerate parametrisation",
            InadmissibleReason::SelfIntersection => "interface self-intersects",
            InadmissibleReason::InterfaceStagnation => "stagnation on the interface",
            InadmissibleReason::NonFinite => "non-finite state",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("Cauchy kernel evaluated too close to a pole")]
    PoleProximity,
    #[error("inadmissible interface: {0}")]
    Inadmissible(InadmissibleReason),
    #[error("Newton did not converge after {iterations} iterations (best residual {best_norm:.3e})")]
    NonConvergence { iterations: usize, best_norm: f64 },
    #[error("continuation stopped ({reason}) at amplitude {reached} before reaching {target}")]
    Stalled { reached: f64, target: f64, reason: String },
    #[error("singular Jacobian (condition estimate {0:.3e})")]
    SingularJacobian(f64),
    #[error("point lies on the interface")]
    OnInterface,
    #[error("point lies outside the channel")]
    OutOfDomain,
    #[error("need at least 3 diagnosed branch points, have {0}")]
    InsufficientEvidence(usize),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
