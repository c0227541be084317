//! Simulation and verification toolkit for optimal control of scalar
//! jump-diffusions whose drift is only piecewise Lipschitz.
//!
//! The state equation
//!
//! ```text
//! dX_t = (b1(X_t, α_t) + b2(X_t) + b3(X_t)) dt + σ dB_t + ∫ γ(z) N(dz, dt)
//! ```
//!
//! is simulated with a jump-adapted Euler scheme ([`sim`]) or through the
//! change of variable that removes the drift discontinuities ([`transform`]).
//! [`smp`] computes the first variation and adjoint processes and checks the
//! maximum principle; [`insurance`] holds the surplus-control application.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod insurance;
pub mod io;
pub mod model;
pub mod mollify;
pub mod piecewise;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod smp;
pub mod stats;
pub mod transform;

pub use error::{DumpError, ModelError, SimError, SmpError, TransformError};
pub use model::{
    sgn, ControlPolicy, ControlSet, ControlledDrift, DriftDecomposition, JumpMap, JumpModel, JumpSize, PolicyKind, RunningCost, StateDrift, TerminalCost,
};
pub use piecewise::{Piece, PiecewiseLipschitzFn, SmoothPiece};
pub use sim::{simulate_bundle, simulate_path, ControlledSystem, PathBundle, SamplePath, Scheme, SimConfig, Simulator};
pub use stats::MonteCarloEstimate;
pub use transform::TransformG;
