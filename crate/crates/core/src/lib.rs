//! Monte Carlo evaluation of a Bismut-type derivative formula for
//! Gruschin-type degenerate diffusions
//!
//! ```text
//! dX_t = dB_t,   dY_t = σ(X_t) dB̃_t
//! ```
//!
//! and for the extension with invertible `σ₁` and drifts `b₁`, `b₂`.
//! Gradients `∇_v P_T f` are estimated as `E[f(X_T, Y_T) M_T]` and checked
//! against finite differences, closed forms, and the gradient, Harnack, and
//! moment inequalities satisfied by these semigroups.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod paths;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
pub use estimators::{MCEstimate, McParams};
pub use exec::ExecPolicy;
pub use model::{Direction, ModelSpec, TestFunction};
pub use paths::{PathFunctionals, TimeGrid};
pub use rng::RngStream;
pub use weights::WeightBreakdown;
