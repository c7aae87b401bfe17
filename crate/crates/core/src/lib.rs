//! Inverse optimal control for control-affine systems with a quadratic value
//! function `V(x) = x'Px`.
//!
//! Given `f`, `g`, `R` and `P`, the crate computes the optimal feedback in
//! closed form, synthesizes the state weight `Q(x)` for which `V` is the
//! optimal value (discrete-time Bellman or continuous-time HJB, both with
//! discounting), checks the discount and drift conditions that make `Q`
//! non-negative, simulates the closed loop, and cross-checks everything
//! against brute-force oracles.

pub mod cli;
pub mod continuous;
pub mod discrete;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod report;
pub mod sampling;
pub mod system;
pub mod trajectory;
pub mod verification;

pub use error::{Error, Result};
pub use geometry::{Control, DiscountFactor, QuadraticValue, Regime, State, WeightMatrix};
pub use report::VerificationReport;
pub use sampling::{LipschitzEstimate, SamplingSpec};
pub use system::{builtin_system, load_system, SystemConfig, SystemModel};
pub use trajectory::{Trajectory, TrajectorySample};
