//! Intrinsic successive convexification (iSCvx) for discrete-time trajectory
//! optimization on the unit quaternions, with an extrinsic SCvx baseline and
//! a benchmark harness for constrained attitude guidance.

pub mod attitude;
pub mod error;
pub mod harness;
pub mod iscvx;
pub mod linearize;
pub mod manifold;
pub mod quat;
pub mod scvx_baseline;
pub mod subproblem;

pub use error::{Error, Result};
