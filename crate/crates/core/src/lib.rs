//! Convergence-rate machinery for reflected Markov processes on [0, ∞).
//!
//! A drift condition LV ≤ −φ(V) is certified on a grid ([`lyapunov`]),
//! turned into a time-space function G and a bound 2·V(x₂)/h(t)
//! ([`rate`]), and checked against a synchronous coupling of two simulated
//! copies ([`coupling`], [`estimate`]).
//!
//! The crate is `no_std` with `alloc`; IO and the command line live in the
//! `ergoline` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is the NaN-rejecting form used throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coupling;
pub mod estimate;
pub mod expr;
pub mod lyapunov;
pub mod numeric;
pub mod process;
pub mod rate;

pub use coupling::{coupled_paths, survival, CoupledSample, PathExecutor, Sequential, StartSpec};
pub use estimate::{verify_bound, BoundReport, BoundStatus};
pub use expr::Expr;
pub use lyapunov::{drift_check, LyapunovSpec, RateCertificate};
pub use process::{ProcessModel, SimConfig};
pub use rate::{PhiSpec, ProductDecomposition, RateKernel};
