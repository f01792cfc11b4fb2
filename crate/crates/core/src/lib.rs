//! Explicit Wasserstein convergence bounds for general state-space Markov
//! chains.
//!
//! A small sigmoid network is trained to solve the contractive drift
//! equation `KV = V - U`, where `KV(x) = E[Df(x) V(f(x))]`. The trained
//! function is then checked on a point set with Monte-Carlo estimates of
//! `K`, and the certified drift is turned into a bound
//! `W(X_n, X_inf) <= C r^n`, or into a polynomial bound when a sequence of
//! equations is solved.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod bounds;
pub mod certifier;
pub mod chain;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod net;
pub mod rng;
pub mod stats;
pub mod trainer;
pub mod value;

pub use error::{Error, Result};
