//! Posted-price mechanisms for selling one item over a finite horizon with
//! Poisson arrivals and time-discounted valuations.
//!
//! The crate constructs the optimal continuous-price mechanism (closed form
//! under a linear discount, shooting construction otherwise), a
//! piecewise-constant variant, and the arrival-indexed ESoES-SS baseline;
//! evaluates them analytically (expected revenue, competitive ratios, lower
//! bounds) and empirically (seeded, reproducible Monte Carlo); and packages
//! the experiment sweeps as CSV-ready tables.

// Float guards are written `!(x > 0.0)` on purpose: unlike `x <= 0.0`, the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod checks;
pub mod discounting;
pub mod error;
pub mod experiments;
pub mod mechanisms;
pub mod numerics;
pub mod simulator;
pub mod valuations;

pub use error::{Error, Result};
