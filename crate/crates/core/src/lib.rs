//! Finite-blocklength analysis of the Gaussian degraded relay channel.
//!
//! The channel has a source, a relay, and a destination:
//!
//! ```text
//! Y2[k] = X1[k] + Z2[k]                 (what the relay hears)
//! Y3[k] = X2[k] + Y2[k] + Z3[k]         (what the destination hears)
//! ```
//!
//! with independent noises `Z2 ~ N(0, N2)`, `Z3 ~ N(0, N3)` and expected
//! per-codeword power limits `P1`, `P2`. Because the destination sees the
//! relay's observation plus extra noise, the channel is physically degraded
//! and its epsilon-capacity is the cut-set rate with the input powers
//! inflated by `1/(1 - eps)`.
//!
//! The crate is organized in four layers:
//!
//! * [`capacity`] and [`bounds`]: closed-form evaluation of the cut-set
//!   rate, the correlation solver, non-asymptotic achievability and converse
//!   bounds, and the second-order gap window.
//! * [`channel`] and [`codec`]: a causal sample-level simulator of the
//!   channel together with the superposition/binning decode-forward code
//!   that the achievability bound analyzes.
//! * [`hypothesis`]: small self-checking probes (binary hypothesis testing,
//!   packing/covering error rates, a moment-generating-function identity)
//!   used to validate the analysis pieces numerically.
//! * [`harness`]: reproducible Monte Carlo experiment driver with CSV/JSON
//!   output, plus the `verify` probe suites exposed by the CLI.
//!
//! All rates and log-cardinalities are in nats. Deterministic seeding is
//! pervasive: every random quantity is derived from a master seed through
//! [`rng::RngStream`], so results are independent of thread count.

// Frozen reference constants keep every digit of the value they were
// computed from, and domain guards are written `!(x > 0.0)` on purpose so
// NaN fails them.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod capacity;
pub mod channel;
pub mod codec;
pub mod harness;
pub mod hypothesis;
pub mod math;
pub mod rng;

pub use channel::ChannelParams;
pub use rng::RngStream;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative solver failed to converge.
    #[error("solver error: {0}")]
    Solver(String),
    /// A configuration is structurally invalid.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
