//! Sample-level simulator of the degraded relay channel.
//!
//! One time step takes the pair `(x1, x2)` and produces
//!
//! ```text
//! y2 = x1 + z2,   z2 ~ N(0, n2)
//! y3 = x2 + y2 + z3,   z3 ~ N(0, n3)
//! ```
//!
//! so the destination's observation is a noisier copy of the relay's plus
//! the relay's own transmission. Causality of the relay is enforced
//! structurally: [`run_session`] asks the [`RelayPolicy`] for `x2[k]` while
//! handing it only `y2[0..k]`, then generates step `k`.

use crate::rng::RngStream;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Static description of the channel: powers and noise variances.
///
/// `p1`, `p2` are the expected-power limits of the source and relay;
/// `n2`, `n3` are the variances of the relay-side and extra
/// destination-side noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub p1: f64,
    pub p2: f64,
    pub n2: f64,
    pub n3: f64,
}

impl ChannelParams {
    pub fn new(p1: f64, p2: f64, n2: f64, n3: f64) -> Result<Self> {
        let ch = Self { p1, p2, n2, n3 };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p1", self.p1),
            ("p2", self.p2),
            ("n2", self.n2),
            ("n3", self.n3),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "channel parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A running channel: owns the noise generator and the relay-side history.
pub struct ChannelSession {
    ch: ChannelParams,
    rng: ChaCha12Rng,
    k: u64,
    history_y2: Vec<f64>,
}

impl ChannelSession {
    pub fn new(ch: ChannelParams, noise: &RngStream) -> Result<Self> {
        ch.validate()?;
        Ok(Self {
            ch,
            rng: noise.rng(),
            k: 0,
            history_y2: Vec::new(),
        })
    }

    /// Number of steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.k
    }

    /// Relay observations so far, `y2[0..k]`.
    pub fn history_y2(&self) -> &[f64] {
        &self.history_y2
    }

    /// Advance one step. Draw order is fixed (z2 then z3) so traces are
    /// reproducible byte for byte.
    pub fn step(&mut self, x1: f64, x2: f64) -> (f64, f64) {
        let z2: f64 = self.rng.sample::<f64, _>(StandardNormal) * self.ch.n2.sqrt();
        let z3: f64 = self.rng.sample::<f64, _>(StandardNormal) * self.ch.n3.sqrt();
        let y2 = x1 + z2;
        let y3 = x2 + y2 + z3;
        self.history_y2.push(y2);
        self.k += 1;
        (y2, y3)
    }
}

/// A causal relay: maps the observations `y2[0..k]` to the input `x2[k]`.
pub trait RelayPolicy {
    fn next_input(&mut self, y2_history: &[f64]) -> f64;
}

impl<F: FnMut(&[f64]) -> f64> RelayPolicy for F {
    fn next_input(&mut self, y2_history: &[f64]) -> f64 {
        self(y2_history)
    }
}

/// Everything observable from one session run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub y2: Vec<f64>,
    pub y3: Vec<f64>,
    pub x2: Vec<f64>,
}

/// Run `n` steps of the channel with a fixed source sequence and a causal
/// relay policy.
///
/// `source.len()` must equal `n`. The policy is consulted before each step
/// and never sees the current step's observation.
pub fn run_session(
    ch: &ChannelParams,
    source: &[f64],
    policy: &mut dyn RelayPolicy,
    n: usize,
    noise: &RngStream,
) -> Result<SessionTrace> {
    if source.len() != n {
        return Err(Error::Domain(format!(
            "source length {} does not match session length {n}",
            source.len()
        )));
    }
    let mut session = ChannelSession::new(*ch, noise)?;
    let mut y3s = Vec::with_capacity(n);
    let mut x2s = Vec::with_capacity(n);
    for &x1 in source {
        let x2 = policy.next_input(session.history_y2());
        let (_y2, y3) = session.step(x1, x2);
        y3s.push(y3);
        x2s.push(x2);
    }
    Ok(SessionTrace {
        y2: session.history_y2,
        y3: y3s,
        x2: x2s,
    })
}
