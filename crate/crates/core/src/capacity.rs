//! Cut-set rate and epsilon-capacity.
//!
//! For a correlation split `alpha` (the fraction of source power spent on
//! fresh information rather than coherent combining) the cut-set rate is
//!
//! ```text
//! R(alpha, p1, p2) = min{ C(alpha*p1/n2),
//!                         C((p1 + p2 + 2*sqrt((1-alpha)*p1*p2)) / (n2+n3)) }
//! ```
//!
//! The first branch is the source-to-relay cut, the second the combined
//! cut into the destination. The optimal split `alpha_tilde` either sits at
//! 1 (relay cut weaker everywhere) or equalizes the two branches; because
//! the channel is degraded, the epsilon-capacity under average error
//! probability `eps` is exactly this rate with both powers inflated by
//! `1/(1-eps)`:
//!
//! ```text
//! C_eps = max_alpha R(alpha, p1/(1-eps), p2/(1-eps))
//! ```
//!
//! so the capacity strictly grows with the tolerated error probability
//! (no strong converse).

use crate::channel::ChannelParams;
use crate::math::capacity;
use crate::{Error, Result};
use serde::Serialize;

/// Which cut attains the minimum at the reported rate.
///
/// `MultipleAccess` is kept for completeness: it cannot be returned by
/// [`eps_capacity`], because at the optimal split the destination cut is
/// never the strict minimum (an interior optimum equalizes the branches,
/// and at `alpha = 1` the relay cut is the weaker one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingSide {
    Relay,
    MultipleAccess,
    Both,
}

/// Result of an epsilon-capacity evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CapacityResult {
    /// The rate in nats per channel use.
    pub rate_nats: f64,
    /// The optimal power split.
    pub alpha_star: f64,
    /// Which branch of the cut-set minimum binds, at tolerance 1e-9.
    pub binding_side: BindingSide,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

fn check_powers(p1: f64, p2: f64) -> Result<()> {
    for (name, p) in [("p1", p1), ("p2", p2)] {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!(
                "power {name} must be finite and nonnegative, got {p}"
            )));
        }
    }
    Ok(())
}

/// The two branches of the cut-set bound at split `alpha` and powers
/// `(p1, p2)`; noise variances come from `ch`.
fn cutset_branches(alpha: f64, p1: f64, p2: f64, ch: &ChannelParams) -> Result<(f64, f64)> {
    let relay = capacity(alpha * p1 / ch.n2)?;
    let mac = capacity((p1 + p2 + 2.0 * ((1.0 - alpha) * p1 * p2).sqrt()) / (ch.n2 + ch.n3))?;
    Ok((relay, mac))
}

/// Cut-set rate at an arbitrary split `alpha` with explicit powers.
///
/// ```
/// let ch = gdrc::ChannelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
/// let r = gdrc::capacity::r_cutset(1.0, 2.0, 1.0, &ch).unwrap();
/// // min{C(2), C(1.5)} = C(1.5)
/// assert!((r - 0.45814536593707753259).abs() < 1e-12);
/// ```
pub fn r_cutset(alpha: f64, p1: f64, p2: f64, ch: &ChannelParams) -> Result<f64> {
    ch.validate()?;
    check_alpha(alpha)?;
    check_powers(p1, p2)?;
    let (relay, mac) = cutset_branches(alpha, p1, p2, ch)?;
    Ok(relay.min(mac))
}

// Bisection control: absolute tolerance on alpha and a hard iteration cap.
const ALPHA_TOL: f64 = 1e-12;
const MAX_ITERS: u32 = 200;
// Branches closer than this are reported as jointly binding.
const BINDING_TOL: f64 = 1e-9;

/// Optimal power split for powers `(p1, p2)` on channel `ch`.
///
/// Returns 1 when the relay cut is the bottleneck even at full power
/// (`p1/n2 <= (p1+p2)/(n2+n3)`); otherwise bisects for the unique interior
/// crossing of the two branches. The relay branch grows and the destination
/// branch shrinks in `alpha`, so the gap is strictly monotone and the root
/// is unique.
///
/// The split depends on the powers only through their ratio and the noise
/// levels, so scaling `(p1, p2)` by a common factor leaves it unchanged.
pub fn alpha_tilde(p1: f64, p2: f64, ch: &ChannelParams) -> Result<f64> {
    ch.validate()?;
    check_powers(p1, p2)?;
    if p1 / ch.n2 <= (p1 + p2) / (ch.n2 + ch.n3) {
        return Ok(1.0);
    }
    let gap = |alpha: f64| -> Result<f64> {
        let (relay, mac) = cutset_branches(alpha, p1, p2, ch)?;
        Ok(relay - mac)
    };
    // gap(0) = C(0) - C(positive) < 0 and gap(1) > 0 in this branch.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut iters = 0;
    while hi - lo > ALPHA_TOL {
        if iters >= MAX_ITERS {
            return Err(Error::Solver(format!(
                "alpha bisection did not reach tol {ALPHA_TOL} in {MAX_ITERS} iterations"
            )));
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    Ok(0.5 * (lo + hi))
}

/// Epsilon-capacity: cut-set rate at the optimal split with powers
/// inflated by `1/(1-eps)`.
///
/// Requires `0 <= eps < 1`; `eps = 0` gives the ordinary capacity.
pub fn eps_capacity(eps: f64, ch: &ChannelParams) -> Result<CapacityResult> {
    ch.validate()?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!(
            "eps must lie in [0, 1), got {eps}"
        )));
    }
    let p1 = ch.p1 / (1.0 - eps);
    let p2 = ch.p2 / (1.0 - eps);
    let alpha = alpha_tilde(p1, p2, ch)?;
    let (relay, mac) = cutset_branches(alpha, p1, p2, ch)?;
    let binding_side = if (relay - mac).abs() <= BINDING_TOL {
        BindingSide::Both
    } else if relay < mac {
        BindingSide::Relay
    } else {
        BindingSide::MultipleAccess
    };
    Ok(CapacityResult {
        rate_nats: relay.min(mac),
        alpha_star: alpha,
        binding_side,
    })
}
