//! Binary hypothesis testing primitives and self-checking probability
//! probes.
//!
//! The quantity `beta_delta(p || q)` is the minimum type-II error of a
//! randomized test that keeps acceptance probability at least `delta`
//! under `p`. On finite alphabets the optimum is the Neyman-Pearson test:
//! accept in decreasing order of the likelihood ratio `p/q`, randomizing
//! exactly on the boundary outcome ([`beta_discrete`]). For a unit-variance
//! Gaussian mean shift the same optimum has the closed form
//! `Phi(Phi^(-1)(delta) - d)` ([`beta_gaussian_shift`]).
//!
//! On top of these sit three kinds of probes used to validate the error
//! analysis numerically:
//!
//! * [`uniform_agreement_check`]: for a pair `(U, V)` with uniform `U` on
//!   `W` and any product reference `p_U x s_V`, the type-II error at level
//!   `1 - Pr[U != V]` is at most `1/|W|` (the converse's engine),
//! * [`mgf_identity`]: a Monte Carlo check of an exact
//!   moment-generating-function identity for adapted processes under iid
//!   Gaussian noise, whose right side does not depend on the process,
//! * [`packing_probe`]: empirical miss/confusion rates of the threshold
//!   decoders against their analytic bounds (`1/sqrt(n)` for the true
//!   tuple, `(m-1) e^(-threshold)` for impostors), reusing the codec's
//!   lazy codeword generator so the probe sees the scheme's exact
//!   randomness model.
//!
//! Monte Carlo loops parallelize over trial- or chunk-indexed substreams
//! and merge in index order, so results are independent of thread count.

use crate::bounds::MomentPair;
use crate::channel::ChannelParams;
use crate::codec::{gen_row, threshold_value, SchemeParams};
use crate::math::log_gauss_iid;
use crate::rng::RngStream;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{name} has empty support")));
    }
    let mut sum = 0.0;
    for &x in p {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!(
                "{name} has an invalid probability {x}"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "{name} sums to {sum}, expected 1 within 1e-12"
        )));
    }
    Ok(())
}

/// Exact minimum type-II error between finite distributions on a common
/// indexed alphabet.
///
/// Greedy Neyman-Pearson: outcomes in decreasing `p/q` order (compared by
/// cross multiplication, so zero masses need no special casing), taking
/// `p`-mass until `delta` is reached and charging the proportional share
/// of the boundary outcome's `q`-mass.
pub fn beta_discrete(delta: f64, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!(
            "alphabet mismatch: {} vs {} outcomes",
            p.len(),
            q.len()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    // Descending p/q; p_i/q_i > p_j/q_j  <=>  p_i q_j > p_j q_i.
    order.sort_by(|&i, &j| (p[j] * q[i]).partial_cmp(&(p[i] * q[j])).unwrap());
    let mut remaining = delta;
    let mut beta = 0.0;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = p[i].min(remaining);
        beta += q[i] * (take / p[i]);
        remaining -= take;
    }
    Ok(beta)
}

/// Reference implementation of [`beta_discrete`] by exhaustive search over
/// all deterministic acceptance sets plus single-outcome boundary
/// randomization. Exponential in the alphabet size; capped at 16 outcomes.
pub fn beta_discrete_exhaustive(delta: f64, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!(
            "alphabet mismatch: {} vs {} outcomes",
            p.len(),
            q.len()
        )));
    }
    if p.len() > 16 {
        return Err(Error::Domain(format!(
            "exhaustive search is exponential; {} outcomes exceed the cap of 16",
            p.len()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let k = p.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << k) {
        let ps: f64 = (0..k).filter(|&i| mask >> i & 1 == 1).map(|i| p[i]).sum();
        let qs: f64 = (0..k).filter(|&i| mask >> i & 1 == 1).map(|i| q[i]).sum();
        if ps >= delta - 1e-15 {
            best = best.min(qs);
        }
        for j in 0..k {
            if mask >> j & 1 == 1 || p[j] == 0.0 {
                continue;
            }
            if ps < delta && ps + p[j] >= delta - 1e-15 {
                best = best.min(qs + q[j] * (delta - ps) / p[j]);
            }
        }
    }
    Ok(best)
}

/// Minimum type-II error between `N(0,1)` and `N(d,1)` at acceptance level
/// `delta`: `Phi(Phi^(-1)(delta) - d)`.
pub fn beta_gaussian_shift(delta: f64, d: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    if !d.is_finite() {
        return Err(Error::Domain(format!("shift must be finite, got {d}")));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    if delta == 1.0 {
        return Ok(1.0);
    }
    let norm = Normal::standard();
    Ok(norm.cdf(norm.inverse_cdf(delta) - d))
}

/// The computable lower bound `(delta - Pr_p[p/q >= xi]) / xi` on
/// `beta_delta(p || q)`; may be negative (still valid).
pub fn beta_lower_bound(delta: f64, xi: f64, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Domain(format!(
            "alphabet mismatch: {} vs {} outcomes",
            p.len(),
            q.len()
        )));
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::Domain(format!("xi must be positive, got {xi}")));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    // p/q >= xi with q = 0 counts as infinite ratio.
    let tail: f64 = (0..p.len())
        .filter(|&i| p[i] > 0.0 && p[i] >= xi * q[i])
        .map(|i| p[i])
        .sum();
    Ok((delta - tail) / xi)
}

/// A joint distribution on a finite grid, rows indexing `U`.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    rows: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::Domain("joint needs a nonempty grid".into()));
        }
        let nv = rows[0].len();
        let mut sum = 0.0;
        for r in &rows {
            if r.len() != nv {
                return Err(Error::Domain("joint rows have unequal lengths".into()));
            }
            for &x in r {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(Error::Domain(format!(
                        "joint has an invalid probability {x}"
                    )));
                }
                sum += x;
            }
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "joint sums to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { rows })
    }

    pub fn nu(&self) -> usize {
        self.rows.len()
    }

    pub fn nv(&self) -> usize {
        self.rows[0].len()
    }

    fn row_marginal(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Result of one agreement-probability check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AgreementReport {
    /// `Pr[U != V]` under the joint.
    pub eps: f64,
    /// `beta_{1-eps}(p_UV || p_U x s_V)`.
    pub beta: f64,
    /// `1 / |W|`.
    pub bound: f64,
    pub holds: bool,
}

/// For uniform `U` on a square grid: the type-II error of testing the
/// joint against the product `p_U x s_V` at level `1 - Pr[U != V]` never
/// exceeds `1/|W|`, for any reference `s_V`.
pub fn uniform_agreement_check(joint: &DiscreteJoint, s_v: &[f64]) -> Result<AgreementReport> {
    if joint.nu() != joint.nv() {
        return Err(Error::Domain(format!(
            "agreement check needs a square grid, got {}x{}",
            joint.nu(),
            joint.nv()
        )));
    }
    if s_v.len() != joint.nv() {
        return Err(Error::Domain(format!(
            "reference has {} outcomes, expected {}",
            s_v.len(),
            joint.nv()
        )));
    }
    check_distribution("s_v", s_v)?;
    let nw = joint.nu();
    let marg = joint.row_marginal();
    for (u, &m) in marg.iter().enumerate() {
        if (m - 1.0 / nw as f64).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "row marginal is not uniform: p_U({u}) = {m}"
            )));
        }
    }
    let agree: f64 = (0..nw).map(|u| joint.rows[u][u]).sum();
    let eps = 1.0 - agree;
    if eps >= 1.0 {
        return Err(Error::Domain(
            "agreement probability is zero; level 1-eps is degenerate".into(),
        ));
    }
    // Flatten to the product alphabet.
    let mut p = Vec::with_capacity(nw * nw);
    let mut q = Vec::with_capacity(nw * nw);
    for row in &joint.rows {
        for (v, mass) in row.iter().enumerate() {
            p.push(*mass);
            q.push(s_v[v] / nw as f64);
        }
    }
    let beta = beta_discrete(1.0 - eps, &p, &q)?;
    let bound = 1.0 / nw as f64;
    Ok(AgreementReport {
        eps,
        beta,
        bound,
        holds: beta <= bound + 1e-12,
    })
}

/// The adapted process plugged into the MGF identity. In each case `X_k`
/// is independent of `(Z_k, Z_{k+1}, ...)`, which is all the identity
/// needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XProcess {
    Zero,
    Constant(f64),
    IidStdNormal,
    /// `X_k = Z_{k-1}` (zero at `k = 1`): adapted but strongly dependent
    /// on the past noise.
    EchoNoise,
}

impl XProcess {
    pub fn name(&self) -> &'static str {
        match self {
            XProcess::Zero => "zero",
            XProcess::Constant(_) => "constant",
            XProcess::IidStdNormal => "iid_std_normal",
            XProcess::EchoNoise => "echo_noise",
        }
    }
}

/// One MGF identity instance.
#[derive(Debug, Clone, Copy)]
pub struct MgfSpec {
    pub n: u64,
    pub t: f64,
    pub p: f64,
    pub x_process: XProcess,
}

/// Monte Carlo vs closed form for one spec.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MgfReport {
    pub mc_estimate: f64,
    pub closed_form: f64,
    pub std_err: f64,
    /// The integrand's variance is too large for the std error to be
    /// trustworthy at this `t`.
    pub high_variance: bool,
}

const MGF_CHUNK: u64 = 4096;

/// Estimate `E[exp(t sum(-P Z_k^2 + 2 X_k Z_k + P) +
/// (2t^2/(1+2tP)) (nP - sum X_k^2))]` by Monte Carlo and compare with the
/// closed form `(1+2tP)^(-n/2) exp(ntP + 2nt^2P/(1+2tP))`, which holds for
/// every adapted `X` with `|X_k| <= sqrt(P)`-type integrability; in
/// particular it does not depend on the process.
pub fn mgf_identity(spec: &MgfSpec, trials: u64, rng: &RngStream) -> Result<MgfReport> {
    if spec.n < 1 || trials < 1 {
        return Err(Error::Domain("need n >= 1 and trials >= 1".into()));
    }
    if !(spec.t > 0.0) || !(spec.p > 0.0) {
        return Err(Error::Domain(format!(
            "need t > 0 and P > 0, got t = {}, P = {}",
            spec.t, spec.p
        )));
    }
    let (t, pp, n) = (spec.t, spec.p, spec.n as usize);
    let coef = 2.0 * t * t / (1.0 + 2.0 * t * pp);
    let chunks = trials.div_ceil(MGF_CHUNK);
    // Per-chunk substreams merged in index order: thread-count
    // independent.
    let partials: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * MGF_CHUNK;
            let hi = ((c + 1) * MGF_CHUNK).min(trials);
            let mut r = rng.labeled("chunk", c).rng();
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in lo..hi {
                let mut s1 = 0.0;
                let mut sx2 = 0.0;
                let mut prev_z = 0.0;
                for _ in 0..n {
                    let x = match spec.x_process {
                        XProcess::Zero => 0.0,
                        XProcess::Constant(c) => c,
                        XProcess::IidStdNormal => r.sample::<f64, _>(StandardNormal),
                        XProcess::EchoNoise => prev_z,
                    };
                    let z: f64 = r.sample::<f64, _>(StandardNormal);
                    s1 += -pp * z * z + 2.0 * x * z + pp;
                    sx2 += x * x;
                    prev_z = z;
                }
                let v = (t * s1 + coef * (spec.n as f64 * pp - sx2)).exp();
                sum += v;
                sumsq += v * v;
            }
            (sum, sumsq)
        })
        .collect();
    let (sum, sumsq) = partials
        .iter()
        .fold((0.0, 0.0), |(a, b), &(s, q)| (a + s, b + q));
    let tf = trials as f64;
    let mc_estimate = sum / tf;
    let var = ((sumsq - sum * sum / tf) / (tf - 1.0).max(1.0)).max(0.0);
    let std_err = (var / tf).sqrt();
    let closed_form = (1.0 + 2.0 * t * pp).powf(-(spec.n as f64) / 2.0)
        * (spec.n as f64 * t * pp + 2.0 * spec.n as f64 * t * t * pp / (1.0 + 2.0 * t * pp)).exp();
    let high_variance = !std_err.is_finite() || std_err > 0.1 * closed_form;
    Ok(MgfReport {
        mc_estimate,
        closed_form,
        std_err,
        high_variance,
    })
}

/// Which decoding link a packing probe exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingLink {
    /// Message against the relay observation, bin context known.
    Relay,
    /// Bin codeword against the destination, message part marginalized.
    Bin,
    /// Message against the destination, bin context known.
    Dest,
}

/// Empirical packing rates and their analytic bounds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PackingReport {
    pub link: PackingLink,
    pub n: u64,
    pub m_codewords: u64,
    pub trials: u64,
    /// Rate at which the true tuple misses the threshold set, and its
    /// bound `1/sqrt(n)`.
    pub p_miss: f64,
    pub bound_miss: f64,
    pub se_miss: f64,
    /// Rate at which some impostor lands in the threshold set, and its
    /// bound `(m-1) e^(-threshold)`.
    pub p_confuse: f64,
    pub bound_confuse: f64,
    pub se_confuse: f64,
}

/// Log-likelihood-ratio scorer for a candidate row, with the observation
/// and the known-context row baked in.
type RowScorer = Box<dyn Fn(&[f64]) -> f64>;

/// Monte Carlo packing check on one link.
///
/// Each trial draws a fresh codeword pair from the scheme's lazy row
/// generator, sends it through the link's marginal channel, and tests the
/// true tuple plus `m_codewords - 1` independent impostors against the
/// threshold set.
pub fn packing_probe(
    n: u64,
    m_codewords: u64,
    link: PackingLink,
    params: &SchemeParams,
    ch: &ChannelParams,
    trials: u64,
    rng: &RngStream,
) -> Result<PackingReport> {
    if n < 1 || m_codewords < 1 || trials < 1 {
        return Err(Error::Domain(
            "need n, m_codewords, trials all >= 1".into(),
        ));
    }
    ch.validate()?;
    let mom = params.moments(ch)?;
    let pair: MomentPair = match link {
        PackingLink::Relay => mom.relay,
        PackingLink::Bin => mom.bin,
        PackingLink::Dest => mom.sub,
    };
    let thr = threshold_value(n, &pair);
    let nn = n as usize;
    let var = params.codeword_variance;
    let cu = (params.alpha * params.p1n).sqrt();
    let cv_src = ((1.0 - params.alpha) * params.p1n).sqrt();
    let cv_dest = cv_src + params.p2n.sqrt();
    let u_pow = var * params.alpha * params.p1n;

    let outcomes: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let ts = rng.labeled("trial", t);
            let u0 = gen_row(&ts, "U", 0, var, nn);
            let v0 = gen_row(&ts, "V", 0, var, nn);
            let mut noise = ts.labeled("noise", 0).rng();
            // Candidate density for this link, with the observation and
            // the known-context row baked in.
            let density: RowScorer = match link {
                PackingLink::Relay => {
                    let sd = ch.n2.sqrt();
                    let y: Vec<f64> = (0..nn)
                        .map(|k| {
                            cu * u0[k]
                                + cv_src * v0[k]
                                + noise.sample::<f64, _>(StandardNormal) * sd
                        })
                        .collect();
                    let v = v0.clone();
                    let n2 = ch.n2;
                    Box::new(move |u: &[f64]| {
                        let centered: Vec<f64> = (0..nn)
                            .map(|k| y[k] - cu * u[k] - cv_src * v[k])
                            .collect();
                        let base: Vec<f64> = (0..nn).map(|k| y[k] - cv_src * v[k]).collect();
                        log_gauss_iid(&centered, 0.0, n2).unwrap()
                            - log_gauss_iid(&base, 0.0, n2 + u_pow).unwrap()
                    })
                }
                PackingLink::Bin => {
                    let sd = (ch.n2 + ch.n3).sqrt();
                    let y: Vec<f64> = (0..nn)
                        .map(|k| {
                            cu * u0[k]
                                + cv_dest * v0[k]
                                + noise.sample::<f64, _>(StandardNormal) * sd
                        })
                        .collect();
                    // The message part acts as extra noise here.
                    let var_given_v = ch.n2 + ch.n3 + u_pow;
                    let var_y3 = var_given_v + var * cv_dest * cv_dest;
                    Box::new(move |v: &[f64]| {
                        let centered: Vec<f64> =
                            (0..nn).map(|k| y[k] - cv_dest * v[k]).collect();
                        log_gauss_iid(&centered, 0.0, var_given_v).unwrap()
                            - log_gauss_iid(&y, 0.0, var_y3).unwrap()
                    })
                }
                PackingLink::Dest => {
                    let sd = (ch.n2 + ch.n3).sqrt();
                    let y: Vec<f64> = (0..nn)
                        .map(|k| {
                            cu * u0[k]
                                + cv_dest * v0[k]
                                + noise.sample::<f64, _>(StandardNormal) * sd
                        })
                        .collect();
                    let v = v0.clone();
                    let n23 = ch.n2 + ch.n3;
                    Box::new(move |u: &[f64]| {
                        let centered: Vec<f64> = (0..nn)
                            .map(|k| y[k] - cu * u[k] - cv_dest * v[k])
                            .collect();
                        let base: Vec<f64> = (0..nn).map(|k| y[k] - cv_dest * v[k]).collect();
                        log_gauss_iid(&centered, 0.0, n23).unwrap()
                            - log_gauss_iid(&base, 0.0, n23 + u_pow).unwrap()
                    })
                }
            };
            let true_row = match link {
                PackingLink::Bin => &v0,
                _ => &u0,
            };
            let miss = density(true_row) < thr;
            let impostor_bank = match link {
                PackingLink::Bin => "V",
                _ => "U",
            };
            let mut confuse = false;
            for j in 1..m_codewords {
                let row = gen_row(&ts, impostor_bank, j, var, nn);
                if density(&row) >= thr {
                    confuse = true;
                    break;
                }
            }
            (miss, confuse)
        })
        .collect();

    let misses = outcomes.iter().filter(|o| o.0).count() as f64;
    let confusions = outcomes.iter().filter(|o| o.1).count() as f64;
    let tf = trials as f64;
    let rate_se = |k: f64| {
        let p = k / tf;
        (p, (p * (1.0 - p) / tf).sqrt())
    };
    let (p_miss, se_miss) = rate_se(misses);
    let (p_confuse, se_confuse) = rate_se(confusions);
    Ok(PackingReport {
        link,
        n,
        m_codewords,
        trials,
        p_miss,
        bound_miss: 1.0 / (n as f64).sqrt(),
        se_miss,
        p_confuse,
        bound_confuse: (m_codewords as f64 - 1.0) * (-thr).exp(),
        se_confuse,
    })
}

/// Verify `(1 + a/m)^m <= e^a <= (1 + a/m)^(m+a)` in log domain.
pub fn exp_inequality(a: f64, m: f64) -> Result<bool> {
    if !(a > 0.0) || !(m > 0.0) || !a.is_finite() || !m.is_finite() {
        return Err(Error::Domain(format!(
            "need a > 0 and m > 0, got a = {a}, m = {m}"
        )));
    }
    let l = (a / m).ln_1p();
    let tol = 1e-12 * a.max(1.0);
    Ok(m * l <= a + tol && a <= (m + a) * l + tol)
}
