//! Experiment orchestration: seeded parallel Monte Carlo over the
//! decode-forward scheme, summaries with confidence intervals, parameter
//! sweeps with matching formula bounds, and the self-check suites behind
//! the CLI's `verify` command.
//!
//! Reproducibility contract: the full pipeline (config -> per-trial CSV ->
//! summary) is a deterministic function of the config contents. Trial `t`
//! draws all of its randomness from `RngStream::new(master_seed, t)`,
//! results are merged in trial order, and nothing is keyed on worker
//! identity, so the worker count never changes a byte of output.
//!
//! Confidence intervals are 95% normal approximations by default; the
//! `exact_ci` flag switches the rate intervals to Clopper-Pearson, which
//! is the sane choice below roughly a thousand trials. With a single
//! trial the intervals are degenerate and flagged as such.
//!
//! Sweeps rescale the base config along one axis and report, next to each
//! point's empirical rates, the formula-side quantities (`C_eps`, exact
//! achievable, converse) so the two sides can be plotted together. The
//! per-row cut-set diagnostic is reported and never asserted: finite-n
//! custom-mode schemes are not bound by the formula constants.

use crate::bounds::{achievable_log_m_exact, converse_log_m, second_order_window};
use crate::capacity::{eps_capacity, r_cutset};
use crate::channel::ChannelParams;
use crate::codec::{build_scheme, simulate_trial, SchemeMode, SchemeParams, TrialRecord};
use crate::hypothesis::{
    beta_discrete, beta_discrete_exhaustive, beta_gaussian_shift, beta_lower_bound,
    exp_inequality, mgf_identity, packing_probe, uniform_agreement_check, DiscreteJoint,
    MgfSpec, PackingLink, XProcess,
};
use crate::math::{mean, sample_var};
use crate::rng::RngStream;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

/// Everything one experiment needs; the JSON config file mirrors these
/// keys exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeParams,
    pub ch: ChannelParams,
    pub trials: u64,
    pub master_seed: u64,
    pub workers: usize,
    /// Directory for `trials.csv` and `summary.json`; nothing is written
    /// when absent.
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Clopper-Pearson intervals for the rate estimates instead of the
    /// normal approximation.
    #[serde(default)]
    pub exact_ci: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.scheme.validate(&self.ch)
    }
}

/// A point estimate with its 95% CI half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ci {
    pub value: f64,
    pub half_width: f64,
}

/// Fraction of trials with at least one wrong submessage at each decoding
/// stage, over all trials (erased ones included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRates {
    pub relay: f64,
    pub bin: f64,
    pub sub: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub trials: u64,
    pub error_rate: Ci,
    pub erased_rate: Ci,
    pub mean_power_src: Ci,
    pub mean_power_relay: Ci,
    pub rho_hat: f64,
    pub stage_breakdown: StageRates,
    /// Fewer than two trials: the half-widths above are meaningless.
    pub degenerate_ci: bool,
}

const Z_95: f64 = 1.959963984540054;

/// 95% CI for a Bernoulli rate from `count` successes in `trials`.
///
/// Normal approximation by default; `exact` switches to Clopper-Pearson,
/// reported as a symmetric half-width `max(hi - p, p - lo)` so it still
/// covers the (asymmetric) exact interval.
pub fn rate_ci(count: u64, trials: u64, exact: bool) -> Ci {
    let p = count as f64 / trials as f64;
    if trials < 2 {
        return Ci {
            value: p,
            half_width: f64::NAN,
        };
    }
    let half_width = if exact {
        let (k, t) = (count as f64, trials as f64);
        let lo = if count == 0 {
            0.0
        } else {
            Beta::new(k, t - k + 1.0).unwrap().inverse_cdf(0.025)
        };
        let hi = if count == trials {
            1.0
        } else {
            Beta::new(k + 1.0, t - k).unwrap().inverse_cdf(0.975)
        };
        (hi - p).max(p - lo)
    } else {
        Z_95 * (p * (1.0 - p) / trials as f64).sqrt()
    };
    Ci {
        value: p,
        half_width,
    }
}

/// 95% normal-approximation CI for a sample mean.
pub fn mean_ci(samples: &[f64]) -> Result<Ci> {
    let value = mean(samples)?;
    let half_width = if samples.len() < 2 {
        f64::NAN
    } else {
        Z_95 * (sample_var(samples)? / samples.len() as f64).sqrt()
    };
    Ok(Ci { value, half_width })
}

/// Aggregate a batch of trial records.
pub fn summarize(records: &[TrialRecord], exact_ci: bool) -> Result<ExperimentSummary> {
    if records.is_empty() {
        return Err(Error::Domain("cannot summarize zero trials".into()));
    }
    let trials = records.len() as u64;
    let count = |f: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count() as u64;
    let errors = count(&|r| r.error);
    let erased = count(&|r| r.erased);
    let stage = |f: &dyn Fn(&TrialRecord) -> &[bool]| {
        count(&|r| f(r).iter().any(|&b| b)) as f64 / trials as f64
    };
    let p_src: Vec<f64> = records.iter().map(|r| r.power_src).collect();
    let p_rel: Vec<f64> = records.iter().map(|r| r.power_relay).collect();
    let rho: Vec<f64> = records.iter().map(|r| r.rho_trial).collect();
    Ok(ExperimentSummary {
        trials,
        error_rate: rate_ci(errors, trials, exact_ci),
        erased_rate: rate_ci(erased, trials, exact_ci),
        mean_power_src: mean_ci(&p_src)?,
        mean_power_relay: mean_ci(&p_rel)?,
        rho_hat: mean(&rho)?,
        stage_breakdown: StageRates {
            relay: stage(&|r| &r.relay_errors),
            bin: stage(&|r| &r.bin_errors),
            sub: stage(&|r| &r.sub_errors),
        },
        degenerate_ci: trials < 2,
    })
}

fn join_u64(v: &[u64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn join_bool(v: &[bool]) -> String {
    v.iter()
        .map(|&b| if b { "1" } else { "0" })
        .collect::<Vec<_>>()
        .join(";")
}

pub const TRIALS_CSV_HEADER: &str = "trial,erased,error,message,relay_estimates,dest_estimates,\
bin_estimates,relay_errors,bin_errors,sub_errors,src_peak_violations,relay_peak_violations,\
power_src,power_relay,rho_trial";

/// Per-trial CSV, one row per record in trial order. Vector fields are
/// ';'-joined inside their cell; floats print in Rust's shortest
/// round-trip form, so equal records give equal bytes.
pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + 256);
    out.push_str(TRIALS_CSV_HEADER);
    out.push('\n');
    for (t, r) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t,
            r.erased as u8,
            r.error as u8,
            join_u64(&r.message),
            join_u64(&r.relay_estimates),
            join_u64(&r.dest_estimates),
            join_u64(&r.bin_estimates),
            join_bool(&r.relay_errors),
            join_bool(&r.bin_errors),
            join_bool(&r.sub_errors),
            r.src_peak_violations,
            r.relay_peak_violations,
            r.power_src,
            r.power_relay,
            r.rho_trial,
        );
    }
    out
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a ExperimentConfig,
    summary: &'a ExperimentSummary,
}

/// Run `cfg.trials` independent trials and aggregate them.
///
/// Trial `t` uses `RngStream::new(master_seed, t)`; the worker pool only
/// decides who computes what, never what is computed, so records (and any
/// files) are identical for every worker count. When `output_path` is set
/// the directory is created and both files are opened before any trial
/// runs, so an unwritable path fails fast.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, ExperimentSummary)> {
    cfg.validate()?;
    let mut sinks: Option<(File, File)> = match &cfg.output_path {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some((
                File::create(dir.join("trials.csv"))?,
                File::create(dir.join("summary.json"))?,
            ))
        }
        None => None,
    };
    let books = build_scheme(&cfg.scheme)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                simulate_trial(
                    &cfg.scheme,
                    &cfg.ch,
                    &books,
                    &RngStream::new(cfg.master_seed, t),
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(&records, cfg.exact_ci)?;
    if let Some((mut csv, mut json)) = sinks.take() {
        csv.write_all(trials_csv(&records).as_bytes())?;
        serde_json::to_writer_pretty(
            &mut json,
            &SummaryFile {
                config: cfg,
                summary: &summary,
            },
        )?;
        json.write_all(b"\n")?;
    }
    Ok((records, summary))
}

/// Empirical input correlation: `(sum_k mean over trials of x1_k x2_k) /
/// (len sqrt(p1 p2))`, with `p1`, `p2` the per-symbol power constraints.
/// By Cauchy-Schwarz the population value lies in `[-1, 1]`; the estimate
/// can stray outside by Monte Carlo slack only.
pub fn estimate_rho(traces: &[(Vec<f64>, Vec<f64>)], p1: f64, p2: f64) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("need at least one trace".into()));
    }
    if !(p1 > 0.0) || !(p2 > 0.0) {
        return Err(Error::Domain(format!(
            "powers must be positive, got {p1}, {p2}"
        )));
    }
    let len = traces[0].0.len();
    for (x1, x2) in traces {
        if x1.len() != len || x2.len() != len || len == 0 {
            return Err(Error::Domain(
                "traces must share one nonzero length".into(),
            ));
        }
    }
    let total: f64 = traces
        .iter()
        .map(|(x1, x2)| x1.iter().zip(x2).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / (traces.len() as f64 * len as f64 * (p1 * p2).sqrt()))
}

/// Sweepable parameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    Eps,
    P1,
    P2,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Eps => "eps",
            SweepAxis::P1 => "p1",
            SweepAxis::P2 => "p2",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepAxis::N),
            "eps" => Ok(SweepAxis::Eps),
            "p1" => Ok(SweepAxis::P1),
            "p2" => Ok(SweepAxis::P2),
            other => Err(Error::Config(format!(
                "unknown axis '{other}' (expected n, eps, p1 or p2)"
            ))),
        }
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<u64> {
    if v < 2.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(Error::Config(format!(
            "{} grid value {v} is not an integer >= 2",
            axis.name()
        )));
    }
    Ok(v as u64)
}

/// Move `base` to one grid point along `axis`.
///
/// Exact-mode schemes are fully re-derived at the new point. Custom-mode
/// schemes rescale: the `n` axis holds the rate `log(M)/n` and the ratios
/// `B/M`, `a/M` fixed; the `eps` axis re-boosts `p_i` by `(1-eps)` ratio
/// and re-clamps `a = ceil((1-eps) M)`; the power axes scale the matching
/// per-block power proportionally (grid values are the nominal channel
/// constraints).
pub fn rescale_config(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.output_path = None;
    let s = &mut cfg.scheme;
    if s.mode == SchemeMode::Exact {
        let (n, eps) = match axis {
            SweepAxis::N => (as_count(axis, value)?, s.eps),
            SweepAxis::Eps => (s.n, value),
            SweepAxis::P1 => {
                cfg.ch = ChannelParams::new(value, cfg.ch.p2, cfg.ch.n2, cfg.ch.n3)?;
                (s.n, s.eps)
            }
            SweepAxis::P2 => {
                cfg.ch = ChannelParams::new(cfg.ch.p1, value, cfg.ch.n2, cfg.ch.n3)?;
                (s.n, s.eps)
            }
        };
        cfg.scheme = SchemeParams::exact(n, eps, &cfg.ch, s.seed)?;
    } else {
        match axis {
            SweepAxis::N => {
                let n_new = as_count(axis, value)?;
                let ratio = n_new as f64 / s.n as f64;
                let m_new = ((s.m as f64).ln() * ratio).exp().round().max(1.0) as u64;
                s.b = (((s.b as f64 / s.m as f64) * m_new as f64).round() as u64).max(1);
                s.a_set_size = (((s.a_set_size as f64 / s.m as f64) * m_new as f64).round()
                    as u64)
                    .clamp(1, m_new);
                s.m = m_new;
                s.n = n_new;
            }
            SweepAxis::Eps => {
                let boost = (1.0 - s.eps) / (1.0 - value);
                if !boost.is_finite() || boost <= 0.0 {
                    return Err(Error::Config(format!("eps grid value {value} is invalid")));
                }
                s.p1n *= boost;
                s.p2n *= boost;
                s.eps = value;
                s.a_set_size = (((1.0 - value) * s.m as f64).ceil() as u64).clamp(1, s.m);
            }
            SweepAxis::P1 => {
                s.p1n *= value / cfg.ch.p1;
                cfg.ch = ChannelParams::new(value, cfg.ch.p2, cfg.ch.n2, cfg.ch.n3)?;
            }
            SweepAxis::P2 => {
                s.p2n *= value / cfg.ch.p2;
                cfg.ch = ChannelParams::new(cfg.ch.p1, value, cfg.ch.n2, cfg.ch.n3)?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One sweep grid point: the empirical summary next to the formula-side
/// bounds at the same `(n, eps, channel)`.
///
/// The bound columns are the exact-construction formulas at the scheme's
/// per-block length; `converse_diag_slack` evaluates the reported (never
/// asserted) cut-set diagnostic at the scheme's own total length with its
/// empirical correlation:
/// `m_tot r_cutset(1 - rho^2, p1/(1-eps), p2/(1-eps)) + theta_upper -
/// L log M`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub n: u64,
    pub l: u64,
    pub m: u64,
    pub b: u64,
    pub eps: f64,
    pub trials: u64,
    pub error_rate: f64,
    pub error_hw: f64,
    pub erased_rate: f64,
    pub erased_hw: f64,
    pub power_src: f64,
    pub power_relay: f64,
    pub rho_hat: f64,
    pub relay_fail: f64,
    pub bin_fail: f64,
    pub sub_fail: f64,
    pub c_eps_nats: f64,
    pub achievable_log_m: Option<f64>,
    pub converse_log_m: f64,
    pub converse_diag_slack: f64,
}

/// Run the experiment at every grid point of one axis.
///
/// The grid must be nonempty and strictly increasing; every point is
/// validated (and its scheme constructed) before any trial runs, so an
/// invalid point rejects the whole sweep.
pub fn sweep(axis: SweepAxis, grid: &[f64], base: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "sweep grid must be strictly increasing".into(),
        ));
    }
    let configs: Vec<ExperimentConfig> = grid
        .iter()
        .map(|&v| rescale_config(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(configs.len());
    for (&value, cfg) in grid.iter().zip(&configs) {
        let (_, s) = run_experiment(cfg)?;
        let sc = &cfg.scheme;
        let cap = eps_capacity(sc.eps, &cfg.ch)?;
        let ach = achievable_log_m_exact(sc.n, sc.eps, &cfg.ch)?;
        let conv = converse_log_m(sc.n.max(4), sc.eps, &cfg.ch)?;
        let m_tot = (sc.l + 1) * sc.n;
        let alpha_diag = (1.0 - s.rho_hat * s.rho_hat).clamp(0.0, 1.0);
        let boost = 1.0 / (1.0 - sc.eps);
        let diag = m_tot as f64
            * r_cutset(alpha_diag, cfg.ch.p1 * boost, cfg.ch.p2 * boost, &cfg.ch)?
            + second_order_window(m_tot.max(4), sc.eps, &cfg.ch)?.theta_upper
            - sc.l as f64 * (sc.m as f64).ln();
        rows.push(SweepRow {
            axis,
            value,
            n: sc.n,
            l: sc.l,
            m: sc.m,
            b: sc.b,
            eps: sc.eps,
            trials: s.trials,
            error_rate: s.error_rate.value,
            error_hw: s.error_rate.half_width,
            erased_rate: s.erased_rate.value,
            erased_hw: s.erased_rate.half_width,
            power_src: s.mean_power_src.value,
            power_relay: s.mean_power_relay.value,
            rho_hat: s.rho_hat,
            relay_fail: s.stage_breakdown.relay,
            bin_fail: s.stage_breakdown.bin,
            sub_fail: s.stage_breakdown.sub,
            c_eps_nats: cap.rate_nats,
            achievable_log_m: ach,
            converse_log_m: conv.log_m,
            converse_diag_slack: diag,
        });
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "axis,value,n,l,m,b,eps,trials,error_rate,error_hw,\
erased_rate,erased_hw,power_src,power_relay,rho_hat,relay_fail,bin_fail,sub_fail,c_eps_nats,\
achievable_log_m,converse_log_m,converse_diag_slack";

/// Sweep rows as CSV; an infeasible achievable bound prints as an empty
/// cell.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 160 + 256);
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let ach = r
            .achievable_log_m
            .map(|a| a.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.n,
            r.l,
            r.m,
            r.b,
            r.eps,
            r.trials,
            r.error_rate,
            r.error_hw,
            r.erased_rate,
            r.erased_hw,
            r.power_src,
            r.power_relay,
            r.rho_hat,
            r.relay_fail,
            r.bin_fail,
            r.sub_fail,
            r.c_eps_nats,
            ach,
            r.converse_log_m,
            r.converse_diag_slack,
        );
    }
    out
}

/// Which self-check battery to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifySuite {
    Packing,
    Bht,
    Mgf,
    Inequality,
    All,
}

impl FromStr for VerifySuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "packing" => Ok(VerifySuite::Packing),
            "bht" => Ok(VerifySuite::Bht),
            "mgf" => Ok(VerifySuite::Mgf),
            "inequality" => Ok(VerifySuite::Inequality),
            "all" => Ok(VerifySuite::All),
            other => Err(Error::Config(format!(
                "unknown suite '{other}' (expected packing, bht, mgf, inequality or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: VerifySuite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<VerifyCheck>,
}

/// The reference geometry for packing probes: a single-layer link
/// (`alpha = 1`) at an SNR tuned per blocklength so that the impostor
/// budget `m ~ e^threshold / 2` stays in the hundreds.
pub fn packing_reference_setup(n: u64, snr: f64, seed: u64) -> (SchemeParams, ChannelParams) {
    let ch = ChannelParams::new(snr, snr, 1.0, 1.0).unwrap();
    let params = SchemeParams {
        n,
        l: 1,
        m: 2,
        b: 2,
        eps: 0.5,
        alpha: 1.0,
        p1n: snr,
        p2n: snr,
        codeword_variance: 0.9,
        a_set_size: 2,
        mode: SchemeMode::Custom,
        seed,
    };
    (params, ch)
}

/// SNR per probe blocklength keeping the confusion bound near 1/2.
pub const PACKING_GRID: [(u64, f64); 3] = [(16, 4.0), (64, 0.8), (256, 0.35)];

/// Packing battery: miss rate within `bound + 4 se` and confusion rate
/// within its bound on every grid blocklength (all links at the middle
/// one).
pub fn packing_suite_checks(trials: u64, seed: u64) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();
    let mut stream_idx = 0u64;
    for (n, snr) in PACKING_GRID {
        let links: &[PackingLink] = if n == 64 {
            &[PackingLink::Relay, PackingLink::Bin, PackingLink::Dest]
        } else {
            &[PackingLink::Relay]
        };
        let (params, ch) = packing_reference_setup(n, snr, seed);
        let mom = params.moments(&ch)?;
        for &link in links {
            let pair = match link {
                PackingLink::Relay => mom.relay,
                PackingLink::Bin => mom.bin,
                PackingLink::Dest => mom.sub,
            };
            let thr = crate::codec::threshold_value(n, &pair);
            let m = ((thr.exp() / 2.0).ceil() as u64).max(2);
            let r = packing_probe(
                n,
                m,
                link,
                &params,
                &ch,
                trials,
                &RngStream::new(seed, stream_idx),
            )?;
            stream_idx += 1;
            let miss_ok = r.p_miss <= r.bound_miss + 4.0 * r.se_miss;
            let confuse_ok = r.p_confuse <= r.bound_confuse + 4.0 * r.se_confuse;
            checks.push(VerifyCheck {
                name: format!("packing_{}_n{}_miss", serde_name(&link), n),
                passed: miss_ok,
                detail: format!(
                    "p_miss = {:.5} vs bound {:.5} (se {:.5})",
                    r.p_miss, r.bound_miss, r.se_miss
                ),
            });
            checks.push(VerifyCheck {
                name: format!("packing_{}_n{}_confuse", serde_name(&link), n),
                passed: confuse_ok,
                detail: format!(
                    "p_confuse = {:.5} vs bound {:.5} with m = {m} (se {:.5})",
                    r.p_confuse, r.bound_confuse, r.se_confuse
                ),
            });
        }
    }
    Ok(checks)
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v)
        .unwrap_or_default()
        .trim_matches('"')
        .to_string()
}

fn rand_simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| -(rng.random_range(1e-12..1.0f64)).ln())
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Hypothesis-testing battery: greedy vs exhaustive Neyman-Pearson,
/// Gaussian closed form vs discretized oracle, the uniform-agreement
/// bound (with the two-symbol equality case), the computable lower
/// bound, and a data-processing merge probe.
pub fn bht_suite_checks(seed: u64) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();

    let mut rng = RngStream::new(seed, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let p = rand_simplex(&mut rng, k);
        let q = rand_simplex(&mut rng, k);
        let delta: f64 = rng.random_range(0.05..0.95);
        let fast = beta_discrete(delta, &p, &q)?;
        let slow = beta_discrete_exhaustive(delta, &p, &q)?;
        worst = worst.max((fast - slow).abs());
    }
    checks.push(VerifyCheck {
        name: "bht_np_exhaustive".into(),
        passed: worst < 1e-12,
        detail: format!("max |greedy - exhaustive| = {worst:.3e} over 100 alphabets"),
    });

    let mut worst: f64 = 0.0;
    for d in [0.5, 1.0, 2.0] {
        let k = 10_000;
        let (lo, hi) = (-10.0, 10.0 + d);
        let step = (hi - lo) / k as f64;
        let mut p = Vec::with_capacity(k);
        let mut q = Vec::with_capacity(k);
        for i in 0..k {
            let x = lo + (i as f64 + 0.5) * step;
            p.push((-(x * x) / 2.0).exp());
            q.push((-((x - d) * (x - d)) / 2.0).exp());
        }
        let (ps, qs): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|v| *v /= ps);
        q.iter_mut().for_each(|v| *v /= qs);
        for ds in 1..=9 {
            let delta = ds as f64 / 10.0;
            let err = (beta_gaussian_shift(delta, d)? - beta_discrete(delta, &p, &q)?).abs();
            worst = worst.max(err);
        }
    }
    checks.push(VerifyCheck {
        name: "bht_gaussian_discretized".into(),
        passed: worst < 1e-3,
        detail: format!("max |closed - grid| = {worst:.3e} over 27 (d, delta) points"),
    });

    let mut rng = RngStream::new(seed, 1).rng();
    let mut violations = 0u64;
    let joints = 1000;
    for _ in 0..joints {
        let k = rng.random_range(2..=5);
        // Mix a diagonal mass in so the agreement probability is positive
        // while the row marginal stays uniform.
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|u| {
                let r = rand_simplex(&mut rng, k);
                (0..k)
                    .map(|v| {
                        (0.9 * r[v] + if u == v { 0.1 } else { 0.0 }) / k as f64
                    })
                    .collect()
            })
            .collect();
        let joint = DiscreteJoint::new(rows)?;
        let s = rand_simplex(&mut rng, k);
        if !uniform_agreement_check(&joint, &s)?.holds {
            violations += 1;
        }
    }
    checks.push(VerifyCheck {
        name: "bht_uniform_agreement".into(),
        passed: violations == 0,
        detail: format!("{violations} violations over {joints} random joints"),
    });

    let joint = DiscreteJoint::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]])?;
    let r = uniform_agreement_check(&joint, &[0.5, 0.5])?;
    checks.push(VerifyCheck {
        name: "bht_two_symbol_equality".into(),
        passed: (r.beta - 0.5).abs() < 1e-15,
        detail: format!("beta = {} (bound 0.5)", r.beta),
    });

    let mut rng = RngStream::new(seed, 2).rng();
    let mut violations = 0u64;
    for _ in 0..100 {
        let k = rng.random_range(2..=8);
        let p = rand_simplex(&mut rng, k);
        let q = rand_simplex(&mut rng, k);
        let delta: f64 = rng.random_range(0.05..0.95);
        let xi: f64 = rng.random_range(0.2..20.0);
        if beta_lower_bound(delta, xi, &p, &q)? > beta_discrete(delta, &p, &q)? + 1e-12 {
            violations += 1;
        }
    }
    checks.push(VerifyCheck {
        name: "bht_lower_bound".into(),
        passed: violations == 0,
        detail: format!("{violations} violations over 100 instances"),
    });

    let mut rng = RngStream::new(seed, 3).rng();
    let mut violations = 0u64;
    for _ in 0..100 {
        let k = rng.random_range(3..=8);
        let p = rand_simplex(&mut rng, k);
        let q = rand_simplex(&mut rng, k);
        let delta: f64 = rng.random_range(0.05..0.95);
        let kk = rng.random_range(1..k);
        let map: Vec<usize> = (0..k).map(|_| rng.random_range(0..kk)).collect();
        let mut pm = vec![0.0; kk];
        let mut qm = vec![0.0; kk];
        for i in 0..k {
            pm[map[i]] += p[i];
            qm[map[i]] += q[i];
        }
        if beta_discrete(delta, &pm, &qm)? < beta_discrete(delta, &p, &q)? - 1e-12 {
            violations += 1;
        }
    }
    checks.push(VerifyCheck {
        name: "bht_merge_monotone".into(),
        passed: violations == 0,
        detail: format!("{violations} violations over 100 merges"),
    });

    Ok(checks)
}

/// MGF battery: the Monte Carlo estimate sits within 3 standard errors of
/// the closed form over the full `(n, t)` matrix at `P = 1`, and the
/// estimate does not depend on the adapted process.
pub fn mgf_suite_checks(trials: u64, seed: u64) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();
    let mut idx = 0u64;
    for n in [1u64, 4, 8] {
        for t in [0.05, 0.1, 0.2] {
            let spec = MgfSpec {
                n,
                t,
                p: 1.0,
                x_process: XProcess::IidStdNormal,
            };
            let r = mgf_identity(&spec, trials, &RngStream::new(seed, idx))?;
            idx += 1;
            let dev = (r.mc_estimate - r.closed_form).abs();
            checks.push(VerifyCheck {
                name: format!("mgf_n{n}_t{t}"),
                passed: dev <= 3.0 * r.std_err && !r.high_variance,
                detail: format!(
                    "mc = {:.6}, closed = {:.6}, |dev|/se = {:.2}",
                    r.mc_estimate,
                    r.closed_form,
                    dev / r.std_err
                ),
            });
        }
    }
    for xp in [
        XProcess::Zero,
        XProcess::Constant(0.5),
        XProcess::IidStdNormal,
        XProcess::EchoNoise,
    ] {
        let spec = MgfSpec {
            n: 4,
            t: 0.1,
            p: 1.0,
            x_process: xp,
        };
        let r = mgf_identity(&spec, trials, &RngStream::new(seed, idx))?;
        idx += 1;
        let dev = (r.mc_estimate - r.closed_form).abs();
        checks.push(VerifyCheck {
            name: format!("mgf_process_{}", xp.name()),
            passed: dev <= 3.0 * r.std_err,
            detail: format!(
                "mc = {:.6}, closed = {:.6}, |dev|/se = {:.2}",
                r.mc_estimate,
                r.closed_form,
                dev / r.std_err
            ),
        });
    }
    Ok(checks)
}

/// Inequality battery: `(1 + a/m)^m <= e^a <= (1 + a/m)^(m+a)` over fixed
/// corners and a random log-uniform sweep.
pub fn inequality_suite_checks(seed: u64) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();
    let corners = [(1.0, 1.0), (5.0, 0.1), (0.1, 5.0), (100.0, 100.0)];
    let corner_pass = corners
        .iter()
        .map(|&(a, m)| exp_inequality(a, m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .all(|b| b);
    checks.push(VerifyCheck {
        name: "inequality_corners".into(),
        passed: corner_pass,
        detail: format!("{} fixed (a, m) pairs", corners.len()),
    });
    let mut rng = RngStream::new(seed, 0).rng();
    let mut violations = 0u64;
    let pairs = 100_000;
    for _ in 0..pairs {
        let a = 10f64.powf(rng.random_range(-6.0..2.0));
        let m = 10f64.powf(rng.random_range(-6.0..2.0));
        if !exp_inequality(a, m)? {
            violations += 1;
        }
    }
    checks.push(VerifyCheck {
        name: "inequality_random".into(),
        passed: violations == 0,
        detail: format!("{violations} violations over {pairs} log-uniform pairs"),
    });
    Ok(checks)
}

/// Run one (or all) of the self-check suites at CLI-friendly sizes.
pub fn verify_suite(suite: VerifySuite, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    if matches!(suite, VerifySuite::Packing | VerifySuite::All) {
        checks.extend(packing_suite_checks(4000, seed)?);
    }
    if matches!(suite, VerifySuite::Bht | VerifySuite::All) {
        checks.extend(bht_suite_checks(seed)?);
    }
    if matches!(suite, VerifySuite::Mgf | VerifySuite::All) {
        checks.extend(mgf_suite_checks(200_000, seed)?);
    }
    if matches!(suite, VerifySuite::Inequality | VerifySuite::All) {
        checks.extend(inequality_suite_checks(seed)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        suite,
        seed,
        passed,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    /// Forgiving desk-scale config: strong SNR, tiny code, fast trials.
    fn desk_cfg(seed: u64, trials: u64) -> ExperimentConfig {
        ExperimentConfig {
            scheme: SchemeParams {
                n: 200,
                l: 3,
                m: 4,
                b: 4,
                eps: 0.25,
                alpha: 1.0,
                p1n: 100.0 / 0.75,
                p2n: 100.0 / 0.75,
                codeword_variance: 1.0 - 200f64.powf(-0.25),
                a_set_size: 4,
                mode: SchemeMode::Custom,
                seed,
            },
            ch: ChannelParams::new(100.0, 100.0, 1.0, 1.0).unwrap(),
            trials,
            master_seed: 7,
            workers: 2,
            output_path: None,
            exact_ci: false,
        }
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let cfg = desk_cfg(1, 10);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let bad = s.replacen("\"trials\"", "\"trails\"", 1);
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
        // Optional keys may be omitted.
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        let mut v = v;
        v.as_object_mut().unwrap().remove("output_path");
        v.as_object_mut().unwrap().remove("exact_ci");
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back.output_path, None);
        assert!(!back.exact_ci);
    }

    #[test]
    fn single_trial_summary_is_the_record() {
        let cfg = desk_cfg(2, 1);
        let (records, s) = run_experiment(&cfg).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(s.error_rate.value, r.error as u8 as f64);
        assert_eq!(s.erased_rate.value, r.erased as u8 as f64);
        assert_eq!(s.mean_power_src.value, r.power_src);
        assert_eq!(s.mean_power_relay.value, r.power_relay);
        assert_eq!(s.rho_hat, r.rho_trial);
        assert!(s.degenerate_ci);
        assert!(s.error_rate.half_width.is_nan());
    }

    #[test]
    fn worker_count_leaves_records_and_csv_unchanged() {
        let mut a = desk_cfg(3, 24);
        a.workers = 1;
        let mut b = desk_cfg(3, 24);
        b.workers = 8;
        let (ra, sa) = run_experiment(&a).unwrap();
        let (rb, sb) = run_experiment(&b).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(sa, sb);
        assert_eq!(trials_csv(&ra), trials_csv(&rb));
    }

    #[test]
    fn full_acceptance_set_has_no_erasures() {
        let cfg = desk_cfg(4, 60);
        let (_, s) = run_experiment(&cfg).unwrap();
        assert_eq!(s.erased_rate.value, 0.0);
        // And the error rate at this SNR is small.
        assert!(s.error_rate.value < 0.2, "error {}", s.error_rate.value);
    }

    #[test]
    fn erased_fraction_tracks_the_silenced_set() {
        let mut cfg = desk_cfg(5, 400);
        cfg.scheme.a_set_size = 3; // silence 1 of 4 messages
        let (_, s) = run_experiment(&cfg).unwrap();
        let se = (0.25 * 0.75 / 400f64).sqrt();
        assert!(
            (s.erased_rate.value - 0.25).abs() < 4.0 * se,
            "erased {}",
            s.erased_rate.value
        );
    }

    #[test]
    fn unwritable_output_fails_before_compute() {
        let file = tempfile::NamedTempFile::new().unwrap();
        let mut cfg = desk_cfg(6, u64::MAX); // astronomically many trials
        cfg.output_path = Some(file.path().join("sub")); // parent is a file
        let t0 = std::time::Instant::now();
        match run_experiment(&cfg) {
            Err(Error::Io(_)) => {}
            other => panic!("expected an I/O error, got {other:?}"),
        }
        assert!(t0.elapsed().as_secs() < 5);
    }

    #[test]
    fn output_files_are_written_and_parse() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = desk_cfg(7, 12);
        cfg.output_path = Some(dir.path().join("out"));
        let (records, summary) = run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("out/trials.csv")).unwrap();
        assert_eq!(csv, trials_csv(&records));
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with(TRIALS_CSV_HEADER));
        let js: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap())
                .unwrap();
        assert_eq!(js["config"]["trials"], 12);
        assert_eq!(
            js["summary"]["error_rate"]["value"].as_f64().unwrap(),
            summary.error_rate.value
        );
    }

    #[test]
    fn normal_ci_calibration_on_synthetic_stage() {
        // 95% normal CIs for a Bernoulli(0.2) stage of 1000 trials must
        // cover the truth in 93-97% of 1000 repetitions.
        let mut rng = RngStream::new(31, 0).rng();
        let mut covered = 0u64;
        for _ in 0..1000 {
            let k = (0..1000).filter(|_| rng.random_range(0.0..1.0) < 0.2).count() as u64;
            let ci = rate_ci(k, 1000, false);
            if (ci.value - 0.2).abs() <= ci.half_width {
                covered += 1;
            }
        }
        assert!((930..=970).contains(&covered), "covered {covered}");
    }

    #[test]
    fn exact_ci_is_conservative_and_sane() {
        // Clopper-Pearson never undercovers.
        let mut rng = RngStream::new(32, 0).rng();
        let mut covered = 0u64;
        for _ in 0..1000 {
            let k = (0..60).filter(|_| rng.random_range(0.0..1.0) < 0.2).count() as u64;
            let ci = rate_ci(k, 60, true);
            if (ci.value - 0.2).abs() <= ci.half_width {
                covered += 1;
            }
        }
        assert!(covered >= 940, "covered {covered}");
        // Edge cases: k = 0 and k = T have one-sided exact intervals.
        let c0 = rate_ci(0, 50, true);
        assert_eq!(c0.value, 0.0);
        let expect = 1.0 - 0.025f64.powf(1.0 / 50.0);
        assert!((c0.half_width - expect).abs() < 1e-9);
        let ct = rate_ci(50, 50, true);
        assert_eq!(ct.value, 1.0);
        assert!((ct.half_width - expect).abs() < 1e-9);
    }

    #[test]
    fn rho_estimator_reference_cases() {
        // Identical traces at the geometric-mean power give exactly 1.
        let amp = (2.0f64 * 8.0).sqrt().sqrt();
        let x: Vec<f64> = vec![amp; 64];
        let traces = vec![(x.clone(), x.clone())];
        assert!((estimate_rho(&traces, 2.0, 8.0).unwrap() - 1.0).abs() < 1e-12);
        let traces = vec![(x.clone(), x.iter().map(|v| -v).collect())];
        assert!((estimate_rho(&traces, 2.0, 8.0).unwrap() + 1.0).abs() < 1e-12);
        // Independent zero-mean inputs: within 4 standard errors of 0.
        let mut rng = RngStream::new(33, 0).rng();
        let trials = 200;
        let len = 64;
        let traces: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
            .map(|_| {
                (
                    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                )
            })
            .collect();
        let rho = estimate_rho(&traces, 1.0, 1.0).unwrap();
        let se = 1.0 / ((trials * len) as f64).sqrt();
        assert!(rho.abs() < 4.0 * se, "rho {rho} vs se {se}");
        // Length mismatch is rejected.
        let bad = vec![(vec![0.0; 3], vec![0.0; 4])];
        assert!(estimate_rho(&bad, 1.0, 1.0).is_err());
    }

    #[test]
    fn rescale_rules_per_axis() {
        let base = desk_cfg(8, 4);
        // n axis: rate log(M)/n and the B/M, a/M ratios are held.
        let c = rescale_config(&base, SweepAxis::N, 400.0).unwrap();
        assert_eq!((c.scheme.n, c.scheme.m, c.scheme.b, c.scheme.a_set_size), (400, 16, 16, 16));
        assert_eq!(c.scheme.eps, base.scheme.eps);
        // eps axis: powers re-boost, a re-clamps.
        let c = rescale_config(&base, SweepAxis::Eps, 0.5).unwrap();
        assert!((c.scheme.p1n - 200.0).abs() < 1e-9);
        assert_eq!(c.scheme.a_set_size, 2);
        assert_eq!(c.scheme.n, base.scheme.n);
        // p1 axis: per-block power scales with the nominal constraint.
        let c = rescale_config(&base, SweepAxis::P1, 50.0).unwrap();
        assert!((c.scheme.p1n - 50.0 / 0.75).abs() < 1e-9);
        assert_eq!(c.ch.p1, 50.0);
        assert_eq!(c.ch.p2, 100.0);
        // Output path never propagates into grid points.
        let mut with_out = base.clone();
        with_out.output_path = Some("/tmp/nowhere".into());
        assert_eq!(rescale_config(&with_out, SweepAxis::P2, 80.0).unwrap().output_path, None);
    }

    #[test]
    fn sweep_rejects_bad_grids_before_running() {
        let base = desk_cfg(9, 2);
        assert!(sweep(SweepAxis::Eps, &[], &base).is_err());
        assert!(sweep(SweepAxis::Eps, &[0.3, 0.2], &base).is_err());
        assert!(sweep(SweepAxis::Eps, &[0.2, 0.2], &base).is_err());
        // One invalid point poisons the whole sweep.
        assert!(sweep(SweepAxis::Eps, &[0.2, 0.5, 1.5], &base).is_err());
        assert!(sweep(SweepAxis::N, &[100.0, 128.5], &base).is_err());
    }

    #[test]
    fn eps_sweep_has_increasing_capacity_column() {
        let mut base = desk_cfg(10, 6);
        base.scheme.n = 64; // keep it quick
        base.scheme.codeword_variance = 1.0 - 64f64.powf(-0.25);
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let rows = sweep(SweepAxis::Eps, &grid, &base).unwrap();
        assert_eq!(rows.len(), 9);
        for w in rows.windows(2) {
            assert!(w[1].c_eps_nats > w[0].c_eps_nats);
        }
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
    }

    #[test]
    fn single_point_sweep_matches_run_experiment() {
        let base = desk_cfg(11, 20);
        let rows = sweep(SweepAxis::P1, &[100.0], &base).unwrap();
        // The grid point equals the base config, so the summary must too.
        let (_, s) = run_experiment(&rescale_config(&base, SweepAxis::P1, 100.0).unwrap()).unwrap();
        assert_eq!(rows[0].error_rate, s.error_rate.value);
        assert_eq!(rows[0].rho_hat, s.rho_hat);
        assert_eq!(rows[0].trials, 20);
        assert!(rows[0].converse_log_m.is_finite());
        assert!(rows[0].converse_diag_slack.is_finite());
    }

    #[test]
    fn verify_inequality_and_bht_suites_pass() {
        let r = verify_suite(VerifySuite::Inequality, 5).unwrap();
        assert!(r.passed, "{:?}", r.checks);
        let r = verify_suite(VerifySuite::Bht, 5).unwrap();
        assert!(r.passed, "{:?}", r.checks);
        assert!(r.checks.len() >= 6);
        // The report serializes cleanly for the CLI.
        let js = serde_json::to_string(&r).unwrap();
        assert!(js.contains("bht_np_exhaustive"));
    }

    #[test]
    fn verify_small_packing_and_mgf_suites_pass() {
        // CLI-sized batteries are exercised in full by the acceptance
        // suite; this is a smaller smoke run.
        let checks = packing_suite_checks(800, 5).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        assert_eq!(checks.len(), 10);
        let checks = mgf_suite_checks(20_000, 5).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
        assert_eq!(checks.len(), 13);
    }
}
