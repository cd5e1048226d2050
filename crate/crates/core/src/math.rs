//! Scalar building blocks: Gaussian capacity and dispersion, log-densities,
//! and exact integer roots used for blocklength bookkeeping.
//!
//! Everything here is in nats. The two workhorses are
//!
//! * `capacity(x) = 0.5 * ln(1 + x)`, the Gaussian capacity function, and
//! * `dispersion(x) = x / (1 + x)`, the matching dispersion,
//!
//! both evaluated with care near `x = 0` (`ln_1p` rather than `ln(1 + x)`).

use crate::{Error, Result};

/// Gaussian capacity function `0.5 * ln(1 + x)` in nats.
///
/// Defined for `x >= 0`; uses `ln_1p` so tiny SNRs keep full relative
/// precision.
///
/// ```
/// let c = gdrc::math::capacity(1.0).unwrap();
/// assert!((c - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
/// ```
pub fn capacity(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("capacity requires x >= 0, got {x}")));
    }
    Ok(0.5 * x.ln_1p())
}

/// Gaussian dispersion function `x / (1 + x)`.
///
/// Strictly increasing on `x >= 0` with range `[0, 1)`.
pub fn dispersion(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!(
            "dispersion requires x >= 0, got {x}"
        )));
    }
    Ok(x / (1.0 + x))
}

/// Log-density of `N(mean, var)` at `x`.
pub fn log_gauss(x: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Domain(format!("log_gauss requires var > 0, got {var}")));
    }
    let d = x - mean;
    Ok(-d * d / (2.0 * var) - 0.5 * (std::f64::consts::TAU * var).ln())
}

/// Sum of iid `N(mean, var)` log-densities over a slice.
pub fn log_gauss_iid(xs: &[f64], mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Domain(format!(
            "log_gauss_iid requires var > 0, got {var}"
        )));
    }
    let norm = 0.5 * (std::f64::consts::TAU * var).ln();
    let mut quad = 0.0;
    for &x in xs {
        let d = x - mean;
        quad += d * d;
    }
    Ok(-quad / (2.0 * var) - xs.len() as f64 * norm)
}

/// Exact `ceil(n^(1/4))` for integers.
///
/// Floating `powf` is not trusted near fourth powers (`powf(0.25)` of
/// `79^4` can land a hair below 79), so the float estimate is corrected by
/// integer comparisons in `u128`.
pub fn ceil_fourth_root(n: u64) -> u64 {
    if n <= 1 {
        return n;
    }
    let mut r = (n as f64).powf(0.25).round() as u64;
    // r^4 on u128 cannot overflow for r up to 2^32.
    let fourth = |r: u64| -> u128 { (r as u128).pow(4) };
    while r > 1 && fourth(r - 1) >= n as u128 {
        r -= 1;
    }
    while fourth(r) < n as u128 {
        r += 1;
    }
    r
}

/// Exact `floor(sqrt(n))` for integers, float estimate corrected in `u128`.
pub fn floor_sqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt().round() as u64;
    let sq = |r: u64| -> u128 { (r as u128) * (r as u128) };
    while r > 0 && sq(r) > n as u128 {
        r -= 1;
    }
    while sq(r + 1) <= n as u128 {
        r += 1;
    }
    r
}

/// Sample mean of a slice. Empty input is a domain error.
pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("mean of empty slice".into()));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Unbiased sample variance (denominator `n - 1`); needs at least 2 points.
pub fn sample_var(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Domain("sample_var needs >= 2 points".into()));
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Ok(ss / (xs.len() - 1) as f64)
}
