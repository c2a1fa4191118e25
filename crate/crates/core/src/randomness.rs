//! Randomness tests for candidate reject regions.
//!
//! A reject region holding `n` examples of which `k` were classified
//! correctly is *viable* when its accuracy is consistent with a fair coin or
//! worse. The exact test is the binomial CDF at `p = 0.5`; four
//! confidence-interval lower bounds are offered as cheaper alternatives.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{Float, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Size and number of correct predictions of a reject region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionTally {
    pub n: u64,
    pub k: u64,
}

impl RegionTally {
    pub fn new(n: u64, k: u64) -> Result<Self> {
        if k > n {
            return Err(Error::domain(format!("tally has k={k} > n={n}")));
        }
        Ok(Self { n, k })
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| self.k as f64 / self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViabilityMethod {
    /// Exact binomial CDF: viable iff `BinomCDF(k; n, 0.5) <= 1 - delta`.
    Bcdf,
    ClopperPearson,
    WilsonCc,
    WilsonNocc,
    AgrestiCoull,
}

impl ViabilityMethod {
    pub const ALL: [ViabilityMethod; 5] = [
        ViabilityMethod::Bcdf,
        ViabilityMethod::ClopperPearson,
        ViabilityMethod::WilsonCc,
        ViabilityMethod::WilsonNocc,
        ViabilityMethod::AgrestiCoull,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViabilityMethod::Bcdf => "bcdf",
            ViabilityMethod::ClopperPearson => "clopper_pearson",
            ViabilityMethod::WilsonCc => "wilson_cc",
            ViabilityMethod::WilsonNocc => "wilson_nocc",
            ViabilityMethod::AgrestiCoull => "agresti_coull",
        }
    }
}

impl fmt::Display for ViabilityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViabilityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::domain(format!(
                "unknown method `{s}` (expected one of bcdf, clopper_pearson, wilson_cc, wilson_nocc, agresti_coull)"
            ))
        })
    }
}

/// Largest `n` evaluated by direct summation; larger `n` go through the
/// regularized incomplete beta function.
pub const EXACT_SUMMATION_MAX_N: u64 = 10_000;

/// Near-ties between a float tail probability and its cutoff are settled in
/// integer arithmetic up to this `n`.
const EXACT_TIEBREAK_MAX_N: u64 = 20_000;
const TIE_BAND: f64 = 1e-9;

fn check_kn(k: u64, n: u64) -> Result<()> {
    if k > n {
        return Err(Error::domain(format!("binomial CDF needs k <= n (k={k}, n={n})")));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} outside [0,1]")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} outside (0,1)")));
    }
    Ok(())
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`.
pub fn binom_cdf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_kn(k, n)?;
    check_p(p)?;
    if n <= EXACT_SUMMATION_MAX_N {
        Ok(binom_cdf_sum(k, n, p))
    } else {
        binom_cdf_beta(k, n, p)
    }
}

/// Binomial CDF by summing pmf terms outward from a precisely evaluated
/// anchor term. Terms are accumulated relative to the anchor, so the result
/// keeps its relative precision even when it underflows in direct form.
///
/// For `p = 0.5` and `n < 128` the coefficient sum is exact in `u128` and
/// the result is correctly rounded.
pub fn binom_cdf_sum(k: u64, n: u64, p: f64) -> f64 {
    debug_assert!(k <= n);
    if k == n || p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    if p == 0.5 && n < 128 {
        return half_cdf_small(k, n);
    }
    let q = 1.0 - p;
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let anchor = k.min(mode);
    let ln_anchor = special::ln_binom_pmf(anchor, n, p);

    let mut sum = 1.0;
    // Below the mode the pmf decreases monotonically going down.
    let mut term = 1.0;
    for i in (1..=anchor).rev() {
        term *= i as f64 / (n - i + 1) as f64 * (q / p);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    // Above the mode it decreases going up.
    let mut term = 1.0;
    for i in anchor..k {
        term *= (n - i) as f64 / (i + 1) as f64 * (p / q);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    (ln_anchor + sum.ln()).exp().min(1.0)
}

fn half_cdf_small(k: u64, n: u64) -> f64 {
    let (mut c, mut sum) = (1u128, 0u128);
    for i in 0..=k {
        sum += c;
        // C(n, i+1) = C(n, i) (n - i) / (i + 1), split so the product cannot
        // overflow: with c = q d + r, c m / d = q m + r m / d exactly.
        let (m, d) = ((n - i) as u128, i as u128 + 1);
        c = c / d * m + c % d * m / d;
    }
    // One rounding in the conversion; the power-of-two scaling is exact.
    sum as f64 * 0.5f64.powi(n as i32)
}

/// Binomial CDF through `I_{1-p}(n - k, k + 1)`.
pub fn binom_cdf_beta(k: u64, n: u64, p: f64) -> Result<f64> {
    check_kn(k, n)?;
    check_p(p)?;
    if k == n || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    // x^a (1-x)^b / B(a, b) = (n - k) p pmf(k) here; the saddle-point pmf
    // avoids the cancellation in ln_beta at large n.
    let ln_prefix = ((n - k) as f64 * p).ln() + special::ln_binom_pmf(k, n, p);
    special::betainc_with_prefix((n - k) as f64, (k + 1) as f64, 1.0 - p, |_, _, _| ln_prefix)
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
fn upper_tail_half(k: u64, n: u64) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    // Symmetry at p = 1/2: P(X >= k) = P(X <= n - k).
    binom_cdf(n - k, n, 0.5)
}

/// `delta` as an exact dyadic rational `mantissa / 2^shift`.
fn dyadic(delta: f64) -> (BigUint, u32) {
    let (mantissa, exponent, _) = Float::integer_decode(delta);
    debug_assert!(exponent < 0, "delta < 1 always has a negative binary exponent");
    (BigUint::from(mantissa), (-exponent) as u32)
}

/// Exact `sum_{i=lo}^{hi} C(n, i)`.
fn binomial_coefficient_sum(n: u64, lo: u64, hi: u64) -> BigUint {
    let mut c = BigUint::one();
    let mut total = BigUint::zero();
    for i in 0..=hi {
        if i >= lo {
            total += &c;
        }
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    total
}

/// Exact decision of `P(X >= from) >= delta` at `p = 1/2`.
fn exact_upper_tail_at_least(from: u64, n: u64, delta: f64) -> bool {
    let (m, shift) = dyadic(delta);
    let tail = binomial_coefficient_sum(n, from, n);
    // tail / 2^n >= m / 2^shift
    (tail << shift) >= (m << n as usize)
}

/// One-sided lower confidence bound for the true success rate at
/// confidence `1 - delta`. Not defined for [`ViabilityMethod::Bcdf`].
pub fn ci_lower_bound(tally: RegionTally, delta: f64, method: ViabilityMethod) -> Result<f64> {
    check_delta(delta)?;
    check_kn(tally.k, tally.n)?;
    if tally.n == 0 {
        return Err(Error::domain("confidence bound needs a non-empty region"));
    }
    let n = tally.n as f64;
    let k = tally.k as f64;
    let p_hat = k / n;
    let lb = match method {
        ViabilityMethod::Bcdf => {
            return Err(Error::domain("the binomial CDF test has no interval form"));
        }
        ViabilityMethod::ClopperPearson => {
            if tally.k == 0 {
                0.0
            } else {
                special::betainc_inv(k, n - k + 1.0, delta)?
            }
        }
        ViabilityMethod::WilsonNocc => {
            let z = special::normal_quantile(1.0 - delta)?;
            let z2 = z * z;
            let centre = p_hat + z2 / (2.0 * n);
            let spread = z * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
            (centre - spread) / (1.0 + z2 / n)
        }
        ViabilityMethod::WilsonCc => {
            if tally.k == 0 {
                0.0
            } else {
                let z = special::normal_quantile(1.0 - delta)?;
                let z2 = z * z;
                let radicand = z2 - 2.0 - 1.0 / n + 4.0 * p_hat * (n * (1.0 - p_hat) + 1.0);
                (2.0 * n * p_hat + z2 - 1.0 - z * radicand.max(0.0).sqrt()) / (2.0 * (n + z2))
            }
        }
        ViabilityMethod::AgrestiCoull => {
            let z = special::normal_quantile(1.0 - delta)?;
            let z2 = z * z;
            let n_tilde = n + z2;
            let p_tilde = (k + z2 / 2.0) / n_tilde;
            p_tilde - z * (p_tilde * (1.0 - p_tilde) / n_tilde).sqrt()
        }
    };
    Ok(if lb.is_nan() { 0.0 } else { lb.clamp(0.0, 1.0) })
}

/// Whether a reject region is consistent with at-most-chance accuracy.
///
/// Empty regions are viable so that rejecting nothing is always feasible.
/// The Clopper-Pearson test is evaluated in its equivalent tail form,
/// `P(X >= k | n, 1/2) >= delta`, which is what `lower bound <= 1/2` means
/// for the beta quantile. Both exact tests fall back to integer arithmetic
/// when the float tail lands within `1e-9` of its cutoff.
pub fn region_viable(tally: RegionTally, delta: f64, method: ViabilityMethod) -> Result<bool> {
    check_delta(delta)?;
    check_kn(tally.k, tally.n)?;
    let RegionTally { n, k } = tally;
    if n == 0 {
        return Ok(true);
    }
    match method {
        ViabilityMethod::Bcdf => {
            // BinomCDF(k) <= 1 - delta  <=>  P(X >= k + 1) >= delta
            if k == n {
                return Ok(false);
            }
            let tail = upper_tail_half(k + 1, n)?;
            if (tail - delta).abs() <= TIE_BAND && n <= EXACT_TIEBREAK_MAX_N {
                return Ok(exact_upper_tail_at_least(k + 1, n, delta));
            }
            Ok(tail >= delta)
        }
        ViabilityMethod::ClopperPearson => {
            let tail = upper_tail_half(k, n)?;
            if (tail - delta).abs() <= TIE_BAND && n <= EXACT_TIEBREAK_MAX_N {
                return Ok(exact_upper_tail_at_least(k, n, delta));
            }
            Ok(tail >= delta)
        }
        _ => Ok(ci_lower_bound(tally, delta, method)? <= 0.5),
    }
}

/// Inverse standard normal CDF.
pub fn normal_quantile(q: f64) -> Result<f64> {
    special::normal_quantile(q)
}
