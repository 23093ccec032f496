//! Exact tail computation for the count of good coordinates in an m-vector
//! of tapes.
//!
//! With `ℓ` the number of the `m` coordinates that land in a subset of
//! measure `ρ`, the uniform measure `D` and the one-coordinate-resampled
//! measure `D'` are within a factor `1 ± 1/k` wherever
//! `(1 − 1/k)ρm < ℓ < (1 + 1/k)ρm`. Under `D`, `ℓ ~ Binomial(m, ρ)`; under
//! `D'`, `ℓ ~ 1 + Binomial(m − 1, ρ)`, equivalently `Pr_D'(ℓ) = Pr_D(ℓ)·ℓ/(ρm)`.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `m` evaluated exactly.
pub const MAX_EXACT_M: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub m: u64,
    pub k: u64,
    pub rho: Ratio<u64>,
    /// Integer range `lo..=hi` strictly inside the window (empty if `lo > hi`).
    pub window: (u64, u64),
    /// The window shrunk by one on each side.
    pub shrunk_window: (u64, u64),
    /// `Pr_D[ℓ outside the window]`.
    pub violation: BigRational,
    /// `Pr_D'[ℓ outside the window]`.
    pub violation_resampled: BigRational,
    /// `Pr_D[ℓ outside the shrunk window]`, which bounds the `D'` violation
    /// since resampling moves `ℓ` by at most one.
    pub violation_shifted: BigRational,
    /// `2·exp(−ρm/(3k²))`.
    pub chernoff: f64,
}

/// Summary in floating point, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub m: u64,
    pub k: u64,
    pub rho: String,
    pub window: (u64, u64),
    pub violation: f64,
    pub violation_resampled: f64,
    pub violation_shifted: f64,
    pub chernoff: f64,
    pub threshold: f64,
    pub holds: bool,
}

impl ConcentrationReport {
    /// Whether both the `D` and `D'` violation probabilities are below
    /// `threshold`.
    pub fn holds(&self, threshold: f64) -> bool {
        to_f64(&self.violation) < threshold && to_f64(&self.violation_resampled) < threshold
    }

    pub fn summary(&self, threshold: f64) -> ConcentrationSummary {
        ConcentrationSummary {
            m: self.m,
            k: self.k,
            rho: format!("{}/{}", self.rho.numer(), self.rho.denom()),
            window: self.window,
            violation: to_f64(&self.violation),
            violation_resampled: to_f64(&self.violation_resampled),
            violation_shifted: to_f64(&self.violation_shifted),
            chernoff: self.chernoff,
            threshold,
            holds: self.holds(threshold),
        }
    }
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn floor_div(n: u128, d: u128) -> u128 {
    n / d
}

fn ceil_div(n: u128, d: u128) -> u128 {
    n.div_ceil(d)
}

/// Integers strictly between `x_num/den` and `y_num/den`, widened inward by
/// `shrink` on each side.
fn strict_range(x_num: u128, y_num: u128, den: u128, shrink: u128) -> (u64, u64) {
    let lo = floor_div(x_num, den) + 1 + shrink;
    let hi = ceil_div(y_num, den).saturating_sub(1 + shrink);
    (lo as u64, hi as u64)
}

fn binomial(n: u64, r: u64) -> BigUint {
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Integer pmf numerators `C(m, ℓ)·a^ℓ·(b − a)^{m − ℓ}` for `ℓ` in `lo..=hi`
/// (over the common denominator `b^m`).
fn pmf_numerators(m: u64, a: u64, b: u64, lo: u64, hi: u64) -> Vec<(u64, BigUint)> {
    let mut out = Vec::new();
    if lo > hi || lo > m {
        return out;
    }
    let hi = hi.min(m);
    let c = b - a;
    let mut w = binomial(m, lo) * BigUint::from(a).pow(lo as u32) * BigUint::from(c).pow((m - lo) as u32);
    for l in lo..=hi {
        out.push((l, w.clone()));
        if l < hi {
            if c == 0 {
                w = if l + 1 == m { BigUint::from(a).pow(m as u32) } else { BigUint::zero() };
            } else {
                w = w * (m - l) * a;
                let (q, r) = w.div_rem(&(BigUint::from(l + 1) * c));
                debug_assert!(r.is_zero());
                w = q;
            }
        }
    }
    out
}

/// Exact `D` and `D'` tail probabilities for the window at `(m, ρ, k)`.
pub fn check_tape_concentration(m: u64, rho: Ratio<u64>, k: u64) -> Result<ConcentrationReport> {
    if m == 0 || k == 0 {
        return Err(Error::config("m and k must be positive"));
    }
    if *rho.numer() == 0 || rho > Ratio::from_integer(1) {
        return Err(Error::config("rho must lie in (0, 1]"));
    }
    if m > MAX_EXACT_M {
        return Err(Error::config(format!(
            "exact summation is limited to m <= {MAX_EXACT_M}; use the Chernoff bound for larger m"
        )));
    }
    let (a, b) = (*rho.numer(), *rho.denom());
    // window ends as fractions over k·b: (k ∓ 1)·a·m / (k·b)
    let den = k as u128 * b as u128;
    let x_num = (k as u128 - 1) * a as u128 * m as u128;
    let y_num = (k as u128 + 1) * a as u128 * m as u128;
    let window = strict_range(x_num, y_num, den, 0);
    let shrunk_window = strict_range(x_num, y_num, den, 1);

    let total = BigInt::from(BigUint::from(b).pow(m as u32));
    let inside = |(lo, hi): (u64, u64)| -> Vec<(u64, BigUint)> { pmf_numerators(m, a, b, lo, hi) };
    let in_d: BigUint = inside(window).into_iter().map(|(_, w)| w).sum();
    let in_shifted: BigUint = inside(shrunk_window).into_iter().map(|(_, w)| w).sum();
    // Pr_D'(ℓ) = Pr_D(ℓ)·ℓ·b/(a·m)
    let in_resampled: BigUint = inside(window).into_iter().map(|(l, w)| w * l).sum();
    let one = BigRational::one();
    let violation = &one - BigRational::new(BigInt::from(in_d), total.clone());
    let violation_shifted = &one - BigRational::new(BigInt::from(in_shifted), total.clone());
    let violation_resampled = &one
        - BigRational::new(
            BigInt::from(in_resampled) * BigInt::from(b),
            total * BigInt::from(a) * BigInt::from(m),
        );
    let rho_f = a as f64 / b as f64;
    Ok(ConcentrationReport {
        m,
        k,
        rho,
        window,
        shrunk_window,
        violation,
        violation_resampled,
        violation_shifted,
        chernoff: 2.0 * (-rho_f * m as f64 / (3.0 * (k * k) as f64)).exp(),
    })
}

/// `Pr[1 + Binomial(m − 1, ρ) ∈ lo..=hi]` summed directly; a second route
/// to the `D'` distribution.
pub fn resampled_mass(m: u64, rho: Ratio<u64>, lo: u64, hi: u64) -> BigRational {
    let (a, b) = (*rho.numer(), *rho.denom());
    let lo = lo.max(1);
    if lo > hi || m == 0 {
        return BigRational::zero();
    }
    let num: BigUint = pmf_numerators(m - 1, a, b, lo - 1, hi.min(m) - 1).into_iter().map(|(_, w)| w).sum();
    BigRational::new(BigInt::from(num), BigInt::from(BigUint::from(b).pow((m - 1) as u32)))
}

/// Parses a decimal such as `0.1` or a fraction such as `1/10` exactly.
pub fn parse_rho(s: &str) -> Result<Ratio<u64>> {
    let bad = || Error::config(format!("cannot parse `{s}` as a probability"));
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else {
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Ratio::new(int.checked_mul(scale).ok_or_else(bad)? + frac, scale)
    };
    Ok(r)
}
