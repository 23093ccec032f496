//! Height weighting and address sampling for the splicing prover.
//!
//! With `β = 1 + ⌈log_k N⌉`, a vertex of height `h` gets weight `f(h) = h^β`
//! and an address `(i, a)` at level `i` (height `k − i + 1`) is drawn with
//! probability `c·f(h)/N`, where `c = 1 / Σ_{h=1..k} h^β`.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An address `(level, a)`: the `a`-th (1-based) slot at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub level: usize,
    pub a: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightParams {
    pub k: usize,
    pub n: u64,
    pub beta: u32,
    /// `Σ_{h=1..k} h^β`.
    pub total: BigUint,
    pub c: BigRational,
}

/// Smallest `e ≥ 0` with `k^e ≥ n`, i.e. `⌈log_k n⌉` in exact arithmetic.
pub fn ceil_log(k: u64, n: u64) -> u32 {
    let mut e = 0;
    let mut pow: u128 = 1;
    while pow < n as u128 {
        pow *= k as u128;
        e += 1;
    }
    e
}

pub fn weight_params(k: usize, n: u64) -> Result<WeightParams> {
    if k < 2 {
        return Err(Error::config("weight parameters need k >= 2"));
    }
    if n == 0 {
        return Err(Error::config("step cap N must be at least 1"));
    }
    let beta = 1 + ceil_log(k as u64, n);
    let total: BigUint = (1..=k).map(|h| BigUint::from(h).pow(beta)).sum();
    let c = BigRational::new(BigInt::one(), BigInt::from(total.clone()));
    Ok(WeightParams { k, n, beta, total, c })
}

impl WeightParams {
    pub fn height(&self, level: usize) -> usize {
        self.k - level + 1
    }

    /// `f(h) = h^β`.
    pub fn f(&self, h: usize) -> BigUint {
        BigUint::from(h).pow(self.beta)
    }

    /// `F(h) = Σ_{j ≤ h} f(j)`.
    pub fn big_f(&self, h: usize) -> BigUint {
        (1..=h).map(|j| self.f(j)).sum()
    }

    /// Exact `c·f(h)/N` for any single address at `level`.
    pub fn address_probability(&self, level: usize) -> BigRational {
        BigRational::new(
            BigInt::from(self.f(self.height(level))),
            BigInt::from(self.total.clone()) * BigInt::from(self.n),
        )
    }

    /// Exact `c·x/N` for an integer weight `x`.
    pub fn scaled(&self, x: &BigUint) -> BigRational {
        BigRational::new(
            BigInt::from(x.clone()),
            BigInt::from(self.total.clone()) * BigInt::from(self.n),
        )
    }

    /// Draws a level with probability `c·f(h)`, then `a` uniform in `1..=N`.
    pub fn sample_address<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Address> {
        let total = self
            .total
            .to_u128()
            .ok_or_else(|| Error::config("weight total exceeds 128 bits"))?;
        let mut u = rng.random_range(0..total);
        for level in 1..=self.k {
            let w = self.f(self.height(level)).to_u128().expect("term below total");
            if u < w {
                return Ok(Address {
                    level,
                    a: rng.random_range(1..=self.n),
                });
            }
            u -= w;
        }
        unreachable!("u < total")
    }
}

/// `F(h)·(β+1) ≥ h^{β+1}` for all `1 ≤ h ≤ max_k`, `1 ≤ β ≤ max_beta`;
/// returns the first failing `(h, β)` if any.
pub fn check_f_bound(max_k: usize, max_beta: u32) -> Option<(usize, u32)> {
    for beta in 1..=max_beta {
        let mut big_f = BigUint::zero();
        for h in 1..=max_k {
            big_f += BigUint::from(h).pow(beta);
            if big_f.clone() * BigUint::from(beta + 1) < BigUint::from(h).pow(beta + 1) {
                return Some((h, beta));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn beta_from_cap() {
        assert_eq!(weight_params(8, 1000).unwrap().beta, 5);
        assert_eq!(weight_params(2, 1).unwrap().beta, 1);
        assert_eq!(weight_params(2, 2).unwrap().beta, 2);
        assert_eq!(weight_params(3, 9).unwrap().beta, 3);
        assert_eq!(weight_params(3, 10).unwrap().beta, 4);
        assert!(weight_params(1, 10).is_err());
        assert!(weight_params(3, 0).is_err());
    }

    #[test]
    fn normalising_constant() {
        assert_eq!(weight_params(2, 1).unwrap().c, ratio(1, 3));
        assert_eq!(weight_params(2, 2).unwrap().c, ratio(1, 5));
        // k=3, N=3: β=2, Σ = 1 + 4 + 9
        assert_eq!(weight_params(3, 3).unwrap().c, ratio(1, 14));
    }

    #[test]
    fn f_and_big_f() {
        let wp = weight_params(3, 1).unwrap();
        assert_eq!(wp.beta, 1);
        assert_eq!(wp.big_f(3), BigUint::from(6u32));
        assert!(BigUint::from(6u32) * 2u32 >= BigUint::from(9u32));
    }

    #[test]
    fn address_probabilities_sum_to_one() {
        for (k, n) in [(2, 1), (3, 7), (5, 100), (8, 1000)] {
            let wp = weight_params(k, n).unwrap();
            let sum: BigRational = (1..=k)
                .map(|l| wp.address_probability(l) * BigRational::from_integer(BigInt::from(n)))
                .sum();
            assert_eq!(sum, BigRational::one());
        }
        let wp = weight_params(2, 1).unwrap();
        assert_eq!(wp.address_probability(1), ratio(2, 3));
        assert_eq!(wp.address_probability(2), ratio(1, 3));
    }

    #[test]
    fn f_bound_holds_on_desk_grid() {
        assert_eq!(check_f_bound(64, 12), None);
    }

    #[test]
    fn samples_are_in_range() {
        let wp = weight_params(4, 50).unwrap();
        let mut rng = rng_for(1, "addr", 0);
        for _ in 0..1000 {
            let a = wp.sample_address(&mut rng).unwrap();
            assert!((1..=4).contains(&a.level));
            assert!((1..=50).contains(&a.a));
        }
    }
}
