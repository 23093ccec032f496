//! The hash family `H` from which the adversarial verifier derives its coins,
//! and the point-override wrapper used for splicing.
//!
//! Two modes are provided. The exact mode evaluates an independent random
//! polynomial of degree `t − 1` over `GF(2^w)` per output chunk, which is
//! `t`-wise independent over distinct field points. The PRG mode (default)
//! expands a 32-byte seed with SHA-256 and is what experiments use.
//! Outputs longer than one chunk are produced chunk by chunk, the chunk index
//! acting as a salt, so one member serves every output shape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::protocol::{BlockTape, Tape};
use crate::seeds;

/// Binary extension field `GF(2^degree)` for `degree ≤ 64`, elements held in
/// the low bits of a `u64`. `poly` is the reduction polynomial without its
/// leading `x^degree` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gf2Field {
    pub degree: u32,
    pub poly: u64,
}

impl Gf2Field {
    /// `GF(2^8)` with `x^8 + x^4 + x^3 + x + 1`.
    pub const GF256: Gf2Field = Gf2Field { degree: 8, poly: 0x1b };
    /// `GF(2^64)` with `x^64 + x^4 + x^3 + x + 1`.
    pub const GF2_64: Gf2Field = Gf2Field { degree: 64, poly: 0x1b };

    fn mask(&self) -> u64 {
        if self.degree == 64 {
            u64::MAX
        } else {
            (1u64 << self.degree) - 1
        }
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        a ^ b
    }

    pub fn mul(&self, mut a: u64, mut b: u64) -> u64 {
        let top = 1u64 << (self.degree - 1);
        let mask = self.mask();
        let mut acc = 0u64;
        while b != 0 {
            if b & 1 == 1 {
                acc ^= a;
            }
            b >>= 1;
            let carry = a & top != 0;
            a = (a << 1) & mask;
            if carry {
                a ^= self.poly;
            }
        }
        acc
    }

    /// Horner evaluation of `Σ coeffs[i] · x^i`.
    pub fn eval_poly(&self, coeffs: &[u64], x: u64) -> u64 {
        coeffs.iter().rev().fold(0, |acc, &c| self.mul(acc, x) ^ c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashMode {
    /// One coefficient vector of length `t` per output chunk.
    Exact { field: Gf2Field, coeffs: Vec<Vec<u64>> },
    Prg { seed: [u8; 32] },
}

/// One member of the family, immutable after sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashMember {
    pub mode: HashMode,
    pub t: usize,
    pub out_len_bits: usize,
}

/// Anything the verifier can derive coins from.
pub trait HashFunction: Send + Sync {
    /// `out_bits` of output on `input`.
    fn evaluate(&self, input: &[u8], out_bits: usize) -> Result<Tape>;
}

const PRG_CHUNK_BITS: usize = 256;

/// Samples a PRG-mode member; this is the default mode.
pub fn sample_member(seed: u64, t: usize, out_len_bits: usize) -> Result<HashMember> {
    if t == 0 {
        return Err(Error::config("independence degree t must be at least 1"));
    }
    Ok(HashMember {
        mode: HashMode::Prg {
            seed: seeds::derive_seed(seed, "hash-member", 0),
        },
        t,
        out_len_bits,
    })
}

/// Samples an exact `t`-wise independent member over `field`.
pub fn sample_exact_member(seed: u64, t: usize, out_len_bits: usize, field: Gf2Field) -> Result<HashMember> {
    if t == 0 {
        return Err(Error::config("independence degree t must be at least 1"));
    }
    let mut rng = seeds::Rng::from_seed(seeds::derive_seed(seed, "hash-exact", 0));
    let chunks = out_len_bits.div_ceil(field.degree as usize).max(1);
    let mask = field.mask();
    let coeffs = (0..chunks)
        .map(|_| (0..t).map(|_| rng.random::<u64>() & mask).collect())
        .collect();
    Ok(HashMember {
        mode: HashMode::Exact { field, coeffs },
        t,
        out_len_bits,
    })
}

impl HashMember {
    /// Field point an input maps to in exact mode.
    pub fn point_of(field: &Gf2Field, input: &[u8]) -> u64 {
        let d: [u8; 32] = Sha256::new()
            .chain_update(b"czk-point")
            .chain_update(input)
            .finalize()
            .into();
        u64::from_be_bytes(d[..8].try_into().expect("8 bytes")) & field.mask()
    }

    /// Exact-mode evaluation of chunk `chunk` at a raw field point; used by
    /// the independence tests, which need control over distinct points.
    pub fn evaluate_point(&self, chunk: usize, point: u64) -> Result<u64> {
        match &self.mode {
            HashMode::Exact { field, coeffs } => {
                let c = coeffs
                    .get(chunk)
                    .ok_or_else(|| Error::config(format!("chunk {chunk} out of range")))?;
                Ok(field.eval_poly(c, point))
            }
            HashMode::Prg { .. } => Err(Error::config("evaluate_point needs an exact-mode member")),
        }
    }

    fn prg_chunk(seed: &[u8; 32], input: &[u8], chunk: u32) -> [u8; 32] {
        Sha256::new()
            .chain_update(b"czk-prg")
            .chain_update(seed)
            .chain_update((input.len() as u64).to_be_bytes())
            .chain_update(input)
            .chain_update(chunk.to_be_bytes())
            .finalize()
            .into()
    }
}

impl HashFunction for HashMember {
    fn evaluate(&self, input: &[u8], out_bits: usize) -> Result<Tape> {
        if out_bits > self.out_len_bits {
            return Err(Error::config(format!(
                "requested {out_bits} bits, member declared {}",
                self.out_len_bits
            )));
        }
        let nbytes = out_bits.div_ceil(8);
        let mut bytes = Vec::with_capacity(nbytes + 32);
        match &self.mode {
            HashMode::Prg { seed } => {
                let chunks = out_bits.div_ceil(PRG_CHUNK_BITS);
                for c in 0..chunks {
                    bytes.extend_from_slice(&Self::prg_chunk(seed, input, c as u32));
                }
            }
            HashMode::Exact { field, coeffs } => {
                let w = field.degree as usize;
                let point = Self::point_of(field, input);
                let mut bits = Vec::with_capacity(out_bits);
                for c in coeffs.iter().take(out_bits.div_ceil(w)) {
                    let y = field.eval_poly(c, point);
                    bits.extend((0..w).rev().map(|b| y >> b & 1 == 1));
                }
                bits.truncate(out_bits);
                return Ok(Tape::from_bits(&bits));
            }
        }
        bytes.truncate(nbytes);
        Tape::from_bytes(bytes, out_bits)
    }
}

/// A member with point overrides: on an overridden input, slot `j` of the
/// `m`-slot output is replaced by a given tape.
#[derive(Debug, Clone)]
pub struct SplicedHash {
    base: HashMember,
    m: usize,
    tape_bits: usize,
    overrides: HashMap<Vec<u8>, (usize, Tape)>,
}

impl SplicedHash {
    pub fn new(base: HashMember, m: usize, tape_bits: usize) -> Self {
        Self {
            base,
            m,
            tape_bits,
            overrides: HashMap::new(),
        }
    }

    pub fn base(&self) -> &HashMember {
        &self.base
    }

    pub fn overrides(&self) -> usize {
        self.overrides.len()
    }

    pub fn is_overridden(&self, input: &[u8]) -> bool {
        self.overrides.contains_key(input)
    }
}

/// Installs an override replacing slot `j` (1-based) on `input` by `tape`.
pub fn splice_override(mut h: SplicedHash, input: &[u8], j: usize, tape: Tape) -> Result<SplicedHash> {
    if !(1..=h.m).contains(&j) {
        return Err(Error::config(format!("splice coordinate {j} outside 1..={}", h.m)));
    }
    if tape.len() != h.tape_bits {
        return Err(Error::config(format!(
            "splice tape has {} bits, slots have {}",
            tape.len(),
            h.tape_bits
        )));
    }
    if h.overrides.contains_key(input) {
        return Err(Error::config("input already spliced"));
    }
    h.overrides.insert(input.to_vec(), (j, tape));
    Ok(h)
}

impl HashFunction for SplicedHash {
    fn evaluate(&self, input: &[u8], out_bits: usize) -> Result<Tape> {
        let out = self.base.evaluate(input, out_bits)?;
        let Some((j, tape)) = self.overrides.get(input) else {
            return Ok(out);
        };
        if out_bits != self.m * self.tape_bits {
            return Err(Error::config("spliced input evaluated at a non-block length"));
        }
        let mut block = BlockTape::split(&out, self.m, self.tape_bits)?;
        block.copies[j - 1] = tape.clone();
        Ok(Tape::concat(&block.copies))
    }
}

/// `m` tapes of `tape_bits` each, read from `h(input)`.
pub fn block_tape(h: &dyn HashFunction, input: &[u8], m: usize, tape_bits: usize) -> Result<BlockTape> {
    BlockTape::split(&h.evaluate(input, m * tape_bits)?, m, tape_bits)
}
