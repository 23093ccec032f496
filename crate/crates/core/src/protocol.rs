//! Abstract 4-message verifier-first proof `(q, r, s, t)` and its m-fold
//! parallel composition into blocks.
//!
//! Every message is an opaque byte string. The canonical encoding used for
//! transcript hashing is a 4-byte big-endian length followed by the bytes;
//! a block message is a 4-byte copy count followed by its encoded copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single prover or verifier message.
pub type Message = Vec<u8>;

/// Common input `x` together with its size `n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    input_x: Vec<u8>,
    size_n: usize,
}

impl Instance {
    pub fn new(input_x: Vec<u8>, size_n: usize) -> Result<Self> {
        if size_n == 0 {
            return Err(Error::config("instance size must be at least 1"));
        }
        Ok(Self { input_x, size_n })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.input_x
    }

    pub fn size_n(&self) -> usize {
        self.size_n
    }

    /// Canonical encoding: length-prefixed statement bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.input_x.len() + 4);
        encode_message(&mut out, &self.input_x);
        out
    }
}

/// Fixed-length bit string of verifier coins for one protocol copy.
///
/// Bits are packed most-significant first; unused trailing bits of the last
/// byte are always zero so equal tapes compare equal byte-wise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tape {
    bytes: Vec<u8>,
    len: usize,
}

impl Tape {
    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    /// Builds a tape from packed bytes, clearing any bits beyond `len`.
    pub fn from_bytes(mut bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::config(format!(
                "tape of {len} bits needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        if !len.is_multiple_of(8) {
            let keep = 0xffu8 << (8 - len % 8);
            if let Some(last) = bytes.last_mut() {
                *last &= keep;
            }
        }
        Ok(Self { bytes, len })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut tape = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            tape.set(i, b);
        }
        tape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for tape of {}", self.len);
        self.bytes[i / 8] >> (7 - i % 8) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for tape of {}", self.len);
        let mask = 1u8 << (7 - i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    /// Copies bits `start..start + len` into a new tape.
    pub fn slice(&self, start: usize, len: usize) -> Tape {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = Tape::zeros(len);
        if start.is_multiple_of(8) {
            let nbytes = len.div_ceil(8);
            out.bytes
                .copy_from_slice(&self.bytes[start / 8..start / 8 + nbytes]);
            if !len.is_multiple_of(8) {
                out.bytes[nbytes - 1] &= 0xffu8 << (8 - len % 8);
            }
        } else {
            for i in 0..len {
                out.set(i, self.bit(start + i));
            }
        }
        out
    }

    /// Concatenates tapes bit-wise.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Tape>) -> Tape {
        let parts: Vec<&Tape> = parts.into_iter().collect();
        let total = parts.iter().map(|t| t.len).sum();
        let mut out = Tape::zeros(total);
        let mut pos = 0;
        for part in parts {
            for i in 0..part.len {
                if part.bit(i) {
                    out.set(pos + i, true);
                }
            }
            pos += part.len;
        }
        out
    }
}

/// Ordered m-tuple of tapes, one per parallel copy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockTape {
    pub copies: Vec<Tape>,
}

impl BlockTape {
    pub fn m(&self) -> usize {
        self.copies.len()
    }

    /// Splits one long tape into `m` consecutive copies of `tape_bits` each.
    pub fn split(tape: &Tape, m: usize, tape_bits: usize) -> Result<Self> {
        if tape.len() != m * tape_bits {
            return Err(Error::config(format!(
                "block tape needs {} bits, got {}",
                m * tape_bits,
                tape.len()
            )));
        }
        Ok(Self {
            copies: (0..m).map(|c| tape.slice(c * tape_bits, tape_bits)).collect(),
        })
    }
}

/// Ordered m-tuple of messages exchanged in one block step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockMessage(pub Vec<Message>);

impl BlockMessage {
    pub fn m(&self) -> usize {
        self.0.len()
    }

    pub fn copies(&self) -> &[Message] {
        &self.0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u32).to_be_bytes());
        for msg in &self.0 {
            encode_message(out, msg);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }
}

/// One copy's conversation, possibly partial.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub q: Option<Message>,
    pub r: Option<Message>,
    pub s: Option<Message>,
    pub t: Option<Message>,
}

impl Conversation {
    pub fn is_complete(&self) -> bool {
        self.q.is_some() && self.r.is_some() && self.s.is_some() && self.t.is_some()
    }

    /// True when present messages form a prefix in `q, r, s, t` order.
    pub fn is_ordered(&self) -> bool {
        let present = [
            self.q.is_some(),
            self.r.is_some(),
            self.s.is_some(),
            self.t.is_some(),
        ];
        present.windows(2).all(|w| w[0] || !w[1])
    }
}

/// m-tuples of the four messages, possibly partial.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConversation {
    pub q: Option<BlockMessage>,
    pub r: Option<BlockMessage>,
    pub s: Option<BlockMessage>,
    pub t: Option<BlockMessage>,
}

impl BlockConversation {
    /// All present tuples have exactly `m` entries.
    pub fn has_arity(&self, m: usize) -> bool {
        [&self.q, &self.r, &self.s, &self.t]
            .iter()
            .all(|part| part.as_ref().is_none_or(|b| b.m() == m))
    }
}

/// Appends the canonical length-prefixed encoding of `msg`.
pub fn encode_message(out: &mut Vec<u8>, msg: &[u8]) {
    out.extend_from_slice(&(msg.len() as u32).to_be_bytes());
    out.extend_from_slice(msg);
}

/// A 4-message, verifier-first, conversation-based interactive proof.
///
/// `accept` deliberately takes no tape: the verdict is a function of the
/// transcript alone.
pub trait Protocol: Send + Sync {
    /// Coins consumed by one copy of the verifier on inputs of this instance.
    fn tape_bits(&self, x: &Instance) -> usize;

    fn first_challenge(&self, x: &Instance, tape: &Tape) -> Result<Message>;

    /// Second challenge. A malformed `r` yields the reject sentinel (an
    /// empty message), which no `t` can complete to an accepting transcript.
    fn second_challenge(&self, x: &Instance, tape: &Tape, r: &[u8]) -> Result<Message>;

    fn accept(&self, x: &Instance, q: &[u8], r: &[u8], s: &[u8], t: &[u8]) -> bool;
}

/// The reject-equivalent second challenge.
pub const REJECT_SENTINEL: &[u8] = &[];

fn check_tape(protocol: &dyn Protocol, x: &Instance, tape: &Tape) -> Result<()> {
    let want = protocol.tape_bits(x);
    if tape.len() != want {
        return Err(Error::config(format!(
            "tape has {} bits, protocol needs {want}",
            tape.len()
        )));
    }
    Ok(())
}

/// Checks a tape has the protocol's declared length.
pub fn validate_tape(protocol: &dyn Protocol, x: &Instance, tape: &Tape) -> Result<()> {
    check_tape(protocol, x, tape)
}

pub fn block_first_challenge(
    protocol: &dyn Protocol,
    x: &Instance,
    tapes: &BlockTape,
) -> Result<BlockMessage> {
    tapes
        .copies
        .iter()
        .map(|tape| protocol.first_challenge(x, tape))
        .collect::<Result<Vec<_>>>()
        .map(BlockMessage)
}

pub fn block_second_challenge(
    protocol: &dyn Protocol,
    x: &Instance,
    tapes: &BlockTape,
    r: &BlockMessage,
) -> Result<BlockMessage> {
    if r.m() != tapes.m() {
        return Err(Error::config(format!(
            "block arity mismatch: {} tapes, {} replies",
            tapes.m(),
            r.m()
        )));
    }
    tapes
        .copies
        .iter()
        .zip(r.copies())
        .map(|(tape, r)| protocol.second_challenge(x, tape, r))
        .collect::<Result<Vec<_>>>()
        .map(BlockMessage)
}

/// Conjunction of `accept` over all copies.
pub fn block_accept(
    protocol: &dyn Protocol,
    x: &Instance,
    q: &BlockMessage,
    r: &BlockMessage,
    s: &BlockMessage,
    t: &BlockMessage,
) -> Result<bool> {
    let m = q.m();
    if r.m() != m || s.m() != m || t.m() != m {
        return Err(Error::config(format!(
            "block arity mismatch: q={}, r={}, s={}, t={}",
            m,
            r.m(),
            s.m(),
            t.m()
        )));
    }
    Ok((0..m).all(|c| protocol.accept(x, &q.0[c], &r.0[c], &s.0[c], &t.0[c])))
}
