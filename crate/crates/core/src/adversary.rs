//! The deterministic adversarial verifier `V̂`.
//!
//! `V̂` runs `k` sessions of an m-block protocol under the fixed nested
//! schedule `q⃗1 r⃗1 … q⃗k r⃗k s⃗k t⃗k … s⃗1 t⃗1`. The coins of session `i` are
//! `H(x, q⃗1, r⃗1, …, q⃗(i−1), r⃗(i−1))`, so the verifier is a pure function of
//! the prover messages it has seen. A simulator talks to it by submitting
//! prefixes of prover messages `r⃗1 … r⃗k t⃗k … t⃗1`; rewinding is just asking
//! a different prefix.
//!
//! [`respond`] is the direct, memo-free definition. [`Session`] answers the
//! same function incrementally through a prefix trie, records the query
//! trace, and routes coin generation through a [`CoinSource`] so the splice
//! can intercept individual blocks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::Error;
use crate::hash::{block_tape, HashFunction};
use crate::protocol::{
    block_accept, block_first_challenge, block_second_challenge, encode_message, BlockMessage,
    BlockTape, Instance, Protocol,
};

pub type Digest32 = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub k: usize,
    pub m: usize,
}

impl ScheduleConfig {
    pub fn new(k: usize, m: usize) -> crate::Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::config("k and m must both be at least 1"));
        }
        Ok(Self { k, m })
    }

    /// Number of prover messages in a complete run.
    pub fn full_length(&self) -> usize {
        2 * self.k
    }

    /// Session whose message the prover sends at position `len` of a prefix
    /// (0-based), and whether it is a first move (`r⃗`) or second move (`t⃗`).
    pub fn position(&self, index: usize) -> (usize, Move) {
        if index < self.k {
            (index + 1, Move::Commit)
        } else {
            (2 * self.k - index, Move::Response)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Commit,
    Response,
}

/// Prover messages submitted as one black-box query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefixQuery {
    pub prover_msgs: Vec<BlockMessage>,
}

impl PrefixQuery {
    /// SHA-256 of the canonical encoding, used in trace logs.
    pub fn digest(&self) -> Digest32 {
        let mut h = Sha256::new();
        for msg in &self.prover_msgs {
            h.update(msg.encode());
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerifierReply {
    /// The next verifier message, `q⃗` or `s⃗` depending on the position.
    Challenge(BlockMessage),
    Accept,
    Abort,
}

impl VerifierReply {
    pub fn challenge(&self) -> Option<&BlockMessage> {
        match self {
            VerifierReply::Challenge(c) => Some(c),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            VerifierReply::Challenge(_) => "challenge",
            VerifierReply::Accept => "accept",
            VerifierReply::Abort => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaltReason {
    /// The configured query budget is exhausted.
    StepCap,
    /// The coin source stopped the run (the splice reached a verdict).
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("query violates the schedule grammar: {0}")]
    Grammar(String),
    #[error("verifier halted: {0:?}")]
    Halted(HaltReason),
    #[error("verifier failed internally: {0}")]
    Internal(String),
}

impl From<Error> for OracleError {
    fn from(e: Error) -> Self {
        OracleError::Internal(e.to_string())
    }
}

/// Black-box access to `V̂`: the only interface simulators get.
pub trait VerifierOracle {
    fn query(&mut self, prefix: &[BlockMessage]) -> Result<VerifierReply, OracleError>;
    fn config(&self) -> ScheduleConfig;
    /// Queries answered so far (grammar errors excluded).
    fn steps(&self) -> u64;
}

fn check_grammar(cfg: &ScheduleConfig, prefix: &[BlockMessage]) -> Result<(), OracleError> {
    if prefix.len() > cfg.full_length() {
        return Err(OracleError::Grammar(format!(
            "prefix of {} messages exceeds schedule length {}",
            prefix.len(),
            cfg.full_length()
        )));
    }
    if let Some((i, msg)) = prefix.iter().enumerate().find(|(_, b)| b.m() != cfg.m) {
        return Err(OracleError::Grammar(format!(
            "message {i} has {} copies, expected {}",
            msg.m(),
            cfg.m
        )));
    }
    Ok(())
}

fn extend_history(history: &[u8], q: &BlockMessage, r: &BlockMessage) -> Vec<u8> {
    let mut next = Vec::with_capacity(history.len() + 64 * q.m());
    next.extend_from_slice(history);
    q.encode_into(&mut next);
    r.encode_into(&mut next);
    next
}

/// Level-1 history: the canonical encoding of `x`.
pub fn root_history(x: &Instance) -> Vec<u8> {
    let mut out = Vec::new();
    encode_message(&mut out, x.bytes());
    out
}

/// Direct evaluation of `V̂` on one prefix, without memoisation.
pub fn respond(
    cfg: &ScheduleConfig,
    protocol: &dyn Protocol,
    h: &dyn HashFunction,
    x: &Instance,
    prefix: &[BlockMessage],
) -> Result<VerifierReply, OracleError> {
    check_grammar(cfg, prefix)?;
    let tape_bits = protocol.tape_bits(x);
    let opened = (prefix.len() + 1).min(cfg.k);
    let mut histories = Vec::with_capacity(opened);
    let mut tapes: Vec<BlockTape> = Vec::with_capacity(opened);
    let mut qs = Vec::with_capacity(opened);
    let mut history = root_history(x);
    for i in 0..opened {
        let tape = block_tape(h, &history, cfg.m, tape_bits)?;
        let q = block_first_challenge(protocol, x, &tape)?;
        if i == prefix.len() {
            return Ok(VerifierReply::Challenge(q));
        }
        let next = extend_history(&history, &q, &prefix[i]);
        histories.push(std::mem::replace(&mut history, next));
        tapes.push(tape);
        qs.push(q);
    }
    let responses = &prefix[cfg.k..];
    for (e, t) in responses.iter().enumerate() {
        let i = cfg.k - 1 - e;
        let s = block_second_challenge(protocol, x, &tapes[i], &prefix[i])?;
        if !block_accept(protocol, x, &qs[i], &prefix[i], &s, t)? {
            return Ok(VerifierReply::Abort);
        }
    }
    if responses.len() == cfg.k {
        return Ok(VerifierReply::Accept);
    }
    let i = cfg.k - 1 - responses.len();
    Ok(VerifierReply::Challenge(block_second_challenge(
        protocol, x, &tapes[i], &prefix[i],
    )?))
}

/// The block coins opened for one history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedBlock {
    pub q: BlockMessage,
    /// Digest identifying `R⃗` (used for sibling-consistency checks).
    pub tape_digest: Digest32,
}

/// Where `V̂` gets its verifier messages from. Levels are 1-based.
///
/// Each hook is called at most once per distinct trie node, i.e. once per
/// distinct prefix that requires it, except `second`, which is called every
/// time a second challenge is needed (also for acceptance checks).
pub trait CoinSource {
    fn open(&mut self, level: usize, history: &[u8]) -> Result<OpenedBlock, OracleError>;

    fn committed(&mut self, _level: usize, _history: &[u8], _r: &BlockMessage) -> Result<(), OracleError> {
        Ok(())
    }

    fn second(&mut self, level: usize, history: &[u8], r: &BlockMessage) -> Result<BlockMessage, OracleError>;

    fn resolved(
        &mut self,
        _level: usize,
        _history: &[u8],
        _r: &BlockMessage,
        _t: &BlockMessage,
    ) -> Result<(), OracleError> {
        Ok(())
    }
}

pub fn tape_digest(tape: &BlockTape) -> Digest32 {
    let mut h = Sha256::new();
    for copy in &tape.copies {
        h.update(copy.bytes());
    }
    h.finalize().into()
}

/// Plain `V̂`: every block's coins come from `H(history)`.
pub struct HashedCoins<'a, H: HashFunction> {
    protocol: &'a dyn Protocol,
    x: &'a Instance,
    h: H,
    m: usize,
    tape_bits: usize,
}

impl<'a, H: HashFunction> HashedCoins<'a, H> {
    pub fn new(protocol: &'a dyn Protocol, x: &'a Instance, h: H, m: usize) -> Self {
        Self {
            protocol,
            x,
            tape_bits: protocol.tape_bits(x),
            h,
            m,
        }
    }

    pub fn hash(&self) -> &H {
        &self.h
    }

    pub fn tape(&self, history: &[u8]) -> Result<BlockTape, OracleError> {
        Ok(block_tape(&self.h, history, self.m, self.tape_bits)?)
    }
}

impl<H: HashFunction> CoinSource for HashedCoins<'_, H> {
    fn open(&mut self, _level: usize, history: &[u8]) -> Result<OpenedBlock, OracleError> {
        let tape = self.tape(history)?;
        Ok(OpenedBlock {
            q: block_first_challenge(self.protocol, self.x, &tape)?,
            tape_digest: tape_digest(&tape),
        })
    }

    fn second(&mut self, _level: usize, history: &[u8], r: &BlockMessage) -> Result<BlockMessage, OracleError> {
        let tape = self.tape(history)?;
        Ok(block_second_challenge(self.protocol, self.x, &tape, r)?)
    }
}

/// One answered query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub prefix: Vec<BlockMessage>,
    pub reply: VerifierReply,
    /// Levels whose response passed the acceptance check on this prefix.
    pub resolved: usize,
    /// Levels whose second challenge was computed on this prefix.
    pub activated: usize,
    /// `R⃗` digests of the levels opened along this prefix, level 1 first.
    pub tape_digests: Vec<Digest32>,
}

/// Line-delimited trace log entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLogLine {
    pub prefix_hash: String,
    pub reply: String,
    pub session: usize,
}

impl TraceRecord {
    /// Session the reply belongs to (0 for terminal replies).
    pub fn reply_session(&self, cfg: &ScheduleConfig) -> usize {
        match self.reply {
            VerifierReply::Challenge(_) if self.prefix.len() < cfg.k => self.prefix.len() + 1,
            VerifierReply::Challenge(_) => 2 * cfg.k - self.prefix.len(),
            _ => 0,
        }
    }

    pub fn log_line(&self, cfg: &ScheduleConfig) -> TraceLogLine {
        let q = PrefixQuery {
            prover_msgs: self.prefix.clone(),
        };
        TraceLogLine {
            prefix_hash: hex::encode(q.digest()),
            reply: self.reply.kind().to_string(),
            session: self.reply_session(cfg),
        }
    }
}

struct Node {
    msg: Option<BlockMessage>,
    children: HashMap<BlockMessage, usize>,
    reply: VerifierReply,
    resolved: usize,
    activated: usize,
    /// History of the next level to open; only for depth < k.
    history: Vec<u8>,
    tape_digest: Option<Digest32>,
}

/// Memoised, traced `V̂` bound to one coin source.
pub struct Session<'a, C: CoinSource> {
    cfg: ScheduleConfig,
    protocol: &'a dyn Protocol,
    x: &'a Instance,
    coins: C,
    nodes: Vec<Node>,
    trace: Vec<TraceRecord>,
    record_trace: bool,
    steps: u64,
    cap: Option<u64>,
    halted: Option<HaltReason>,
    path: Vec<usize>,
}

impl<'a, C: CoinSource> Session<'a, C> {
    pub fn new(cfg: ScheduleConfig, protocol: &'a dyn Protocol, x: &'a Instance, coins: C) -> Self {
        Self {
            cfg,
            protocol,
            x,
            coins,
            nodes: Vec::new(),
            trace: Vec::new(),
            record_trace: true,
            steps: 0,
            cap: None,
            halted: None,
            path: Vec::new(),
        }
    }

    /// Halts the session once `cap` queries have been answered.
    pub fn with_cap(mut self, cap: Option<u64>) -> Self {
        self.cap = cap;
        self
    }

    /// Skips trace recording (the memo still works).
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_parts(self) -> (Vec<TraceRecord>, C, Option<HaltReason>) {
        (self.trace, self.coins, self.halted)
    }

    pub fn coins(&self) -> &C {
        &self.coins
    }

    pub fn halted(&self) -> Option<&HaltReason> {
        self.halted.as_ref()
    }

    /// Distinct prefixes evaluated so far.
    pub fn memo_size(&self) -> usize {
        self.nodes.len()
    }

    fn ensure_root(&mut self) -> Result<(), OracleError> {
        if !self.nodes.is_empty() {
            return Ok(());
        }
        let history = root_history(self.x);
        let opened = self.coins.open(1, &history)?;
        self.nodes.push(Node {
            msg: None,
            children: HashMap::new(),
            reply: VerifierReply::Challenge(opened.q),
            resolved: 0,
            activated: 0,
            history,
            tape_digest: Some(opened.tape_digest),
        });
        Ok(())
    }

    fn challenge_of(&self, node: usize) -> Result<&BlockMessage, OracleError> {
        self.nodes[node]
            .reply
            .challenge()
            .ok_or_else(|| OracleError::Internal("expected a challenge on the path".into()))
    }

    /// Creates the child of the last node on `self.path` along `msg`.
    fn extend(&mut self, msg: &BlockMessage) -> Result<usize, OracleError> {
        let k = self.cfg.k;
        let depth = self.path.len() - 1;
        let parent = *self.path.last().expect("root on path");
        let mut node = Node {
            msg: Some(msg.clone()),
            children: HashMap::new(),
            reply: VerifierReply::Abort,
            resolved: self.nodes[parent].resolved,
            activated: self.nodes[parent].activated,
            history: Vec::new(),
            tape_digest: None,
        };
        if self.nodes[parent].reply == VerifierReply::Abort {
            // an aborted verifier stays aborted whatever follows
        } else if depth < k {
            let level = depth + 1;
            let history = self.nodes[parent].history.clone();
            self.coins.committed(level, &history, msg)?;
            if level < k {
                let next = extend_history(&history, self.challenge_of(parent)?, msg);
                let opened = self.coins.open(level + 1, &next)?;
                node.reply = VerifierReply::Challenge(opened.q);
                node.history = next;
                node.tape_digest = Some(opened.tape_digest);
            } else {
                let s = self.coins.second(k, &history, msg)?;
                node.reply = VerifierReply::Challenge(s);
                node.activated = 1;
            }
        } else {
            let level = 2 * k - depth;
            let q = self.challenge_of(self.path[level - 1])?.clone();
            let r = self.nodes[self.path[level]].msg.clone().expect("non-root");
            let s = self.challenge_of(parent)?.clone();
            if block_accept(self.protocol, self.x, &q, &r, &s, msg)? {
                let history = self.nodes[self.path[level - 1]].history.clone();
                self.coins.resolved(level, &history, &r, msg)?;
                node.resolved += 1;
                if level == 1 {
                    node.reply = VerifierReply::Accept;
                } else {
                    let history = self.nodes[self.path[level - 2]].history.clone();
                    let r_prev = self.nodes[self.path[level - 1]].msg.clone().expect("non-root");
                    let s = self.coins.second(level - 1, &history, &r_prev)?;
                    node.reply = VerifierReply::Challenge(s);
                    node.activated += 1;
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(node);
        self.nodes[parent].children.insert(msg.clone(), id);
        Ok(id)
    }

    fn walk(&mut self, prefix: &[BlockMessage]) -> Result<usize, OracleError> {
        self.ensure_root()?;
        self.path.clear();
        self.path.push(0);
        let mut node = 0;
        for msg in prefix {
            node = match self.nodes[node].children.get(msg) {
                Some(&child) => child,
                None => self.extend(msg)?,
            };
            self.path.push(node);
        }
        Ok(node)
    }
}

impl<C: CoinSource> VerifierOracle for Session<'_, C> {
    fn query(&mut self, prefix: &[BlockMessage]) -> Result<VerifierReply, OracleError> {
        if let Some(reason) = &self.halted {
            return Err(OracleError::Halted(reason.clone()));
        }
        check_grammar(&self.cfg, prefix)?;
        if self.cap.is_some_and(|cap| self.steps >= cap) {
            self.halted = Some(HaltReason::StepCap);
            return Err(OracleError::Halted(HaltReason::StepCap));
        }
        self.steps += 1;
        let node = match self.walk(prefix) {
            Ok(node) => node,
            Err(OracleError::Halted(reason)) => {
                self.halted = Some(reason.clone());
                return Err(OracleError::Halted(reason));
            }
            Err(e) => return Err(e),
        };
        let reply = self.nodes[node].reply.clone();
        if self.record_trace {
            let open = (prefix.len() + 1).min(self.cfg.k);
            let tape_digests = self.path[..open]
                .iter()
                .map(|&n| self.nodes[n].tape_digest.expect("open level has a digest"))
                .collect();
            self.trace.push(TraceRecord {
                prefix: prefix.to_vec(),
                reply: reply.clone(),
                resolved: self.nodes[node].resolved,
                activated: self.nodes[node].activated,
                tape_digests,
            });
        }
        Ok(reply)
    }

    fn config(&self) -> ScheduleConfig {
        self.cfg
    }

    fn steps(&self) -> u64 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gi::{gen_instance, prover_commit, prover_respond, GiProtocol, TAPE_BITS};
    use crate::hash::sample_member;
    use crate::seeds::rng_for;

    fn setup(k: usize, m: usize) -> (ScheduleConfig, crate::gi::GraphPair, crate::gi::Permutation, Instance) {
        let (pair, w) = gen_instance(5, true, 1).unwrap();
        let x = pair.to_instance();
        (ScheduleConfig::new(k, m).unwrap(), pair, w.unwrap(), x)
    }

    /// Runs the honest prover straight through, returning the full prefix.
    fn honest_prefix(
        cfg: &ScheduleConfig,
        pair: &crate::gi::GraphPair,
        w: &crate::gi::Permutation,
        oracle: &mut dyn VerifierOracle,
    ) -> Vec<BlockMessage> {
        let mut rng = rng_for(4, "honest", 0);
        let mut prefix = Vec::new();
        let mut states = Vec::new();
        let mut reply = oracle.query(&prefix).unwrap();
        for _ in 0..cfg.k {
            let q = reply.challenge().unwrap().clone();
            let (rs, st): (Vec<_>, Vec<_>) = q
                .copies()
                .iter()
                .map(|q| prover_commit(pair, q, w, &mut rng).unwrap())
                .unzip();
            prefix.push(BlockMessage(rs));
            states.push(st);
            reply = oracle.query(&prefix).unwrap();
        }
        for i in (0..cfg.k).rev() {
            let s = reply.challenge().unwrap().clone();
            let t = states[i]
                .iter()
                .zip(s.copies())
                .map(|(st, s)| prover_respond(st, w, s))
                .collect();
            prefix.push(BlockMessage(t));
            reply = oracle.query(&prefix).unwrap();
        }
        assert_eq!(reply, VerifierReply::Accept);
        prefix
    }

    #[test]
    fn empty_prefix_gives_first_challenge_from_root_history() {
        let (cfg, _, _, x) = setup(3, 2);
        let h = sample_member(1, 64, 2 * TAPE_BITS).unwrap();
        let reply = respond(&cfg, &GiProtocol, &h, &x, &[]).unwrap();
        let tape = block_tape(&h, &root_history(&x), 2, TAPE_BITS).unwrap();
        let q = block_first_challenge(&GiProtocol, &x, &tape).unwrap();
        assert_eq!(reply, VerifierReply::Challenge(q));
    }

    #[test]
    fn honest_run_accepts_and_matches_direct_evaluation() {
        let (cfg, pair, w, x) = setup(3, 2);
        let h = sample_member(2, 64, 2 * TAPE_BITS).unwrap();
        let mut session = Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h.clone(), 2));
        let prefix = honest_prefix(&cfg, &pair, &w, &mut session);
        for len in 0..=prefix.len() {
            assert_eq!(
                session.query(&prefix[..len]).unwrap(),
                respond(&cfg, &GiProtocol, &h, &x, &prefix[..len]).unwrap()
            );
        }
        let last = session.trace().last().unwrap();
        assert_eq!((last.resolved, last.activated), (3, 3));
    }

    #[test]
    fn corrupted_response_aborts_and_stays_aborted() {
        let (cfg, pair, w, x) = setup(2, 1);
        let h = sample_member(3, 64, TAPE_BITS).unwrap();
        let mut session = Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h.clone(), 1));
        let mut prefix = honest_prefix(&cfg, &pair, &w, &mut session);
        prefix[2] = BlockMessage(vec![vec![0; 5]]);
        let reply = session.query(&prefix[..3]).unwrap();
        assert_eq!(reply, VerifierReply::Abort);
        assert_eq!(session.query(&prefix).unwrap(), VerifierReply::Abort);
        assert_eq!(respond(&cfg, &GiProtocol, &h, &x, &prefix).unwrap(), VerifierReply::Abort);
        let rec = &session.trace()[session.trace().len() - 2];
        assert_eq!((rec.resolved, rec.activated), (0, 1));
    }

    #[test]
    fn grammar_errors_are_not_counted() {
        let (cfg, _, _, x) = setup(2, 2);
        let h = sample_member(3, 64, 2 * TAPE_BITS).unwrap();
        let mut session = Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h, 2));
        let bad = vec![BlockMessage(vec![vec![]]); 1];
        assert!(matches!(session.query(&bad), Err(OracleError::Grammar(_))));
        let long = vec![BlockMessage(vec![vec![], vec![]]); 5];
        assert!(matches!(session.query(&long), Err(OracleError::Grammar(_))));
        assert_eq!(session.steps(), 0);
        session.query(&[]).unwrap();
        assert_eq!(session.steps(), 1);
    }

    #[test]
    fn cap_halts_after_budget() {
        let (cfg, _, _, x) = setup(2, 1);
        let h = sample_member(3, 64, TAPE_BITS).unwrap();
        let mut session =
            Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h, 1)).with_cap(Some(2));
        session.query(&[]).unwrap();
        session.query(&[]).unwrap();
        assert_eq!(session.query(&[]), Err(OracleError::Halted(HaltReason::StepCap)));
        assert_eq!(session.trace().len(), 2);
    }

    #[test]
    fn rewinding_reorders_do_not_change_answers() {
        let (cfg, pair, w, x) = setup(2, 1);
        let h = sample_member(5, 64, TAPE_BITS).unwrap();
        let mut s1 = Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h.clone(), 1));
        let prefix = honest_prefix(&cfg, &pair, &w, &mut s1);
        let a = s1.query(&prefix[..3]).unwrap();
        let _ = s1.query(&prefix[..1]).unwrap();
        assert_eq!(s1.query(&prefix[..3]).unwrap(), a);
        // a fresh session asked the long prefix first agrees
        let mut s2 = Session::new(cfg, &GiProtocol, &x, HashedCoins::new(&GiProtocol, &x, h, 1));
        assert_eq!(s2.query(&prefix[..3]).unwrap(), a);
    }
}
