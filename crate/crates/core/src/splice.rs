//! The splicing prover `P_S`: turns a black-box simulator into a prover
//! against one live honest verifier.
//!
//! Per attempt, `P_S` samples a hash member `H`, a coordinate `j` and an
//! address `(i, a)`, then runs the simulator against `V̂` whose coins come
//! from `H` except in one place: copy `j` of the `a`-th block opened at
//! level `i` belongs to the honest verifier. Its first challenge is the one
//! the channel already sent, and the second challenge for the first reply
//! committed in that block (the vertex `v`) is obtained by forwarding `r^j`.
//!
//! * a sibling of `v` is activated before `v`: the attempt aborts and the
//!   channel is untouched;
//! * a sibling is activated after `r` was sent, or the simulator stops
//!   before resolving `v`: the attempt fails;
//! * the simulator resolves `v`: `t^j` is forwarded and the attempt
//!   succeeds iff the honest verifier accepts.
//!
//! With a [`LocalVerifier`] the verifier's tape is also available for
//! analysis: the same simulation is rerun to completion with the tape
//! spliced in, and the spliced vertex is classified in the resulting tree.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{
    tape_digest, CoinSource, Digest32, HaltReason, HashedCoins, OpenedBlock, OracleError, ScheduleConfig, Session,
    TraceRecord, VerifierOracle,
};
use crate::error::{Error, Result};
use crate::gi::{GiProtocol, GraphPair, Permutation};
use crate::hash::{sample_member, HashFunction, HashMember};
use crate::params::{Address, WeightParams};
use crate::protocol::{
    block_first_challenge, block_second_challenge, BlockMessage, BlockTape, Instance, Message, Protocol, Tape,
};
use crate::seeds;
use crate::simulators::{Simulator, SimulatorKind};
use crate::stats::quantile;
use crate::tree::{build_tree, Class, ProofTree};

/// Default hard ceiling on attempts per `run_ps` call.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 100_000;

/// The prover side of one session with the honest verifier.
pub trait HonestChannel {
    /// The verifier's first message, received when the channel opened.
    fn first(&self) -> &Message;

    /// Sends `r` and returns `s`. A second call is a protocol violation.
    fn send_r(&mut self, r: &[u8]) -> Result<Message>;

    /// Sends `t` and returns the verifier's verdict.
    fn send_t(&mut self, t: &[u8]) -> Result<bool>;

    fn r_sent(&self) -> bool;

    /// The verdict, once `t` has been sent.
    fn verdict(&self) -> Option<bool>;

    /// The verifier's coins, when the harness is allowed to see them.
    fn analysis_tape(&self) -> Option<&Tape> {
        None
    }

    /// Digest of everything exchanged so far.
    fn state_digest(&self) -> Digest32;
}

/// In-process honest verifier for the Graph Isomorphism protocol.
#[derive(Debug, Clone)]
pub struct LocalVerifier {
    x: Instance,
    tape: Tape,
    q: Message,
    r: Option<Message>,
    s: Option<Message>,
    t: Option<Message>,
    verdict: Option<bool>,
}

impl LocalVerifier {
    pub fn new(x: Instance, tape: Tape) -> Result<Self> {
        let q = GiProtocol.first_challenge(&x, &tape)?;
        Ok(Self {
            x,
            tape,
            q,
            r: None,
            s: None,
            t: None,
            verdict: None,
        })
    }

    /// A verifier with fresh coins drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(x: Instance, rng: &mut R) -> Result<Self> {
        let bits = GiProtocol.tape_bits(&x);
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        Self::new(x, Tape::from_bytes(bytes, bits)?)
    }

    pub fn instance(&self) -> &Instance {
        &self.x
    }
}

impl HonestChannel for LocalVerifier {
    fn first(&self) -> &Message {
        &self.q
    }

    fn send_r(&mut self, r: &[u8]) -> Result<Message> {
        if self.r.is_some() {
            return Err(Error::ProtocolViolation("a second r was sent to the honest verifier".into()));
        }
        let s = GiProtocol.second_challenge(&self.x, &self.tape, r)?;
        self.r = Some(r.to_vec());
        self.s = Some(s.clone());
        Ok(s)
    }

    fn send_t(&mut self, t: &[u8]) -> Result<bool> {
        let (Some(r), Some(s)) = (&self.r, &self.s) else {
            return Err(Error::ProtocolViolation("t sent before r".into()));
        };
        if self.t.is_some() {
            return Err(Error::ProtocolViolation("a second t was sent to the honest verifier".into()));
        }
        let ok = GiProtocol.accept(&self.x, &self.q, r, s, t);
        self.t = Some(t.to_vec());
        self.verdict = Some(ok);
        Ok(ok)
    }

    fn r_sent(&self) -> bool {
        self.r.is_some()
    }

    fn verdict(&self) -> Option<bool> {
        self.verdict
    }

    fn analysis_tape(&self) -> Option<&Tape> {
        Some(&self.tape)
    }

    fn state_digest(&self) -> Digest32 {
        let mut h = Sha256::new();
        for part in [&Some(self.q.clone()), &self.r, &self.s, &self.t] {
            match part {
                Some(msg) => {
                    h.update([1]);
                    h.update((msg.len() as u32).to_be_bytes());
                    h.update(msg);
                }
                None => h.update([0]),
            }
        }
        h.update([self.verdict.map_or(2, u8::from)]);
        h.finalize().into()
    }
}

type OracleResult<T> = std::result::Result<T, OracleError>;

const MAX_FRAME: usize = 1 << 20;

fn transport(e: std::io::Error) -> Error {
    Error::Transport(e.to_string())
}

pub fn write_frame<W: Write>(w: &mut W, msg: &[u8]) -> Result<()> {
    w.write_all(&(msg.len() as u32).to_be_bytes()).map_err(transport)?;
    w.write_all(msg).map_err(transport)?;
    w.flush().map_err(transport)
}

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(transport(e)),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Transport(format!("frame of {len} bytes exceeds {MAX_FRAME}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(transport)?;
    Ok(Some(buf))
}

fn expect_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    read_frame(r)?.ok_or_else(|| Error::Transport("peer closed the stream".into()))
}

/// Honest channel over a byte stream (4-byte big-endian length prefix per
/// message). The peer runs [`serve`].
pub struct FramedChannel<S: Read + Write> {
    stream: S,
    q: Message,
    transcript: Vec<Message>,
    r_sent: bool,
    verdict: Option<bool>,
}

impl<S: Read + Write> FramedChannel<S> {
    /// Connects and receives `q`.
    pub fn open(mut stream: S) -> Result<Self> {
        let q = expect_frame(&mut stream)?;
        Ok(Self {
            stream,
            transcript: vec![q.clone()],
            q,
            r_sent: false,
            verdict: None,
        })
    }
}

impl<S: Read + Write> HonestChannel for FramedChannel<S> {
    fn first(&self) -> &Message {
        &self.q
    }

    fn send_r(&mut self, r: &[u8]) -> Result<Message> {
        if self.r_sent {
            return Err(Error::ProtocolViolation("a second r was sent to the honest verifier".into()));
        }
        self.r_sent = true;
        write_frame(&mut self.stream, r)?;
        let s = expect_frame(&mut self.stream)?;
        self.transcript.extend([r.to_vec(), s.clone()]);
        Ok(s)
    }

    fn send_t(&mut self, t: &[u8]) -> Result<bool> {
        if !self.r_sent || self.verdict.is_some() {
            return Err(Error::ProtocolViolation("t sent out of order".into()));
        }
        write_frame(&mut self.stream, t)?;
        let verdict = expect_frame(&mut self.stream)?;
        let ok = match verdict.as_slice() {
            [1] => true,
            [0] => false,
            other => return Err(Error::Transport(format!("malformed verdict frame {other:?}"))),
        };
        self.transcript.push(t.to_vec());
        self.verdict = Some(ok);
        Ok(ok)
    }

    fn r_sent(&self) -> bool {
        self.r_sent
    }

    fn verdict(&self) -> Option<bool> {
        self.verdict
    }

    fn state_digest(&self) -> Digest32 {
        let mut h = Sha256::new();
        for msg in &self.transcript {
            h.update((msg.len() as u32).to_be_bytes());
            h.update(msg);
        }
        h.update([self.verdict.map_or(2, u8::from)]);
        h.finalize().into()
    }
}

/// Serves one session of `verifier` over `stream`. Returns the verdict, or
/// `None` if the prover hung up before sending `t`.
pub fn serve<S: Read + Write>(mut stream: S, verifier: &mut LocalVerifier) -> Result<Option<bool>> {
    write_frame(&mut stream, &verifier.q.clone())?;
    let Some(r) = read_frame(&mut stream)? else {
        return Ok(None);
    };
    let s = verifier.send_r(&r)?;
    write_frame(&mut stream, &s)?;
    let Some(t) = read_frame(&mut stream)? else {
        return Ok(None);
    };
    let ok = verifier.send_t(&t)?;
    write_frame(&mut stream, &[u8::from(ok)])?;
    Ok(Some(ok))
}

/// Operational result of one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operational {
    Succeeded,
    Failed,
    Aborted,
}

/// What `P_S` splices in one attempt. `j` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceChoice {
    pub address: Address,
    pub j: usize,
}

impl SpliceChoice {
    pub fn sample<R: Rng + ?Sized>(wp: &WeightParams, m: usize, rng: &mut R) -> Result<Self> {
        let address = wp.sample_address(rng)?;
        Ok(Self {
            address,
            j: rng.random_range(1..=m),
        })
    }
}

/// Everything fixed across the attempts of one attack.
#[derive(Debug, Clone)]
pub struct AttackSetup {
    pub pair: GraphPair,
    /// Handed to the witness-oracle simulator only.
    pub witness: Option<Permutation>,
    pub sched: ScheduleConfig,
    pub simulator: SimulatorKind,
    /// Weighting; `wp.n` bounds the sampled address index.
    pub wp: WeightParams,
    /// Query budget of every simulator run; defaults to `wp.n`.
    pub query_cap: Option<u64>,
}

impl AttackSetup {
    pub fn new(
        pair: GraphPair,
        witness: Option<Permutation>,
        sched: ScheduleConfig,
        simulator: SimulatorKind,
        wp: WeightParams,
    ) -> Result<Self> {
        if wp.k != sched.k {
            return Err(Error::config(format!("weights for k = {} but schedule has k = {}", wp.k, sched.k)));
        }
        Ok(Self {
            query_cap: Some(wp.n),
            pair,
            witness,
            sched,
            simulator,
            wp,
        })
    }

    pub fn with_query_cap(mut self, cap: Option<u64>) -> Self {
        self.query_cap = cap;
        self
    }

    pub fn instance(&self) -> Instance {
        self.pair.to_instance()
    }


    fn build_simulator(&self) -> Box<dyn Simulator> {
        self.simulator.build(&self.pair, self.witness.as_ref())
    }

    fn hash(&self, seed: u64) -> Result<HashMember> {
        let tape_bits = GiProtocol.tape_bits(&self.instance());
        sample_member(seed, self.wp.n.max(1) as usize, self.sched.m * tape_bits)
    }
}

fn source_halt(what: &str) -> OracleError {
    OracleError::Halted(HaltReason::Source(what.into()))
}

/// Replaces copy `j` (0-based) of a block message.
fn with_copy(mut block: BlockMessage, j: usize, msg: Message) -> BlockMessage {
    block.0[j] = msg;
    block
}

/// Online splice: coins from `H` except copy `j` of the target block, which
/// is relayed to and from the honest channel.
pub struct OnlineSpliceCoins<'a, H: HashFunction> {
    base: HashedCoins<'a, H>,
    protocol: &'a dyn Protocol,
    x: &'a Instance,
    channel: &'a mut dyn HonestChannel,
    choice: SpliceChoice,
    opened: Vec<u64>,
    target: Option<(Vec<u8>, BlockTape)>,
    v: Option<BlockMessage>,
    s_honest: Option<Message>,
    outcome: Option<Operational>,
    fault: Option<Error>,
}

impl<'a, H: HashFunction> OnlineSpliceCoins<'a, H> {
    pub fn new(
        protocol: &'a dyn Protocol,
        x: &'a Instance,
        h: H,
        m: usize,
        k: usize,
        channel: &'a mut dyn HonestChannel,
        choice: SpliceChoice,
    ) -> Self {
        Self {
            base: HashedCoins::new(protocol, x, h, m),
            protocol,
            x,
            channel,
            choice,
            opened: vec![0; k + 1],
            target: None,
            v: None,
            s_honest: None,
            outcome: None,
            fault: None,
        }
    }

    fn j(&self) -> usize {
        self.choice.j - 1
    }

    fn is_target(&self, history: &[u8]) -> bool {
        self.target.as_ref().is_some_and(|(h, _)| h == history)
    }

    fn halt(&mut self, outcome: Operational) -> OracleError {
        self.outcome = Some(outcome);
        source_halt(match outcome {
            Operational::Succeeded => "splice succeeded",
            Operational::Failed => "splice failed",
            Operational::Aborted => "splice aborted",
        })
    }

    fn channel_fault(&mut self, e: Error) -> OracleError {
        self.fault = Some(e);
        source_halt("honest channel fault")
    }

    /// Final operational outcome, for a run that ended on its own.
    pub fn outcome(&self) -> Operational {
        self.outcome.unwrap_or(if self.s_honest.is_some() {
            Operational::Failed
        } else {
            Operational::Aborted
        })
    }

    pub fn r_sent(&self) -> bool {
        self.s_honest.is_some()
    }

    pub fn take_fault(&mut self) -> Option<Error> {
        self.fault.take()
    }
}

impl<H: HashFunction> CoinSource for OnlineSpliceCoins<'_, H> {
    fn open(&mut self, level: usize, history: &[u8]) -> OracleResult<OpenedBlock> {
        self.opened[level] += 1;
        if level != self.choice.address.level || self.opened[level] != self.choice.address.a {
            return self.base.open(level, history);
        }
        let tape = self.base.tape(history)?;
        let q = block_first_challenge(self.protocol, self.x, &tape)?;
        let q = with_copy(q, self.j(), self.channel.first().clone());
        let mut d = Sha256::new();
        d.update(b"spliced");
        d.update(tape_digest(&tape));
        d.update(q.encode());
        self.target = Some((history.to_vec(), tape));
        Ok(OpenedBlock {
            q,
            tape_digest: d.finalize().into(),
        })
    }

    fn committed(&mut self, _level: usize, history: &[u8], r: &BlockMessage) -> OracleResult<()> {
        if self.v.is_none() && self.is_target(history) {
            self.v = Some(r.clone());
        }
        Ok(())
    }

    fn second(&mut self, level: usize, history: &[u8], r: &BlockMessage) -> OracleResult<BlockMessage> {
        if !self.is_target(history) {
            return self.base.second(level, history, r);
        }
        if self.v.as_ref() != Some(r) {
            let outcome = if self.s_honest.is_some() {
                Operational::Failed
            } else {
                Operational::Aborted
            };
            return Err(self.halt(outcome));
        }
        let tape = &self.target.as_ref().expect("target set").1;
        let s = block_second_challenge(self.protocol, self.x, tape, r)?;
        let s_j = match &self.s_honest {
            Some(s_j) => s_j.clone(),
            None => {
                let j = self.j();
                match self.channel.send_r(&r.0[j]) {
                    Ok(s_j) => {
                        self.s_honest = Some(s_j.clone());
                        s_j
                    }
                    Err(e) => return Err(self.channel_fault(e)),
                }
            }
        };
        Ok(with_copy(s, self.j(), s_j))
    }

    fn resolved(&mut self, _level: usize, history: &[u8], r: &BlockMessage, t: &BlockMessage) -> OracleResult<()> {
        if !self.is_target(history) || self.v.as_ref() != Some(r) {
            return Ok(());
        }
        let j = self.j();
        match self.channel.send_t(&t.0[j]) {
            Ok(true) => Err(self.halt(Operational::Succeeded)),
            Ok(false) => {
                log::warn!("honest verifier rejected a response the simulator got accepted");
                Err(self.halt(Operational::Failed))
            }
            Err(e) => Err(self.channel_fault(e)),
        }
    }
}

/// Analysis splice: the honest verifier's tape is written into copy `j` of
/// the target block, and the run continues to completion.
pub struct SplicingCoins<'a, H: HashFunction> {
    base: HashedCoins<'a, H>,
    protocol: &'a dyn Protocol,
    x: &'a Instance,
    honest: Tape,
    choice: SpliceChoice,
    opened: Vec<u64>,
    target: Option<(Vec<u8>, BlockTape)>,
}

impl<'a, H: HashFunction> SplicingCoins<'a, H> {
    pub fn new(
        protocol: &'a dyn Protocol,
        x: &'a Instance,
        h: H,
        m: usize,
        k: usize,
        honest: Tape,
        choice: SpliceChoice,
    ) -> Self {
        Self {
            base: HashedCoins::new(protocol, x, h, m),
            protocol,
            x,
            honest,
            choice,
            opened: vec![0; k + 1],
            target: None,
        }
    }

    fn tape(&self, history: &[u8]) -> OracleResult<BlockTape> {
        match &self.target {
            Some((h, tape)) if h == history => Ok(tape.clone()),
            _ => self.base.tape(history),
        }
    }
}

impl<H: HashFunction> CoinSource for SplicingCoins<'_, H> {
    fn open(&mut self, level: usize, history: &[u8]) -> OracleResult<OpenedBlock> {
        self.opened[level] += 1;
        if level == self.choice.address.level && self.opened[level] == self.choice.address.a {
            let mut tape = self.base.tape(history)?;
            tape.copies[self.choice.j - 1] = self.honest.clone();
            self.target = Some((history.to_vec(), tape));
        }
        let tape = self.tape(history)?;
        Ok(OpenedBlock {
            q: block_first_challenge(self.protocol, self.x, &tape)?,
            tape_digest: tape_digest(&tape),
        })
    }

    fn second(&mut self, _level: usize, history: &[u8], r: &BlockMessage) -> OracleResult<BlockMessage> {
        let tape = self.tape(history)?;
        Ok(block_second_challenge(self.protocol, self.x, &tape, r)?)
    }
}

/// One attempt's record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub operational: Operational,
    /// Class of the spliced vertex in the completed analysis run.
    pub analysis: Option<Class>,
    pub v_sent_r: bool,
    pub choice: SpliceChoice,
    /// Queries answered in the operational run.
    pub steps: u64,
    /// Vertices of the analysis tree.
    pub tree_size: Option<usize>,
    /// Digest of the operational query trace.
    pub trace_digest: String,
}

fn trace_digest(trace: &[TraceRecord]) -> String {
    let mut h = Sha256::new();
    for rec in trace {
        for msg in &rec.prefix {
            h.update(msg.encode());
        }
        h.update(rec.reply.kind().as_bytes());
        h.update([rec.resolved as u8, rec.activated as u8]);
    }
    hex::encode(h.finalize())
}

/// Runs one attempt of `P_S` against `channel`. `analyse` additionally
/// classifies the spliced vertex when the channel exposes its tape.
pub fn run_attempt(setup: &AttackSetup, channel: &mut dyn HonestChannel, seed: u64, analyse: bool) -> Result<AttemptOutcome> {
    if channel.r_sent() {
        return Err(Error::ProtocolViolation("attempt started on a used honest channel".into()));
    }
    let x = setup.instance();
    let protocol = GiProtocol;
    let mut rng = seeds::rng_for(seed, "splice-choice", 0);
    let choice = SpliceChoice::sample(&setup.wp, setup.sched.m, &mut rng)?;
    let h_seed = seeds::derive_u64(seed, "attempt-hash", 0);
    let sim_seed = seeds::derive_u64(seed, "attempt-simulator", 0);
    let sim = setup.build_simulator();
    let honest_tape = if analyse { channel.analysis_tape().cloned() } else { None };

    let coins = OnlineSpliceCoins::new(
        &protocol,
        &x,
        setup.hash(h_seed)?,
        setup.sched.m,
        setup.sched.k,
        channel,
        choice,
    );
    let mut session = Session::new(setup.sched, &protocol, &x, coins).with_cap(setup.query_cap);
    let mut sim_rng = seeds::rng_for(sim_seed, "simulator", 0);
    sim.simulate(&mut session, &mut sim_rng)?;
    let steps = session.steps();
    let (trace, mut coins, _) = session.into_parts();
    if let Some(fault) = coins.take_fault() {
        return Err(fault);
    }
    let operational = coins.outcome();
    let v_sent_r = coins.r_sent();

    let (analysis, tree_size) = match honest_tape {
        Some(tape) => {
            let tree = spliced_tree(setup, &x, setup.hash(h_seed)?, tape, choice, sim_seed, &*sim)?;
            (Some(tree.classify_spliced(choice.address)), Some(tree.size()))
        }
        None => (None, None),
    };
    Ok(AttemptOutcome {
        operational,
        analysis,
        v_sent_r,
        choice,
        steps,
        tree_size,
        trace_digest: trace_digest(&trace),
    })
}

fn spliced_tree(
    setup: &AttackSetup,
    x: &Instance,
    h: HashMember,
    honest: Tape,
    choice: SpliceChoice,
    sim_seed: u64,
    sim: &dyn Simulator,
) -> Result<ProofTree> {
    let protocol = GiProtocol;
    let coins = SplicingCoins::new(&protocol, x, h, setup.sched.m, setup.sched.k, honest, choice);
    let mut session = Session::new(setup.sched, &protocol, x, coins).with_cap(setup.query_cap);
    let mut sim_rng = seeds::rng_for(sim_seed, "simulator", 0);
    sim.simulate(&mut session, &mut sim_rng)?;
    let (trace, _, _) = session.into_parts();
    build_tree(&trace, &setup.sched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsVerdict {
    Convinced,
    NotConvinced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsReport {
    pub verdict: PsVerdict,
    pub attempts: u64,
    pub outcomes: Vec<AttemptOutcome>,
}

/// Repeats attempts with fresh randomness until one succeeds or fails, or
/// `max_attempts` aborts have happened.
pub fn run_ps(setup: &AttackSetup, channel: &mut dyn HonestChannel, max_attempts: u64, seed: u64) -> Result<PsReport> {
    if max_attempts == 0 {
        return Err(Error::config("max_attempts must be at least 1"));
    }
    let mut outcomes = Vec::new();
    for attempt in 0..max_attempts {
        let before = channel.state_digest();
        let outcome = run_attempt(setup, channel, seeds::derive_u64(seed, "attempt", attempt), false)?;
        let operational = outcome.operational;
        outcomes.push(outcome);
        match operational {
            Operational::Aborted => {
                if channel.state_digest() != before {
                    return Err(Error::ProtocolViolation("an aborted attempt touched the honest channel".into()));
                }
            }
            Operational::Succeeded | Operational::Failed => {
                let verdict = if channel.verdict() == Some(true) {
                    PsVerdict::Convinced
                } else {
                    PsVerdict::NotConvinced
                };
                return Ok(PsReport {
                    verdict,
                    attempts: attempt + 1,
                    outcomes,
                });
            }
        }
    }
    Ok(PsReport {
        verdict: PsVerdict::NotConvinced,
        attempts: max_attempts,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    InL,
    NotInL,
}

/// Runs `P_S` against a fresh honest verifier and reports its verdict.
pub fn decide(setup: &AttackSetup, max_attempts: u64, seed: u64) -> Result<(Decision, PsReport)> {
    let mut verifier = LocalVerifier::random(setup.instance(), &mut seeds::rng_for(seed, "honest-verifier", 0))?;
    let report = run_ps(setup, &mut verifier, max_attempts, seed)?;
    let decision = match verifier.verdict() {
        Some(true) => Decision::InL,
        _ => Decision::NotInL,
    };
    Ok((decision, report))
}

/// How the query cap `N` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepCapPolicy {
    Fixed(u64),
    /// `multiplier` times the 99th-percentile query count of `runs`
    /// unspliced simulator runs.
    Measured { multiplier: u64, runs: u64 },
}

impl Default for StepCapPolicy {
    fn default() -> Self {
        StepCapPolicy::Measured {
            multiplier: 100,
            runs: 200,
        }
    }
}

impl StepCapPolicy {
    pub fn resolve(
        &self,
        pair: &GraphPair,
        witness: Option<&Permutation>,
        sched: ScheduleConfig,
        kind: &SimulatorKind,
        seed: u64,
    ) -> Result<u64> {
        let (multiplier, runs) = match *self {
            StepCapPolicy::Fixed(n) if n >= 1 => return Ok(n),
            StepCapPolicy::Fixed(_) => return Err(Error::config("step cap must be at least 1")),
            StepCapPolicy::Measured { multiplier, runs } => (multiplier, runs),
        };
        if multiplier == 0 || runs == 0 {
            return Err(Error::config("measured step cap needs a positive multiplier and run count"));
        }
        let x = pair.to_instance();
        let tape_bits = GiProtocol.tape_bits(&x);
        let sim = kind.build(pair, witness);
        let mut steps = Vec::with_capacity(runs as usize);
        for run in 0..runs {
            let h = sample_member(seeds::derive_u64(seed, "cap-measure-hash", run), 1 << 20, sched.m * tape_bits)?;
            let r = crate::simulators::run_simulator_with(
                &*sim,
                sched,
                &x,
                h,
                seeds::derive_u64(seed, "cap-measure-sim", run),
                false,
            )?;
            steps.push(r.steps);
        }
        Ok((quantile(&steps, 0.99) * multiplier).max(1))
    }
}

/// One sample of either experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentSample {
    pub tree: ProofTree,
    pub choice: SpliceChoice,
    pub class: Class,
    pub fingerprint: String,
}

/// Samples the splice first, then runs the simulator with a fresh honest
/// tape spliced in.
pub fn experiment1(setup: &AttackSetup, seed: u64) -> Result<ExperimentSample> {
    let x = setup.instance();
    let choice = SpliceChoice::sample(&setup.wp, setup.sched.m, &mut seeds::rng_for(seed, "splice-choice", 0))?;
    let honest = LocalVerifier::random(x.clone(), &mut seeds::rng_for(seed, "honest-verifier", 0))?
        .tape
        .clone();
    let sim = setup.build_simulator();
    let h = setup.hash(seeds::derive_u64(seed, "attempt-hash", 0))?;
    let tree = spliced_tree(setup, &x, h, honest, choice, seeds::derive_u64(seed, "attempt-simulator", 0), &*sim)?;
    Ok(ExperimentSample {
        class: tree.classify_spliced(choice.address),
        fingerprint: tree.fingerprint(),
        tree,
        choice,
    })
}

/// Runs the simulator against plain `V̂`, then samples the splice.
pub fn experiment2(setup: &AttackSetup, seed: u64) -> Result<ExperimentSample> {
    let x = setup.instance();
    let protocol = GiProtocol;
    let sim = setup.build_simulator();
    let h = setup.hash(seeds::derive_u64(seed, "attempt-hash", 0))?;
    let coins = HashedCoins::new(&protocol, &x, h, setup.sched.m);
    let mut session = Session::new(setup.sched, &protocol, &x, coins).with_cap(setup.query_cap);
    let mut sim_rng = seeds::rng_for(seeds::derive_u64(seed, "attempt-simulator", 0), "simulator", 0);
    sim.simulate(&mut session, &mut sim_rng)?;
    let (trace, _, _) = session.into_parts();
    let tree = build_tree(&trace, &setup.sched)?;
    let choice = SpliceChoice::sample(&setup.wp, setup.sched.m, &mut seeds::rng_for(seed, "splice-choice", 0))?;
    Ok(ExperimentSample {
        class: tree.classify_spliced(choice.address),
        fingerprint: tree.fingerprint(),
        tree,
        choice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gi::gen_instance;
    use crate::params::weight_params;

    fn setup(iso: bool, k: usize, m: usize, n: u64, kind: SimulatorKind) -> AttackSetup {
        let (pair, w) = gen_instance(6, iso, 11).unwrap();
        AttackSetup::new(pair, w, ScheduleConfig::new(k, m).unwrap(), kind, weight_params(k, n).unwrap())
            .unwrap()
            .with_query_cap(None)
    }

    #[test]
    fn local_verifier_is_one_shot() {
        let (pair, w) = gen_instance(6, true, 3).unwrap();
        let mut v = LocalVerifier::random(pair.to_instance(), &mut seeds::rng_for(1, "v", 0)).unwrap();
        assert!(v.send_t(&[]).is_err());
        let (r, state) = crate::gi::prover_commit(&pair, v.first(), w.as_ref().unwrap(), &mut seeds::rng_for(1, "p", 0))
            .unwrap();
        let s = v.send_r(&r).unwrap();
        assert!(matches!(v.send_r(&r), Err(Error::ProtocolViolation(_))));
        let t = crate::gi::prover_respond(&state, w.as_ref().unwrap(), &s);
        assert!(v.send_t(&t).unwrap());
        assert_eq!(v.verdict(), Some(true));
    }

    #[test]
    fn witness_oracle_single_path_outcomes() {
        // N = 1: every address is on the single path, so every attempt succeeds
        let s = setup(true, 2, 1, 1, SimulatorKind::WitnessOracle);
        for seed in 0..20 {
            let mut v = LocalVerifier::random(s.instance(), &mut seeds::rng_for(seed, "v", 0)).unwrap();
            let out = run_attempt(&s, &mut v, seed, true).unwrap();
            assert_eq!(out.operational, Operational::Succeeded);
            assert_eq!(out.analysis, Some(Class::Good));
            assert_eq!(v.verdict(), Some(true));
        }
        // N = 4: a > 1 lands off the path and aborts without touching the channel
        let s = setup(true, 2, 2, 4, SimulatorKind::WitnessOracle);
        let mut seen = [0; 3];
        for seed in 0..40 {
            let mut v = LocalVerifier::random(s.instance(), &mut seeds::rng_for(seed, "v", 0)).unwrap();
            let before = v.state_digest();
            let out = run_attempt(&s, &mut v, seed, true).unwrap();
            match out.operational {
                Operational::Succeeded => {
                    assert_eq!(out.choice.address.a, 1);
                    seen[0] += 1;
                }
                Operational::Aborted => {
                    assert_ne!(out.choice.address.a, 1);
                    assert_eq!(v.state_digest(), before);
                    assert_eq!(out.analysis, Some(Class::Neither));
                    seen[2] += 1;
                }
                Operational::Failed => seen[1] += 1,
            }
        }
        assert_eq!(seen[1], 0);
        assert!(seen[0] > 0 && seen[2] > 0);
    }

    #[test]
    fn operational_implies_analysis_direction() {
        let s = setup(true, 3, 2, 60, SimulatorKind::Rewinding);
        for seed in 0..200 {
            let mut v = LocalVerifier::random(s.instance(), &mut seeds::rng_for(seed, "v", 0)).unwrap();
            let out = run_attempt(&s, &mut v, seed, true).unwrap();
            let class = out.analysis.unwrap();
            if class == Class::Good {
                assert_eq!(out.operational, Operational::Succeeded, "seed {seed}");
            }
            if out.operational == Operational::Failed {
                assert_eq!(class, Class::Bad, "seed {seed}");
            }
            assert_eq!(out.v_sent_r, out.operational != Operational::Aborted);
        }
    }

    #[test]
    fn run_ps_is_deterministic_and_sound_direction() {
        let s = setup(true, 2, 1, 4, SimulatorKind::WitnessOracle);
        let (d1, r1) = decide(&s, 1000, 5).unwrap();
        let (d2, r2) = decide(&s, 1000, 5).unwrap();
        assert_eq!(d1, Decision::InL);
        assert_eq!((d1, &r1), (d2, &r2));
        let s = setup(false, 2, 1, 4, SimulatorKind::WitnessOracle);
        let accepted = (0..60).filter(|&seed| decide(&s, 1000, seed).unwrap().0 == Decision::InL).count();
        assert!(accepted <= 45, "{accepted}");
        assert!(run_ps(&s, &mut LocalVerifier::random(s.instance(), &mut seeds::rng_for(0, "v", 0)).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn used_channel_is_rejected() {
        let s = setup(true, 2, 1, 1, SimulatorKind::WitnessOracle);
        let mut v = LocalVerifier::random(s.instance(), &mut seeds::rng_for(0, "v", 0)).unwrap();
        v.send_r(&[0]).unwrap();
        assert!(matches!(run_attempt(&s, &mut v, 0, false), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn framed_channel_round_trip() {
        use std::os::unix::net::UnixStream;
        let s = setup(true, 2, 1, 1, SimulatorKind::WitnessOracle);
        let (client, server) = UnixStream::pair().unwrap();
        let mut verifier = LocalVerifier::random(s.instance(), &mut seeds::rng_for(9, "v", 0)).unwrap();
        let handle = std::thread::spawn(move || serve(server, &mut verifier).unwrap());
        let mut channel = FramedChannel::open(client).unwrap();
        let report = run_ps(&s, &mut channel, 10, 3).unwrap();
        assert_eq!(report.verdict, PsVerdict::Convinced);
        drop(channel);
        assert_eq!(handle.join().unwrap(), Some(true));
    }

    #[test]
    fn experiments_agree_on_tree_when_choice_is_off_tree() {
        let s = setup(true, 2, 1, 3, SimulatorKind::WitnessOracle);
        for seed in 0..10 {
            let e1 = experiment1(&s, seed).unwrap();
            let e2 = experiment2(&s, seed).unwrap();
            assert_eq!(e1.fingerprint, "*(r(r))");
            assert_eq!(e1.fingerprint, e2.fingerprint);
            assert_eq!(e1.choice, e2.choice);
            assert_eq!(e1.class, e2.class);
        }
    }

    #[test]
    fn measured_cap_for_witness_oracle() {
        let (pair, w) = gen_instance(6, true, 1).unwrap();
        let sched = ScheduleConfig::new(3, 2).unwrap();
        let n = StepCapPolicy::Measured { multiplier: 100, runs: 20 }
            .resolve(&pair, w.as_ref(), sched, &SimulatorKind::WitnessOracle, 0)
            .unwrap();
        assert_eq!(n, 700);
        assert_eq!(StepCapPolicy::Fixed(5).resolve(&pair, None, sched, &SimulatorKind::Rewinding, 0).unwrap(), 5);
    }
}
