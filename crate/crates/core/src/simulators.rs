//! Reference black-box simulators for the Graph Isomorphism toy protocol.
//!
//! Simulators see `V̂` only through [`VerifierOracle`]. Two strategies are
//! provided:
//!
//! * [`WitnessOracle`] plays the honest prover straight through (one query
//!   per schedule position). Without a witness it commits to a guessed
//!   challenge and gives up on the first wrong guess.
//! * [`Rewinding`] guesses each block's `m` challenge bits before committing
//!   and, on a wrong guess, rewinds to the start of that block with fresh
//!   guesses. Inner sessions must be re-solved after every outer rewind,
//!   which is where the nested schedule's blowup comes from.
//!
//! [`Capped`] halts any simulator after a query budget.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    HaltReason, HashedCoins, OracleError, ScheduleConfig, Session, TraceRecord, VerifierOracle, VerifierReply,
};
use crate::error::{Error, Result};
use crate::gi::{commit_with, guess_respond, prover_commit, prover_respond, GiProtocol, GraphPair, Permutation};
use crate::hash::HashFunction;
use crate::protocol::{BlockMessage, Instance, Protocol};
use crate::seeds;
use crate::stats::{wilson, Estimate, Z95};

/// What a simulator run reports about itself.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimOutcome {
    /// The run reached `Accept`.
    pub completed: bool,
    /// Block attempts (commit moves) made, over all sessions.
    pub block_tries: u64,
    pub halted: Option<HaltReason>,
}

/// A black-box simulator.
pub trait Simulator: Send + Sync {
    fn name(&self) -> String;

    fn simulate(&self, oracle: &mut dyn VerifierOracle, rng: &mut seeds::Rng) -> Result<SimOutcome>;
}

enum Stop {
    Halted(HaltReason),
    GaveUp,
    Fatal(Error),
}

impl From<OracleError> for Stop {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Halted(r) => Stop::Halted(r),
            other => Stop::Fatal(Error::Simulator(other.to_string())),
        }
    }
}

fn finish(result: std::result::Result<(), Stop>, block_tries: u64) -> Result<SimOutcome> {
    match result {
        Ok(()) => Ok(SimOutcome {
            completed: true,
            block_tries,
            halted: None,
        }),
        Err(Stop::Halted(reason)) => Ok(SimOutcome {
            completed: false,
            block_tries,
            halted: Some(reason),
        }),
        Err(Stop::GaveUp) => Ok(SimOutcome {
            completed: false,
            block_tries,
            halted: None,
        }),
        Err(Stop::Fatal(e)) => Err(e),
    }
}

fn expect_challenge(reply: VerifierReply) -> std::result::Result<BlockMessage, Stop> {
    match reply {
        VerifierReply::Challenge(c) => Ok(c),
        other => Err(Stop::Fatal(Error::Simulator(format!(
            "expected a challenge, verifier replied {}",
            other.kind()
        )))),
    }
}

/// Single-pass simulator using the membership witness when it has one.
#[derive(Debug, Clone)]
pub struct WitnessOracle {
    pub pair: GraphPair,
    pub witness: Option<Permutation>,
}

impl WitnessOracle {
    pub fn new(pair: GraphPair, witness: Option<Permutation>) -> Self {
        Self { pair, witness }
    }

    fn run(
        &self,
        oracle: &mut dyn VerifierOracle,
        rng: &mut seeds::Rng,
        tries: &mut u64,
    ) -> std::result::Result<(), Stop> {
        let cfg = oracle.config();
        let mut prefix: Vec<BlockMessage> = Vec::with_capacity(cfg.full_length());
        let mut states = Vec::with_capacity(cfg.k);
        let mut reply = oracle.query(&prefix)?;
        for _ in 0..cfg.k {
            let q = expect_challenge(reply)?;
            let mut rs = Vec::with_capacity(cfg.m);
            let mut st = Vec::with_capacity(cfg.m);
            for qc in q.copies() {
                let (r, s) = match &self.witness {
                    Some(w) => prover_commit(&self.pair, qc, w, rng).map_err(Stop::Fatal)?,
                    None => {
                        let guess = rng.random::<bool>() as u8;
                        commit_with(&self.pair, qc, guess, Permutation::random(self.pair.v(), rng))
                    }
                };
                rs.push(r);
                st.push(s);
            }
            *tries += 1;
            prefix.push(BlockMessage(rs));
            states.push(st);
            reply = oracle.query(&prefix)?;
        }
        for i in (0..cfg.k).rev() {
            let s = expect_challenge(reply)?;
            let mut ts = Vec::with_capacity(cfg.m);
            for (st, sc) in states[i].iter().zip(s.copies()) {
                let t = match &self.witness {
                    Some(w) => prover_respond(st, w, sc),
                    None => guess_respond(st, sc).ok_or(Stop::GaveUp)?,
                };
                ts.push(t);
            }
            prefix.push(BlockMessage(ts));
            reply = oracle.query(&prefix)?;
        }
        match reply {
            VerifierReply::Accept => Ok(()),
            other => Err(Stop::Fatal(Error::Simulator(format!(
                "straight-through run ended with {}",
                other.kind()
            )))),
        }
    }
}

impl Simulator for WitnessOracle {
    fn name(&self) -> String {
        "witness-oracle".into()
    }

    fn simulate(&self, oracle: &mut dyn VerifierOracle, rng: &mut seeds::Rng) -> Result<SimOutcome> {
        let mut tries = 0;
        let result = self.run(oracle, rng, &mut tries);
        finish(result, tries)
    }
}

/// Challenge-guessing simulator that rewinds the innermost unresolved block.
#[derive(Debug, Clone)]
pub struct Rewinding {
    pub pair: GraphPair,
}

struct Solved {
    /// `r⃗i … r⃗k` of the successful attempts.
    commits: Vec<BlockMessage>,
    /// `t⃗k … t⃗i`.
    responses: Vec<BlockMessage>,
    /// Reply to the full prefix ending in `t⃗i`.
    reply: VerifierReply,
}

impl Rewinding {
    pub fn new(pair: GraphPair) -> Self {
        Self { pair }
    }

    /// Solves session `level` given `r⃗1 … r⃗(level−1)` and its first
    /// challenge `q`.
    fn solve(
        &self,
        oracle: &mut dyn VerifierOracle,
        rng: &mut seeds::Rng,
        tries: &mut u64,
        outer: &[BlockMessage],
        q: &BlockMessage,
        level: usize,
    ) -> std::result::Result<Solved, Stop> {
        let cfg = oracle.config();
        let x = self.pair.to_instance();
        loop {
            *tries += 1;
            let mut rs = Vec::with_capacity(cfg.m);
            let mut states = Vec::with_capacity(cfg.m);
            for qc in q.copies() {
                let guess = rng.random::<bool>() as u8;
                let (r, st) = commit_with(&self.pair, qc, guess, Permutation::random(self.pair.v(), rng));
                rs.push(r);
                states.push(st);
            }
            let r = BlockMessage(rs);
            let mut prefix = outer.to_vec();
            prefix.push(r.clone());
            let reply = expect_challenge(oracle.query(&prefix)?)?;
            let (inner, s) = if level < cfg.k {
                let inner = self.solve(oracle, rng, tries, &prefix, &reply, level + 1)?;
                let s = expect_challenge(inner.reply.clone())?;
                (Some(inner), s)
            } else {
                (None, reply)
            };
            let answers: Option<Vec<_>> = states.iter().zip(s.copies()).map(|(st, sc)| guess_respond(st, sc)).collect();
            let Some(ts) = answers else {
                continue;
            };
            // never forward a response the verifier would reject
            let local_ok = (0..cfg.m).all(|c| GiProtocol.accept(&x, &q.0[c], &r.0[c], &s.0[c], &ts[c]));
            if !local_ok {
                return Err(Stop::Fatal(Error::Simulator("guessed response fails local check".into())));
            }
            let t = BlockMessage(ts);
            let (mut commits, mut responses) = match inner {
                Some(inner) => (inner.commits, inner.responses),
                None => (Vec::new(), Vec::new()),
            };
            commits.insert(0, r);
            prefix.truncate(outer.len());
            prefix.extend(commits.iter().cloned());
            prefix.extend(responses.iter().cloned());
            prefix.push(t.clone());
            let reply = oracle.query(&prefix)?;
            responses.push(t);
            return Ok(Solved {
                commits,
                responses,
                reply,
            });
        }
    }

    fn run(
        &self,
        oracle: &mut dyn VerifierOracle,
        rng: &mut seeds::Rng,
        tries: &mut u64,
    ) -> std::result::Result<(), Stop> {
        let q = expect_challenge(oracle.query(&[])?)?;
        let solved = self.solve(oracle, rng, tries, &[], &q, 1)?;
        match solved.reply {
            VerifierReply::Accept => Ok(()),
            other => Err(Stop::Fatal(Error::Simulator(format!(
                "rewinding run ended with {}",
                other.kind()
            )))),
        }
    }
}

impl Simulator for Rewinding {
    fn name(&self) -> String {
        "rewinding".into()
    }

    fn simulate(&self, oracle: &mut dyn VerifierOracle, rng: &mut seeds::Rng) -> Result<SimOutcome> {
        let mut tries = 0;
        let result = self.run(oracle, rng, &mut tries);
        finish(result, tries)
    }
}

/// Oracle adapter that halts after `cap` counted queries.
pub struct CappedOracle<'a> {
    inner: &'a mut dyn VerifierOracle,
    cap: u64,
    used: u64,
}

impl<'a> CappedOracle<'a> {
    pub fn new(inner: &'a mut dyn VerifierOracle, cap: u64) -> Self {
        Self { inner, cap, used: 0 }
    }
}

impl VerifierOracle for CappedOracle<'_> {
    fn query(&mut self, prefix: &[BlockMessage]) -> std::result::Result<VerifierReply, OracleError> {
        if self.used >= self.cap {
            return Err(OracleError::Halted(HaltReason::StepCap));
        }
        let reply = self.inner.query(prefix);
        if !matches!(reply, Err(OracleError::Grammar(_))) {
            self.used += 1;
        }
        reply
    }

    fn config(&self) -> ScheduleConfig {
        self.inner.config()
    }

    fn steps(&self) -> u64 {
        self.used
    }
}

/// Any simulator halted after `cap` queries.
pub struct Capped {
    pub inner: Box<dyn Simulator>,
    pub cap: u64,
}

impl Simulator for Capped {
    fn name(&self) -> String {
        format!("capped({}, {})", self.inner.name(), self.cap)
    }

    fn simulate(&self, oracle: &mut dyn VerifierOracle, rng: &mut seeds::Rng) -> Result<SimOutcome> {
        let mut capped = CappedOracle::new(oracle, self.cap);
        self.inner.simulate(&mut capped, rng)
    }
}

/// Serializable simulator choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimulatorKind {
    WitnessOracle,
    Rewinding,
    Capped(Box<SimulatorKind>, u64),
}

impl SimulatorKind {
    /// Instantiates the simulator for one instance. The witness is only
    /// handed to the witness oracle.
    pub fn build(&self, pair: &GraphPair, witness: Option<&Permutation>) -> Box<dyn Simulator> {
        match self {
            SimulatorKind::WitnessOracle => Box::new(WitnessOracle::new(pair.clone(), witness.cloned())),
            SimulatorKind::Rewinding => Box::new(Rewinding::new(pair.clone())),
            SimulatorKind::Capped(inner, cap) => Box::new(Capped {
                inner: inner.build(pair, witness),
                cap: *cap,
            }),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "witness" | "witness-oracle" => Ok(SimulatorKind::WitnessOracle),
            "rewinding" => Ok(SimulatorKind::Rewinding),
            other => Err(Error::config(format!("unknown simulator `{other}`"))),
        }
    }
}

/// A finished simulator run against plain `V̂`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRun {
    pub trace: Vec<TraceRecord>,
    pub completed: bool,
    pub steps: u64,
    pub block_tries: u64,
}

/// Runs `sim` against `V̂` with coins from `h`.
pub fn run_simulator<H: HashFunction>(
    sim: &dyn Simulator,
    cfg: ScheduleConfig,
    x: &Instance,
    h: H,
    seed: u64,
) -> Result<SimRun> {
    run_simulator_with(sim, cfg, x, h, seed, true)
}

/// As [`run_simulator`], optionally skipping trace recording.
pub fn run_simulator_with<H: HashFunction>(
    sim: &dyn Simulator,
    cfg: ScheduleConfig,
    x: &Instance,
    h: H,
    seed: u64,
    record_trace: bool,
) -> Result<SimRun> {
    let protocol = GiProtocol;
    let coins = HashedCoins::new(&protocol, x, h, cfg.m);
    let mut session = Session::new(cfg, &protocol, x, coins);
    if !record_trace {
        session = session.without_trace();
    }
    let mut rng = seeds::rng_for(seed, "simulator", 0);
    let outcome = sim.simulate(&mut session, &mut rng)?;
    let steps = session.steps();
    let (trace, _, _) = session.into_parts();
    Ok(SimRun {
        trace,
        completed: outcome.completed,
        steps,
        block_tries: outcome.block_tries,
    })
}

/// Fraction of runs completing within `cap` queries, each with a fresh PRG
/// hash member derived from `seed`.
pub fn success_probability_under_cap(
    kind: &SimulatorKind,
    pair: &GraphPair,
    witness: Option<&Permutation>,
    cfg: ScheduleConfig,
    cap: u64,
    trials: u64,
    seed: u64,
) -> Result<Estimate> {
    let sim = SimulatorKind::Capped(Box::new(kind.clone()), cap).build(pair, witness);
    let x = pair.to_instance();
    let tape_bits = GiProtocol.tape_bits(&x);
    let mut completed = 0;
    for trial in 0..trials {
        let h = crate::hash::sample_member(
            seeds::derive_u64(seed, "cap-hash", trial),
            (cap.max(1) as usize) * tape_bits,
            cfg.m * tape_bits,
        )?;
        let run = run_simulator_with(&*sim, cfg, &x, h, seeds::derive_u64(seed, "cap-sim", trial), false)?;
        completed += run.completed as u64;
    }
    Ok(wilson(completed, trials, Z95))
}
