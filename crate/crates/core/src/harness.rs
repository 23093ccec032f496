//! Experiment orchestration: configuration, Monte Carlo estimation, the
//! checker suites over simulator trees, and line-delimited / CSV reports.
//!
//! Every trial draws its randomness from `derive_u64(seed, label, index)`,
//! so results do not depend on how trials are spread over threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::ScheduleConfig;
use crate::concentration::{check_tape_concentration, to_f64, ConcentrationSummary};
use crate::error::{Error, Result};
use crate::gi::{
    best_cheating_prover, commit_with, gen_instance, guess_respond, prover_commit, prover_respond, GiProtocol,
    GraphPair, Permutation,
};
use crate::params::{check_f_bound, weight_params, WeightParams};
use crate::protocol::{block_accept, BlockMessage, Protocol};
use crate::seeds::{self, derive_u64};
use crate::simulators::{run_simulator_with, SimulatorKind};
use crate::splice::{
    decide, experiment1, experiment2, run_attempt, AttackSetup, Decision, HonestChannel, LocalVerifier, Operational,
    StepCapPolicy, DEFAULT_MAX_ATTEMPTS,
};
use crate::stats::{chi_square_two_sample, mean_sd, quantile, wilson, ChiSquareResult, Estimate, Z95};
use crate::tree::{
    check_fail_budget, check_snake_structure, check_weight_bounds, decompose_snakes, spliced_weights, BadRule,
    Class, ProofTree, Snake, ROOT,
};

/// Environment variable holding the default master seed.
pub const SEED_ENV: &str = "CZK_SEED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k: usize,
    pub m: usize,
    /// Graph size.
    pub v: usize,
    /// Whether the generated pair is isomorphic.
    pub iso: bool,
    pub simulator: SimulatorKind,
    pub trials: u64,
    pub seed: u64,
    pub cap: StepCapPolicy,
    pub max_attempts: u64,
    /// Use `m = k³`.
    pub full_scale: bool,
    /// Let sessions run past `N` queries (the address range still uses `N`).
    pub uncapped: bool,
    /// Classification used by the pointwise tree checkers.
    pub bad_rule: BadRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 3,
            m: 2,
            v: 6,
            iso: true,
            simulator: SimulatorKind::Rewinding,
            trials: 1000,
            seed: 0,
            cap: StepCapPolicy::default(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            full_scale: false,
            uncapped: false,
            bad_rule: BadRule::Literal,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::config(format!("`{key}` expects true/false, got `{other}`"))),
    }
}

/// `measured`, `measured:MULT`, or a fixed positive cap.
pub fn parse_cap(value: &str) -> Result<StepCapPolicy> {
    let value = value.trim();
    if value == "measured" {
        return Ok(StepCapPolicy::default());
    }
    if let Some(mult) = value.strip_prefix("measured:") {
        let StepCapPolicy::Measured { runs, .. } = StepCapPolicy::default() else {
            unreachable!()
        };
        return Ok(StepCapPolicy::Measured {
            multiplier: parse_num("cap", mult)?,
            runs,
        });
    }
    Ok(StepCapPolicy::Fixed(parse_num("cap", value)?))
}

impl ExperimentConfig {
    /// Default configuration with the seed taken from [`SEED_ENV`] if set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = parse_num(SEED_ENV, &seed)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "k" => self.k = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "v" | "graph-size" => self.v = parse_num(key, value)?,
            "iso" => self.iso = parse_bool(key, value)?,
            "simulator" => self.simulator = SimulatorKind::parse(value.trim())?,
            "trials" => self.trials = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "cap" => self.cap = parse_cap(value)?,
            "max-attempts" => self.max_attempts = parse_num(key, value)?,
            "full-scale" => self.full_scale = parse_bool(key, value)?,
            "uncapped" => self.uncapped = parse_bool(key, value)?,
            "bad-rule" => self.bad_rule = BadRule::parse(value.trim())?,
            other => return Err(Error::config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", no + 1)))?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    /// The configuration actually run: `m = k³` under the full-scale
    /// profile.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.full_scale {
            cfg.m = cfg.k.pow(3);
            log::warn!(
                "full-scale profile: m = k^3 = {}; simulator runs may be very slow or hit the cap",
                cfg.m
            );
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.trials == 0 || self.max_attempts == 0 {
            return Err(Error::config("k, m, trials and max-attempts must be positive"));
        }
        if !(3..=crate::gi::MAX_DESK_VERTICES).contains(&self.v) {
            return Err(Error::config(format!(
                "graph size must be in 3..={}",
                crate::gi::MAX_DESK_VERTICES
            )));
        }
        Ok(())
    }

    pub fn sched(&self) -> Result<ScheduleConfig> {
        ScheduleConfig::new(self.k, self.m)
    }

    /// The instance this configuration attacks.
    pub fn instance(&self) -> Result<(GraphPair, Option<Permutation>)> {
        gen_instance(self.v, self.iso, derive_u64(self.seed, "instance", 0))
    }

    pub fn setup_for(&self, pair: GraphPair, witness: Option<Permutation>) -> Result<AttackSetup> {
        self.validate()?;
        let sched = self.sched()?;
        let n = self
            .cap
            .resolve(&pair, witness.as_ref(), sched, &self.simulator, derive_u64(self.seed, "cap", 0))?;
        let setup = AttackSetup::new(pair, witness, sched, self.simulator.clone(), weight_params(self.k, n)?)?;
        Ok(if self.uncapped { setup.with_query_cap(None) } else { setup })
    }

    pub fn setup(&self) -> Result<AttackSetup> {
        let (pair, witness) = self.instance()?;
        self.setup_for(pair, witness)
    }
}

/// Runs `f(index, trial_seed)` for every trial; results in index order.
pub fn run_trials<T, F>(trials: u64, seed: u64, label: &str, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync + Send,
{
    (0..trials)
        .into_par_iter()
        .map(|i| f(i, derive_u64(seed, label, i)))
        .collect()
}

/// Wilson estimate of an indicator over `trials` derived trials.
pub fn estimate_by<F>(trials: u64, seed: u64, label: &str, f: F) -> Result<Estimate>
where
    F: Fn(u64, u64) -> Result<bool> + Sync + Send,
{
    let hits = run_trials(trials, seed, label, f)?;
    Ok(wilson(hits.iter().filter(|&&b| b).count() as u64, trials, Z95))
}

/// Events of one `P_S` attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttemptEvent {
    Succeeded,
    Failed,
    Aborted,
    AnalysisGood,
    AnalysisBad,
}

impl AttemptEvent {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "succeed" | "succeeded" => Ok(Self::Succeeded),
            "fail" | "failed" => Ok(Self::Failed),
            "abort" | "aborted" => Ok(Self::Aborted),
            "good" => Ok(Self::AnalysisGood),
            "bad" => Ok(Self::AnalysisBad),
            other => Err(Error::config(format!("unknown event `{other}`"))),
        }
    }
}

fn fresh_verifier(setup: &AttackSetup, trial_seed: u64) -> Result<LocalVerifier> {
    LocalVerifier::random(setup.instance(), &mut seeds::rng_for(trial_seed, "honest-verifier", 0))
}

/// Frequency of `event` over single attempts against fresh verifiers.
pub fn mc_estimate(event: AttemptEvent, cfg: &ExperimentConfig) -> Result<Estimate> {
    if cfg.trials < 30 {
        return Err(Error::config("Monte Carlo estimates need at least 30 trials"));
    }
    let setup = cfg.setup()?;
    estimate_by(cfg.trials, cfg.seed, "mc-attempt", |_, s| {
        let mut v = fresh_verifier(&setup, s)?;
        let analyse = matches!(event, AttemptEvent::AnalysisGood | AttemptEvent::AnalysisBad);
        let out = run_attempt(&setup, &mut v, s, analyse)?;
        Ok(match event {
            AttemptEvent::Succeeded => out.operational == Operational::Succeeded,
            AttemptEvent::Failed => out.operational == Operational::Failed,
            AttemptEvent::Aborted => out.operational == Operational::Aborted,
            AttemptEvent::AnalysisGood => out.analysis == Some(Class::Good),
            AttemptEvent::AnalysisBad => out.analysis == Some(Class::Bad),
        })
    })
}

/// Honest prover against honest verifier on fresh isomorphic pairs.
pub fn completeness_run(v: usize, conversations: u64, seed: u64) -> Result<Estimate> {
    let x_protocol = GiProtocol;
    estimate_by(conversations, seed, "completeness", |_, s| {
        let (pair, w) = gen_instance(v, true, derive_u64(s, "instance", 0))?;
        let w = w.expect("isomorphic instance has a witness");
        let x = pair.to_instance();
        let mut verifier = LocalVerifier::random(x.clone(), &mut seeds::rng_for(s, "verifier", 0))?;
        let (r, state) = prover_commit(&pair, verifier.first(), &w, &mut seeds::rng_for(s, "prover", 0))?;
        let q = verifier.first().clone();
        let s_msg = verifier.send_r(&r)?;
        let t = prover_respond(&state, &w, &s_msg);
        let ok = verifier.send_t(&t)?;
        Ok(ok && x_protocol.accept(&x, &q, &r, &s_msg, &t))
    })
}

/// Exact single-copy cheating acceptance and the Monte Carlo `m`-block
/// acceptance of the optimal cheating strategy on `pair`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub single_copy: String,
    pub m: usize,
    pub block: Estimate,
    /// `2^{-m} + 3σ`.
    pub bound: f64,
    pub within_bound: bool,
}

pub fn soundness_run(pair: &GraphPair, m: usize, trials: u64, seed: u64) -> Result<SoundnessReport> {
    let best = best_cheating_prover(pair)?;
    let x = pair.to_instance();
    let protocol = GiProtocol;
    let block = estimate_by(trials, seed, "soundness", |_, s| {
        let mut rng = seeds::rng_for(s, "cheater", 0);
        let (mut q, mut r, mut sm, mut t) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for c in 0..m as u64 {
            let verifier = LocalVerifier::random(x.clone(), &mut seeds::rng_for(s, "verifier", c))?;
            // an optimal commitment is answerable for exactly one challenge bit
            let guess = best.answerable[rng.random_range(0..best.answerable.len())];
            let (rc, state) = commit_with(pair, verifier.first(), guess, Permutation::random(pair.v(), &mut rng));
            let mut verifier = verifier;
            let sc = verifier.send_r(&rc)?;
            q.push(verifier.first().clone());
            t.push(guess_respond(&state, &sc).unwrap_or_default());
            r.push(rc);
            sm.push(sc);
        }
        block_accept(&protocol, &x, &BlockMessage(q), &BlockMessage(r), &BlockMessage(sm), &BlockMessage(t))
    })?;
    let p = 0.5f64.powi(m as i32);
    let bound = p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    Ok(SoundnessReport {
        single_copy: format!("{}/{}", best.acceptance.numer(), best.acceptance.denom()),
        m,
        within_bound: block.point <= bound,
        block,
        bound,
    })
}

/// Checks on one simulator tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCheck {
    pub trial: u64,
    pub seed: u64,
    pub size: usize,
    pub snakes: usize,
    pub completed: bool,
    pub structure_ok: bool,
    pub weight_bounds_ok: bool,
    pub fail_budget_ok: bool,
    /// For trees of completed runs: INTERESTING ≥ c·F(k)/N.
    pub full_height_ok: Option<bool>,
    pub fail: String,
    pub interesting: String,
    pub violations: Vec<String>,
}

impl TreeCheck {
    pub fn ok(&self) -> bool {
        self.structure_ok && self.weight_bounds_ok && self.fail_budget_ok && self.full_height_ok != Some(false)
    }
}

/// Runs every per-tree checker on `tree`.
pub fn check_tree(tree: &ProofTree, wp: &WeightParams, completed: bool) -> Result<(Vec<Snake>, TreeCheck)> {
    let mut violations = Vec::new();
    let snakes = match decompose_snakes(tree) {
        Ok(s) => s,
        Err(e) => {
            violations.push(e.to_string());
            Vec::new()
        }
    };
    let structure = check_snake_structure(tree, &snakes);
    violations.extend(structure.violations.iter().cloned());
    let bounds = check_weight_bounds(tree, &snakes, wp)?;
    if !bounds.ok {
        violations.push(format!(
            "weight bounds: fail margin {}, interesting margin {}",
            bounds.fail_margin, bounds.interesting_margin
        ));
    }
    let budget = check_fail_budget(tree, &snakes, wp)?;
    violations.extend(budget.failed_steps.iter().cloned());
    let full_height_ok = completed.then(|| budget.interesting >= wp.scaled(&wp.big_f(tree.k)));
    if full_height_ok == Some(false) {
        violations.push("completed run with INTERESTING below cF(k)/N".into());
    }
    let check = TreeCheck {
        trial: 0,
        seed: 0,
        size: tree.size(),
        snakes: snakes.len(),
        completed,
        structure_ok: structure.ok,
        weight_bounds_ok: bounds.ok,
        fail_budget_ok: budget.ok,
        full_height_ok,
        fail: budget.fail.to_string(),
        interesting: budget.interesting.to_string(),
        violations,
    };
    Ok((snakes, check))
}

/// A hand-built input a checker must reject (or, for the short-snake tree,
/// accept).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlResult {
    pub name: String,
    /// The checker behaved as required.
    pub ok: bool,
    pub detail: String,
}

/// `n` bad leaves under a non-interesting chain: `n` snakes of height 1,
/// the largest short-snake FAIL weight a tree with `n` addresses per level
/// can carry.
pub fn short_snake_tree(k: usize, n: u64) -> Result<ProofTree> {
    let mut t = ProofTree::new(k, 1);
    let mut p = ROOT;
    for _ in 1..k {
        p = t.add_vertex(p, false, false)?;
    }
    for _ in 0..n {
        t.add_vertex(p, true, false)?;
    }
    Ok(t)
}

pub fn negative_controls() -> Result<Vec<ControlResult>> {
    let mut out = Vec::new();
    let mut push = |name: &str, ok: bool, detail: String| {
        out.push(ControlResult {
            name: name.into(),
            ok,
            detail,
        })
    };

    // lone bad vertex inside a snake body
    let mut t = ProofTree::new(3, 1);
    let a = t.add_vertex(ROOT, true, true)?;
    let b = t.add_vertex(a, true, false)?;
    let c = t.add_vertex(b, true, true)?;
    let r = check_snake_structure(&t, &[Snake { body: vec![a, b, c] }]);
    push("lone-bad-in-body", !r.ok, r.violations.join("; "));

    // overlapping snakes
    let mut t = ProofTree::new(2, 1);
    let a = t.add_vertex(ROOT, true, true)?;
    let b = t.add_vertex(a, true, true)?;
    let r = check_snake_structure(&t, &[Snake { body: vec![a, b] }, Snake { body: vec![b] }]);
    push("overlapping-snakes", !r.ok, r.violations.join("; "));

    // interesting vertex left out of every snake
    let r = check_snake_structure(&t, &[]);
    push("uncovered-vertex", !r.ok, r.violations.join("; "));

    // interesting non-leaf without interesting child
    let mut t = ProofTree::new(2, 1);
    t.add_vertex(ROOT, true, false)?;
    let r = decompose_snakes(&t);
    push("dead-end-snake", r.is_err(), format!("{r:?}"));

    // FAIL weight with its snakes withheld
    let t = short_snake_tree(2, 3)?;
    let wp = weight_params(2, 3)?;
    let b = check_weight_bounds(&t, &[], &wp)?;
    push("withheld-snakes", !b.ok, format!("fail margin {}", b.fail_margin));

    // more short snakes than addresses
    let snakes = decompose_snakes(&t)?;
    let padded: Vec<Snake> = snakes.iter().chain(&snakes).cloned().collect();
    let b = check_fail_budget(&t, &padded, &wp)?;
    push("padded-short-snakes", !b.ok, b.failed_steps.join("; "));

    // forged trace: reply impossible for its prefix
    let sched = ScheduleConfig::new(2, 1)?;
    let rec = crate::adversary::TraceRecord {
        prefix: vec![],
        reply: crate::adversary::VerifierReply::Accept,
        resolved: 2,
        activated: 2,
        tape_digests: vec![[0; 32]],
    };
    let r = crate::tree::build_tree(&[rec], &sched);
    push("forged-trace", matches!(r, Err(Error::Corruption(_))), format!("{r:?}"));

    // adversarial short-snake tree must still satisfy the budget
    for n in [1, 10, 1000] {
        let wp = weight_params(3, n)?;
        let t = short_snake_tree(3, n)?;
        let (_, check) = check_tree(&t, &wp, false)?;
        push(&format!("short-snakes-n{n}"), check.ok(), check.violations.join("; "));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub k: usize,
    pub m: usize,
    pub n: u64,
    pub beta: u32,
    pub trials: u64,
    pub bad_rule: BadRule,
    pub structure_violations: u64,
    pub weight_violations: u64,
    pub budget_violations: u64,
    pub full_height_violations: u64,
    /// `(master seed, trial index)` of the first failing tree.
    pub first_failure: Option<(u64, u64)>,
    pub controls: Vec<ControlResult>,
    pub concentration: ConcentrationSummary,
    /// First `(h, β)` breaking `F(h)(β+1) ≥ h^{β+1}`, if any.
    pub f_bound_counterexample: Option<(usize, u32)>,
    pub trees: Vec<TreeCheck>,
}

impl LemmaSuiteReport {
    pub fn ok(&self) -> bool {
        self.first_failure.is_none() && self.controls.iter().all(|c| c.ok) && self.f_bound_counterexample.is_none()
    }
}

/// Parameters of the tape-concentration check run by the lemma suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationParams {
    pub m: u64,
    pub k: u64,
    pub rho: Ratio<u64>,
    pub threshold: f64,
}

pub const DEFAULT_CONCENTRATION: ConcentrationParams = ConcentrationParams {
    m: 1000,
    k: 10,
    rho: Ratio::new_raw(1, 10),
    threshold: 0.01,
};

/// Simulator trees of `cfg.trials` unspliced runs, each checked pointwise.
pub fn tree_checks(cfg: &ExperimentConfig) -> Result<(AttackSetup, Vec<TreeCheck>)> {
    let setup = cfg.setup()?;
    let checks = run_trials(cfg.trials, cfg.seed, "lemma-tree", |i, s| {
        let mut sample = experiment2(&setup, s)?;
        sample.tree.rule = cfg.bad_rule;
        let completed = sample.tree.levels[setup.sched.k]
            .iter()
            .any(|&v| sample.tree.vertex(v).resolved && resolved_to_root(&sample.tree, v));
        let (_, mut check) = check_tree(&sample.tree, &setup.wp, completed)?;
        check.trial = i;
        check.seed = s;
        Ok(check)
    })?;
    Ok((setup, checks))
}

fn resolved_to_root(tree: &ProofTree, mut v: usize) -> bool {
    while v != ROOT {
        if !tree.vertex(v).resolved {
            return false;
        }
        v = tree.vertex(v).parent.expect("non-root");
    }
    true
}

pub fn run_lemma_suite(cfg: &ExperimentConfig, conc: ConcentrationParams) -> Result<LemmaSuiteReport> {
    let (setup, trees) = tree_checks(cfg)?;
    let count = |f: &dyn Fn(&TreeCheck) -> bool| trees.iter().filter(|t| f(t)).count() as u64;
    let first_failure = trees.iter().find(|t| !t.ok()).map(|t| (cfg.seed, t.trial));
    if let Some((seed, trial)) = first_failure {
        log::error!("checker violation; reproduce with seed {seed}, trial {trial}");
    }
    let concentration =
        check_tape_concentration(conc.m, conc.rho, conc.k)?.summary(conc.threshold);
    Ok(LemmaSuiteReport {
        k: setup.sched.k,
        m: setup.sched.m,
        n: setup.wp.n,
        beta: setup.wp.beta,
        trials: cfg.trials,
        bad_rule: cfg.bad_rule,
        structure_violations: count(&|t| !t.structure_ok),
        weight_violations: count(&|t| !t.weight_bounds_ok),
        budget_violations: count(&|t| !t.fail_budget_ok),
        full_height_violations: count(&|t| t.full_height_ok == Some(false)),
        first_failure,
        controls: negative_controls()?,
        concentration,
        f_bound_counterexample: check_f_bound(64, 12),
        trees,
    })
}

/// Operational attempt frequencies against the analysis expectations over
/// matched trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub trials: u64,
    pub n: u64,
    pub succeeded: Estimate,
    pub failed: Estimate,
    pub aborted: Estimate,
    pub analysis_good: Estimate,
    pub analysis_bad: Estimate,
    /// Mean and sd of the per-tree SUCCEED / FAIL mass.
    pub e_succeed: (f64, f64),
    pub e_fail: (f64, f64),
    /// `Pr[Succeeded] − E[SUCCEED]` over its standard error.
    pub succeed_z: f64,
    /// `E[FAIL] − Pr[Failed]` over its standard error.
    pub fail_z: f64,
    pub succeed_ok: bool,
    pub fail_ok: bool,
    /// Violations of the pointwise implications Good ⇒ Succeeded and
    /// Failed ⇒ Bad.
    pub pointwise_violations: u64,
}

#[derive(Debug, Clone, Copy)]
struct MatchedTrial {
    operational: Operational,
    analysis: Class,
    succeed: f64,
    fail: f64,
}

pub fn direction_check(cfg: &ExperimentConfig, sigmas: f64) -> Result<DirectionReport> {
    let setup = cfg.setup()?;
    let rows = run_trials(cfg.trials, cfg.seed, "direction", |_, s| {
        let mut v = fresh_verifier(&setup, s)?;
        let out = run_attempt(&setup, &mut v, s, true)?;
        let e2 = experiment2(&setup, s)?;
        let (good, bad) = spliced_weights(&e2.tree, &setup.wp)?;
        Ok(MatchedTrial {
            operational: out.operational,
            analysis: out.analysis.expect("local verifier exposes its tape"),
            succeed: to_f64(&good),
            fail: to_f64(&bad),
        })
    })?;
    let n = cfg.trials;
    let est = |f: &dyn Fn(&MatchedTrial) -> bool| wilson(rows.iter().filter(|r| f(r)).count() as u64, n, Z95);
    let succeeded = est(&|r| r.operational == Operational::Succeeded);
    let failed = est(&|r| r.operational == Operational::Failed);
    let e_succeed = mean_sd(&rows.iter().map(|r| r.succeed).collect::<Vec<_>>());
    let e_fail = mean_sd(&rows.iter().map(|r| r.fail).collect::<Vec<_>>());
    let se = |e: &Estimate, sd: f64| ((e.std_err().powi(2)) + sd * sd / n as f64).sqrt().max(f64::MIN_POSITIVE);
    let succeed_z = (succeeded.point - e_succeed.0) / se(&succeeded, e_succeed.1);
    let fail_z = (e_fail.0 - failed.point) / se(&failed, e_fail.1);
    Ok(DirectionReport {
        trials: n,
        n: setup.wp.n,
        aborted: est(&|r| r.operational == Operational::Aborted),
        analysis_good: est(&|r| r.analysis == Class::Good),
        analysis_bad: est(&|r| r.analysis == Class::Bad),
        succeed_ok: succeeded.point >= e_succeed.0 - sigmas * se(&succeeded, e_succeed.1),
        fail_ok: failed.point <= e_fail.0 + sigmas * se(&failed, e_fail.1),
        pointwise_violations: rows
            .iter()
            .filter(|r| {
                (r.analysis == Class::Good && r.operational != Operational::Succeeded)
                    || (r.operational == Operational::Failed && r.analysis != Class::Bad)
            })
            .count() as u64,
        succeeded,
        failed,
        e_succeed,
        e_fail,
        succeed_z,
        fail_z,
    })
}

/// Experiment 1 against Experiment 2 on (tree shape, spliced class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentComparison {
    pub trials: u64,
    pub categories: usize,
    pub chi: ChiSquareResult,
    pub alpha: f64,
    pub agree: bool,
    /// Most frequent categories with their counts in each experiment.
    pub top: Vec<(String, u64, u64)>,
}

/// Categories whose pooled count is below this are merged.
const MIN_CATEGORY: u64 = 10;

pub fn compare_experiments(cfg: &ExperimentConfig, alpha: f64) -> Result<ExperimentComparison> {
    let setup = cfg.setup()?;
    let key = |s: &crate::splice::ExperimentSample| format!("{}|{:?}", s.fingerprint, s.class);
    let one = run_trials(cfg.trials, cfg.seed, "experiment1", |_, s| experiment1(&setup, s).map(|e| key(&e)))?;
    let two = run_trials(cfg.trials, cfg.seed, "experiment2", |_, s| experiment2(&setup, s).map(|e| key(&e)))?;
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for k in one {
        counts.entry(k).or_default().0 += 1;
    }
    for k in two {
        counts.entry(k).or_default().1 += 1;
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut pooled = (0, 0);
    for &(x, y) in counts.values() {
        if x + y < MIN_CATEGORY {
            pooled.0 += x;
            pooled.1 += y;
        } else {
            a.push(x);
            b.push(y);
        }
    }
    a.push(pooled.0);
    b.push(pooled.1);
    let chi = chi_square_two_sample(&a, &b)?;
    let mut top: Vec<(String, u64, u64)> = counts.into_iter().map(|(k, (x, y))| (k, x, y)).collect();
    top.sort_by(|p, q| (q.1 + q.2).cmp(&(p.1 + p.2)).then(p.0.cmp(&q.0)));
    top.truncate(10);
    Ok(ExperimentComparison {
        trials: cfg.trials,
        categories: a.len(),
        agree: chi.p_value >= alpha,
        chi,
        alpha,
        top,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRow {
    pub k: usize,
    pub m: usize,
    pub runs: u64,
    pub mean_steps: f64,
    pub sd_steps: f64,
    pub p50_steps: u64,
    pub p99_steps: u64,
    /// Block attempts per block (`block_tries / k`).
    pub mean_tries_per_block: f64,
    pub sd_tries_per_block: f64,
    pub completed: u64,
}

/// Query counts of uncapped simulator runs for each `k`.
pub fn blowup_bench(
    ks: std::ops::RangeInclusive<usize>,
    m: usize,
    kind: &SimulatorKind,
    v: usize,
    runs: u64,
    seed: u64,
) -> Result<Vec<BlowupRow>> {
    let (pair, witness) = gen_instance(v, true, derive_u64(seed, "instance", 0))?;
    let x = pair.to_instance();
    let tape_bits = GiProtocol.tape_bits(&x);
    let sim = kind.build(&pair, witness.as_ref());
    let mut rows = Vec::new();
    for k in ks {
        let sched = ScheduleConfig::new(k, m)?;
        let label = format!("blowup-k{k}");
        let results = run_trials(runs, seed, &label, |_, s| {
            let h = crate::hash::sample_member(derive_u64(s, "hash", 0), 1 << 20, m * tape_bits)?;
            let r = run_simulator_with(&*sim, sched, &x, h, s, false)?;
            Ok((r.steps, r.block_tries, r.completed))
        })?;
        let steps: Vec<u64> = results.iter().map(|r| r.0).collect();
        let (mean_steps, sd_steps) = mean_sd(&steps.iter().map(|&s| s as f64).collect::<Vec<_>>());
        let (mean_tries, sd_tries) = mean_sd(&results.iter().map(|r| r.1 as f64 / k as f64).collect::<Vec<_>>());
        rows.push(BlowupRow {
            k,
            m,
            runs,
            mean_steps,
            sd_steps,
            p50_steps: quantile(&steps, 0.5),
            p99_steps: quantile(&steps, 0.99),
            mean_tries_per_block: mean_tries,
            sd_tries_per_block: sd_tries,
            completed: results.iter().filter(|r| r.2).count() as u64,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecideRecord {
    pub iso: bool,
    pub instance: u64,
    pub decision: Decision,
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeciderReport {
    pub per_class: u64,
    pub n: u64,
    pub iso_accuracy: Estimate,
    pub non_iso_accuracy: Estimate,
    pub records: Vec<DecideRecord>,
}

/// Decider verdicts on `per_class` fresh isomorphic and non-isomorphic
/// instances.
pub fn decider_accuracy(cfg: &ExperimentConfig, per_class: u64) -> Result<DeciderReport> {
    let mut records = Vec::new();
    let mut n = 0;
    for iso in [true, false] {
        let label = if iso { "decide-iso" } else { "decide-non-iso" };
        let rows = run_trials(per_class, cfg.seed, label, |i, s| {
            let (pair, witness) = gen_instance(cfg.v, iso, derive_u64(s, "instance", 0))?;
            let mut c = cfg.clone();
            c.seed = s;
            let setup = c.setup_for(pair, witness)?;
            let (decision, report) = decide(&setup, cfg.max_attempts, s)?;
            Ok((
                DecideRecord {
                    iso,
                    instance: i,
                    decision,
                    attempts: report.attempts,
                },
                setup.wp.n,
            ))
        })?;
        n = n.max(rows.iter().map(|r| r.1).max().unwrap_or(0));
        records.extend(rows.into_iter().map(|r| r.0));
    }
    let acc = |iso: bool| {
        let want = if iso { Decision::InL } else { Decision::NotInL };
        let hits = records.iter().filter(|r| r.iso == iso && r.decision == want).count() as u64;
        wilson(hits, per_class, Z95)
    };
    Ok(DeciderReport {
        per_class,
        n,
        iso_accuracy: acc(true),
        non_iso_accuracy: acc(false),
        records,
    })
}

/// Success/fail ratio of single attempts, reported without asserting any
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub k: usize,
    pub m: usize,
    pub trials: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub ratio: Option<f64>,
    pub success_at_least_fail: bool,
}

pub fn success_fail_ratio(cfg: &ExperimentConfig) -> Result<RatioReport> {
    let setup = cfg.setup()?;
    let outcomes = run_trials(cfg.trials, cfg.seed, "ratio", |_, s| {
        let mut v = fresh_verifier(&setup, s)?;
        Ok(run_attempt(&setup, &mut v, s, false)?.operational)
    })?;
    let succeeded = outcomes.iter().filter(|&&o| o == Operational::Succeeded).count() as u64;
    let failed = outcomes.iter().filter(|&&o| o == Operational::Failed).count() as u64;
    Ok(RatioReport {
        k: setup.sched.k,
        m: setup.sched.m,
        trials: cfg.trials,
        succeeded,
        failed,
        ratio: (failed > 0).then(|| succeeded as f64 / failed as f64),
        success_at_least_fail: succeeded >= failed,
    })
}

/// Exact parameter printout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub k: usize,
    pub n: u64,
    pub beta: u32,
    pub c: String,
    pub f: Vec<String>,
    pub big_f: Vec<String>,
    pub level_probability: Vec<String>,
}

pub fn params_report(k: usize, n: u64) -> Result<ParamsReport> {
    let wp = weight_params(k, n)?;
    let nn = BigRational::from_integer(BigInt::from(n));
    Ok(ParamsReport {
        k,
        n,
        beta: wp.beta,
        c: wp.c.to_string(),
        f: (1..=k).map(|h| wp.f(h).to_string()).collect(),
        big_f: (1..=k).map(|h| wp.big_f(h).to_string()).collect(),
        level_probability: (1..=k).map(|l| (wp.address_probability(l) * &nn).to_string()).collect(),
    })
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn to_csv<T: Serialize>(records: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::config(format!("csv: {e}")))
}

pub fn write_report(path: &Path, body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_config_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv("k = 2\n# comment\nm=1\niso=false\ncap = 50\nsimulator = witness\n").unwrap();
        assert_eq!((cfg.k, cfg.m, cfg.iso), (2, 1, false));
        assert_eq!(cfg.cap, StepCapPolicy::Fixed(50));
        assert_eq!(cfg.simulator, SimulatorKind::WitnessOracle);
        assert!(cfg.apply_kv("bogus = 1").is_err());
        assert!(cfg.apply_kv("k").is_err());
        assert_eq!(parse_cap("measured:3").unwrap(), StepCapPolicy::Measured { multiplier: 3, runs: 200 });
        let mut pf = ExperimentConfig { k: 2, full_scale: true, ..Default::default() };
        pf = pf.effective();
        assert_eq!(pf.m, 8);
    }

    #[test]
    fn estimates_of_trivial_events() {
        let e = estimate_by(100, 1, "t", |_, _| Ok(true)).unwrap();
        assert_eq!(e.point, 1.0);
        assert!(e.contains(1.0));
        let coin = estimate_by(10_000, 7, "coin", |_, s| Ok(seeds::rng_for(s, "c", 0).random::<bool>())).unwrap();
        assert!((0.48..=0.52).contains(&coin.point), "{coin:?}");
    }

    #[test]
    fn witness_oracle_with_one_address_always_succeeds() {
        let cfg = ExperimentConfig {
            k: 2,
            m: 1,
            trials: 40,
            simulator: SimulatorKind::WitnessOracle,
            cap: StepCapPolicy::Fixed(1),
            ..Default::default()
        };
        let setup = cfg.setup().unwrap().with_query_cap(None);
        let e = estimate_by(cfg.trials, cfg.seed, "x", |_, s| {
            let mut v = fresh_verifier(&setup, s)?;
            Ok(run_attempt(&setup, &mut v, s, false)?.operational == Operational::Succeeded)
        })
        .unwrap();
        assert_eq!(e.point, 1.0);
    }

    #[test]
    fn controls_behave() {
        for c in negative_controls().unwrap() {
            assert!(c.ok, "{c:?}");
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = ExperimentConfig { trials: 20, ..Default::default() };
        let a = to_jsonl(&tree_checks(&cfg).unwrap().1).unwrap();
        let b = to_jsonl(&tree_checks(&cfg).unwrap().1).unwrap();
        assert_eq!(a, b);
        let rows = blowup_bench(1..=2, 1, &SimulatorKind::Rewinding, 6, 20, 3).unwrap();
        assert!(to_csv(&rows).unwrap().starts_with("k,m,runs,mean_steps"));
    }

    #[test]
    fn params_printout() {
        let p = params_report(8, 1000).unwrap();
        assert_eq!(p.beta, 5);
        let p = params_report(2, 1).unwrap();
        assert_eq!(p.c, "1/3");
        assert_eq!(p.level_probability, vec!["2/3", "1/3"]);
    }
}
