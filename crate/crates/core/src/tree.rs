//! Proof trees reconstructed from simulator traces, their Good/Bad/Neither
//! classification, snake decomposition and exact weight accounting.
//!
//! A vertex at level `i` is one distinct sequence `r⃗1 … r⃗i` that `V̂`
//! answered; its children are the distinct `r⃗(i+1)` sent after it, so all
//! siblings share the same block coins and first challenge. A vertex is
//! *activated* once `V̂` computes its second challenge, and *resolved* once
//! a response for it passes the acceptance check.
//!
//! Classification of a vertex `v`:
//! * good: resolved, and no sibling is ever activated;
//! * bad: activated but not resolved, or some sibling is activated;
//! * interesting: good or bad.
//!
//! [`BadRule::Activated`] instead requires a bad vertex to be activated
//! itself, so a never-activated vertex with an activated sibling is Neither.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{Digest32, ScheduleConfig, TraceRecord, VerifierReply};
use crate::error::{Error, Result};
use crate::params::{Address, WeightParams};
use crate::protocol::BlockMessage;

pub const ROOT: usize = 0;

/// Which vertices count as bad.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BadRule {
    /// Activated but not resolved, or some sibling activated.
    #[default]
    Literal,
    /// Activated, and either not resolved or some sibling activated.
    Activated,
}

impl BadRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(BadRule::Literal),
            "activated" => Ok(BadRule::Activated),
            other => Err(Error::config(format!("unknown bad rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub level: usize,
    /// Generation index within the level, 1-based (0 for the root).
    pub a: u64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub activated: bool,
    pub resolved: bool,
    /// Global creation order; equals the vertex id.
    pub gen_order: usize,
    /// Digest of the coins of the block this vertex's children belong to.
    pub child_tape_digest: Option<Digest32>,
    pub r_digest: Option<Digest32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTree {
    pub k: usize,
    pub m: usize,
    pub vertices: Vec<Vertex>,
    /// Vertex ids per level in generation order; `levels[0]` is the root.
    pub levels: Vec<Vec<usize>>,
    /// Distinct histories whose coins share a digest with another history.
    pub collisions: usize,
    pub rule: BadRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Good,
    Bad,
    Neither,
}

impl Class {
    pub fn is_interesting(self) -> bool {
        self != Class::Neither
    }
}

impl ProofTree {
    /// A tree holding only the level-0 root.
    pub fn new(k: usize, m: usize) -> Self {
        let root = Vertex {
            level: 0,
            a: 0,
            parent: None,
            children: Vec::new(),
            activated: false,
            resolved: false,
            gen_order: 0,
            child_tape_digest: None,
            r_digest: None,
        };
        let mut levels = vec![Vec::new(); k + 1];
        levels[0].push(ROOT);
        Self {
            k,
            m,
            vertices: vec![root],
            levels,
            collisions: 0,
            rule: BadRule::default(),
        }
    }

    /// Adds a child of `parent`; used by trace reconstruction and to
    /// hand-build trees.
    pub fn add_vertex(&mut self, parent: usize, activated: bool, resolved: bool) -> Result<usize> {
        let level = self
            .vertices
            .get(parent)
            .ok_or_else(|| Error::config(format!("no vertex {parent}")))?
            .level
            + 1;
        if level > self.k {
            return Err(Error::config(format!("level {level} exceeds k = {}", self.k)));
        }
        if resolved && !activated {
            return Err(Error::config("a resolved vertex must be activated"));
        }
        let id = self.vertices.len();
        self.levels[level].push(id);
        self.vertices.push(Vertex {
            level,
            a: self.levels[level].len() as u64,
            parent: Some(parent),
            children: Vec::new(),
            activated,
            resolved,
            gen_order: id,
            child_tape_digest: None,
            r_digest: None,
        });
        self.vertices[parent].children.push(id);
        Ok(id)
    }

    pub fn vertex(&self, id: usize) -> &Vertex {
        &self.vertices[id]
    }

    /// Number of non-root vertices.
    pub fn size(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn at(&self, addr: Address) -> Option<usize> {
        if addr.level == 0 || addr.level > self.k || addr.a == 0 {
            return None;
        }
        self.levels[addr.level].get(addr.a as usize - 1).copied()
    }

    pub fn siblings(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        let parent = self.vertices[id].parent;
        parent
            .into_iter()
            .flat_map(move |p| self.vertices[p].children.iter().copied())
            .filter(move |&s| s != id)
    }

    pub fn classify_vertex(&self, id: usize) -> Class {
        let v = &self.vertices[id];
        if id == ROOT {
            return Class::Neither;
        }
        let sibling_activated = self.siblings(id).any(|s| self.vertices[s].activated);
        if v.resolved && !sibling_activated {
            Class::Good
        } else if match self.rule {
            BadRule::Literal => (v.activated && !v.resolved) || sibling_activated,
            BadRule::Activated => v.activated && (!v.resolved || sibling_activated),
        } {
            Class::Bad
        } else {
            Class::Neither
        }
    }

    /// Class of the vertex at `addr`; unoccupied addresses are Neither.
    pub fn classify(&self, addr: Address) -> Class {
        self.at(addr).map_or(Class::Neither, |id| self.classify_vertex(id))
    }

    pub fn classes(&self) -> Vec<Class> {
        (0..self.vertices.len()).map(|id| self.classify_vertex(id)).collect()
    }

    /// The vertex the splicing prover embeds at `addr`: the first child of
    /// the `a`-th block opened at level `i`. Blocks at level 1 all hang off
    /// the root, so only `a = 1` is occupied there; at level `i > 1` the
    /// `a`-th block is the one opened by the `a`-th vertex of level `i − 1`.
    pub fn spliced_vertex(&self, addr: Address) -> Option<usize> {
        let opener = if addr.level == 1 {
            (addr.a == 1).then_some(ROOT)?
        } else {
            self.at(Address {
                level: addr.level - 1,
                a: addr.a,
            })?
        };
        self.vertices[opener].children.first().copied()
    }

    /// Class of the spliced vertex for `addr`.
    pub fn classify_spliced(&self, addr: Address) -> Class {
        self.spliced_vertex(addr)
            .map_or(Class::Neither, |id| self.classify_vertex(id))
    }

    /// Shape fingerprint: nested children in generation order with flags
    /// (`r` resolved, `a` activated only, `o` neither).
    pub fn fingerprint(&self) -> String {
        fn go(t: &ProofTree, id: usize, out: &mut String) {
            let v = &t.vertices[id];
            out.push(if id == ROOT {
                '*'
            } else if v.resolved {
                'r'
            } else if v.activated {
                'a'
            } else {
                'o'
            });
            if !v.children.is_empty() {
                out.push('(');
                for &c in &v.children {
                    go(t, c, out);
                }
                out.push(')');
            }
        }
        let mut out = String::new();
        go(self, ROOT, &mut out);
        out
    }

    /// One record per vertex, root excluded.
    pub fn dump(&self) -> Vec<VertexRecord> {
        self.vertices
            .iter()
            .skip(1)
            .map(|v| {
                let p = &self.vertices[v.parent.expect("non-root")];
                VertexRecord {
                    level: v.level,
                    a: v.a,
                    parent: (p.level > 0).then_some((p.level, p.a)),
                    activated: v.activated,
                    resolved: v.resolved,
                    gen_order: v.gen_order,
                    tape_digest: p.child_tape_digest.map(hex::encode),
                    r_digest: v.r_digest.map(hex::encode),
                    class: self.classify_vertex(v.gen_order),
                }
            })
            .collect()
    }
}

/// Tree dump line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub level: usize,
    pub a: u64,
    pub parent: Option<(usize, u64)>,
    pub activated: bool,
    pub resolved: bool,
    pub gen_order: usize,
    pub tape_digest: Option<String>,
    pub r_digest: Option<String>,
    pub class: Class,
}

fn corruption(index: usize, msg: impl std::fmt::Display) -> Error {
    Error::Corruption(format!("record {index}: {msg}"))
}

/// Rebuilds the proof tree from a query trace.
pub fn build_tree(trace: &[TraceRecord], cfg: &ScheduleConfig) -> Result<ProofTree> {
    let k = cfg.k;
    let mut tree = ProofTree::new(k, cfg.m);
    let mut edges: HashMap<(usize, BlockMessage), usize> = HashMap::new();
    let mut digest_owner: HashMap<Digest32, usize> = HashMap::new();
    for (idx, rec) in trace.iter().enumerate() {
        let len = rec.prefix.len();
        if len > 2 * k {
            return Err(corruption(idx, "prefix longer than the schedule"));
        }
        if rec.prefix.iter().any(|b| b.m() != cfg.m) {
            return Err(corruption(idx, "block arity differs from m"));
        }
        let reply_ok = match &rec.reply {
            VerifierReply::Challenge(c) => len < 2 * k && c.m() == cfg.m,
            VerifierReply::Accept => len == 2 * k,
            VerifierReply::Abort => len > k,
        };
        if !reply_ok {
            return Err(corruption(idx, format!("reply {} impossible after {len} messages", rec.reply.kind())));
        }
        if rec.tape_digests.len() != (len + 1).min(k) {
            return Err(corruption(idx, "wrong number of level digests"));
        }
        let responses = len.saturating_sub(k);
        let flags_ok = match rec.reply {
            VerifierReply::Accept => rec.resolved == k && rec.activated == k,
            VerifierReply::Abort => rec.resolved < responses && rec.activated == rec.resolved + 1,
            VerifierReply::Challenge(_) if len >= k => rec.resolved == responses && rec.activated == responses + 1,
            VerifierReply::Challenge(_) => rec.resolved == 0 && rec.activated == 0,
        };
        if !flags_ok {
            return Err(corruption(idx, "activation/resolution counts inconsistent with the reply"));
        }

        let mut node = ROOT;
        let mut path = Vec::with_capacity(k);
        for level in 1..=(len + 1).min(k) {
            let digest = rec.tape_digests[level - 1];
            match tree.vertices[node].child_tape_digest {
                Some(d) if d != digest => {
                    return Err(corruption(idx, format!("siblings at level {level} disagree on their coins")));
                }
                Some(_) => {}
                None => {
                    tree.vertices[node].child_tape_digest = Some(digest);
                    match digest_owner.get(&digest) {
                        Some(&owner) if owner != node => {
                            tree.collisions += 1;
                            log::warn!("coin collision between blocks opened by vertices {owner} and {node}");
                        }
                        Some(_) => {}
                        None => {
                            digest_owner.insert(digest, node);
                        }
                    }
                }
            }
            if level > len {
                break;
            }
            let r = &rec.prefix[level - 1];
            node = match edges.get(&(node, r.clone())) {
                Some(&child) => child,
                None => {
                    let child = tree.add_vertex(node, false, false)?;
                    tree.vertices[child].r_digest = Some(Sha256::digest(r.encode()).into());
                    edges.insert((node, r.clone()), child);
                    child
                }
            };
            path.push(node);
        }
        for e in 0..rec.activated {
            tree.vertices[path[k - 1 - e]].activated = true;
        }
        for e in 0..rec.resolved {
            tree.vertices[path[k - 1 - e]].resolved = true;
        }
    }
    Ok(tree)
}

/// A head-to-leaf chain of interesting vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snake {
    /// Vertex ids from the head down to level `k`.
    pub body: Vec<usize>,
}

impl Snake {
    pub fn head(&self) -> usize {
        self.body[0]
    }

    pub fn height(&self) -> usize {
        self.body.len()
    }
}

/// Canonical decomposition of the interesting vertices into snakes. A snake
/// starts at every interesting vertex whose parent is not interesting, and
/// continues through the interesting child of smallest generation order;
/// the remaining interesting children head snakes of their own.
pub fn decompose_snakes(tree: &ProofTree) -> Result<Vec<Snake>> {
    let classes = tree.classes();
    let interesting = |id: usize| classes[id].is_interesting();
    let mut heads: Vec<usize> = (1..tree.vertices.len())
        .filter(|&id| interesting(id) && !tree.vertices[id].parent.is_some_and(interesting))
        .collect();
    let mut snakes = Vec::new();
    let mut next = 0;
    while next < heads.len() {
        let mut cur = heads[next];
        next += 1;
        let mut body = vec![cur];
        while tree.vertices[cur].level < tree.k {
            let mut kids = tree.vertices[cur].children.iter().copied().filter(|&c| interesting(c));
            let Some(first) = kids.next() else {
                return Err(Error::StructuralViolation(format!(
                    "interesting vertex {cur} at level {} has no interesting child",
                    tree.vertices[cur].level
                )));
            };
            heads.extend(kids);
            body.push(first);
            cur = first;
        }
        snakes.push(Snake { body });
    }
    snakes.sort_by_key(|s| s.head());
    Ok(snakes)
}

/// Result of a structural check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnakeReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks a snake set against the tree: chains run parent-to-child down to
/// level `k`, snakes are disjoint and cover exactly the interesting
/// vertices, a bad vertex without bad siblings is a head, and of a group of
/// bad siblings at most one sits in a snake body.
pub fn check_snake_structure(tree: &ProofTree, snakes: &[Snake]) -> SnakeReport {
    let classes = tree.classes();
    let mut violations = Vec::new();
    let mut owner: HashMap<usize, (usize, usize)> = HashMap::new();
    for (si, snake) in snakes.iter().enumerate() {
        if snake.body.is_empty() {
            violations.push(format!("snake {si} is empty"));
            continue;
        }
        for (pos, &id) in snake.body.iter().enumerate() {
            if id == ROOT || id >= tree.vertices.len() {
                violations.push(format!("snake {si} contains invalid vertex {id}"));
                continue;
            }
            if !classes[id].is_interesting() {
                violations.push(format!("snake {si} contains uninteresting vertex {id}"));
            }
            if let Some((other, _)) = owner.insert(id, (si, pos)) {
                violations.push(format!("vertex {id} lies in snakes {other} and {si}"));
            }
            if pos > 0 && tree.vertices[id].parent != Some(snake.body[pos - 1]) {
                violations.push(format!("snake {si} breaks the parent chain at vertex {id}"));
            }
        }
        if let Some(&last) = snake.body.last() {
            if last < tree.vertices.len() && tree.vertices[last].level != tree.k {
                violations.push(format!("snake {si} ends above level k at vertex {last}"));
            }
        }
    }
    for id in 1..tree.vertices.len() {
        if classes[id].is_interesting() && !owner.contains_key(&id) {
            violations.push(format!("interesting vertex {id} is in no snake"));
        }
        if classes[id] != Class::Bad {
            continue;
        }
        let bad_siblings: Vec<usize> = tree.siblings(id).filter(|&s| classes[s] == Class::Bad).collect();
        let in_body = |v: usize| owner.get(&v).is_some_and(|&(_, pos)| pos > 0);
        if bad_siblings.is_empty() && in_body(id) {
            violations.push(format!("lone bad vertex {id} is not a snake head"));
        }
        if in_body(id) && bad_siblings.iter().any(|&s| in_body(s) && s < id) {
            violations.push(format!("bad vertex {id} shares a snake body position with a bad sibling"));
        }
    }
    SnakeReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Per-address weight contribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub address: Address,
    pub class: Class,
    pub weight: String,
}

/// Exact SUCCEED / FAIL / INTERESTING sums over classified addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightReport {
    pub succeed: BigRational,
    pub fail: BigRational,
    pub interesting: BigRational,
    pub contributions: Vec<Contribution>,
    /// Vertices whose address index exceeds `N` (never sampled).
    pub beyond_cap: usize,
}

fn rational(x: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from(x.clone()))
}

/// Sums `c·f(h)/N` over good (SUCCEED), bad (FAIL) and interesting
/// addresses `(i, a)` with `a ≤ N`.
pub fn weights(tree: &ProofTree, wp: &WeightParams) -> Result<WeightReport> {
    if wp.k != tree.k {
        return Err(Error::config(format!("weights for k = {} applied to a tree with k = {}", wp.k, tree.k)));
    }
    let mut succeed = BigUint::zero();
    let mut fail = BigUint::zero();
    let mut contributions = Vec::new();
    let mut beyond_cap = 0;
    for level in 1..=tree.k {
        let fh = wp.f(wp.height(level));
        for &id in &tree.levels[level] {
            let v = &tree.vertices[id];
            if v.a > wp.n {
                beyond_cap += 1;
                continue;
            }
            let class = tree.classify_vertex(id);
            match class {
                Class::Good => succeed += &fh,
                Class::Bad => fail += &fh,
                Class::Neither => continue,
            }
            contributions.push(Contribution {
                address: Address { level, a: v.a },
                class,
                weight: wp.scaled(&fh).to_string(),
            });
        }
    }
    let interesting = &succeed + &fail;
    Ok(WeightReport {
        succeed: wp.scaled(&succeed),
        fail: wp.scaled(&fail),
        interesting: wp.scaled(&interesting),
        contributions,
        beyond_cap,
    })
}

/// Exact probability mass, under address sampling, of addresses whose
/// spliced vertex is good and bad respectively.
pub fn spliced_weights(tree: &ProofTree, wp: &WeightParams) -> Result<(BigRational, BigRational)> {
    if wp.k != tree.k {
        return Err(Error::config(format!("weights for k = {} applied to a tree with k = {}", wp.k, tree.k)));
    }
    let mut good = BigUint::zero();
    let mut bad = BigUint::zero();
    for level in 1..=tree.k {
        let fh = wp.f(wp.height(level));
        let openers: &[usize] = if level == 1 { &tree.levels[0] } else { &tree.levels[level - 1] };
        for (idx, &opener) in openers.iter().enumerate() {
            if idx as u64 >= wp.n {
                break;
            }
            let Some(&v) = tree.vertices[opener].children.first() else {
                continue;
            };
            match tree.classify_vertex(v) {
                Class::Good => good += &fh,
                Class::Bad => bad += &fh,
                Class::Neither => {}
            }
        }
    }
    Ok((wp.scaled(&good), wp.scaled(&bad)))
}

/// Both per-tree weight bounds with their slack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightBounds {
    pub ok: bool,
    /// `2·Σ_σ c·f(h(σ))/N − FAIL`.
    pub fail_margin: BigRational,
    /// `INTERESTING − Σ_σ c·F(h(σ))/N`.
    pub interesting_margin: BigRational,
    pub fail_bound: BigRational,
    pub interesting_bound: BigRational,
}

/// `FAIL ≤ 2·Σ_σ c·f(h(σ))/N` and `INTERESTING ≥ Σ_σ c·F(h(σ))/N`.
pub fn check_weight_bounds(tree: &ProofTree, snakes: &[Snake], wp: &WeightParams) -> Result<WeightBounds> {
    let w = weights(tree, wp)?;
    let fsum: BigUint = snakes.iter().map(|s| wp.f(s.height())).sum();
    let big_fsum: BigUint = snakes.iter().map(|s| wp.big_f(s.height())).sum();
    let fail_bound = wp.scaled(&(fsum * 2u32));
    let interesting_bound = wp.scaled(&big_fsum);
    let fail_margin = &fail_bound - &w.fail;
    let interesting_margin = &w.interesting - &interesting_bound;
    Ok(WeightBounds {
        ok: !fail_margin.is_negative_rational() && !interesting_margin.is_negative_rational(),
        fail_margin,
        interesting_margin,
        fail_bound,
        interesting_bound,
    })
}

trait Sign {
    fn is_negative_rational(&self) -> bool;
}

impl Sign for BigRational {
    fn is_negative_rational(&self) -> bool {
        *self < BigRational::zero()
    }
}

/// Accounting for `FAIL ≤ INTERESTING/5 + 2c(10(β+1))^β`, with each step
/// of the derivation checked separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailBudget {
    pub ok: bool,
    pub fail: BigRational,
    pub interesting: BigRational,
    /// `2·Σ_σ c·f(h(σ))/N`.
    pub snake_bound: BigRational,
    /// Short snakes (`h < 10(β+1)`): `2·Σ c·f(h)/N`.
    pub short_part: BigRational,
    /// Long snakes: `2·Σ c·f(h)/N`.
    pub long_part: BigRational,
    /// `2c(10(β+1))^β`.
    pub short_cap: BigRational,
    /// `INTERESTING/5 + 2c(10(β+1))^β`.
    pub bound: BigRational,
    pub slack: BigRational,
    pub short_snakes: usize,
    pub long_snakes: usize,
    pub failed_steps: Vec<String>,
}

pub fn check_fail_budget(tree: &ProofTree, snakes: &[Snake], wp: &WeightParams) -> Result<FailBudget> {
    let w = weights(tree, wp)?;
    let threshold = 10 * (wp.beta as usize + 1);
    let (short, long): (Vec<&Snake>, Vec<&Snake>) = snakes.iter().partition(|s| s.height() < threshold);
    let two = BigUint::from(2u32);
    let short_part = wp.scaled(&(short.iter().map(|s| wp.f(s.height())).sum::<BigUint>() * &two));
    let long_part = wp.scaled(&(long.iter().map(|s| wp.f(s.height())).sum::<BigUint>() * &two));
    let long_interesting = wp.scaled(&long.iter().map(|s| wp.big_f(s.height())).sum::<BigUint>());
    let snake_bound = &short_part + &long_part;
    let short_cap = &wp.c * rational(&(BigUint::from(threshold).pow(wp.beta) * &two));
    let fifth = BigRational::new(BigInt::one(), BigInt::from(5));
    let bound = &w.interesting * &fifth + &short_cap;
    let mut failed_steps = Vec::new();
    if w.fail > snake_bound {
        failed_steps.push("FAIL exceeds twice the snake-head weight".into());
    }
    if short.len() as u64 > wp.n {
        failed_steps.push(format!("{} short snakes exceed N = {}", short.len(), wp.n));
    }
    if short_part > short_cap {
        failed_steps.push("short-snake weight exceeds 2c(10(β+1))^β".into());
    }
    if long_part > &long_interesting * &fifth {
        failed_steps.push("long-snake weight exceeds a fifth of their F-weight".into());
    }
    if long_interesting > w.interesting {
        failed_steps.push("long-snake F-weight exceeds INTERESTING".into());
    }
    let slack = &bound - &w.fail;
    if slack.is_negative_rational() {
        failed_steps.push("FAIL exceeds INTERESTING/5 + 2c(10(β+1))^β".into());
    }
    Ok(FailBudget {
        ok: failed_steps.is_empty(),
        fail: w.fail,
        interesting: w.interesting,
        snake_bound,
        short_part,
        long_part,
        short_cap,
        bound,
        slack,
        short_snakes: short.len(),
        long_snakes: long.len(),
        failed_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::weight_params;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// One full resolved path of height `k`.
    fn single_path(k: usize) -> ProofTree {
        let mut t = ProofTree::new(k, 1);
        let mut p = ROOT;
        for _ in 0..k {
            p = t.add_vertex(p, true, true).unwrap();
        }
        t
    }

    #[test]
    fn classification_cases() {
        let mut t = ProofTree::new(2, 1);
        let lone = t.add_vertex(ROOT, true, true).unwrap();
        let unresolved = t.add_vertex(lone, true, false).unwrap();
        assert_eq!(t.classify_vertex(lone), Class::Good);
        assert_eq!(t.classify_vertex(unresolved), Class::Bad);
        let resolved = t.add_vertex(lone, true, true).unwrap();
        assert_eq!(t.classify_vertex(resolved), Class::Bad);
        let idle = t.add_vertex(lone, false, false).unwrap();
        assert_eq!(t.classify_vertex(idle), Class::Bad);
        let mut t2 = ProofTree::new(1, 1);
        let idle = t2.add_vertex(ROOT, false, false).unwrap();
        assert_eq!(t2.classify_vertex(idle), Class::Neither);
        assert_eq!(t2.classify(Address { level: 1, a: 5 }), Class::Neither);
        assert!(t2.add_vertex(ROOT, false, true).is_err());
    }

    #[test]
    fn single_path_is_one_snake_with_exact_weights() {
        let t = single_path(3);
        let snakes = decompose_snakes(&t).unwrap();
        assert_eq!(snakes.len(), 1);
        assert_eq!(snakes[0].height(), 3);
        assert!(check_snake_structure(&t, &snakes).ok);
        let wp = weight_params(3, 4).unwrap();
        let w = weights(&t, &wp).unwrap();
        assert_eq!(w.fail, BigRational::zero());
        assert_eq!(w.interesting, &w.succeed + &w.fail);
        let b = check_weight_bounds(&t, &snakes, &wp).unwrap();
        assert!(b.ok);
        assert_eq!(b.interesting_margin, BigRational::zero());
        assert_eq!(w.interesting, wp.scaled(&wp.big_f(3)));
    }

    #[test]
    fn one_good_vertex_weight() {
        let mut t = ProofTree::new(2, 1);
        let v = t.add_vertex(ROOT, true, true).unwrap();
        t.add_vertex(v, true, true).unwrap();
        let wp = weight_params(2, 1).unwrap(); // β = 1, c = 1/3
        let w = weights(&t, &wp).unwrap();
        assert_eq!(w.succeed, ratio(1, 1));
        let mut t = ProofTree::new(2, 1);
        t.add_vertex(ROOT, false, false).unwrap();
        let w = weights(&t, &wp).unwrap();
        assert_eq!(w.interesting, BigRational::zero());
    }

    #[test]
    fn branching_snakes() {
        // root → p (resolved) → two resolved children: both bad siblings
        let mut t = ProofTree::new(2, 1);
        let p = t.add_vertex(ROOT, true, true).unwrap();
        let c1 = t.add_vertex(p, true, true).unwrap();
        let c2 = t.add_vertex(p, true, true).unwrap();
        let snakes = decompose_snakes(&t).unwrap();
        assert_eq!(snakes, vec![Snake { body: vec![p, c1] }, Snake { body: vec![c2] }]);
        assert!(check_snake_structure(&t, &snakes).ok);
        // parent not interesting: both bad children head snakes
        let mut t = ProofTree::new(2, 1);
        let p = t.add_vertex(ROOT, false, false).unwrap();
        let c1 = t.add_vertex(p, true, false).unwrap();
        let c2 = t.add_vertex(p, true, false).unwrap();
        let snakes = decompose_snakes(&t).unwrap();
        assert_eq!(snakes, vec![Snake { body: vec![c1] }, Snake { body: vec![c2] }]);
    }

    #[test]
    fn negative_controls_are_flagged() {
        // lone bad vertex placed mid-body
        let mut t = ProofTree::new(3, 1);
        let a = t.add_vertex(ROOT, true, true).unwrap();
        let b = t.add_vertex(a, true, false).unwrap();
        let c = t.add_vertex(b, true, true).unwrap();
        let report = check_snake_structure(&t, &[Snake { body: vec![a, b, c] }]);
        assert!(!report.ok);
        assert!(report.violations.iter().any(|v| v.contains("lone bad")));
        // overlapping and incomplete snakes
        let t = single_path(2);
        let report = check_snake_structure(&t, &[Snake { body: vec![1, 2] }, Snake { body: vec![2] }]);
        assert!(report.violations.iter().any(|v| v.contains("lies in snakes")));
        let report = check_snake_structure(&t, &[Snake { body: vec![1] }]);
        assert!(!report.ok);
        // empty tree vacuously fine
        let t = ProofTree::new(3, 1);
        assert!(check_snake_structure(&t, &decompose_snakes(&t).unwrap()).ok);
        // interesting non-leaf without interesting child
        let mut t = ProofTree::new(2, 1);
        t.add_vertex(ROOT, true, false).unwrap();
        assert!(matches!(decompose_snakes(&t), Err(Error::StructuralViolation(_))));
    }

    #[test]
    fn two_short_snakes_with_bad_heads() {
        // root → u (not interesting) → two bad leaves
        let mut t = ProofTree::new(2, 1);
        let u = t.add_vertex(ROOT, false, false).unwrap();
        t.add_vertex(u, true, false).unwrap();
        t.add_vertex(u, true, true).unwrap();
        let snakes = decompose_snakes(&t).unwrap();
        assert_eq!(snakes.len(), 2);
        let wp = weight_params(2, 2).unwrap(); // β = 2, c = 1/5
        let b = check_weight_bounds(&t, &snakes, &wp).unwrap();
        // FAIL = 2·c·1/N = 1/5; bound = 2·2·c·1/N = 2/5
        assert_eq!(&b.fail_bound - &b.fail_margin, ratio(1, 5));
        assert_eq!(b.fail_bound, ratio(2, 5));
        assert!(b.ok);
    }

    #[test]
    fn spliced_vertex_is_first_child_of_the_opened_block() {
        let mut t = ProofTree::new(2, 1);
        let a = t.add_vertex(ROOT, true, true).unwrap();
        let b = t.add_vertex(ROOT, true, false).unwrap();
        let a1 = t.add_vertex(a, true, true).unwrap();
        let _a2 = t.add_vertex(a, true, false).unwrap();
        let b1 = t.add_vertex(b, true, false).unwrap();
        assert_eq!(t.spliced_vertex(Address { level: 1, a: 1 }), Some(a));
        assert_eq!(t.spliced_vertex(Address { level: 1, a: 2 }), None);
        assert_eq!(t.spliced_vertex(Address { level: 2, a: 1 }), Some(a1));
        assert_eq!(t.spliced_vertex(Address { level: 2, a: 2 }), Some(b1));
        assert_eq!(t.spliced_vertex(Address { level: 2, a: 3 }), None);
        assert_eq!(t.fingerprint(), "*(r(ra)a(a))");
        // a is bad (sibling b activated); a1 is bad (a2 activated); b1 bad
        let wp = weight_params(2, 4).unwrap();
        let (good, bad) = spliced_weights(&t, &wp).unwrap();
        assert_eq!(good, BigRational::zero());
        // level 1 (h=2, f=8) once, level 2 (h=1, f=1) twice; Σ = 9, N = 4
        assert_eq!(bad, ratio(10, 36));
    }
}
