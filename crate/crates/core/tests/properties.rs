use czk_core::adversary::{respond, ScheduleConfig};
use czk_core::concentration::{check_tape_concentration, resampled_mass, to_f64};
use czk_core::gi::{gen_instance, GiProtocol};
use czk_core::harness::check_tree;
use czk_core::hash::sample_member;
use czk_core::params::weight_params;
use czk_core::protocol::Protocol;
use czk_core::simulators::{run_simulator, Rewinding, WitnessOracle};
use czk_core::tree::{
    build_tree, check_snake_structure, decompose_snakes, spliced_weights, weights, BadRule, Class, ProofTree, ROOT,
};
use czk_core::Error;
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use proptest::prelude::*;
use statrs::distribution::{Binomial, Discrete};

/// A tree grown from `(parent choice, flags)` pairs; flags 0 = neither,
/// 1 = activated, 2 = resolved.
fn grow(k: usize, steps: &[(usize, u8)]) -> ProofTree {
    let mut t = ProofTree::new(k, 1);
    for &(pick, flag) in steps {
        let open: Vec<usize> = (0..t.vertices.len()).filter(|&v| t.vertex(v).level < k).collect();
        let parent = open[pick % open.len()];
        t.add_vertex(parent, flag >= 1, flag == 2).unwrap();
    }
    t
}

/// As [`grow`], then made consistent with the nested schedule: below level
/// `k` a vertex is activated exactly when one of its children is resolved
/// (its second challenge answers the child's accepted response).
fn grow_consistent(k: usize, steps: &[(usize, u8)]) -> ProofTree {
    let mut t = grow(k, steps);
    for level in (1..k).rev() {
        for id in t.levels[level].clone() {
            let activated = t.vertex(id).children.iter().any(|&c| t.vertex(c).resolved);
            let v = &mut t.vertices[id];
            v.resolved &= activated;
            v.activated = activated;
        }
    }
    t
}

fn widest_level(t: &ProofTree) -> u64 {
    t.levels.iter().skip(1).map(|l| l.len() as u64).max().unwrap_or(0).max(1)
}

fn tree_strategy() -> impl Strategy<Value = (usize, Vec<(usize, u8)>, u64)> {
    (1usize..=4, prop::collection::vec((0usize..64, 0u8..3), 0..40), 1u64..20)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    /// Every reply the memoised session gave equals a direct evaluation of
    /// the same prefix.
    #[test]
    fn memoised_replies_match_direct_evaluation(seed in any::<u64>(), k in 1usize..=3, m in 1usize..=2, witness in any::<bool>()) {
        let (pair, w) = gen_instance(6, true, seed).unwrap();
        let x = pair.to_instance();
        let cfg = ScheduleConfig::new(k, m).unwrap();
        let h = sample_member(seed ^ 0x5a5a, 64, m * GiProtocol.tape_bits(&x)).unwrap();
        let run = if witness {
            run_simulator(&WitnessOracle::new(pair.clone(), w), cfg, &x, h.clone(), seed).unwrap()
        } else {
            run_simulator(&Rewinding::new(pair.clone()), cfg, &x, h.clone(), seed).unwrap()
        };
        prop_assert!(run.completed);
        for rec in &run.trace {
            let direct = respond(&cfg, &GiProtocol, &h, &x, &rec.prefix).unwrap();
            prop_assert_eq!(&direct, &rec.reply);
        }
    }

    /// Trees rebuilt from simulator traces are well formed and pass every
    /// pointwise checker.
    #[test]
    fn simulator_trees_pass_every_checker(seed in any::<u64>(), k in 2usize..=3, m in 1usize..=2, n in 1u64..50) {
        let (pair, _) = gen_instance(6, true, seed).unwrap();
        let x = pair.to_instance();
        let cfg = ScheduleConfig::new(k, m).unwrap();
        let h = sample_member(seed, 64, m * GiProtocol.tape_bits(&x)).unwrap();
        let run = run_simulator(&Rewinding::new(pair), cfg, &x, h, seed).unwrap();
        let tree = build_tree(&run.trace, &cfg).unwrap();
        for level in 1..=k {
            for (i, &id) in tree.levels[level].iter().enumerate() {
                let v = tree.vertex(id);
                prop_assert_eq!(v.level, level);
                prop_assert_eq!(v.a, i as u64 + 1);
                prop_assert_eq!(tree.vertex(v.parent.unwrap()).level, level - 1);
            }
        }
        let wp = weight_params(k, n + widest_level(&tree)).unwrap();
        let (_, check) = check_tree(&tree, &wp, run.completed).unwrap();
        prop_assert!(check.ok(), "{:?}", check.violations);
    }

    /// On arbitrary trees the decomposition either covers every interesting
    /// vertex with disjoint full-depth snakes or names a dead end.
    #[test]
    fn decomposition_covers_or_names_a_dead_end((k, steps, _) in tree_strategy(), literal in any::<bool>()) {
        let mut t = grow(k, &steps);
        t.rule = if literal { BadRule::Literal } else { BadRule::Activated };
        match decompose_snakes(&t) {
            Ok(snakes) => {
                let covered: usize = snakes.iter().map(|s| s.height()).sum();
                let interesting = t.classes().iter().filter(|c| c.is_interesting()).count();
                prop_assert_eq!(covered, interesting);
                for s in &snakes {
                    prop_assert_eq!(t.vertex(*s.body.last().unwrap()).level, k);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::StructuralViolation(_))),
        }
    }

    /// With bad vertices required to be activated, every schedule-consistent
    /// tree decomposes and passes every pointwise checker, whatever the
    /// simulator did or where it stopped.
    #[test]
    fn consistent_trees_pass_under_the_activated_rule((k, steps, extra) in tree_strategy()) {
        prop_assume!(k >= 2);
        let mut t = grow_consistent(k, &steps);
        t.rule = BadRule::Activated;
        let snakes = decompose_snakes(&t).unwrap();
        let r = check_snake_structure(&t, &snakes);
        prop_assert!(r.ok, "{:?}", r.violations);
        let wp = weight_params(k, widest_level(&t) + extra).unwrap();
        let (_, check) = check_tree(&t, &wp, false).unwrap();
        prop_assert!(check.ok(), "{:?}", check.violations);
    }

    /// SUCCEED + FAIL = INTERESTING, the contributions sum to it, and the
    /// spliced masses are probabilities.
    #[test]
    fn weight_identities_are_exact((k, steps, n) in tree_strategy()) {
        prop_assume!(k >= 2);
        let t = grow(k, &steps);
        let wp = weight_params(k, n).unwrap();
        let w = weights(&t, &wp).unwrap();
        prop_assert_eq!(&w.succeed + &w.fail, w.interesting.clone());
        let sum = w
            .contributions
            .iter()
            .map(|c| c.weight.parse::<BigRational>().unwrap())
            .fold(BigRational::zero(), |a, b| a + b);
        prop_assert_eq!(sum, w.interesting.clone());
        let in_range = (1..t.vertices.len())
            .filter(|&id| t.classify_vertex(id).is_interesting() && t.vertex(id).a <= n)
            .count();
        prop_assert_eq!(w.contributions.len(), in_range);
        let (good, bad) = spliced_weights(&t, &wp).unwrap();
        prop_assert!(good >= BigRational::zero() && bad >= BigRational::zero());
        prop_assert!(&good + &bad <= BigRational::one());
    }

    /// Under the literal rule an activated sibling makes a vertex bad.
    #[test]
    fn activated_siblings_spoil_the_family((k, steps, _) in tree_strategy()) {
        let t = grow(k, &steps);
        for p in 0..t.vertices.len() {
            let kids = &t.vertex(p).children;
            let active = kids.iter().filter(|&&c| t.vertex(c).activated).count();
            for &c in kids {
                let others = active - usize::from(t.vertex(c).activated);
                if others > 0 {
                    prop_assert_eq!(t.classify_vertex(c), Class::Bad);
                }
            }
        }
        prop_assert_eq!(t.classify_vertex(ROOT), Class::Neither);
    }

    /// The D' violation computed through the ℓ/(ρm) reweighting equals the
    /// direct 1 + Bin(m − 1, ρ) sum, and both agree with a floating-point
    /// binomial.
    #[test]
    fn concentration_routes_agree(m in 1u64..300, a in 1u64..10, extra in 0u64..10, k in 1u64..8) {
        let b = a + extra;
        let rho = Ratio::new(a, b);
        let r = check_tape_concentration(m, rho, k).unwrap();
        let direct = BigRational::one() - resampled_mass(m, rho, r.window.0, r.window.1);
        prop_assert_eq!(&direct, &r.violation_resampled);
        prop_assert!(r.violation_shifted >= r.violation);

        let p = a as f64 / b as f64;
        let bin = Binomial::new(p, m).unwrap();
        let inside: f64 = (r.window.0..=r.window.1.min(m)).map(|l| bin.pmf(l)).sum();
        prop_assert!((to_f64(&r.violation) - (1.0 - inside)).abs() < 1e-9);
        let zero = BigRational::zero();
        prop_assert!(r.violation >= zero && r.violation <= BigRational::one());
        prop_assert!(r.violation_resampled >= zero);
    }
}

#[test]
fn rational_parse_roundtrip_used_by_contributions() {
    let x = BigRational::new(BigInt::from(3), BigInt::from(7));
    assert_eq!(x.to_string().parse::<BigRational>().unwrap(), x);
}
