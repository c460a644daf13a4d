use std::collections::BTreeSet;

use chemputer::cstm::{run, HaltKind, DEFAULT_BUDGET};
use chemputer::rules::{pathway_program, plan_pathway, PlanError, RuleDatabase, RuleStatus, Species, Term, TransitionRule};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEPTH: usize = 4;

struct Case {
    db: RuleDatabase,
    stock: BTreeSet<String>,
    target: String,
}

/// Up to six species and five rules. Each rule gets its own temperature
/// band so no rule shadows another; every species carries one unit of a
/// shared element so any rule with at least as many reagents as products
/// conserves mass.
fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sp = rng.random_range(3..=6);
    let names: Vec<String> = (0..n_sp).map(|i| format!("S{i}")).collect();
    let species = names
        .iter()
        .map(|id| Species {
            id: id.clone(),
            name: id.clone(),
            molar_mass: 50.0,
            elements: [("E".to_string(), 1)].into(),
            stable: true,
            assembly_index: None,
            bonds: None,
            molar_volume: None,
        })
        .collect();
    let n_rules = rng.random_range(1..=5);
    let statuses = [RuleStatus::Characterised, RuleStatus::Predicted, RuleStatus::Novel];
    let rules = (0..n_rules)
        .map(|k| {
            let n_in = rng.random_range(1..=2);
            let ins: Vec<&String> = names.choose_multiple(&mut rng, n_in).collect();
            let rest: Vec<&String> = names.iter().filter(|s| !ins.contains(s)).collect();
            let n_out = rng.random_range(1..=n_in.min(rest.len()));
            let outs: Vec<&String> = rest.choose_multiple(&mut rng, n_out).copied().collect();
            let lo = 30.0 + 40.0 * k as f64;
            TransitionRule {
                id: format!("q{k}"),
                reagents: ins.iter().map(|s| Term::new(s, 1.0)).collect(),
                catalysts: vec![],
                temp_range: [lo, lo + 30.0],
                duration_range: [60.0, 3600.0],
                products: outs.iter().map(|s| Term::new(s, 1.0)).collect(),
                yield_fraction: rng.random_range(0.5..=1.0),
                epsilon: 0.0,
                status: *statuses.choose(&mut rng).unwrap(),
                occurrences: 0,
                priority: 0,
            }
        })
        .collect();
    let db = RuleDatabase::new(species, rules).expect("generated db is valid");
    let n_stock = rng.random_range(1..=2);
    let stock = names[..n_stock].iter().cloned().collect();
    let target = names[rng.random_range(n_stock..n_sp)].clone();
    Case { db, stock, target }
}

/// Length of the shortest sequence of distinct applicable rules after
/// which the target is held, by exhaustive enumeration.
fn brute_force(c: &Case) -> Option<usize> {
    let rules: Vec<&TransitionRule> = c.db.rules.values().collect();
    fn go(rules: &[&TransitionRule], have: &BTreeSet<String>, used: &mut Vec<usize>, target: &str, left: usize) -> Option<usize> {
        if have.contains(target) {
            return Some(used.len());
        }
        if left == 0 {
            return None;
        }
        let mut best: Option<usize> = None;
        for i in 0..rules.len() {
            if used.contains(&i) || !rules[i].reagents.iter().all(|t| have.contains(&t.species)) {
                continue;
            }
            let mut next = have.clone();
            next.extend(rules[i].products.iter().map(|t| t.species.clone()));
            used.push(i);
            if let Some(n) = go(rules, &next, used, target, left - 1) {
                best = Some(best.map_or(n, |b| b.min(n)));
            }
            used.pop();
        }
        best
    }
    go(&rules, &c.stock, &mut Vec::new(), &c.target, DEPTH)
}

#[test]
fn planner_matches_brute_force() {
    let mut reachable = 0;
    for seed in 0..200 {
        let c = random_case(seed);
        let oracle = brute_force(&c);
        match plan_pathway(&c.db, &c.target, &c.stock, DEPTH) {
            Ok(p) => {
                reachable += 1;
                assert_eq!(Some(p.steps.len()), oracle, "seed {seed}: {:?}", p.rule_ids());
                let prog = pathway_program(&p, &c.stock);
                let t = run(&prog, &c.db, DEFAULT_BUDGET);
                assert_ne!(t.halt.kind, HaltKind::Fail, "seed {seed}: {:?} {:?}", p.rule_ids(), t.halt.reason);
                assert!(t.product().get(&c.target).is_some_and(|a| *a > 0.0), "seed {seed}");
                assert!(t.ledger.residual <= 1e-9);
            }
            Err(PlanError::Unreachable(_)) => assert_eq!(oracle, None, "seed {seed}"),
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    // Both branches must be exercised for the comparison to mean anything.
    assert!(reachable > 20 && reachable < 180, "{reachable} of 200 reachable");
}
