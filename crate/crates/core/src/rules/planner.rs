use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{match_rule, ProcessPoint, RuleDatabase, TransitionRule};
use crate::chemlang::{MAX_TEMP_C, MIN_TEMP_C};
use crate::Multiset;

pub const DEFAULT_MAX_DEPTH: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayStep {
    pub rule_id: String,
    /// Stoichiometric inputs per unit extent.
    pub inputs: BTreeMap<String, f64>,
    pub catalysts: Vec<String>,
    pub products: Vec<String>,
    /// Condition point at which this rule wins the match.
    pub point: ProcessPoint,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pathway {
    pub target: String,
    pub steps: Vec<PathwayStep>,
    pub expected_perfect_fraction: f64,
}

impl Pathway {
    pub fn rule_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.rule_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no pathway to `{0}` within depth")]
    Unreachable(String),
    #[error("target `{0}` is not stable")]
    UnstableTarget(String),
    #[error("unknown species `{0}`")]
    UnknownTarget(String),
}

/// Product of `1 - epsilon` over the steps.
pub fn perfect_copy_fraction(p: &Pathway) -> f64 {
    p.steps.iter().map(|s| 1.0 - s.epsilon).product()
}

/// Contents a reactor holds when the rule is run in isolation: each
/// reagent at its coefficient, each catalyst at one unit.
pub fn isolated_contents(r: &TransitionRule) -> Multiset {
    let mut m: Multiset = r.reagents.iter().map(|t| (t.species.clone(), t.coefficient)).collect();
    for c in &r.catalysts {
        m.insert(c.clone(), 1.0);
    }
    m
}

/// Canonical condition points: window midpoint, then the four corners.
pub fn canonical_points(r: &TransitionRule) -> [ProcessPoint; 5] {
    let (tm, dm) = r.window_mid();
    let [t0, t1] = r.temp_range;
    let [d0, d1] = r.duration_range;
    let p = |temp, duration| ProcessPoint { temp, duration };
    [p(tm, dm), p(t0, d0), p(t0, d1), p(t1, d0), p(t1, d1)]
}

/// First canonical point a program can express (positive duration,
/// temperature inside the language's range) at which `r` wins the match
/// on its own inputs. Rules shadowed everywhere are unusable.
pub fn firing_point(db: &RuleDatabase, r: &TransitionRule) -> Option<ProcessPoint> {
    let contents = isolated_contents(r);
    canonical_points(r).into_iter().find(|p| {
        p.duration > 0.0
            && (MIN_TEMP_C..=MAX_TEMP_C).contains(&p.temp)
            && match_rule(db, &contents, *p).is_some_and(|m| m.rule_id == r.id)
    })
}

fn needs(r: &TransitionRule) -> impl Iterator<Item = &str> {
    r.reagent_species().chain(r.catalysts.iter().map(String::as_str))
}

fn applicable(r: &TransitionRule, have: &BTreeSet<&str>) -> bool {
    needs(r).all(|s| have.contains(s))
}

struct Search<'a> {
    rules: Vec<&'a TransitionRule>,
    target: &'a str,
}

impl<'a> Search<'a> {
    fn dfs(&self, have: &mut BTreeSet<&'a str>, used: &mut Vec<usize>, left: usize) -> bool {
        if left == 0 {
            return have.contains(self.target);
        }
        for i in 0..self.rules.len() {
            if used.contains(&i) {
                continue;
            }
            let r = self.rules[i];
            if !applicable(r, have) {
                continue;
            }
            let fresh: Vec<&'a str> = r.product_species().filter(|p| !have.contains(p)).collect();
            if fresh.is_empty() {
                continue;
            }
            // The last step must deliver the target.
            if left == 1 && !fresh.contains(&self.target) {
                continue;
            }
            for f in &fresh {
                have.insert(f);
            }
            used.push(i);
            if self.dfs(have, used, left - 1) {
                return true;
            }
            used.pop();
            for f in &fresh {
                have.remove(f);
            }
        }
        false
    }
}

/// Shortest pathway from `stock` to `target`; ties go to the
/// lexicographically smallest rule-id sequence.
pub fn plan_pathway(
    db: &RuleDatabase,
    target: &str,
    stock: &BTreeSet<String>,
    max_depth: usize,
) -> Result<Pathway, PlanError> {
    let sp = db.species.get(target).ok_or_else(|| PlanError::UnknownTarget(target.into()))?;
    if !sp.stable {
        return Err(PlanError::UnstableTarget(target.into()));
    }
    if stock.contains(target) {
        return Ok(Pathway {
            target: target.into(),
            steps: Vec::new(),
            expected_perfect_fraction: 1.0,
        });
    }
    let usable: BTreeMap<&str, (&TransitionRule, ProcessPoint)> = db
        .rules
        .values()
        .filter_map(|r| firing_point(db, r).map(|p| (r.id.as_str(), (r, p))))
        .collect();

    // Backward: species and rules that can contribute to the target.
    let mut relevant: BTreeSet<&str> = BTreeSet::from([target]);
    loop {
        let before = relevant.len();
        for (r, _) in usable.values() {
            if r.product_species().any(|p| relevant.contains(p)) {
                relevant.extend(needs(r));
            }
        }
        if relevant.len() == before {
            break;
        }
    }
    let rel_rules: Vec<&TransitionRule> = usable
        .values()
        .map(|(r, _)| *r)
        .filter(|r| r.product_species().any(|p| relevant.contains(p)))
        .collect();

    // Forward: closure from stock over relevant rules.
    let mut have: BTreeSet<&str> = stock.iter().map(String::as_str).collect();
    loop {
        let before = have.len();
        for r in &rel_rules {
            if applicable(r, &have) {
                have.extend(r.product_species());
            }
        }
        if have.len() == before {
            break;
        }
    }
    if !have.contains(target) {
        return Err(PlanError::Unreachable(target.into()));
    }

    let search = Search { rules: rel_rules, target };
    for depth in 1..=max_depth {
        let mut have: BTreeSet<&str> = stock.iter().map(String::as_str).collect();
        let mut used = Vec::new();
        if search.dfs(&mut have, &mut used, depth) {
            let steps: Vec<PathwayStep> = used
                .iter()
                .map(|&i| {
                    let r = search.rules[i];
                    PathwayStep {
                        rule_id: r.id.clone(),
                        inputs: r.reagents.iter().map(|t| (t.species.clone(), t.coefficient)).collect(),
                        catalysts: r.catalysts.clone(),
                        products: r.products.iter().map(|t| t.species.clone()).collect(),
                        point: usable[r.id.as_str()].1,
                        epsilon: r.epsilon,
                    }
                })
                .collect();
            let mut p = Pathway {
                target: target.into(),
                steps,
                expected_perfect_fraction: 1.0,
            };
            p.expected_perfect_fraction = perfect_copy_fraction(&p);
            return Ok(p);
        }
    }
    Err(PlanError::Unreachable(target.into()))
}
