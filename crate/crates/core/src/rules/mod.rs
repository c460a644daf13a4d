//! Reaction rules: the database, matching, halting classification,
//! promotion on repetition, exploration and the pathway planner.

mod db;
mod encode;
mod explore;
mod matching;
mod planner;
mod promote;

use std::collections::BTreeSet;

pub use db::{load_rules, load_rules_file, PromotionEvent, RuleDatabase, RuleStatus, RulesError, Species, Term, TransitionRule};
pub use encode::{pathway_program, STOCK_MOL};
pub use explore::Explorer;
pub use matching::{
    best_match, classify_outcome, match_rule, pattern_candidates, pending_rule, status_halt, ProcessPoint, RuleMatch,
};
pub use planner::{
    canonical_points, firing_point, isolated_contents, perfect_copy_fraction, plan_pathway, Pathway, PathwayStep,
    PlanError, DEFAULT_MAX_DEPTH,
};
pub use promote::{promote, PROMOTION_THRESHOLD};

use crate::chemlang::ChemProgram;
use crate::cstm::{run_with, ExecutionTrace, HaltKind, RunOptions};

/// Run a program and commit its trace: every fired rule that is not yet
/// characterised gains an occurrence, and rules found by exploration join
/// the database. When the commit leaves every fired rule characterised,
/// the run is the repetition that settles the outcome and halts `q_out`.
pub fn run_and_commit(
    prog: &ChemProgram,
    db: &RuleDatabase,
    opts: &RunOptions,
) -> Result<(ExecutionTrace, RuleDatabase), RulesError> {
    let mut trace = run_with(prog, db, opts);
    let mut next = db.clone();
    if trace.halt.kind == HaltKind::Fail {
        return Ok((trace, next));
    }
    for r in &trace.discovered {
        if !next.rules.contains_key(&r.id) {
            // Species the discovery introduces come with it from the pool.
            let pool = opts.explore.as_ref();
            for sp in r.reagent_species().chain(r.product_species()).chain(r.catalysts.iter().map(String::as_str)) {
                if let Some(s) = pool.and_then(|p| p.species.get(sp)) {
                    next.insert_species(s.clone())?;
                }
            }
            let mut r = r.clone();
            r.occurrences = 0;
            next.insert_rule(r)?;
        }
    }
    let fired: BTreeSet<String> = trace
        .steps()
        .filter_map(|s| s.reaction.as_ref().map(|e| e.rule_id.clone()))
        .collect();
    for id in &fired {
        if next.rule(id).is_some_and(|r| r.status != RuleStatus::Characterised) {
            next.promote_in_place(id)?;
        }
    }
    if !fired.is_empty() && fired.iter().all(|id| next.rule(id).is_some_and(|r| r.status == RuleStatus::Characterised)) {
        trace.halt.kind = HaltKind::Out;
    }
    Ok((trace, next))
}
