use serde::{Deserialize, Serialize};

use super::{RuleDatabase, RuleStatus, TransitionRule};
use crate::cstm::HaltKind;
use crate::Multiset;

/// Conditions a cell has experienced: current temperature and time held
/// at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessPoint {
    pub temp: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule_id: String,
    pub status: RuleStatus,
    /// Reagent that bounds the extent.
    pub limiting: String,
    /// Extent at full conversion: min over reagents of amount / coefficient.
    pub max_extent: f64,
}

fn present(contents: &Multiset, s: &str) -> bool {
    contents.get(s).is_some_and(|a| *a > 0.0)
}

fn pattern_ok(r: &TransitionRule, contents: &Multiset) -> bool {
    r.reagent_species().all(|s| present(contents, s)) && r.catalysts.iter().all(|c| present(contents, c))
}

fn temp_ok(r: &TransitionRule, p: ProcessPoint) -> bool {
    r.temp_range[0] <= p.temp && p.temp <= r.temp_range[1]
}

fn duration_ok(r: &TransitionRule, p: ProcessPoint) -> bool {
    r.duration_range[0] <= p.duration && p.duration <= r.duration_range[1]
}

fn better(a: &TransitionRule, b: &TransitionRule) -> bool {
    (a.priority, std::cmp::Reverse(&a.id)) > (b.priority, std::cmp::Reverse(&b.id))
}

/// Best match among `rules`: highest priority, then smallest id.
pub fn best_match<'a>(
    rules: impl IntoIterator<Item = &'a TransitionRule>,
    contents: &Multiset,
    point: ProcessPoint,
) -> Option<RuleMatch> {
    let mut best: Option<&TransitionRule> = None;
    for r in rules {
        if pattern_ok(r, contents) && temp_ok(r, point) && duration_ok(r, point) && best.is_none_or(|b| better(r, b)) {
            best = Some(r);
        }
    }
    let r = best?;
    let mut limiting = String::new();
    let mut max_extent = f64::INFINITY;
    for t in &r.reagents {
        let x = contents[&t.species] / t.coefficient;
        if x < max_extent {
            max_extent = x;
            limiting = t.species.clone();
        }
    }
    Some(RuleMatch {
        rule_id: r.id.clone(),
        status: r.status,
        limiting,
        max_extent,
    })
}

pub fn match_rule(db: &RuleDatabase, contents: &Multiset, point: ProcessPoint) -> Option<RuleMatch> {
    best_match(db.rules.values(), contents, point)
}

/// A rule whose pattern and temperature match but whose minimum duration
/// has not yet elapsed.
pub fn pending_rule<'a>(
    rules: impl IntoIterator<Item = &'a TransitionRule>,
    contents: &Multiset,
    point: ProcessPoint,
) -> Option<&'a TransitionRule> {
    rules
        .into_iter()
        .find(|r| pattern_ok(r, contents) && temp_ok(r, point) && point.duration < r.duration_range[0])
}

/// Rules whose pattern and catalysts are present, regardless of window.
pub fn pattern_candidates<'a>(
    rules: impl IntoIterator<Item = &'a TransitionRule>,
    contents: &Multiset,
) -> Vec<&'a TransitionRule> {
    rules.into_iter().filter(|r| pattern_ok(r, contents)).collect()
}

pub fn status_halt(status: RuleStatus) -> HaltKind {
    match status {
        RuleStatus::Characterised => HaltKind::Out,
        RuleStatus::Predicted => HaltKind::UOut,
        RuleStatus::Novel => HaltKind::NOut,
    }
}

/// Halting kind for a completed reaction step. A match carries its rule's
/// status (novel rules come from exploration); no match is a failure
/// whether or not exploration was enabled, since exploration that finds
/// something returns a match.
pub fn classify_outcome(m: Option<&RuleMatch>, db: &RuleDatabase, _explore: bool) -> HaltKind {
    match m {
        Some(m) => status_halt(db.rule(&m.rule_id).map(|r| r.status).unwrap_or(m.status)),
        None => HaltKind::Fail,
    }
}
