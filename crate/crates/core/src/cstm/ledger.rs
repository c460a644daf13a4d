use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::machine::CellRole;
use super::trace::{sum_role, NamedCell, TraceRecord};
use crate::{Multiset, TINY};

/// Per-species mass balance of a run.
///
/// For each species: `in + produced - consumed = held + waste + product`,
/// where `in` counts initial stock plus material resupplied on checkpoint
/// restores, and the reaction columns come from every rule firing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub total_in: Multiset,
    pub total_produced: Multiset,
    pub total_consumed: Multiset,
    pub total_held: Multiset,
    pub total_waste: Multiset,
    pub total_product: Multiset,
    pub residuals: Multiset,
    /// Maximum over species.
    pub residual: f64,
}

fn add(m: &mut Multiset, s: &str, a: f64) {
    *m.entry(s.to_string()).or_insert(0.0) += a;
}

fn add_all(m: &mut Multiset, from: &Multiset) {
    for (s, a) in from {
        add(m, s, *a);
    }
}

/// Recompute the ledger from a trace's initial tape, records and final
/// tape.
pub fn ledger_from_parts(initial: &[NamedCell], records: &[TraceRecord], final_tape: &[NamedCell]) -> LedgerReport {
    let mut r = LedgerReport::default();
    for c in initial {
        add_all(&mut r.total_in, &c.contents);
    }
    for rec in records {
        match rec {
            TraceRecord::Step(s) => {
                if let Some(ev) = &s.reaction {
                    add_all(&mut r.total_produced, &ev.produced);
                    add_all(&mut r.total_consumed, &ev.consumed);
                }
            }
            TraceRecord::Revert { resupplied, .. } => add_all(&mut r.total_in, resupplied),
            _ => {}
        }
    }
    r.total_held = sum_role(final_tape, CellRole::Vessel);
    r.total_waste = sum_role(final_tape, CellRole::Waste);
    r.total_product = sum_role(final_tape, CellRole::Product);
    let species: BTreeSet<&String> = r
        .total_in
        .keys()
        .chain(r.total_produced.keys())
        .chain(r.total_held.keys())
        .chain(r.total_waste.keys())
        .chain(r.total_product.keys())
        .collect();
    let get = |m: &Multiset, s: &str| m.get(s).copied().unwrap_or(0.0);
    let mut residuals = Multiset::new();
    let mut worst = 0.0f64;
    for s in species {
        let input = get(&r.total_in, s) + get(&r.total_produced, s);
        let out = get(&r.total_consumed, s) + get(&r.total_held, s) + get(&r.total_waste, s) + get(&r.total_product, s);
        let res = (input - out).abs() / input.max(TINY);
        worst = worst.max(res);
        residuals.insert(s.clone(), res);
    }
    r.residuals = residuals;
    r.residual = worst;
    r
}

/// Ledger of a completed trace.
pub fn mass_ledger(trace: &super::ExecutionTrace) -> LedgerReport {
    ledger_from_parts(&trace.initial, &trace.records, &trace.final_tape)
}
