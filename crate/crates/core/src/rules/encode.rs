use std::collections::{BTreeMap, BTreeSet};

use super::Pathway;
use crate::chemlang::{ChemProgram, OpKind, ParamValue, Quantity, ReagentDecl, Role, Unit, UnitOperation, REACTION_STEP};
use crate::AMBIENT_C;

/// Stock charged per species, in mol.
pub const STOCK_MOL: f64 = 1.0;

fn ident(s: &str) -> ParamValue {
    ParamValue::Ident(s.to_string())
}

fn reagent_id(species: &str) -> String {
    format!("r_{species}")
}

/// Program that runs a pathway: step `k` reacts in vessel `rxk`, needed
/// intermediates wait in store `stk`, and the target goes to `product`.
pub fn pathway_program(p: &Pathway, stock: &BTreeSet<String>) -> ChemProgram {
    // Remaining uses per species across the pathway.
    let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &p.steps {
        for sp in s.inputs.keys().chain(s.catalysts.iter()) {
            *uses.entry(sp).or_insert(0) += 1;
        }
    }
    let stock_used: Vec<&str> = uses.keys().copied().filter(|s| stock.contains(*s)).collect();
    let catalyst_only: BTreeSet<&str> = stock_used
        .iter()
        .copied()
        .filter(|sp| p.steps.iter().all(|s| !s.inputs.contains_key(*sp)))
        .collect();
    let reagents: Vec<ReagentDecl> = stock_used
        .iter()
        .enumerate()
        .map(|(i, sp)| ReagentDecl {
            id: reagent_id(sp),
            species: sp.to_string(),
            amount: Quantity::new(STOCK_MOL, Unit::Mol),
            source_vessel: format!("R{}", i + 1),
            role: if catalyst_only.contains(sp) {
                Role::Catalyst
            } else {
                Role::Reagent
            },
        })
        .collect();
    let per_use: BTreeMap<&str, f64> = stock_used.iter().map(|s| (*s, STOCK_MOL / uses[s] as f64)).collect();

    let mut hardware = Vec::new();
    let mut store_of: BTreeMap<String, String> = BTreeMap::new();
    let mut left = uses.clone();
    let mut steps = Vec::new();
    let n = p.steps.len();
    for (k, s) in p.steps.iter().enumerate() {
        let rx = format!("rx{}", k + 1);
        hardware.push(rx.clone());
        let first = steps.len();
        let feed = |sp: &str, steps: &mut Vec<UnitOperation>, left: &mut BTreeMap<&str, usize>| {
            if stock.contains(sp) {
                steps.push(
                    UnitOperation::new(OpKind::Add)
                        .with("vessel", ident(&rx))
                        .with("reagent", ident(&reagent_id(sp)))
                        .with("amount", ParamValue::Quantity(Quantity::new(per_use[sp], Unit::Mol))),
                );
            } else {
                let remaining = left[sp];
                steps.push(
                    UnitOperation::new(OpKind::Transfer)
                        .with("from", ident(&store_of[sp]))
                        .with("to", ident(&rx))
                        .with("species", ident(sp))
                        .with("fraction", ParamValue::Number(1.0 / remaining as f64)),
                );
            }
            *left.get_mut(sp).expect("counted") -= 1;
        };
        let inputs: Vec<&str> = s.inputs.keys().map(String::as_str).collect();
        let trigger = inputs.iter().rev().copied().find(|sp| stock.contains(*sp));
        for c in &s.catalysts {
            feed(c, &mut steps, &mut left);
        }
        for sp in &inputs {
            if Some(*sp) != trigger {
                feed(sp, &mut steps, &mut left);
            }
        }
        let temp = ParamValue::Quantity(Quantity::new(s.point.temp, Unit::C));
        let time = ParamValue::Quantity(Quantity::new(s.point.duration, Unit::S));
        let hot = s.point.temp >= AMBIENT_C;
        let react = match trigger {
            Some(sp) => {
                *left.get_mut(sp).expect("counted") -= 1;
                UnitOperation::new(if hot { OpKind::ReactHot } else { OpKind::ReactCold })
                    .with("vessel", ident(&rx))
                    .with("reagent", ident(&reagent_id(sp)))
                    .with("amount", ParamValue::Quantity(Quantity::new(per_use[sp], Unit::Mol)))
            }
            None => UnitOperation::new(if hot { OpKind::HeatStir } else { OpKind::Chill }).with("vessel", ident(&rx)),
        };
        steps.push(react.with("temp", temp).with("time", time));
        steps[first] = steps[first].clone().with(REACTION_STEP, ParamValue::Number((k + 1) as f64));

        let mut stored = false;
        for prod in &s.products {
            let to = if k + 1 == n && prod == &p.target {
                "product".to_string()
            } else if left.get(prod.as_str()).is_some_and(|u| *u > 0) && !store_of.contains_key(prod) {
                let st = format!("st{}", k + 1);
                if !stored {
                    hardware.push(st.clone());
                    stored = true;
                }
                store_of.insert(prod.clone(), st.clone());
                st
            } else {
                continue;
            };
            steps.push(
                UnitOperation::new(OpKind::Transfer)
                    .with("from", ident(&rx))
                    .with("to", ident(&to))
                    .with("species", ident(prod)),
            );
        }
        steps.push(
            UnitOperation::new(OpKind::Transfer)
                .with("from", ident(&rx))
                .with("to", ident("waste")),
        );
    }
    ChemProgram {
        name: format!("pathway_{}", p.target),
        reagents,
        hardware_reqs: hardware,
        steps,
        metadata: BTreeMap::from([(
            "rules".to_string(),
            p.steps.iter().map(|s| s.rule_id.as_str()).collect::<Vec<_>>().join(","),
        )]),
    }
}
