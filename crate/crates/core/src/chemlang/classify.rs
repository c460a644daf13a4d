use std::collections::BTreeMap;

use serde::Serialize;

use super::{ChemProgram, OpKind, ParamValue, Quantity, ReagentDecl, Role, Unit, UnitOperation, REACTION_STEP};
use crate::cstm::{primitive_sequence, PrimKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StepCategory {
    AddMatter,
    SubtractMatter,
    AddEnergy,
    SubtractEnergy,
    Composite,
}

impl StepCategory {
    /// Category of an operation: that of the first primitive in its expansion.
    pub fn of(kind: OpKind) -> StepCategory {
        match primitive_sequence(kind)[0] {
            PrimKind::AM => StepCategory::AddMatter,
            PrimKind::SM => StepCategory::SubtractMatter,
            PrimKind::AE => StepCategory::AddEnergy,
            PrimKind::SE => StepCategory::SubtractEnergy,
        }
    }
}

/// Counts for one reaction step. `composite` is a secondary tally of
/// operations whose expansion is longer than two primitives; it is not
/// part of `total`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StepCounts {
    pub reaction_step: u32,
    pub add_matter: usize,
    pub subtract_matter: usize,
    pub add_energy: usize,
    pub subtract_energy: usize,
    pub composite: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepHistogram {
    pub per_reaction_step: Vec<StepCounts>,
    pub cumulative: Vec<usize>,
    pub total: usize,
}

/// Count unit operations per reaction step and category.
///
/// Steps without an explicit `reaction_step` inherit the previous step's
/// marker; the first defaults to 1.
pub fn classify_steps(prog: &ChemProgram) -> StepHistogram {
    let mut buckets: BTreeMap<u32, StepCounts> = BTreeMap::new();
    let mut current = 1u32;
    for op in &prog.steps {
        if let Some(rs) = op.reaction_step() {
            current = rs;
        }
        let c = buckets.entry(current).or_insert_with(|| StepCounts {
            reaction_step: current,
            ..Default::default()
        });
        match StepCategory::of(op.kind) {
            StepCategory::AddMatter => c.add_matter += 1,
            StepCategory::SubtractMatter => c.subtract_matter += 1,
            StepCategory::AddEnergy => c.add_energy += 1,
            StepCategory::SubtractEnergy => c.subtract_energy += 1,
            StepCategory::Composite => unreachable!("first primitive is never composite"),
        }
        if primitive_sequence(op.kind).len() > 2 {
            c.composite += 1;
        }
        c.total += 1;
    }
    let per_reaction_step: Vec<StepCounts> = buckets.into_values().collect();
    let mut cumulative = Vec::with_capacity(per_reaction_step.len());
    let mut acc = 0;
    for c in &per_reaction_step {
        acc += c.total;
        cumulative.push(acc);
    }
    StepHistogram {
        per_reaction_step,
        cumulative,
        total: acc,
    }
}

const TEMPLATE: [OpKind; 6] = [
    OpKind::Add,
    OpKind::ReactHot,
    OpKind::HeatStir,
    OpKind::Chill,
    OpKind::Transfer,
    OpKind::Evaporate,
];

/// Synthetic corpus program: `reaction_steps` reaction steps of exactly
/// `ops_per_step` operations each, drawn cyclically from a fixed template.
pub fn synthetic_program(reaction_steps: u32, ops_per_step: usize) -> ChemProgram {
    let q = |v: f64, u: Unit| ParamValue::Quantity(Quantity::new(v, u));
    let id = |s: &str| ParamValue::Ident(s.to_string());
    let mut steps = Vec::new();
    for rs in 1..=reaction_steps {
        for i in 0..ops_per_step {
            let kind = TEMPLATE[i % TEMPLATE.len()];
            let mut op = UnitOperation::new(kind);
            op = match kind {
                OpKind::Add => op.with("vessel", id("RX1")).with("reagent", id("a")).with("amount", q(0.01, Unit::Mol)),
                OpKind::ReactHot => op
                    .with("vessel", id("RX1"))
                    .with("reagent", id("b"))
                    .with("amount", q(0.01, Unit::Mol))
                    .with("temp", q(80.0, Unit::C))
                    .with("time", q(600.0, Unit::S)),
                OpKind::HeatStir => op.with("vessel", id("RX1")).with("temp", q(60.0, Unit::C)).with("time", q(60.0, Unit::S)),
                OpKind::Chill => op.with("vessel", id("RX1")).with("temp", q(5.0, Unit::C)).with("time", q(60.0, Unit::S)),
                OpKind::Transfer => op.with("from", id("RX1")).with("to", id("product")).with("fraction", ParamValue::Number(0.5)),
                _ => op.with("vessel", id("RX1")).with("temp", q(40.0, Unit::C)).with("time", q(60.0, Unit::S)),
            };
            if i == 0 {
                op = op.with(REACTION_STEP, ParamValue::Number(rs as f64));
            }
            steps.push(op);
        }
    }
    let decl = |id: &str, sp: &str, src: &str| ReagentDecl {
        id: id.into(),
        species: sp.into(),
        amount: Quantity::new(10.0, Unit::Mol),
        source_vessel: src.into(),
        role: Role::Reagent,
    };
    ChemProgram {
        name: format!("synthetic_{reaction_steps}x{ops_per_step}"),
        reagents: vec![decl("a", "A", "R1"), decl("b", "B", "R2")],
        hardware_reqs: vec!["RX1".into()],
        steps,
        metadata: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{format_program, parse_program};
    use super::*;

    #[test]
    fn single_add() {
        let p = parse_program(r#"procedure "p" { reagents { a: sp:w 1 mol @R1 reagent } steps { add(vessel=RX1, reagent=a) } }"#)
            .unwrap();
        let h = classify_steps(&p);
        assert_eq!(h.cumulative, vec![1]);
        assert_eq!(h.per_reaction_step[0].add_matter, 1);
        assert_eq!(h.total, 1);
    }

    #[test]
    fn every_kind_has_one_category() {
        for k in OpKind::ALL {
            assert_ne!(StepCategory::of(k), StepCategory::Composite);
        }
    }

    #[test]
    fn synthetic_is_linear() {
        for t in [1usize, 7, 15] {
            let h = classify_steps(&synthetic_program(10, t));
            let want: Vec<usize> = (1..=10).map(|k| k * t).collect();
            assert_eq!(h.cumulative, want);
        }
    }

    #[test]
    fn synthetic_round_trips() {
        let p = synthetic_program(3, 8);
        assert_eq!(parse_program(&format_program(&p)).unwrap(), p);
    }
}
