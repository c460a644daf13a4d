use super::compile::CompiledPlan;
use super::graph::NodeKind;
use crate::cstm::{
    drive, expand_program, finish_trace, to_mol, AmountSpec, CellRole, ExecutionTrace, HaltKind, Hooks, InstrOp,
    Instruction, MachineState, NamedCell, NoHooks, Primitive, RoutedMove, Selection, Tag, LINE,
};
use crate::rules::RuleDatabase;
use crate::Multiset;

/// Synthetic reservoir feeding inserted cleans.
pub const WASH_CELL: &str = "wash";
pub const WASH_SPECIES: &str = "wash_solvent";
pub const WASH_STOCK_MOL: f64 = 1000.0;
pub const WASH_CHARGE_MOL: f64 = 1.0;

/// Tape cell for a program vessel: its node, keeping any `:cond` suffix.
fn cell_for(plan: &CompiledPlan, vessel: &str) -> String {
    match vessel.split_once(':') {
        Some((o, suffix)) => format!("{}:{suffix}", plan.allocations[o]),
        None => plan.allocations[vessel].clone(),
    }
}

fn routed(
    plan: &CompiledPlan,
    src: &str,
    dst: &str,
    species: Selection,
    amount: AmountSpec,
    core: (bool, bool),
) -> RoutedMove {
    let (na, nb) = (plan.node_of(src).to_string(), plan.node_of(dst).to_string());
    let route = plan.graph.route(&na, &nb).expect("route checked by chempile");
    let pump = plan.graph.route_pump(&route);
    RoutedMove {
        src_cell: cell_for(plan, src),
        src_label: src.to_string(),
        dst_cell: cell_for(plan, dst),
        dst_label: dst.to_string(),
        species,
        amount,
        via: pump.as_ref().map(|p| p.0.clone()).unwrap_or_else(|| LINE.to_string()),
        stroke_ml: pump.map(|p| p.1),
        route,
        core_src: core.0,
        core_dst: core.1,
    }
}

fn clean_code(plan: &CompiledPlan, node: &str, vessel: &str, op_index: usize) -> Vec<Instruction> {
    let am = Instruction {
        cell: node.to_string(),
        label: vessel.to_string(),
        op: InstrOp::Prim(Primitive::AM {
            source: WASH_CELL.into(),
            species: Selection::Species(vec![WASH_SPECIES.into()]),
            amount: AmountSpec::Mol(WASH_CHARGE_MOL),
        }),
        tag: Tag::Clean,
        op_index: Some(op_index),
        expects_reaction: false,
    };
    let m = routed(plan, vessel, "waste", Selection::All, AmountSpec::All, (false, false));
    let sm = Instruction {
        cell: m.src_cell.clone(),
        label: vessel.to_string(),
        op: InstrOp::Routed(m),
        tag: Tag::Clean,
        op_index: Some(op_index),
        expects_reaction: false,
    };
    vec![am, sm]
}

/// Machine code for a compiled plan. Abstract primitives keep their
/// vessel names as labels; matter moves between nodes become routed pump
/// strokes, and cleans are inserted ahead of node reuse.
pub fn lower(plan: &CompiledPlan, db: Option<&RuleDatabase>) -> Vec<Instruction> {
    let code = expand_program(&plan.program, db).expect("program expanded by chempile");
    let mut out = Vec::new();
    let mut k = 0;
    let mut cleaned = 0;
    while k < code.len() {
        let ins = &code[k];
        let i = ins.op_index.unwrap_or(0);
        while cleaned < plan.cleaning.len() && plan.cleaning[cleaned].before_op <= i {
            let c = &plan.cleaning[cleaned];
            out.extend(clean_code(plan, &c.node, &c.next, c.before_op));
            cleaned += 1;
        }
        let prim = match &ins.op {
            InstrOp::Prim(p) => p,
            InstrOp::Routed(_) => unreachable!("abstract code has no routed moves"),
        };
        let same_node = |a: &str, b: &str| plan.node_of(a) == plan.node_of(b);
        let lowered = match prim {
            Primitive::SM {
                destination,
                species,
                amount,
            } if destination == LINE => {
                let next = &code[k + 1];
                k += 1;
                Some(routed(plan, &ins.cell, &next.cell, species.clone(), *amount, (true, true)))
            }
            Primitive::SM {
                destination,
                species,
                amount,
            } if !same_node(&ins.cell, destination) => {
                Some(routed(plan, &ins.cell, destination, species.clone(), *amount, (true, false)))
            }
            Primitive::AM { source, species, amount } if !same_node(source, &ins.cell) => {
                Some(routed(plan, source, &ins.cell, species.clone(), *amount, (false, true)))
            }
            _ => None,
        };
        match lowered {
            Some(m) => out.push(Instruction {
                cell: m.src_cell.clone(),
                label: ins.label.clone(),
                op: InstrOp::Routed(m),
                tag: Tag::Core,
                op_index: ins.op_index,
                expects_reaction: false,
            }),
            None => {
                let p = match prim {
                    Primitive::SM {
                        destination,
                        species,
                        amount,
                    } => Primitive::SM {
                        destination: cell_for(plan, destination),
                        species: species.clone(),
                        amount: *amount,
                    },
                    Primitive::AM { source, species, amount } => Primitive::AM {
                        source: cell_for(plan, source),
                        species: species.clone(),
                        amount: *amount,
                    },
                    other => other.clone(),
                };
                out.push(Instruction {
                    cell: cell_for(plan, &ins.cell),
                    label: ins.label.clone(),
                    op: InstrOp::Prim(p),
                    tag: ins.tag,
                    op_index: ins.op_index,
                    expects_reaction: ins.expects_reaction,
                });
            }
        }
        k += 1;
    }
    out
}

/// Machine whose tape is the graph's matter-holding nodes plus the wash
/// reservoir, stocked as the program declares.
pub fn compiled_machine(plan: &CompiledPlan, db: Option<&RuleDatabase>, budget: u64) -> MachineState {
    let mut names: Vec<String> = plan
        .graph
        .nodes
        .values()
        .filter(|n| n.kind.holds_matter())
        .map(|n| n.id.clone())
        .collect();
    names.push(WASH_CELL.into());
    let mut m = MachineState::with_cells(&names, budget).expect("node ids are unique");
    for c in m.tape.iter_mut() {
        if let Some(n) = plan.graph.nodes.get(&c.name) {
            c.role = match n.kind {
                NodeKind::Waste => CellRole::Waste,
                NodeKind::Product => CellRole::Product,
                _ => CellRole::Vessel,
            };
            c.capacity_ml = n.capacity_ml;
        }
    }
    m.waste_cell = plan.allocations["waste"].clone();
    for r in &plan.program.reagents {
        let mol = to_mol(db, &r.species, r.amount);
        m.charge(&plan.allocations[&r.source_vessel], &r.species, mol);
    }
    if !plan.cleaning.is_empty() {
        m.charge(WASH_CELL, WASH_SPECIES, WASH_STOCK_MOL);
    }
    for op in &plan.program.steps {
        m.process_alphabet.insert(op.kind.keyword().to_string());
    }
    m
}

pub fn execute_plan(plan: &CompiledPlan, db: &RuleDatabase, budget: u64) -> ExecutionTrace {
    execute_plan_with(plan, db, budget, &mut NoHooks)
}

pub fn execute_plan_with(plan: &CompiledPlan, db: &RuleDatabase, budget: u64, hooks: &mut dyn Hooks) -> ExecutionTrace {
    let mut m = compiled_machine(plan, Some(db), budget);
    m.load(lower(plan, Some(db)));
    let initial: Vec<NamedCell> = m.tape.iter().map(NamedCell::from).collect();
    let (records, halt) = drive(&mut m, db, hooks);
    finish_trace(initial, records, &m, halt)
}

/// `(vessel, contents)` for every record standing for an abstract
/// primitive, in order.
pub fn core_sequence(trace: &ExecutionTrace) -> Vec<(String, Multiset)> {
    trace
        .steps()
        .filter(|s| s.tag == Tag::Core)
        .map(|s| {
            // Wash solvent only exists in compiled runs.
            let mut c = s.after.contents.clone();
            c.remove(WASH_SPECIES);
            (s.vessel.clone(), c)
        })
        .collect()
}

fn close(a: &Multiset, b: &Multiset, rel: f64) -> bool {
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter().all(|k| {
        let (x, y) = (a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0));
        (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-300)
    })
}

/// First index where two core sequences disagree, or `None` when they
/// match vessel for vessel with contents equal to `rel` relative.
pub fn first_divergence(a: &[(String, Multiset)], b: &[(String, Multiset)], rel: f64) -> Option<usize> {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.0 != y.0 || !close(&x.1, &y.1, rel) {
            return Some(i);
        }
    }
    (a.len() != b.len()).then(|| a.len().min(b.len()))
}

/// Lowering equivalence between an abstract and a compiled trace.
pub fn equivalent(abstract_run: &ExecutionTrace, compiled_run: &ExecutionTrace) -> bool {
    abstract_run.halt.kind == compiled_run.halt.kind
        && first_divergence(&core_sequence(abstract_run), &core_sequence(compiled_run), 1e-12).is_none()
}

/// Halt kind shortcut for tests.
pub fn halt_kind(t: &ExecutionTrace) -> HaltKind {
    t.halt.kind
}

