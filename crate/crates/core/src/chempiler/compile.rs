use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::graph::{HardwareGraph, NodeKind};
use crate::chemlang::{ChemProgram, Finding, OpKind};
use crate::cstm::{expand_program, to_mol, AmountSpec, InstrOp, Primitive, Selection, DEFAULT_MOLAR_VOLUME_ML, LINE};

/// Operations any matter-holding node can host.
pub const GENERIC_OPS: [OpKind; 3] = [OpKind::Add, OpKind::Transfer, OpKind::Clean];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedTransfer {
    pub op_index: usize,
    pub src: String,
    pub dst: String,
    pub route: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pump: Option<String>,
}

/// Clean inserted before `before_op` because `node` changes vessel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanOp {
    pub before_op: usize,
    pub node: String,
    pub previous: String,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompiledPlan {
    pub pathway_ref: String,
    #[serde(skip)]
    pub program: ChemProgram,
    #[serde(skip)]
    pub graph: HardwareGraph,
    /// Program vessel to graph node.
    pub allocations: BTreeMap<String, String>,
    /// Op index to the node hosting it.
    pub step_nodes: BTreeMap<usize, String>,
    pub transfers: Vec<PlannedTransfer>,
    pub cleaning: Vec<CleanOp>,
    /// Nodes used per vessel class: reagent, process, output.
    pub vessel_classes: BTreeMap<String, usize>,
}

impl CompiledPlan {
    pub fn node_of(&self, vessel: &str) -> &str {
        match vessel.split_once(':') {
            Some((owner, _)) => &self.allocations[owner],
            None => &self.allocations[vessel],
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("infeasible: {findings:?}")]
pub struct FeasibilityReport {
    pub findings: Vec<Finding>,
    pub ok: bool,
}

/// Vessel owning a cell name: `X:cond` belongs to `X`.
pub fn owner(cell: &str) -> &str {
    cell.split_once(':').map(|(o, _)| o).unwrap_or(cell)
}

fn class_of(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::ReagentFlask => "reagent",
        NodeKind::Storage | NodeKind::Waste | NodeKind::Product => "output",
        _ => "process",
    }
}

fn kind_name(kind: NodeKind) -> String {
    format!("{kind:?}")
}

struct Usage {
    first: usize,
    last: usize,
}

/// Lower a program onto a hardware graph: allocate every vessel to a
/// node, route every matter move, and schedule cleans on node reuse.
pub fn chempile(prog: &ChemProgram, graph: &HardwareGraph) -> Result<CompiledPlan, FeasibilityReport> {
    let mut findings: Vec<Finding> = Vec::new();
    let code = match expand_program(prog, None) {
        Ok(c) => c,
        Err(_) => {
            return Err(FeasibilityReport {
                findings: vec![],
                ok: false,
            })
        }
    };
    let n_ops = prog.steps.len();

    // Liveness per vessel over op indices.
    let mut usage: BTreeMap<String, Usage> = BTreeMap::new();
    let mut touch = |v: &str, i: usize| {
        if v == LINE {
            return;
        }
        let v = owner(v).to_string();
        let u = usage.entry(v).or_insert(Usage { first: i, last: i });
        u.first = u.first.min(i);
        u.last = u.last.max(i);
    };
    for ins in &code {
        let i = ins.op_index.unwrap_or(0);
        touch(&ins.cell, i);
        if let InstrOp::Prim(p) = &ins.op {
            match p {
                Primitive::AM { source, .. } => touch(source, i),
                Primitive::SM { destination, .. } => touch(destination, i),
                _ => {}
            }
        }
    }
    let sources: BTreeSet<&str> = prog.reagents.iter().map(|r| r.source_vessel.as_str()).collect();
    for s in &sources {
        usage.insert(s.to_string(), Usage { first: 0, last: n_ops });
    }
    usage.entry("waste".into()).or_insert(Usage { first: 0, last: n_ops });

    // Capabilities each vessel must offer, with the first op needing each.
    let mut hosted: BTreeMap<&str, BTreeMap<OpKind, usize>> = BTreeMap::new();
    for (i, op) in prog.steps.iter().enumerate() {
        if GENERIC_OPS.contains(&op.kind) {
            continue;
        }
        if let Some(v) = op.ident("vessel") {
            hosted.entry(v).or_default().entry(op.kind).or_insert(i);
        }
    }

    let mut order: Vec<(&String, &Usage)> = usage.iter().collect();
    order.sort_by(|a, b| (a.1.first, a.0).cmp(&(b.1.first, b.0)));

    let mut busy: BTreeMap<String, Vec<(usize, usize, String)>> = BTreeMap::new();
    let mut allocations: BTreeMap<String, String> = BTreeMap::new();
    let mut cleaning = Vec::new();
    let free = |busy: &BTreeMap<String, Vec<(usize, usize, String)>>, node: &str, u: &Usage| {
        busy.get(node)
            .is_none_or(|iv| iv.iter().all(|(a, b, _)| *b < u.first || u.last < *a))
    };
    for (v, u) in order {
        let fixed_kind = match v.as_str() {
            "waste" => Some(NodeKind::Waste),
            "product" => Some(NodeKind::Product),
            _ => None,
        };
        if let Some(k) = fixed_kind {
            match graph.nodes_of(k).next() {
                Some(n) => {
                    allocations.insert(v.clone(), n.id.clone());
                }
                None => findings.push(Finding::VesselClassExhausted {
                    vessel: v.clone(),
                    class: kind_name(k),
                }),
            }
            continue;
        }
        let candidates: Vec<&super::graph::HardwareNode> = if sources.contains(v.as_str()) {
            graph.nodes_of(NodeKind::ReagentFlask).collect()
        } else {
            let caps = hosted.get(v.as_str()).cloned().unwrap_or_default();
            let mut missing = false;
            for (kind, step) in &caps {
                if !graph.nodes.values().any(|n| n.capabilities.contains(kind)) {
                    findings.push(Finding::MissingCapability {
                        step: *step,
                        op: kind.keyword().into(),
                        vessel: v.clone(),
                    });
                    missing = true;
                }
            }
            if missing {
                continue;
            }
            let mut c: Vec<_> = graph
                .nodes
                .values()
                .filter(|n| {
                    n.kind.holds_matter()
                        && !matches!(
                            n.kind,
                            NodeKind::ReagentFlask | NodeKind::Waste | NodeKind::Product | NodeKind::Pump
                        )
                        && caps.keys().all(|k| n.capabilities.contains(k))
                })
                .collect();
            c.sort_by(|a, b| (a.capabilities.len(), &a.id).cmp(&(b.capabilities.len(), &b.id)));
            c
        };
        let pick = candidates
            .iter()
            .find(|n| n.id == *v && free(&busy, &n.id, u))
            .or_else(|| candidates.iter().find(|n| free(&busy, &n.id, u)));
        match pick {
            Some(n) => {
                if let Some(prev) = busy.get(&n.id).and_then(|iv| iv.iter().max_by_key(|x| x.1)) {
                    cleaning.push(CleanOp {
                        before_op: u.first,
                        node: n.id.clone(),
                        previous: prev.2.clone(),
                        next: v.clone(),
                    });
                }
                busy.entry(n.id.clone()).or_default().push((u.first, u.last, v.clone()));
                allocations.insert(v.clone(), n.id.clone());
            }
            None => findings.push(Finding::VesselClassExhausted {
                vessel: v.clone(),
                class: candidates
                    .first()
                    .map(|n| kind_name(n.kind))
                    .unwrap_or_else(|| "Storage".into()),
            }),
        }
    }
    if !findings.is_empty() {
        return Err(FeasibilityReport { findings, ok: false });
    }

    // Routes for every move between distinct nodes.
    let mut transfers = Vec::new();
    let mut seen_noroute = BTreeSet::new();
    let mut add_route = |op_index: usize, a: &str, b: &str, findings: &mut Vec<Finding>| {
        let (na, nb) = (&allocations[owner(a)], &allocations[owner(b)]);
        if na == nb {
            return;
        }
        match graph.route(na, nb) {
            Ok(route) => {
                let pump = graph.route_pump(&route).map(|p| p.0);
                transfers.push(PlannedTransfer {
                    op_index,
                    src: na.clone(),
                    dst: nb.clone(),
                    route,
                    pump,
                });
            }
            Err(_) => {
                if seen_noroute.insert((na.clone(), nb.clone())) {
                    findings.push(Finding::NoRoute {
                        from: na.clone(),
                        to: nb.clone(),
                    });
                }
            }
        }
    };
    let mut k = 0;
    while k < code.len() {
        let ins = &code[k];
        let i = ins.op_index.unwrap_or(0);
        if let InstrOp::Prim(p) = &ins.op {
            match p {
                Primitive::SM { destination, .. } if destination == LINE => {
                    let to = code.get(k + 1).map(|n| n.cell.as_str()).unwrap_or(LINE);
                    add_route(i, &ins.cell, to, &mut findings);
                    k += 1;
                }
                Primitive::SM { destination, .. } => add_route(i, &ins.cell, destination, &mut findings),
                Primitive::AM { source, .. } => add_route(i, source, &ins.cell, &mut findings),
                _ => {}
            }
        }
        k += 1;
    }
    for c in &cleaning {
        add_route(c.before_op, &c.next, "waste", &mut findings);
    }

    // Static volume bound per vessel, mapped onto node capacities.
    let mut ub: BTreeMap<String, f64> = BTreeMap::new();
    let mut peak: BTreeMap<String, f64> = BTreeMap::new();
    for r in &prog.reagents {
        *ub.entry(r.source_vessel.clone()).or_insert(0.0) += to_mol(None, &r.species, r.amount) * DEFAULT_MOLAR_VOLUME_ML;
    }
    for ins in &code {
        let InstrOp::Prim(p) = &ins.op else { continue };
        let (from, to, amount, all_sel) = match p {
            Primitive::AM { source, amount, species } => {
                (source.clone(), ins.cell.clone(), *amount, *species == Selection::All)
            }
            Primitive::SM {
                destination,
                amount,
                species,
            } => (ins.cell.clone(), destination.clone(), *amount, *species == Selection::All),
            _ => continue,
        };
        let have = ub.get(&from).copied().unwrap_or(0.0);
        let moved = match amount {
            AmountSpec::All => have,
            AmountSpec::Fraction(f) => have * f.min(1.0),
            AmountSpec::Mol(x) => x * DEFAULT_MOLAR_VOLUME_ML,
        };
        if matches!(amount, AmountSpec::All) && all_sel {
            ub.insert(from.clone(), 0.0);
        }
        let t = ub.entry(to.clone()).or_insert(0.0);
        *t += moved;
        let t = *t;
        let p = peak.entry(to).or_insert(0.0);
        *p = p.max(t);
    }
    for (v, vol) in &peak {
        if *v == LINE || v.contains(':') {
            continue;
        }
        let Some(node) = allocations.get(v) else { continue };
        if let Some(cap) = graph.nodes[node].capacity_ml {
            if *vol > cap * (1.0 + 1e-9) {
                findings.push(Finding::CapacityExceeded {
                    node: node.clone(),
                    needed_ml: *vol,
                    capacity_ml: cap,
                });
            }
        }
    }
    if !findings.is_empty() {
        return Err(FeasibilityReport { findings, ok: false });
    }

    let mut step_nodes = BTreeMap::new();
    for (i, op) in prog.steps.iter().enumerate() {
        if let Some(v) = op.ident("vessel").or_else(|| op.ident("from")) {
            if let Some(n) = allocations.get(v) {
                step_nodes.insert(i, n.clone());
            }
        }
    }
    let mut vessel_classes: BTreeMap<String, usize> = BTreeMap::new();
    let used: BTreeSet<&String> = allocations.values().collect();
    for n in used {
        *vessel_classes.entry(class_of(graph.nodes[n].kind).into()).or_insert(0) += 1;
    }
    Ok(CompiledPlan {
        pathway_ref: prog.name.clone(),
        program: prog.clone(),
        graph: graph.clone(),
        allocations,
        step_nodes,
        transfers,
        cleaning,
        vessel_classes,
    })
}
