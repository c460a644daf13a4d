//! Lowering onto hardware: graphs, vessel allocation, routing, cleaning
//! and execution of compiled plans on a node-level tape.

mod compile;
mod execute;
mod graph;

pub use crate::chemlang::Finding;
pub use compile::{chempile, owner, CleanOp, CompiledPlan, FeasibilityReport, PlannedTransfer, GENERIC_OPS};
pub use execute::{
    compiled_machine, core_sequence, equivalent, execute_plan, execute_plan_with, first_divergence, halt_kind, lower,
    WASH_CELL, WASH_SPECIES,
};
pub use graph::{
    build_default_graph, Edge, GraphError, GraphViolation, HardwareGraph, HardwareNode, NodeKind, RouteError, SensorKind,
};
