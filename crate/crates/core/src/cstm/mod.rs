//! The vessel-tape machine.
//!
//! Unit operations expand to the four primitives; the machine executes
//! them against a tape of vessel cells, consulting the rule database after
//! every energy primitive, and halts in one of `q_out`, `q_uout`, `q_nout`
//! or `q_fail`. Every run carries a per-species mass ledger.

mod ledger;
mod machine;
mod primitive;
mod run;
mod trace;

pub use ledger::{ledger_from_parts, mass_ledger, LedgerReport};
pub use machine::{
    init_machine, CellRole, Discovery, CellState, Controller, Hooks, InstrOp, Instruction, MachineError, MachineState, NoHooks,
    RoutedMove, StepResult, VesselCell, DEFAULT_BUDGET,
};
pub use primitive::{
    cond_cell, expand_unit_op, primitive_sequence, species_props, to_mol, AmountSpec, ExpandError, PrimKind, Primitive,
    Selection, TargetedPrimitive, DEFAULT_MOLAR_MASS, DEFAULT_MOLAR_VOLUME_ML, LINE,
};
pub use run::{drive, expand_program, finish_trace, run, run_with, RunOptions};
pub use trace::{
    stringify_floats, CellSnapshot, ExecutionTrace, HaltKind, HaltState, HeadMove, NamedCell, ReactionEvent, StepRecord,
    Tag, TraceRecord,
};
