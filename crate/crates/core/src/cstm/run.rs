use super::ledger::ledger_from_parts;
use super::machine::{init_machine, Hooks, InstrOp, Instruction, MachineState, NoHooks, DEFAULT_BUDGET};
use super::primitive::{expand_unit_op, ExpandError};
use super::trace::{ExecutionTrace, HaltKind, HaltState, NamedCell, Tag, TraceRecord};
use crate::chemlang::ChemProgram;
use crate::rules::{Explorer, RuleDatabase};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub budget: u64,
    /// Latent rules sampled when a reaction step matches nothing.
    pub explore: Option<RuleDatabase>,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            budget: DEFAULT_BUDGET,
            explore: None,
            seed: 0,
        }
    }
}

/// Abstract machine code for a whole program.
pub fn expand_program(prog: &ChemProgram, db: Option<&RuleDatabase>) -> Result<Vec<Instruction>, ExpandError> {
    let mut out = Vec::new();
    for (i, op) in prog.steps.iter().enumerate() {
        for tp in expand_unit_op(op, i, prog, db)? {
            out.push(Instruction {
                cell: tp.vessel.clone(),
                label: tp.vessel,
                op: InstrOp::Prim(tp.primitive),
                tag: Tag::Core,
                op_index: Some(i),
                expects_reaction: tp.expects_reaction,
            });
        }
    }
    Ok(out)
}

/// Step a loaded machine until it halts.
pub fn drive(m: &mut MachineState, db: &RuleDatabase, hooks: &mut dyn Hooks) -> (Vec<TraceRecord>, HaltState) {
    let mut records = Vec::new();
    loop {
        let r = m.step_with(db, hooks);
        records.extend(r.records);
        if let Some(h) = r.halt {
            return (records, h);
        }
    }
}

/// Assemble a trace, computing its ledger.
pub fn finish_trace(initial: Vec<NamedCell>, records: Vec<TraceRecord>, m: &MachineState, mut halt: HaltState) -> ExecutionTrace {
    let final_tape: Vec<NamedCell> = m.tape.iter().map(NamedCell::from).collect();
    let ledger = ledger_from_parts(&initial, &records, &final_tape);
    halt.trace_ref = format!("steps:{}", m.step_count);
    ExecutionTrace {
        initial,
        records,
        final_tape,
        halt,
        ledger,
        discovered: m.discovered.clone(),
    }
}

fn failed(reason: String) -> ExecutionTrace {
    let records = Vec::new();
    ExecutionTrace {
        initial: Vec::new(),
        ledger: ledger_from_parts(&[], &records, &[]),
        records,
        final_tape: Vec::new(),
        halt: HaltState {
            kind: HaltKind::Fail,
            trace_ref: "steps:0".into(),
            reason: Some(reason),
        },
        discovered: Vec::new(),
    }
}

pub fn run(prog: &ChemProgram, db: &RuleDatabase, budget: u64) -> ExecutionTrace {
    run_with(
        prog,
        db,
        &RunOptions {
            budget,
            ..RunOptions::default()
        },
    )
}

/// Expand, load and drive a program to a halt. Setup problems become a
/// `q_fail` trace.
pub fn run_with(prog: &ChemProgram, db: &RuleDatabase, opts: &RunOptions) -> ExecutionTrace {
    let mut m = match init_machine(prog, Some(db), opts.budget) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    let code = match expand_program(prog, Some(db)) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    m.load(code);
    let initial: Vec<NamedCell> = m.tape.iter().map(NamedCell::from).collect();
    let (records, halt) = match &opts.explore {
        Some(pool) => drive(&mut m, db, &mut Explorer::new(pool, opts.seed)),
        None => drive(&mut m, db, &mut NoHooks),
    };
    finish_trace(initial, records, &m, halt)
}
