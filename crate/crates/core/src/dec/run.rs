use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    classify_severity, corrective_action, detect_deviation, relative_gap, sample_sensor, Action, CorrectionPolicy,
    Spent, MAX_INTERVENTIONS,
};
use crate::chemlang::ChemProgram;
use crate::chempiler::{chempile, compiled_machine, lower, CompiledPlan, FeasibilityReport, HardwareGraph};
use crate::cstm::{
    finish_trace, to_mol, AmountSpec, Controller, ExecutionTrace, HaltKind, HaltState, HeadMove, Hooks,
    MachineState, NamedCell, NoHooks, Primitive, ReactionEvent, Selection, StepRecord, Tag, TraceRecord, VesselCell,
};
use crate::par::Exec;
use crate::rules::{RuleDatabase, TransitionRule};
use crate::stats::sign_test_p;
use crate::Multiset;

const STREAM_INJECT: u64 = 0;
const STREAM_SENSOR: u64 = 1;
/// Share of the missing extent a tune recovers.
const TUNE_RECOVERY: f64 = 0.75;
/// Share of the missing extent a redose with extended time recovers.
const REDOSE_RECOVERY: f64 = 0.8;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub enum InjectorMode {
    None,
    /// Each firing fails with probability `eps`; a failure loses a
    /// uniform share of the declared yield.
    Bernoulli { eps: f64 },
    /// Gap to apply on the first firing of the given op.
    Scripted(BTreeMap<usize, f64>),
}

/// Yield degradation applied through the machine's firing hook.
pub struct Injector {
    mode: InjectorMode,
    rng: ChaCha8Rng,
    /// Op whose instruction is executing.
    pub current_op: Option<usize>,
    used: BTreeSet<usize>,
}

impl Injector {
    pub fn new(mode: InjectorMode, seed: u64) -> Self {
        Injector {
            mode,
            rng: stream(seed, STREAM_INJECT),
            current_op: None,
            used: BTreeSet::new(),
        }
    }
}

impl Hooks for Injector {
    fn realized_yield(&mut self, rule: &TransitionRule, _cell: &VesselCell) -> f64 {
        let y = rule.yield_fraction;
        match &self.mode {
            InjectorMode::None => y,
            InjectorMode::Bernoulli { eps } => {
                let u: f64 = self.rng.random();
                if u < *eps {
                    let g: f64 = self.rng.random();
                    y * (1.0 - g)
                } else {
                    y
                }
            }
            InjectorMode::Scripted(gaps) => match self.current_op.and_then(|op| gaps.get(&op).map(|g| (op, *g))) {
                Some((op, g)) if self.used.insert(op) => y * (1.0 - g),
                _ => y,
            },
        }
    }
}

/// Restore `m` to a checkpoint. Cells whose contents changed since the
/// checkpoint are emptied to waste and refilled with their checkpoint
/// contents; the waste cell and the step counter carry over.
pub fn restore_checkpoint(m: &mut MachineState, ckpt: &MachineState) -> (Multiset, Multiset) {
    let mut discarded = Multiset::new();
    let mut resupplied = Multiset::new();
    let waste = m.waste_cell.clone();
    for c in m.tape.iter().filter(|c| c.name != waste) {
        let old = ckpt.cell(&c.name);
        if old.is_some_and(|o| o.contents == c.contents) {
            continue;
        }
        for (s, a) in &c.contents {
            *discarded.entry(s.clone()).or_insert(0.0) += a;
        }
        for (s, a) in old.map(|o| &o.contents).into_iter().flatten() {
            *resupplied.entry(s.clone()).or_insert(0.0) += a;
        }
    }
    let mut next = ckpt.clone();
    next.step_count = m.step_count;
    if let (Some(i), Some(w)) = (next.index_of(&waste), m.cell(&waste)) {
        let idx = next.tape[i].index;
        next.tape[i] = w.clone();
        next.tape[i].index = idx;
    }
    for (s, a) in &discarded {
        next.charge(&waste, s, *a);
    }
    *m = next;
    (discarded, resupplied)
}

struct Loop<'a> {
    plan: &'a CompiledPlan,
    db: &'a RuleDatabase,
    policy: &'a CorrectionPolicy,
    sensor_rng: ChaCha8Rng,
    records: Vec<TraceRecord>,
}

enum Verdict {
    Pass,
    Reverted,
    Fail(String),
}

impl Loop<'_> {
    fn rule(&self, m: &MachineState, id: &str) -> TransitionRule {
        self.db
            .rule(id)
            .or_else(|| m.discovered.iter().find(|r| r.id == id))
            .cloned()
            .expect("fired rule is known")
    }

    /// One extra firing of `rule` at the head, booked as a correction.
    fn correct(
        &mut self,
        m: &mut MachineState,
        rule: &TransitionRule,
        at: &StepRecord,
        total: &mut ReactionEvent,
        share: f64,
    ) -> Result<(), String> {
        if m.step_count >= m.budget {
            return Err("step budget exhausted during correction".into());
        }
        let h = m.head;
        let left = rule
            .reagents
            .iter()
            .map(|t| m.tape[h].contents.get(&t.species).copied().unwrap_or(0.0) / t.coefficient)
            .fold(f64::INFINITY, f64::min);
        let missing = (total.declared_yield * total.max_extent - total.extent).max(0.0);
        let x = (share * missing).min(left);
        let before = m.tape[h].snapshot();
        m.step_count += 1;
        let ev = m.fire(self.db, rule, total.max_extent, total.realized_yield, x);
        total.extent += ev.extent;
        self.records.push(TraceRecord::Step(StepRecord {
            step: m.step_count,
            tag: Tag::Correction,
            op_index: at.op_index,
            vessel: at.vessel.clone(),
            cell: at.cell.clone(),
            primitive: None,
            reaction: Some(ev),
            head_move: HeadMove::N,
            before,
            after: m.tape[h].snapshot(),
        }));
        Ok(())
    }

    /// Top up the first reagent of `rule` from its stock, if any is left.
    fn redose(&mut self, m: &mut MachineState, rule: &TransitionRule, at: &StepRecord, fraction: f64) -> Result<f64, String> {
        let Some(decl) = rule
            .reagents
            .iter()
            .find_map(|t| self.plan.program.reagents.iter().find(|r| r.species == t.species))
        else {
            return Ok(0.0);
        };
        let src = self.plan.allocations[&decl.source_vessel].clone();
        let have = m.cell(&src).and_then(|c| c.contents.get(&decl.species).copied()).unwrap_or(0.0);
        let dose = (fraction * to_mol(Some(self.db), &decl.species, decl.amount)).min(have);
        if dose <= 0.0 {
            return Ok(0.0);
        }
        if m.step_count >= m.budget {
            return Err("step budget exhausted during redose".into());
        }
        let h = m.head;
        let prim = Primitive::AM {
            source: src,
            species: Selection::Species(vec![decl.species.clone()]),
            amount: AmountSpec::Mol(dose),
        };
        let before = m.tape[h].snapshot();
        m.step_count += 1;
        m.apply_primitive(&prim, self.db, &mut NoHooks, false).map_err(|e| e.to_string())?;
        self.records.push(TraceRecord::Step(StepRecord {
            step: m.step_count,
            tag: Tag::Correction,
            op_index: at.op_index,
            vessel: at.vessel.clone(),
            cell: at.cell.clone(),
            primitive: Some(prim),
            reaction: None,
            head_move: HeadMove::N,
            before,
            after: m.tape[h].snapshot(),
        }));
        Ok(dose)
    }

    /// Sense, classify and correct one firing until it is within
    /// tolerance, reverted, or beyond saving.
    fn validate(
        &mut self,
        m: &mut MachineState,
        at: &StepRecord,
        ev: &ReactionEvent,
        spent: &mut Spent,
        ckpt: &(usize, MachineState),
    ) -> Verdict {
        let op = at.op_index.unwrap_or(0);
        if !self.policy.enabled {
            let gap = relative_gap(ev.extent / ev.max_extent.max(crate::TINY), ev.declared_yield);
            return if gap >= self.policy.minor {
                Verdict::Fail(format!("uncorrected deviation {gap:.4} at op {op}"))
            } else {
                Verdict::Pass
            };
        }
        let rule = self.rule(m, &ev.rule_id);
        let sensor = self.policy.sensor();
        let mut total = ev.clone();
        let duration = rule.window_mid().1;
        for _ in 0..MAX_INTERVENTIONS {
            let h = m.head;
            let obs = sample_sensor(&m.tape[h].snapshot(), Some(&total), &sensor, &mut self.sensor_rng)
                .expect("yield is defined after a firing");
            self.records.push(TraceRecord::Sensing {
                step: m.step_count,
                op_index: op,
                vessel: at.vessel.clone(),
                sensor: "photon".into(),
                observed: obs,
                expected: total.declared_yield,
            });
            let Some(dev) = detect_deviation(obs, total.declared_yield, self.policy, m.step_count) else {
                return Verdict::Pass;
            };
            let sev = classify_severity(&dev, self.policy);
            self.records.push(TraceRecord::Deviation {
                step: m.step_count,
                op_index: op,
                observed: dev.observed,
                expected: dev.expected,
                relative_gap: dev.relative_gap,
                severity: sev.name().into(),
            });
            let action = corrective_action(sev, self.policy, *spent, duration);
            let record = |m: &MachineState, dt: f64, dtime: f64, dose: f64, records: &mut Vec<TraceRecord>| {
                records.push(TraceRecord::Action {
                    step: m.step_count,
                    op_index: op,
                    action: action.name().into(),
                    delta_temp: dt,
                    delta_time: dtime,
                    dose_mol: dose,
                })
            };
            match action {
                Action::Tune { delta_temp, delta_time } => {
                    record(m, delta_temp, delta_time, 0.0, &mut self.records);
                    if let Err(e) = self.correct(m, &rule, at, &mut total, TUNE_RECOVERY) {
                        return Verdict::Fail(e);
                    }
                }
                Action::RedoseExtend { fraction, delta_time } => {
                    spent.redoses += 1;
                    let dose = match self.redose(m, &rule, at, fraction) {
                        Ok(d) => d,
                        Err(e) => return Verdict::Fail(e),
                    };
                    record(m, 0.0, delta_time, dose, &mut self.records);
                    if let Err(e) = self.correct(m, &rule, at, &mut total, REDOSE_RECOVERY) {
                        return Verdict::Fail(e);
                    }
                }
                Action::Revert => {
                    spent.reverts += 1;
                    record(m, 0.0, 0.0, 0.0, &mut self.records);
                    let (discarded, resupplied) = restore_checkpoint(m, &ckpt.1);
                    self.records.push(TraceRecord::Revert {
                        step: m.step_count,
                        op_index: op,
                        checkpoint: ckpt.0,
                        discarded,
                        resupplied,
                    });
                    return Verdict::Reverted;
                }
                Action::Escalate => {
                    record(m, 0.0, 0.0, 0.0, &mut self.records);
                    return Verdict::Fail(format!("correction budget spent at op {op}"));
                }
            }
        }
        Verdict::Fail(format!("deviation persists after {MAX_INTERVENTIONS} interventions at op {op}"))
    }
}

fn fail(m: &mut MachineState, reason: String) -> HaltState {
    m.controller = Controller::Halted(HaltKind::Fail);
    m.fail_reason = Some(reason.clone());
    HaltState {
        kind: HaltKind::Fail,
        trace_ref: String::new(),
        reason: Some(reason),
    }
}

/// Execute a compiled plan under the correction loop. A checkpoint is
/// taken as each op begins; a revert replays the op from it.
pub fn run_plan_with_dec(
    plan: &CompiledPlan,
    db: &RuleDatabase,
    policy: &CorrectionPolicy,
    injector: InjectorMode,
    seed: u64,
    budget: u64,
) -> ExecutionTrace {
    let mut m = compiled_machine(plan, Some(db), budget);
    m.load(lower(plan, Some(db)));
    let initial: Vec<NamedCell> = m.tape.iter().map(NamedCell::from).collect();
    let mut hooks = Injector::new(injector, seed);
    let mut lp = Loop {
        plan,
        db,
        policy,
        sensor_rng: stream(seed, STREAM_SENSOR),
        records: Vec::new(),
    };
    let mut ckpt: (usize, MachineState) = (0, m.clone());
    let mut last_op = None;
    let mut spent = Spent::default();
    let halt = 'run: loop {
        let next = m.next_op_index();
        if next.is_some() && next != last_op {
            last_op = next;
            ckpt = (ckpt.0 + 1, m.clone());
            spent = Spent::default();
            lp.records.push(TraceRecord::Checkpoint {
                step: m.step_count,
                op_index: next.unwrap_or(0),
                id: ckpt.0,
            });
        }
        hooks.current_op = next;
        let r = m.step_with(db, &mut hooks);
        let fired: Vec<(StepRecord, ReactionEvent)> = r
            .records
            .iter()
            .filter_map(|rec| rec.as_step())
            .filter_map(|s| s.reaction.clone().map(|ev| (s.clone(), ev)))
            .collect();
        lp.records.extend(r.records);
        if let Some(h) = r.halt {
            break h;
        }
        for (at, ev) in fired {
            match lp.validate(&mut m, &at, &ev, &mut spent, &ckpt) {
                Verdict::Pass => {}
                Verdict::Reverted => break,
                Verdict::Fail(reason) => break 'run fail(&mut m, reason),
            }
        }
    };
    let mut t = finish_trace(initial, lp.records, &m, halt);
    if t.halt.kind == HaltKind::Fail && t.halt.reason.is_none() {
        t.halt.reason = m.fail_reason.clone();
    }
    t
}

/// Compile `prog` onto `graph` and run it under the correction loop.
pub fn run_with_dec(
    prog: &ChemProgram,
    db: &RuleDatabase,
    graph: &HardwareGraph,
    policy: &CorrectionPolicy,
    injector: InjectorMode,
    seed: u64,
    budget: u64,
) -> Result<ExecutionTrace, FeasibilityReport> {
    let plan = chempile(prog, graph)?;
    Ok(run_plan_with_dec(&plan, db, policy, injector, seed, budget))
}

/// Intervention counts of a DEC trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct DecOutcome {
    pub halt: Option<HaltKind>,
    pub sensings: usize,
    pub deviations: usize,
    pub tunes: usize,
    pub redoses: usize,
    pub reverts: usize,
}

impl DecOutcome {
    pub fn of(t: &ExecutionTrace) -> Self {
        let mut o = DecOutcome {
            halt: Some(t.halt.kind),
            ..Default::default()
        };
        for r in &t.records {
            match r {
                TraceRecord::Sensing { .. } => o.sensings += 1,
                TraceRecord::Deviation { .. } => o.deviations += 1,
                TraceRecord::Action { action, .. } if action == "tune" => o.tunes += 1,
                TraceRecord::Action { action, .. } if action == "redose_extend" => o.redoses += 1,
                TraceRecord::Revert { .. } => o.reverts += 1,
                _ => {}
            }
        }
        o
    }
}

/// Paired runs with and without correction over the same injected errors.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PairedComparison {
    pub eps: f64,
    pub seeds: usize,
    pub out_with: usize,
    pub out_without: usize,
    /// Pairs where only the corrected run reached `q_out`.
    pub only_with: usize,
    pub only_without: usize,
    /// One-sided sign test on discordant pairs.
    pub p_value: f64,
}

impl PairedComparison {
    pub fn rate_with(&self) -> f64 {
        self.out_with as f64 / self.seeds as f64
    }

    pub fn rate_without(&self) -> f64 {
        self.out_without as f64 / self.seeds as f64
    }
}

pub fn compare_paired(
    plan: &CompiledPlan,
    db: &RuleDatabase,
    policy: &CorrectionPolicy,
    eps: f64,
    seeds: usize,
    base_seed: u64,
    budget: u64,
    exec: Exec,
) -> PairedComparison {
    let off = CorrectionPolicy {
        enabled: false,
        ..policy.clone()
    };
    let on = CorrectionPolicy {
        enabled: true,
        ..policy.clone()
    };
    let pairs = exec.map(seeds, |i| {
        let seed = base_seed.wrapping_add(i as u64);
        let run = |p: &CorrectionPolicy| {
            run_plan_with_dec(plan, db, p, InjectorMode::Bernoulli { eps }, seed, budget).halt.kind == HaltKind::Out
        };
        (run(&on), run(&off))
    });
    let only_with = pairs.iter().filter(|p| p.0 && !p.1).count();
    let only_without = pairs.iter().filter(|p| !p.0 && p.1).count();
    PairedComparison {
        eps,
        seeds,
        out_with: pairs.iter().filter(|p| p.0).count(),
        out_without: pairs.iter().filter(|p| p.1).count(),
        only_with,
        only_without,
        p_value: sign_test_p(only_with as u64, (only_with + only_without) as u64),
    }
}
