use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::primitive::{species_props, AmountSpec, Primitive, Selection};
use super::trace::{CellSnapshot, HaltKind, HaltState, HeadMove, ReactionEvent, StepRecord, Tag, TraceRecord};
use crate::chemlang::ChemProgram;
use crate::rules::{best_match, pending_rule, ProcessPoint, RuleDatabase, RuleStatus, TransitionRule};
use crate::{Multiset, AMBIENT_C};

pub const DEFAULT_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Empty,
    Filled,
    Active,
}

/// What a cell is for; decides which ledger column holds its contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellRole {
    Vessel,
    Waste,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselCell {
    pub index: usize,
    pub name: String,
    pub role: CellRole,
    pub state: CellState,
    pub contents: Multiset,
    pub temperature: f64,
    /// Seconds held at the current temperature.
    pub time_at_temp: f64,
    /// Abstract energy units, kept as separate added/removed totals.
    pub energy_added: f64,
    pub energy_removed: f64,
    /// Untouched since instantiation.
    pub blank: bool,
    pub capacity_ml: Option<f64>,
    /// Rule already fired on the current charge of matter.
    pub fired: Option<String>,
    pub last_reaction: Option<ReactionEvent>,
}

impl VesselCell {
    pub fn blank(index: usize, name: &str) -> Self {
        let role = match name {
            "waste" => CellRole::Waste,
            "product" => CellRole::Product,
            _ => CellRole::Vessel,
        };
        VesselCell {
            index,
            name: name.to_string(),
            role,
            state: CellState::Empty,
            contents: Multiset::new(),
            temperature: AMBIENT_C,
            time_at_temp: 0.0,
            energy_added: 0.0,
            energy_removed: 0.0,
            blank: true,
            capacity_ml: None,
            fired: None,
            last_reaction: None,
        }
    }

    pub fn snapshot(&self) -> CellSnapshot {
        CellSnapshot {
            state: self.state,
            contents: self.contents.clone(),
            temperature: self.temperature,
        }
    }

    pub fn total_mol(&self) -> f64 {
        self.contents.values().sum()
    }

    fn settle(&mut self) {
        if self.contents.is_empty() {
            self.state = CellState::Empty;
            self.temperature = AMBIENT_C;
            self.time_at_temp = 0.0;
            self.fired = None;
        } else if self.state == CellState::Empty {
            self.state = CellState::Filled;
        }
    }
}

/// Controller state. `Start` is q0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Controller {
    Start,
    Running,
    Halted(HaltKind),
}

/// Matter moved through a graph route, decomposed into pump strokes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedMove {
    pub src_cell: String,
    pub src_label: String,
    pub dst_cell: String,
    pub dst_label: String,
    pub species: Selection,
    pub amount: AmountSpec,
    pub route: Vec<String>,
    /// Cell that holds matter in transit (the pump, or a line).
    pub via: String,
    pub stroke_ml: Option<f64>,
    /// Whether the final stroke's SM / AM record stands for an abstract
    /// primitive.
    pub core_src: bool,
    pub core_dst: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstrOp {
    Prim(Primitive),
    Routed(RoutedMove),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    /// Tape cell the head moves to.
    pub cell: String,
    /// Vessel name reported in records.
    pub label: String,
    pub op: InstrOp,
    pub tag: Tag,
    pub op_index: Option<usize>,
    pub expects_reaction: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MachineError {
    #[error("vessel `{0}` assigned twice")]
    DuplicateVessel(String),
    #[error("insufficient material in `{cell}`: need {need} mol, have {have} mol")]
    InsufficientMaterial { cell: String, need: f64, have: f64 },
    #[error("unknown destination `{0}`")]
    UnknownDestination(String),
    #[error("cell `{0}` still holds material")]
    CellStillFilled(String),
    #[error("`{cell}` over capacity: {volume_ml} mL > {capacity_ml} mL")]
    CapacityExceeded { cell: String, volume_ml: f64, capacity_ml: f64 },
    #[error("no rule matches contents of `{0}`")]
    NoMatch(String),
    #[error("step budget exhausted")]
    BudgetExhausted,
}

/// Per-firing hooks; the defaults reproduce declared behaviour.
pub trait Hooks {
    /// Yield actually realized for this firing.
    fn realized_yield(&mut self, rule: &TransitionRule, _cell: &VesselCell) -> f64 {
        rule.yield_fraction
    }

    /// Offered a cell that should have reacted but matched nothing. May
    /// return a novel rule and the condition point at which it fires.
    fn explore(&mut self, _contents: &Multiset) -> Option<Discovery> {
        None
    }
}

/// A rule sampled by exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub rule: TransitionRule,
    pub point: ProcessPoint,
    /// Whether the rule books a byproduct to waste.
    pub byproduct: bool,
}

/// Hooks with default behaviour.
pub struct NoHooks;

impl Hooks for NoHooks {}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineState {
    pub controller: Controller,
    pub tape: Vec<VesselCell>,
    pub head: usize,
    pub reagent_alphabet: BTreeSet<String>,
    pub process_alphabet: BTreeSet<String>,
    pub step_count: u64,
    pub budget: u64,
    pub program: Vec<Instruction>,
    pub pc: usize,
    /// Set once a program is loaded; an unloaded machine idles.
    pub loaded: bool,
    /// Rules found by exploration during this run.
    pub discovered: Vec<TransitionRule>,
    discovered_bp: BTreeSet<String>,
    /// `(rule id, status)` per firing, in order.
    pub outcomes: Vec<(String, RuleStatus)>,
    pub fail_reason: Option<String>,
    /// Cell receiving byproducts.
    pub waste_cell: String,
}

/// Instruction result: records emitted and whether the machine halted.
#[derive(Debug, Clone, Default)]
pub struct StepResult {
    pub records: Vec<TraceRecord>,
    pub halt: Option<HaltState>,
}

/// Moves resolved from a selection and amount.
fn resolve_move(
    contents: &Multiset,
    species: &Selection,
    amount: AmountSpec,
    cell: &str,
) -> Result<(Multiset, bool), MachineError> {
    let sel: Multiset = contents
        .iter()
        .filter(|(s, a)| species.admits(s) && **a > 0.0)
        .map(|(s, a)| (s.clone(), *a))
        .collect();
    let total: f64 = sel.values().sum();
    match amount {
        AmountSpec::All => Ok((sel, true)),
        AmountSpec::Fraction(f) if f >= 1.0 => Ok((sel, true)),
        AmountSpec::Fraction(f) => Ok((sel.into_iter().map(|(s, a)| (s, a * f)).collect(), false)),
        AmountSpec::Mol(x) => {
            if x > total * (1.0 + 1e-9) + 1e-15 {
                return Err(MachineError::InsufficientMaterial {
                    cell: cell.to_string(),
                    need: x,
                    have: total,
                });
            }
            if x >= total {
                return Ok((sel, true));
            }
            Ok((sel.into_iter().map(|(s, a)| (s, x * a / total)).collect(), false))
        }
    }
}

impl MachineState {
    /// Machine over an explicit list of cell names, all blank.
    pub fn with_cells(names: &[String], budget: u64) -> Result<Self, MachineError> {
        let mut m = MachineState {
            controller: Controller::Start,
            tape: Vec::new(),
            head: 0,
            reagent_alphabet: BTreeSet::new(),
            process_alphabet: BTreeSet::new(),
            step_count: 0,
            budget,
            program: Vec::new(),
            pc: 0,
            loaded: false,
            discovered: Vec::new(),
            discovered_bp: BTreeSet::new(),
            outcomes: Vec::new(),
            fail_reason: None,
            waste_cell: "waste".to_string(),
        };
        for n in names {
            if m.index_of(n).is_some() {
                return Err(MachineError::DuplicateVessel(n.clone()));
            }
            m.instantiate(n);
        }
        Ok(m)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tape.iter().position(|c| c.name == name)
    }

    pub fn cell(&self, name: &str) -> Option<&VesselCell> {
        self.tape.iter().find(|c| c.name == name)
    }

    pub fn cell_mut(&mut self, name: &str) -> Option<&mut VesselCell> {
        self.tape.iter_mut().find(|c| c.name == name)
    }

    /// Index of `name`, materializing a blank cell on first address.
    pub fn instantiate(&mut self, name: &str) -> usize {
        if let Some(i) = self.index_of(name) {
            return i;
        }
        let i = self.tape.len();
        self.tape.push(VesselCell::blank(i, name));
        i
    }

    /// Put matter into a cell outside the primitive set (initial stock).
    pub fn charge(&mut self, name: &str, species: &str, mol: f64) {
        let i = self.instantiate(name);
        let c = &mut self.tape[i];
        *c.contents.entry(species.to_string()).or_insert(0.0) += mol;
        c.blank = false;
        c.settle();
        self.reagent_alphabet.insert(species.to_string());
    }

    pub fn load(&mut self, program: Vec<Instruction>) {
        self.program = program;
        self.pc = 0;
        self.loaded = true;
    }

    pub fn is_halted(&self) -> bool {
        matches!(self.controller, Controller::Halted(_))
    }

    /// Sum of contents over cells with the given role.
    pub fn holdings(&self, role: CellRole) -> Multiset {
        let mut out = Multiset::new();
        for c in self.tape.iter().filter(|c| c.role == role) {
            for (s, a) in &c.contents {
                *out.entry(s.clone()).or_insert(0.0) += a;
            }
        }
        out
    }

    pub fn waste(&self) -> Multiset {
        self.holdings(CellRole::Waste)
    }

    pub fn product(&self) -> Multiset {
        self.holdings(CellRole::Product)
    }

    fn volume_ml(&self, db: &RuleDatabase, contents: &Multiset) -> f64 {
        contents.iter().map(|(s, a)| a * species_props(Some(db), s).1).sum()
    }

    fn check_capacity(&self, db: &RuleDatabase, i: usize) -> Result<(), MachineError> {
        let c = &self.tape[i];
        if let Some(cap) = c.capacity_ml {
            let v = self.volume_ml(db, &c.contents);
            if v > cap * (1.0 + 1e-9) {
                return Err(MachineError::CapacityExceeded {
                    cell: c.name.clone(),
                    volume_ml: v,
                    capacity_ml: cap,
                });
            }
        }
        Ok(())
    }

    fn transfer(&mut self, from: usize, to: usize, moves: &Multiset, all: bool) {
        for (s, a) in moves {
            let src = &mut self.tape[from].contents;
            let left = src.get(s).copied().unwrap_or(0.0) - a;
            if all || left <= 0.0 {
                src.remove(s);
            } else {
                src.insert(s.clone(), left);
            }
            *self.tape[to].contents.entry(s.clone()).or_insert(0.0) += a;
        }
        self.tape[to].blank = false;
        self.tape[from].settle();
        self.tape[to].settle();
    }

    /// Reset an offloaded cell so it can be reused.
    pub fn instantiate_cell(&mut self, name: &str) -> Result<(), MachineError> {
        let i = self.index_of(name).ok_or_else(|| MachineError::UnknownDestination(name.into()))?;
        if !self.tape[i].contents.is_empty() {
            return Err(MachineError::CellStillFilled(name.into()));
        }
        let mut fresh = VesselCell::blank(i, name);
        fresh.role = self.tape[i].role;
        fresh.capacity_ml = self.tape[i].capacity_ml;
        self.tape[i] = fresh;
        Ok(())
    }

    /// Apply one primitive at the head cell.
    pub fn apply_primitive(
        &mut self,
        prim: &Primitive,
        db: &RuleDatabase,
        hooks: &mut dyn Hooks,
        expects_reaction: bool,
    ) -> Result<Option<ReactionEvent>, MachineError> {
        let h = self.head;
        match prim {
            Primitive::AM { source, species, amount } => {
                if source == &self.tape[h].name {
                    return Err(MachineError::UnknownDestination(source.clone()));
                }
                let s = self.instantiate(source);
                let (moves, all) = resolve_move(&self.tape[s].contents, species, *amount, source)?;
                self.transfer(s, h, &moves, all);
                self.tape[h].fired = None;
                self.check_capacity(db, h)?;
                Ok(None)
            }
            Primitive::SM {
                destination,
                species,
                amount,
            } => {
                if destination.is_empty() || destination == &self.tape[h].name {
                    return Err(MachineError::UnknownDestination(destination.clone()));
                }
                let name = self.tape[h].name.clone();
                let (moves, all) = resolve_move(&self.tape[h].contents, species, *amount, &name)?;
                let d = self.instantiate(destination);
                self.transfer(h, d, &moves, all);
                self.check_capacity(db, d)?;
                Ok(None)
            }
            Primitive::AE { to_temp, duration } | Primitive::SE { to_temp, duration } => {
                let heating = matches!(prim, Primitive::AE { .. });
                let c = &mut self.tape[h];
                let target = to_temp.unwrap_or(c.temperature);
                let delta = target - c.temperature;
                let energy = duration * (1.0 + delta.abs());
                if heating {
                    c.energy_added += energy;
                } else {
                    c.energy_removed += energy;
                }
                if (target - c.temperature).abs() > 0.0 {
                    c.temperature = target;
                    c.time_at_temp = *duration;
                } else {
                    c.time_at_temp += duration;
                }
                c.blank = false;
                self.react(db, hooks, expects_reaction)
            }
        }
    }

    fn all_rules<'a>(&'a self, db: &'a RuleDatabase) -> impl Iterator<Item = &'a TransitionRule> + Clone {
        db.rules.values().chain(self.discovered.iter())
    }

    /// Reaction check at the head cell after an energy primitive.
    fn react(
        &mut self,
        db: &RuleDatabase,
        hooks: &mut dyn Hooks,
        expects_reaction: bool,
    ) -> Result<Option<ReactionEvent>, MachineError> {
        let h = self.head;
        let point = ProcessPoint {
            temp: self.tape[h].temperature,
            duration: self.tape[h].time_at_temp,
        };
        if self.tape[h].contents.is_empty() {
            return if expects_reaction {
                Err(MachineError::NoMatch(self.tape[h].name.clone()))
            } else {
                Ok(None)
            };
        }
        let m = best_match(self.all_rules(db), &self.tape[h].contents, point);
        if let Some(m) = m {
            if self.tape[h].fired.as_deref() == Some(m.rule_id.as_str()) {
                return Ok(None);
            }
            let rule = self.all_rules(db).find(|r| r.id == m.rule_id).cloned().expect("matched rule exists");
            let y = hooks.realized_yield(&rule, &self.tape[h]);
            let ev = self.fire(db, &rule, m.max_extent, y, m.max_extent * y);
            return Ok(Some(ev));
        }
        let pending = pending_rule(self.all_rules(db), &self.tape[h].contents, point).is_some();
        let c = &mut self.tape[h];
        if pending && c.fired.is_none() {
            c.state = CellState::Active;
            return Ok(None);
        }
        if c.state == CellState::Active {
            c.state = CellState::Filled;
        }
        if expects_reaction && self.tape[h].fired.is_none() {
            if let Some(d) = hooks.explore(&self.tape[h].contents) {
                let (mut rule, p) = (d.rule, d.point);
                rule.status = RuleStatus::Novel;
                if d.byproduct {
                    self.discovered_bp.insert(rule.id.clone());
                }
                let c = &mut self.tape[h];
                c.temperature = p.temp;
                c.time_at_temp = p.duration;
                let max_extent = rule
                    .reagents
                    .iter()
                    .map(|t| c.contents.get(&t.species).copied().unwrap_or(0.0) / t.coefficient)
                    .fold(f64::INFINITY, f64::min);
                self.discovered.push(rule.clone());
                let y = hooks.realized_yield(&rule, &self.tape[h]);
                return Ok(Some(self.fire(db, &rule, max_extent, y, max_extent * y)));
            }
            return Err(MachineError::NoMatch(self.tape[h].name.clone()));
        }
        Ok(None)
    }

    /// Convert `extent` of a rule at the head cell. Byproduct mass goes
    /// straight to waste.
    pub fn fire(
        &mut self,
        db: &RuleDatabase,
        rule: &TransitionRule,
        max_extent: f64,
        realized_yield: f64,
        extent: f64,
    ) -> ReactionEvent {
        let h = self.head;
        let mut consumed = Multiset::new();
        let mut produced = Multiset::new();
        {
            let c = &mut self.tape[h].contents;
            for t in &rule.reagents {
                let have = c.get(&t.species).copied().unwrap_or(0.0);
                let left = have - t.coefficient * extent;
                let left = if left <= have * 1e-12 { 0.0 } else { left };
                consumed.insert(t.species.clone(), have - left);
                if left == 0.0 {
                    c.remove(&t.species);
                } else {
                    c.insert(t.species.clone(), left);
                }
            }
            for t in &rule.products {
                let a = t.coefficient * extent;
                *c.entry(t.species.clone()).or_insert(0.0) += a;
                *produced.entry(t.species.clone()).or_insert(0.0) += a;
                self.reagent_alphabet.insert(t.species.clone());
            }
        }
        let bp = if db.has_byproduct(&rule.id) || self.discovered_bp.contains(&rule.id) {
            let id = rule.byproduct_id();
            let w = self.instantiate(&self.waste_cell.clone());
            *self.tape[w].contents.entry(id.clone()).or_insert(0.0) += extent;
            self.tape[w].blank = false;
            self.tape[w].settle();
            produced.insert(id.clone(), extent);
            Some(id)
        } else {
            None
        };
        let ev = ReactionEvent {
            rule_id: rule.id.clone(),
            status: rule.status,
            max_extent,
            extent,
            declared_yield: rule.yield_fraction,
            realized_yield,
            consumed,
            produced,
            byproduct: bp,
        };
        let c = &mut self.tape[h];
        c.fired = Some(rule.id.clone());
        c.state = CellState::Filled;
        c.settle();
        c.last_reaction = Some(ev.clone());
        self.outcomes.push((rule.id.clone(), rule.status));
        ev
    }

    fn move_head(&mut self, to: usize) -> HeadMove {
        let mv = match to.cmp(&self.head) {
            std::cmp::Ordering::Less => HeadMove::Left,
            std::cmp::Ordering::Greater => HeadMove::Right,
            std::cmp::Ordering::Equal => HeadMove::N,
        };
        self.head = to;
        mv
    }

    fn halt(&mut self, kind: HaltKind, reason: Option<String>) -> HaltState {
        self.controller = Controller::Halted(kind);
        if reason.is_some() {
            self.fail_reason = reason.clone();
        }
        HaltState {
            kind,
            trace_ref: String::new(),
            reason,
        }
    }

    /// Final halt once the program is exhausted.
    fn finish(&mut self) -> HaltState {
        if let Some(c) = self.tape.iter().find(|c| c.state == CellState::Active) {
            let r = format!("transformation pending in `{}`", c.name);
            return self.halt(HaltKind::Fail, Some(r));
        }
        let kind = self
            .outcomes
            .iter()
            .map(|(_, s)| crate::rules::status_halt(*s))
            .max()
            .unwrap_or(HaltKind::Out);
        self.halt(kind, None)
    }

    fn budget_left(&self) -> bool {
        self.step_count < self.budget
    }

    /// Op index of the next instruction, if any.
    pub fn next_op_index(&self) -> Option<usize> {
        self.program.get(self.pc).and_then(|i| i.op_index)
    }

    pub fn step(&mut self, db: &RuleDatabase) -> StepResult {
        self.step_with(db, &mut NoHooks)
    }

    /// Execute one instruction. A routed move emits one record pair per
    /// pump stroke; every record consumes one unit of budget.
    pub fn step_with(&mut self, db: &RuleDatabase, hooks: &mut dyn Hooks) -> StepResult {
        let mut out = StepResult::default();
        if let Controller::Halted(kind) = self.controller {
            out.halt = Some(HaltState {
                kind,
                trace_ref: String::new(),
                reason: self.fail_reason.clone(),
            });
            return out;
        }
        // Halting on a finished program costs no budget.
        if self.loaded && self.pc >= self.program.len() {
            out.halt = Some(self.finish());
            return out;
        }
        if !self.budget_left() {
            out.halt = Some(self.halt(HaltKind::Fail, Some(MachineError::BudgetExhausted.to_string())));
            return out;
        }
        self.controller = Controller::Running;
        if self.pc >= self.program.len() {
            let to = self.head + 1;
            if to >= self.tape.len() {
                let name = format!("cell{to}");
                self.instantiate(&name);
            }
            let before = self.tape[self.head].snapshot();
            let head_move = self.move_head(to);
            self.step_count += 1;
            let c = &self.tape[to];
            out.records.push(TraceRecord::Step(StepRecord {
                step: self.step_count,
                tag: Tag::Idle,
                op_index: None,
                vessel: c.name.clone(),
                cell: c.name.clone(),
                primitive: None,
                reaction: None,
                head_move,
                before: before.clone(),
                after: c.snapshot(),
            }));
            return out;
        }
        let ins = self.program[self.pc].clone();
        self.pc += 1;
        let res = match &ins.op {
            InstrOp::Prim(p) => self.exec_prim(&ins, p, db, hooks, &mut out.records),
            InstrOp::Routed(m) => self.exec_routed(&ins, m, db, &mut out.records),
        };
        if let Err(e) = res {
            out.halt = Some(self.halt(HaltKind::Fail, Some(e.to_string())));
        }
        out
    }

    fn exec_prim(
        &mut self,
        ins: &Instruction,
        p: &Primitive,
        db: &RuleDatabase,
        hooks: &mut dyn Hooks,
        records: &mut Vec<TraceRecord>,
    ) -> Result<(), MachineError> {
        if !self.budget_left() {
            return Err(MachineError::BudgetExhausted);
        }
        let i = self.instantiate(&ins.cell);
        let head_move = self.move_head(i);
        let before = self.tape[i].snapshot();
        self.step_count += 1;
        let r = self.apply_primitive(p, db, hooks, ins.expects_reaction);
        let reaction = match &r {
            Ok(ev) => ev.clone(),
            Err(_) => None,
        };
        records.push(TraceRecord::Step(StepRecord {
            step: self.step_count,
            tag: ins.tag,
            op_index: ins.op_index,
            vessel: ins.label.clone(),
            cell: ins.cell.clone(),
            primitive: Some(p.clone()),
            reaction,
            head_move,
            before,
            after: self.tape[i].snapshot(),
        }));
        r.map(|_| ())
    }

    fn exec_routed(
        &mut self,
        ins: &Instruction,
        m: &RoutedMove,
        db: &RuleDatabase,
        records: &mut Vec<TraceRecord>,
    ) -> Result<(), MachineError> {
        let s = self.instantiate(&m.src_cell);
        let (total, all) = resolve_move(&self.tape[s].contents, &m.species, m.amount, &m.src_cell)?;
        let vol = self.volume_ml(db, &total);
        let strokes = match m.stroke_ml {
            Some(cap) if cap > 0.0 => ((vol / cap) * (1.0 - 1e-12)).ceil().max(1.0) as usize,
            _ => 1,
        };
        let mut moved = Multiset::new();
        for k in 0..strokes {
            let last = k + 1 == strokes;
            let chunk: Multiset = if last && all {
                self.tape[s]
                    .contents
                    .iter()
                    .filter(|(sp, _)| total.contains_key(*sp))
                    .map(|(sp, a)| (sp.clone(), *a))
                    .collect()
            } else if last {
                total
                    .iter()
                    .map(|(sp, a)| (sp.clone(), a - moved.get(sp).copied().unwrap_or(0.0)))
                    .collect()
            } else {
                total.iter().map(|(sp, a)| (sp.clone(), a / strokes as f64)).collect()
            };
            for (sp, a) in &chunk {
                *moved.entry(sp.clone()).or_insert(0.0) += a;
            }
            let tag_for = |core: bool| {
                if last && core && ins.tag == Tag::Core {
                    Tag::Core
                } else if ins.tag == Tag::Core {
                    Tag::Transfer
                } else {
                    ins.tag
                }
            };
            let sm = Primitive::SM {
                destination: m.via.clone(),
                species: Selection::Species(chunk.keys().cloned().collect()),
                amount: if last && all {
                    AmountSpec::All
                } else {
                    AmountSpec::Mol(chunk.values().sum())
                },
            };
            let am = Primitive::AM {
                source: m.via.clone(),
                species: Selection::All,
                amount: AmountSpec::All,
            };
            let legs = [
                (&m.src_cell, &m.src_label, sm, tag_for(m.core_src)),
                (&m.dst_cell, &m.dst_label, am, tag_for(m.core_dst)),
            ];
            for (cell, label, prim, tag) in legs {
                if !self.budget_left() {
                    return Err(MachineError::BudgetExhausted);
                }
                let i = self.instantiate(cell);
                let head_move = self.move_head(i);
                let before = self.tape[i].snapshot();
                self.step_count += 1;
                let r = match &prim {
                    Primitive::SM { .. } => {
                        let v = self.instantiate(&m.via);
                        let full = last && all;
                        self.transfer(i, v, &chunk, full);
                        Ok(())
                    }
                    _ => {
                        let v = self.instantiate(&m.via);
                        let inflight = self.tape[v].contents.clone();
                        self.transfer(v, i, &inflight, true);
                        self.tape[i].fired = None;
                        self.check_capacity(db, i)
                    }
                };
                records.push(TraceRecord::Step(StepRecord {
                    step: self.step_count,
                    tag,
                    op_index: ins.op_index,
                    vessel: label.clone(),
                    cell: cell.clone(),
                    primitive: Some(prim),
                    reaction: None,
                    head_move,
                    before,
                    after: self.tape[i].snapshot(),
                }));
                r?;
            }
        }
        Ok(())
    }
}

/// Machine for a program: source cells filled with declared stock in
/// declaration order, then required vessels, then waste and product.
pub fn init_machine(prog: &ChemProgram, db: Option<&RuleDatabase>, budget: u64) -> Result<MachineState, MachineError> {
    let mut names: Vec<String> = Vec::new();
    let mut seen_src = BTreeMap::new();
    for r in &prog.reagents {
        if seen_src.insert(r.source_vessel.clone(), r.id.clone()).is_some() {
            return Err(MachineError::DuplicateVessel(r.source_vessel.clone()));
        }
        names.push(r.source_vessel.clone());
    }
    for h in &prog.hardware_reqs {
        if seen_src.contains_key(h) {
            return Err(MachineError::DuplicateVessel(h.clone()));
        }
        names.push(h.clone());
    }
    for b in crate::chemlang::BUILTIN_VESSELS {
        if seen_src.contains_key(b) || prog.hardware_reqs.iter().any(|h| h == b) {
            return Err(MachineError::DuplicateVessel(b.into()));
        }
        names.push(b.into());
    }
    let mut m = MachineState::with_cells(&names, budget)?;
    for r in &prog.reagents {
        let mol = super::primitive::to_mol(db, &r.species, r.amount);
        m.charge(&r.source_vessel, &r.species, mol);
    }
    for op in &prog.steps {
        m.process_alphabet.insert(op.kind.keyword().to_string());
    }
    Ok(m)
}
