use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ledger::LedgerReport;
use super::machine::{CellRole, CellState, VesselCell};
use super::primitive::Primitive;
use crate::rules::{RuleStatus, TransitionRule};
use crate::Multiset;

/// Halting kinds, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HaltKind {
    #[serde(rename = "q_out")]
    Out,
    #[serde(rename = "q_uout")]
    UOut,
    #[serde(rename = "q_nout")]
    NOut,
    #[serde(rename = "q_fail")]
    Fail,
}

impl HaltKind {
    pub fn name(self) -> &'static str {
        match self {
            HaltKind::Out => "q_out",
            HaltKind::UOut => "q_uout",
            HaltKind::NOut => "q_nout",
            HaltKind::Fail => "q_fail",
        }
    }
}

impl fmt::Display for HaltKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltState {
    pub kind: HaltKind,
    pub trace_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMove {
    Left,
    Right,
    N,
}

/// Why a record exists. Only `Core` records correspond one-to-one with
/// abstract primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Core,
    Transfer,
    Clean,
    Correction,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSnapshot {
    pub state: CellState,
    pub contents: Multiset,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionEvent {
    pub rule_id: String,
    pub status: RuleStatus,
    pub max_extent: f64,
    pub extent: f64,
    pub declared_yield: f64,
    pub realized_yield: f64,
    pub consumed: Multiset,
    /// Includes the byproduct booked to waste.
    pub produced: Multiset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub byproduct: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub tag: Tag,
    pub op_index: Option<usize>,
    /// Vessel name at the program level.
    pub vessel: String,
    /// Tape cell actually touched.
    pub cell: String,
    pub primitive: Option<Primitive>,
    pub reaction: Option<ReactionEvent>,
    pub head_move: HeadMove,
    pub before: CellSnapshot,
    pub after: CellSnapshot,
}

/// Trace line. Error-correction runs add the non-step kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceRecord {
    Step(StepRecord),
    Sensing {
        step: u64,
        op_index: usize,
        vessel: String,
        sensor: String,
        observed: f64,
        expected: f64,
    },
    Deviation {
        step: u64,
        op_index: usize,
        observed: f64,
        expected: f64,
        relative_gap: f64,
        severity: String,
    },
    Action {
        step: u64,
        op_index: usize,
        action: String,
        delta_temp: f64,
        delta_time: f64,
        dose_mol: f64,
    },
    Checkpoint {
        step: u64,
        op_index: usize,
        id: usize,
    },
    /// Restore to a checkpoint: live contents discarded to waste, the
    /// checkpoint's contents supplied afresh.
    Revert {
        step: u64,
        op_index: usize,
        checkpoint: usize,
        discarded: Multiset,
        resupplied: Multiset,
    },
}

impl TraceRecord {
    pub fn as_step(&self) -> Option<&StepRecord> {
        match self {
            TraceRecord::Step(s) => Some(s),
            _ => None,
        }
    }
}

/// A named cell's final or initial contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCell {
    pub name: String,
    pub role: CellRole,
    pub contents: Multiset,
}

impl From<&VesselCell> for NamedCell {
    fn from(c: &VesselCell) -> Self {
        NamedCell {
            name: c.name.clone(),
            role: c.role,
            contents: c.contents.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub initial: Vec<NamedCell>,
    pub records: Vec<TraceRecord>,
    pub final_tape: Vec<NamedCell>,
    pub halt: HaltState,
    pub ledger: LedgerReport,
    /// Rules sampled by exploration during the run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discovered: Vec<TransitionRule>,
}

impl ExecutionTrace {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(TraceRecord::as_step)
    }

    /// Product cell contents at the end of the run.
    pub fn product(&self) -> Multiset {
        sum_role(&self.final_tape, CellRole::Product)
    }

    pub fn waste(&self) -> Multiset {
        sum_role(&self.final_tape, CellRole::Waste)
    }

    /// One JSON object per record, then a final halt + ledger line. Every
    /// non-integer number is written as a decimal string.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let head = serde_json::json!({"kind": "init", "tape": self.initial});
        push_line(&mut out, head);
        for r in &self.records {
            push_line(&mut out, serde_json::to_value(r).expect("record serializes"));
        }
        let tail = serde_json::json!({
            "kind": "halt",
            "halt": self.halt,
            "ledger": self.ledger,
            "final_tape": self.final_tape,
            "discovered": self.discovered,
        });
        push_line(&mut out, tail);
        out
    }
}

pub(crate) fn sum_role(cells: &[NamedCell], role: CellRole) -> Multiset {
    let mut out = Multiset::new();
    for c in cells.iter().filter(|c| c.role == role) {
        for (s, a) in &c.contents {
            *out.entry(s.clone()).or_insert(0.0) += a;
        }
    }
    out
}

fn push_line(out: &mut String, v: Value) {
    out.push_str(&stringify_floats(v).to_string());
    out.push('\n');
}

/// Replace floating-point numbers by their shortest round-trip decimal
/// text so a replay parses back to identical bits.
pub fn stringify_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            Value::String(n.as_f64().map(|f| f.to_string()).unwrap_or_default())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(stringify_floats).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, stringify_floats(v))).collect()),
        other => other,
    }
}
