use serde::Serialize;

use super::{ChemProgram, ParamValue, Unit};
use crate::chempiler::{self, HardwareGraph};

pub const MIN_TEMP_C: f64 = -200.0;
pub const MAX_TEMP_C: f64 = 400.0;

/// A single reason a program cannot run on a graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "finding")]
pub enum Finding {
    MissingCapability { step: usize, op: String, vessel: String },
    ParamOutOfRange { step: usize, param: String, value: f64 },
    NoRoute { from: String, to: String },
    CapacityExceeded { node: String, needed_ml: f64, capacity_ml: f64 },
    VesselClassExhausted { vessel: String, class: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Parameter-range findings only; no graph needed.
pub(crate) fn range_findings(prog: &ChemProgram) -> Vec<Finding> {
    let mut out = Vec::new();
    for (i, op) in prog.steps.iter().enumerate() {
        for (k, v) in &op.params {
            if let ParamValue::Quantity(q) = v {
                let bad = match q.unit {
                    Unit::C => !(MIN_TEMP_C..=MAX_TEMP_C).contains(&q.value),
                    Unit::S => !(q.value > 0.0),
                    _ => false,
                };
                if bad {
                    out.push(Finding::ParamOutOfRange {
                        step: i,
                        param: k.clone(),
                        value: q.value,
                    });
                }
            }
        }
    }
    out
}

/// Check a parsed program against a hardware graph. An empty report means
/// the program compiles onto the graph.
pub fn validate_program(prog: &ChemProgram, graph: &HardwareGraph) -> ValidationReport {
    let mut findings = range_findings(prog);
    if let Err(report) = chempiler::chempile(prog, graph) {
        for f in report.findings {
            if !findings.contains(&f) {
                findings.push(f);
            }
        }
    }
    ValidationReport { findings }
}
