//! The `.chem` program language.
//!
//! A program is a block-structured text file:
//!
//! ```text
//! procedure "tiny" {
//!   reagents {
//!     a: sp:A 1 mol @R1 reagent
//!     b: sp:B 1 mol @R2 reagent
//!   }
//!   hardware { RX1 }
//!   steps {
//!     add(vessel=RX1, reagent=a)
//!     react_hot(vessel=RX1, reagent=b, temp=80 C, time=1 h, reaction_step=1)
//!   }
//!   metadata { author = "lab" }
//! }
//! ```
//!
//! Quantities are normalized to base units (mol, g, mL, C, s) at parse time,
//! so the canonical form produced by [`format_program`] never contains
//! `mmol`, `mg`, `min` or `h`.

mod classify;
mod format;
mod lexer;
mod parser;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use classify::{classify_steps, synthetic_program, StepCategory, StepHistogram};
pub use format::format_program;
pub use parser::{parse_program, ParseError, ParseErrorKind};
pub use validate::{validate_program, Finding, ValidationReport, MAX_TEMP_C, MIN_TEMP_C};

/// Vessels every program may reference without declaring them.
pub const BUILTIN_VESSELS: [&str; 2] = ["waste", "product"];

/// Base units after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    Mol,
    G,
    ML,
    C,
    S,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Mol => "mol",
            Unit::G => "g",
            Unit::ML => "mL",
            Unit::C => "C",
            Unit::S => "s",
        }
    }

    /// Parse a written unit, returning the base unit and the factor to it.
    pub fn parse(s: &str) -> Option<(Unit, f64)> {
        Some(match s {
            "mol" => (Unit::Mol, 1.0),
            "mmol" => (Unit::Mol, 1e-3),
            "g" => (Unit::G, 1.0),
            "mg" => (Unit::G, 1e-3),
            "mL" => (Unit::ML, 1.0),
            "C" => (Unit::C, 1.0),
            "s" => (Unit::S, 1.0),
            "min" => (Unit::S, 60.0),
            "h" => (Unit::S, 3600.0),
            _ => return None,
        })
    }

    pub fn is_amount(self) -> bool {
        matches!(self, Unit::Mol | Unit::G | Unit::ML)
    }
}

/// A number tagged with a base unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Quantity { value, unit }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reagent,
    Catalyst,
    Solvent,
}

impl Role {
    pub fn keyword(self) -> &'static str {
        match self {
            Role::Reagent => "reagent",
            Role::Catalyst => "catalyst",
            Role::Solvent => "solvent",
        }
    }

    /// Catalysts are never consumed by a transformation.
    pub fn is_consumed(self) -> bool {
        self != Role::Catalyst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReagentDecl {
    pub id: String,
    pub species: String,
    pub amount: Quantity,
    pub source_vessel: String,
    pub role: Role,
}

/// Closed set of unit operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Transfer,
    HeatStir,
    Chill,
    Separate,
    Dry,
    Crystallise,
    Distil,
    Sublime,
    Filter,
    Evaporate,
    Clean,
    ReactHot,
    ReactCold,
}

/// Expected type of a step parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Vessel,
    Reagent,
    Species,
    Temperature,
    Duration,
    Amount,
    Fraction,
    Count,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Add,
        OpKind::Transfer,
        OpKind::HeatStir,
        OpKind::Chill,
        OpKind::Separate,
        OpKind::Dry,
        OpKind::Crystallise,
        OpKind::Distil,
        OpKind::Sublime,
        OpKind::Filter,
        OpKind::Evaporate,
        OpKind::Clean,
        OpKind::ReactHot,
        OpKind::ReactCold,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Transfer => "transfer",
            OpKind::HeatStir => "heat_stir",
            OpKind::Chill => "chill",
            OpKind::Separate => "separate",
            OpKind::Dry => "dry",
            OpKind::Crystallise => "crystallise",
            OpKind::Distil => "distil",
            OpKind::Sublime => "sublime",
            OpKind::Filter => "filter",
            OpKind::Evaporate => "evaporate",
            OpKind::Clean => "clean",
            OpKind::ReactHot => "react_hot",
            OpKind::ReactCold => "react_cold",
        }
    }

    pub fn from_keyword(s: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.keyword() == s)
    }

    /// `(name, type, required)` for every parameter the kind accepts,
    /// excluding the universal `reaction_step`.
    pub fn params(self) -> &'static [(&'static str, ParamType, bool)] {
        use ParamType::*;
        match self {
            OpKind::Add => &[("vessel", Vessel, true), ("reagent", Reagent, true), ("amount", Amount, false)],
            OpKind::Transfer => &[
                ("from", Vessel, true),
                ("to", Vessel, true),
                ("species", Species, false),
                ("amount", Amount, false),
                ("fraction", Fraction, false),
            ],
            OpKind::HeatStir | OpKind::Chill => {
                &[("vessel", Vessel, true), ("temp", Temperature, true), ("time", Duration, true)]
            }
            OpKind::Separate => &[
                ("vessel", Vessel, true),
                ("solvent", Reagent, true),
                ("to", Vessel, true),
                ("species", Species, false),
                ("amount", Amount, false),
                ("time", Duration, false),
            ],
            OpKind::Dry | OpKind::Evaporate => &[
                ("vessel", Vessel, true),
                ("temp", Temperature, true),
                ("time", Duration, true),
                ("to", Vessel, false),
            ],
            OpKind::Crystallise => &[
                ("vessel", Vessel, true),
                ("temp", Temperature, true),
                ("cool_temp", Temperature, true),
                ("time", Duration, true),
                ("to", Vessel, false),
            ],
            OpKind::Distil => &[
                ("vessel", Vessel, true),
                ("temp", Temperature, true),
                ("time", Duration, true),
                ("to", Vessel, true),
                ("species", Species, false),
            ],
            OpKind::Sublime => &[
                ("vessel", Vessel, true),
                ("temp", Temperature, true),
                ("cool_temp", Temperature, true),
                ("time", Duration, true),
                ("to", Vessel, true),
                ("species", Species, false),
            ],
            OpKind::Filter => &[("vessel", Vessel, true), ("to", Vessel, true), ("species", Species, false)],
            OpKind::Clean => &[("vessel", Vessel, true), ("solvent", Reagent, true), ("amount", Amount, false)],
            OpKind::ReactHot | OpKind::ReactCold => &[
                ("vessel", Vessel, true),
                ("reagent", Reagent, true),
                ("temp", Temperature, true),
                ("time", Duration, true),
                ("amount", Amount, false),
            ],
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A step parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Ident(String),
    Number(f64),
    Quantity(Quantity),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Ident(s) => f.write_str(s),
            ParamValue::Number(n) => write!(f, "{n}"),
            ParamValue::Quantity(q) => write!(f, "{q}"),
        }
    }
}

/// Key for the per-step reaction-step boundary marker.
pub const REACTION_STEP: &str = "reaction_step";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOperation {
    pub kind: OpKind,
    pub params: BTreeMap<String, ParamValue>,
}

impl UnitOperation {
    pub fn new(kind: OpKind) -> Self {
        UnitOperation {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn ident(&self, key: &str) -> Option<&str> {
        match self.params.get(key) {
            Some(ParamValue::Ident(s)) => Some(s),
            _ => None,
        }
    }

    pub fn quantity(&self, key: &str) -> Option<Quantity> {
        match self.params.get(key) {
            Some(ParamValue::Quantity(q)) => Some(*q),
            _ => None,
        }
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        match self.params.get(key) {
            Some(ParamValue::Number(n)) => Some(*n),
            _ => None,
        }
    }

    /// Vessel names this step touches, in parameter order `vessel, from, to`.
    pub fn vessels(&self) -> Vec<&str> {
        ["vessel", "from", "to"]
            .iter()
            .filter_map(|k| self.ident(k))
            .collect()
    }

    /// Explicit reaction-step marker, if any.
    pub fn reaction_step(&self) -> Option<u32> {
        self.number(REACTION_STEP).map(|n| n as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChemProgram {
    pub name: String,
    pub reagents: Vec<ReagentDecl>,
    pub hardware_reqs: Vec<String>,
    pub steps: Vec<UnitOperation>,
    pub metadata: BTreeMap<String, String>,
}

impl ChemProgram {
    pub fn reagent(&self, id: &str) -> Option<&ReagentDecl> {
        self.reagents.iter().find(|r| r.id == id)
    }

    /// Species declared with the solvent role.
    pub fn solvent_species(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .reagents
            .iter()
            .filter(|r| r.role == Role::Solvent)
            .map(|r| r.species.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn is_known_vessel(&self, name: &str) -> bool {
        BUILTIN_VESSELS.contains(&name)
            || self.hardware_reqs.iter().any(|h| h == name)
            || self.reagents.iter().any(|r| r.source_vessel == name)
    }
}
