use serde::{Deserialize, Serialize};

use crate::chemlang::{ChemProgram, OpKind, Quantity, Unit, UnitOperation};
use crate::rules::RuleDatabase;
use crate::AMBIENT_C;

/// The four machine primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimKind {
    AM,
    SM,
    AE,
    SE,
}

/// Which species a matter primitive moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    All,
    Species(Vec<String>),
}

impl Selection {
    pub fn admits(&self, species: &str) -> bool {
        match self {
            Selection::All => true,
            Selection::Species(list) => list.iter().any(|s| s == species),
        }
    }
}

/// How much of the selection moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmountSpec {
    All,
    Mol(f64),
    Fraction(f64),
}

/// One machine primitive, always applied at the head cell.
///
/// Matter primitives name their counterpart cell, so matter never appears
/// from or vanishes to nowhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prim")]
pub enum Primitive {
    /// Move matter from `source` into the head cell.
    AM { source: String, species: Selection, amount: AmountSpec },
    /// Move matter from the head cell into `destination`.
    SM { destination: String, species: Selection, amount: AmountSpec },
    /// Heat (or hold, when `to_temp` is `None`) for `duration` seconds.
    AE { to_temp: Option<f64>, duration: f64 },
    /// Cool (or hold) for `duration` seconds.
    SE { to_temp: Option<f64>, duration: f64 },
}

impl Primitive {
    pub fn kind(&self) -> PrimKind {
        match self {
            Primitive::AM { .. } => PrimKind::AM,
            Primitive::SM { .. } => PrimKind::SM,
            Primitive::AE { .. } => PrimKind::AE,
            Primitive::SE { .. } => PrimKind::SE,
        }
    }
}

/// Primitive kinds each unit operation expands to.
pub fn primitive_sequence(kind: OpKind) -> &'static [PrimKind] {
    use PrimKind::*;
    match kind {
        OpKind::Separate => &[AM, AE, SM],
        OpKind::Dry => &[AE, SM],
        OpKind::Crystallise => &[AE, SE, SM],
        OpKind::Distil => &[AE, SM, SE, AM],
        OpKind::ReactHot => &[AM, AE],
        OpKind::ReactCold => &[AM, SE],
        OpKind::Sublime => &[SM, AE, SE, AM],
        OpKind::Add => &[AM],
        OpKind::Transfer => &[SM, AM],
        OpKind::Filter => &[SM],
        OpKind::Evaporate => &[AE, SM],
        OpKind::HeatStir => &[AE],
        OpKind::Chill => &[SE],
        OpKind::Clean => &[AM, SM],
    }
}

/// Transit cell used by abstract transfers.
pub const LINE: &str = "line";

/// Auxiliary condenser / cold-window cell belonging to `vessel`.
pub fn cond_cell(vessel: &str) -> String {
    format!("{vessel}:cond")
}

pub const DEFAULT_MOLAR_MASS: f64 = 100.0;
pub const DEFAULT_MOLAR_VOLUME_ML: f64 = 20.0;
pub const DEFAULT_MIX_TIME_S: f64 = 60.0;
/// Fraction of a declared solvent charged per separate/clean when no
/// amount is given.
pub const DEFAULT_SOLVENT_CHARGE: f64 = 0.1;

/// Molar mass and molar volume for a species, from the database if it
/// knows the species, otherwise the defaults.
pub fn species_props(db: Option<&RuleDatabase>, species: &str) -> (f64, f64) {
    match db.and_then(|d| d.species.get(species)) {
        Some(s) => (s.molar_mass, s.molar_volume.unwrap_or(DEFAULT_MOLAR_VOLUME_ML)),
        None => (DEFAULT_MOLAR_MASS, DEFAULT_MOLAR_VOLUME_ML),
    }
}

/// Convert an amount quantity to mol.
pub fn to_mol(db: Option<&RuleDatabase>, species: &str, q: Quantity) -> f64 {
    let (mm, mv) = species_props(db, species);
    match q.unit {
        Unit::Mol => q.value,
        Unit::G => q.value / mm,
        Unit::ML => q.value / mv,
        Unit::C | Unit::S => q.value,
    }
}

/// A primitive bound to the cell it acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedPrimitive {
    pub vessel: String,
    pub primitive: Primitive,
    /// Set on the energy primitive of a reaction operation.
    pub expects_reaction: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpandError {
    #[error("step {step}: missing parameter `{param}`")]
    MissingParam { step: usize, param: String },
    #[error("step {step}: undeclared reagent `{reagent}`")]
    UndeclaredReagent { step: usize, reagent: String },
}

/// Expand one unit operation into targeted primitives.
///
/// The primitive kinds always equal [`primitive_sequence`] for the
/// operation's kind.
pub fn expand_unit_op(
    op: &UnitOperation,
    step: usize,
    prog: &ChemProgram,
    db: Option<&RuleDatabase>,
) -> Result<Vec<TargetedPrimitive>, ExpandError> {
    let need_ident = |k: &str| {
        op.ident(k).map(str::to_string).ok_or_else(|| ExpandError::MissingParam {
            step,
            param: k.into(),
        })
    };
    let need_q = |k: &str| {
        op.quantity(k).map(|q| q.value).ok_or_else(|| ExpandError::MissingParam {
            step,
            param: k.into(),
        })
    };
    let reagent = |k: &str| {
        let id = need_ident(k)?;
        prog.reagent(&id).cloned().ok_or(ExpandError::UndeclaredReagent { step, reagent: id })
    };
    let solvents = || Selection::Species(prog.solvent_species());
    let species_or_solvents = || match op.ident("species") {
        Some(s) => Selection::Species(vec![s.to_string()]),
        None => solvents(),
    };
    let tp = |vessel: &str, primitive: Primitive| TargetedPrimitive {
        vessel: vessel.to_string(),
        primitive,
        expects_reaction: false,
    };
    let charge = |r: &crate::chemlang::ReagentDecl, default_all: bool| match op.quantity("amount") {
        Some(q) => AmountSpec::Mol(to_mol(db, &r.species, q)),
        None if default_all => AmountSpec::All,
        None => AmountSpec::Mol(to_mol(db, &r.species, r.amount) * DEFAULT_SOLVENT_CHARGE),
    };
    let to_or_waste = || op.ident("to").unwrap_or("waste").to_string();

    let out = match op.kind {
        OpKind::Add => {
            let v = need_ident("vessel")?;
            let r = reagent("reagent")?;
            vec![tp(
                &v,
                Primitive::AM {
                    source: r.source_vessel.clone(),
                    species: Selection::Species(vec![r.species.clone()]),
                    amount: charge(&r, true),
                },
            )]
        }
        OpKind::Transfer => {
            let from = need_ident("from")?;
            let to = need_ident("to")?;
            let species = match op.ident("species") {
                Some(s) => Selection::Species(vec![s.to_string()]),
                None => Selection::All,
            };
            let amount = if let Some(q) = op.quantity("amount") {
                AmountSpec::Mol(to_mol(db, op.ident("species").unwrap_or(""), q))
            } else if let Some(f) = op.number("fraction") {
                AmountSpec::Fraction(f)
            } else {
                AmountSpec::All
            };
            vec![
                tp(
                    &from,
                    Primitive::SM {
                        destination: LINE.into(),
                        species,
                        amount,
                    },
                ),
                tp(
                    &to,
                    Primitive::AM {
                        source: LINE.into(),
                        species: Selection::All,
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::HeatStir => vec![tp(
            &need_ident("vessel")?,
            Primitive::AE {
                to_temp: Some(need_q("temp")?),
                duration: need_q("time")?,
            },
        )],
        OpKind::Chill => vec![tp(
            &need_ident("vessel")?,
            Primitive::SE {
                to_temp: Some(need_q("temp")?),
                duration: need_q("time")?,
            },
        )],
        OpKind::Separate => {
            let v = need_ident("vessel")?;
            let s = reagent("solvent")?;
            let to = need_ident("to")?;
            let mut moved = vec![s.species.clone()];
            if let Some(x) = op.ident("species") {
                moved.push(x.to_string());
            }
            vec![
                tp(
                    &v,
                    Primitive::AM {
                        source: s.source_vessel.clone(),
                        species: Selection::Species(vec![s.species.clone()]),
                        amount: charge(&s, false),
                    },
                ),
                tp(
                    &v,
                    Primitive::AE {
                        to_temp: None,
                        duration: op.quantity("time").map(|q| q.value).unwrap_or(DEFAULT_MIX_TIME_S),
                    },
                ),
                tp(
                    &v,
                    Primitive::SM {
                        destination: to,
                        species: Selection::Species(moved),
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::Dry | OpKind::Evaporate => {
            let v = need_ident("vessel")?;
            vec![
                tp(
                    &v,
                    Primitive::AE {
                        to_temp: Some(need_q("temp")?),
                        duration: need_q("time")?,
                    },
                ),
                tp(
                    &v,
                    Primitive::SM {
                        destination: to_or_waste(),
                        species: solvents(),
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::Crystallise => {
            let v = need_ident("vessel")?;
            let time = need_q("time")?;
            vec![
                tp(
                    &v,
                    Primitive::AE {
                        to_temp: Some(need_q("temp")?),
                        duration: time,
                    },
                ),
                tp(
                    &v,
                    Primitive::SE {
                        to_temp: Some(need_q("cool_temp")?),
                        duration: time,
                    },
                ),
                tp(
                    &v,
                    Primitive::SM {
                        destination: to_or_waste(),
                        species: solvents(),
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::Distil => {
            let v = need_ident("vessel")?;
            let to = need_ident("to")?;
            let cond = cond_cell(&v);
            let time = need_q("time")?;
            vec![
                tp(
                    &v,
                    Primitive::AE {
                        to_temp: Some(need_q("temp")?),
                        duration: time,
                    },
                ),
                tp(
                    &v,
                    Primitive::SM {
                        destination: cond.clone(),
                        species: species_or_solvents(),
                        amount: AmountSpec::All,
                    },
                ),
                tp(
                    &cond,
                    Primitive::SE {
                        to_temp: Some(AMBIENT_C),
                        duration: time,
                    },
                ),
                tp(
                    &to,
                    Primitive::AM {
                        source: cond.clone(),
                        species: Selection::All,
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::Sublime => {
            let v = need_ident("vessel")?;
            let to = need_ident("to")?;
            let cond = cond_cell(&v);
            let time = need_q("time")?;
            vec![
                tp(
                    &v,
                    Primitive::SM {
                        destination: cond.clone(),
                        species: species_or_solvents(),
                        amount: AmountSpec::All,
                    },
                ),
                tp(
                    &v,
                    Primitive::AE {
                        to_temp: Some(need_q("temp")?),
                        duration: time,
                    },
                ),
                tp(
                    &cond,
                    Primitive::SE {
                        to_temp: Some(need_q("cool_temp")?),
                        duration: time,
                    },
                ),
                tp(
                    &to,
                    Primitive::AM {
                        source: cond.clone(),
                        species: Selection::All,
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::Filter => vec![tp(
            &need_ident("vessel")?,
            Primitive::SM {
                destination: need_ident("to")?,
                species: species_or_solvents(),
                amount: AmountSpec::All,
            },
        )],
        OpKind::Clean => {
            let v = need_ident("vessel")?;
            let s = reagent("solvent")?;
            vec![
                tp(
                    &v,
                    Primitive::AM {
                        source: s.source_vessel.clone(),
                        species: Selection::Species(vec![s.species.clone()]),
                        amount: charge(&s, false),
                    },
                ),
                tp(
                    &v,
                    Primitive::SM {
                        destination: "waste".into(),
                        species: Selection::All,
                        amount: AmountSpec::All,
                    },
                ),
            ]
        }
        OpKind::ReactHot | OpKind::ReactCold => {
            let v = need_ident("vessel")?;
            let r = reagent("reagent")?;
            let to_temp = Some(need_q("temp")?);
            let duration = need_q("time")?;
            let energy = if op.kind == OpKind::ReactHot {
                Primitive::AE { to_temp, duration }
            } else {
                Primitive::SE { to_temp, duration }
            };
            vec![
                tp(
                    &v,
                    Primitive::AM {
                        source: r.source_vessel.clone(),
                        species: Selection::Species(vec![r.species.clone()]),
                        amount: charge(&r, true),
                    },
                ),
                TargetedPrimitive {
                    vessel: v.clone(),
                    primitive: energy,
                    expects_reaction: true,
                },
            ]
        }
    };
    debug_assert_eq!(
        out.iter().map(|t| t.primitive.kind()).collect::<Vec<_>>(),
        primitive_sequence(op.kind)
    );
    Ok(out)
}
