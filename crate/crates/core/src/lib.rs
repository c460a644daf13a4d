//! A desk-scale chemical synthesis machine.
//!
//! The crate is split along the toolchain:
//!
//! * [`chemlang`] parses, formats, validates and classifies `.chem` programs.
//! * [`cstm`] is the vessel-tape virtual machine with its mass ledger.
//! * [`rules`] holds the reaction rule database, halting classification,
//!   promotion and the pathway planner.
//! * [`chempiler`] lowers programs onto hardware graphs and executes the result.
//! * [`dec`] runs the closed sense/detect/correct loop over compiled plans.
//! * [`assembly`] carries the copy-number detectability mathematics and the
//!   flawless-copy Monte Carlo.

pub mod assembly;
pub mod chemlang;
pub mod chempiler;
pub mod cstm;
pub mod dec;
pub mod par;
pub mod rules;
pub mod stats;

/// Species identifier as written in programs and rule files.
pub type SpeciesId = String;

/// Multiset of species amounts in mol. Sorted by id for stable output.
pub type Multiset = std::collections::BTreeMap<SpeciesId, f64>;

/// Ambient temperature assumed for cells without explicit conditions.
pub const AMBIENT_C: f64 = 25.0;

/// Floor used in relative comparisons.
pub const TINY: f64 = 1e-12;
