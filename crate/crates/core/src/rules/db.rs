use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStatus {
    Characterised,
    Predicted,
    Novel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Species {
    pub id: String,
    pub name: String,
    pub molar_mass: f64,
    #[serde(default)]
    pub elements: BTreeMap<String, u32>,
    pub stable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bonds: Option<u32>,
    /// mL per mol; a default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub molar_volume: Option<f64>,
}

/// One reagent term: species and its stoichiometric ratio in the pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub species: String,
    pub coefficient: f64,
}

impl Term {
    pub fn new(species: &str, coefficient: f64) -> Self {
        Term {
            species: species.into(),
            coefficient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRule {
    pub id: String,
    pub reagents: Vec<Term>,
    #[serde(default)]
    pub catalysts: Vec<String>,
    /// Inclusive temperature window in °C.
    pub temp_range: [f64; 2],
    /// Inclusive duration window in s.
    pub duration_range: [f64; 2],
    pub products: Vec<Term>,
    #[serde(rename = "yield")]
    pub yield_fraction: f64,
    #[serde(default)]
    pub epsilon: f64,
    pub status: RuleStatus,
    #[serde(default)]
    pub occurrences: u32,
    #[serde(default)]
    pub priority: i32,
}

impl TransitionRule {
    /// Implicit byproduct species receiving the unmatched input mass.
    pub fn byproduct_id(&self) -> String {
        format!("bp_{}", self.id)
    }

    pub fn reagent_species(&self) -> impl Iterator<Item = &str> {
        self.reagents.iter().map(|t| t.species.as_str())
    }

    pub fn product_species(&self) -> impl Iterator<Item = &str> {
        self.products.iter().map(|t| t.species.as_str())
    }

    /// Midpoint of the process window.
    pub fn window_mid(&self) -> (f64, f64) {
        (
            0.5 * (self.temp_range[0] + self.temp_range[1]),
            0.5 * (self.duration_range[0] + self.duration_range[1]),
        )
    }
}

/// Promotion event; the log is append-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionEvent {
    pub seq: u64,
    pub rule_id: String,
    pub occurrences: u32,
    pub from: RuleStatus,
    pub to: RuleStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    species: Vec<Species>,
    #[serde(default)]
    rules: Vec<TransitionRule>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleDatabase {
    pub species: BTreeMap<String, Species>,
    pub rules: BTreeMap<String, TransitionRule>,
    pub provenance: Vec<PromotionEvent>,
    /// Rules whose inputs carry more element mass than their outputs.
    byproducts: BTreeSet<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("rule `{rule}` creates element `{element}` ({input} in, {output} out)")]
    ConservationViolation {
        rule: String,
        element: String,
        input: f64,
        output: f64,
    },
    #[error("rule `{rule}` references unknown species `{species}`")]
    UnknownSpecies { rule: String, species: String },
    #[error("species `{species}`: assembly index {index} outside bounds [{lo}, {hi}] for {bonds} bonds")]
    AssemblyOutOfBounds {
        species: String,
        index: u32,
        bonds: u32,
        lo: u32,
        hi: u32,
    },
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RuleDatabase {
    pub fn new(species: Vec<Species>, rules: Vec<TransitionRule>) -> Result<Self, RulesError> {
        let mut db = RuleDatabase::default();
        for s in species {
            check_species(&s)?;
            if db.species.insert(s.id.clone(), s.clone()).is_some() {
                return Err(RulesError::Duplicate(s.id));
            }
        }
        for r in rules {
            check_rule_shape(&r)?;
            if db.check_conservation(&r)? {
                db.byproducts.insert(r.id.clone());
            }
            if db.rules.insert(r.id.clone(), r.clone()).is_some() {
                return Err(RulesError::Duplicate(r.id));
            }
        }
        Ok(db)
    }

    pub fn rule(&self, id: &str) -> Option<&TransitionRule> {
        self.rules.get(id)
    }

    /// True when the rule books a byproduct to waste on firing.
    pub fn has_byproduct(&self, id: &str) -> bool {
        self.byproducts.contains(id)
    }

    /// Add a species unless one with the same id is already known.
    pub fn insert_species(&mut self, s: Species) -> Result<(), RulesError> {
        check_species(&s)?;
        self.species.entry(s.id.clone()).or_insert(s);
        Ok(())
    }

    /// Insert or replace a rule after the same checks as loading.
    pub fn insert_rule(&mut self, r: TransitionRule) -> Result<(), RulesError> {
        check_rule_shape(&r)?;
        if self.check_conservation(&r)? {
            self.byproducts.insert(r.id.clone());
        } else {
            self.byproducts.remove(&r.id);
        }
        self.rules.insert(r.id.clone(), r);
        Ok(())
    }

    /// Per-element input minus output per unit extent. Errors if any
    /// element is created; returns whether a byproduct is needed.
    fn check_conservation(&self, r: &TransitionRule) -> Result<bool, RulesError> {
        let mut balance: BTreeMap<&str, f64> = BTreeMap::new();
        for (terms, sign) in [(&r.reagents, 1.0), (&r.products, -1.0)] {
            for t in terms {
                let sp = self.species.get(&t.species).ok_or_else(|| RulesError::UnknownSpecies {
                    rule: r.id.clone(),
                    species: t.species.clone(),
                })?;
                for (el, n) in &sp.elements {
                    *balance.entry(el).or_insert(0.0) += sign * t.coefficient * *n as f64;
                }
            }
        }
        for c in &r.catalysts {
            if !self.species.contains_key(c) {
                return Err(RulesError::UnknownSpecies {
                    rule: r.id.clone(),
                    species: c.clone(),
                });
            }
        }
        let mut surplus = false;
        for (el, d) in &balance {
            if *d < -1e-9 {
                let input: f64 = r
                    .reagents
                    .iter()
                    .map(|t| t.coefficient * self.species[&t.species].elements.get(*el).copied().unwrap_or(0) as f64)
                    .sum();
                return Err(RulesError::ConservationViolation {
                    rule: r.id.clone(),
                    element: el.to_string(),
                    input,
                    output: input - d,
                });
            }
            if *d > 1e-9 {
                surplus = true;
            }
        }
        Ok(surplus)
    }

    pub fn from_json(text: &str) -> Result<Self, RulesError> {
        let f: RuleFile = serde_json::from_str(text).map_err(|e| RulesError::Schema(e.to_string()))?;
        RuleDatabase::new(f.species, f.rules)
    }

    /// Pretty JSON with species and rules sorted by id.
    pub fn to_json(&self) -> String {
        let f = RuleFile {
            species: self.species.values().cloned().collect(),
            rules: self.rules.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&f).expect("rule file serializes");
        s.push('\n');
        s
    }

    /// Rewrite the file atomically: write a sibling temp file, then rename.
    pub fn save(&self, path: &Path) -> Result<(), RulesError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Parse a `.rules` JSON document.
pub fn load_rules(source: &str) -> Result<RuleDatabase, RulesError> {
    RuleDatabase::from_json(source)
}

pub fn load_rules_file(path: &Path) -> Result<RuleDatabase, RulesError> {
    load_rules(&std::fs::read_to_string(path)?)
}

fn check_species(s: &Species) -> Result<(), RulesError> {
    if !(s.molar_mass > 0.0) {
        return Err(RulesError::Schema(format!("species `{}`: molar_mass must be > 0", s.id)));
    }
    if let Some(v) = s.molar_volume {
        if !(v > 0.0) {
            return Err(RulesError::Schema(format!("species `{}`: molar_volume must be > 0", s.id)));
        }
    }
    if let (Some(a), Some(b)) = (s.assembly_index, s.bonds) {
        if b >= 2 {
            let (lo, hi) = assembly::assembly_bounds(b as u64).expect("b >= 2");
            if (a as u64) < lo || (a as u64) > hi {
                return Err(RulesError::AssemblyOutOfBounds {
                    species: s.id.clone(),
                    index: a,
                    bonds: b,
                    lo: lo as u32,
                    hi: hi as u32,
                });
            }
        }
    }
    Ok(())
}

fn check_rule_shape(r: &TransitionRule) -> Result<(), RulesError> {
    let bad = |m: &str| Err(RulesError::Schema(format!("rule `{}`: {m}", r.id)));
    if r.reagents.is_empty() {
        return bad("empty reagent pattern");
    }
    if r.products.is_empty() {
        return bad("no products");
    }
    if r.reagents.iter().chain(&r.products).any(|t| !(t.coefficient > 0.0)) {
        return bad("coefficients must be > 0");
    }
    if !(r.yield_fraction > 0.0 && r.yield_fraction <= 1.0) {
        return bad("yield must lie in (0, 1]");
    }
    if !(0.0..1.0).contains(&r.epsilon) {
        return bad("epsilon must lie in [0, 1)");
    }
    if r.temp_range[0] > r.temp_range[1] || r.duration_range[0] > r.duration_range[1] || r.duration_range[0] < 0.0 {
        return bad("malformed process window");
    }
    let reag: BTreeSet<&str> = r.reagent_species().collect();
    if reag.len() != r.reagents.len() {
        return bad("repeated reagent species");
    }
    if r.catalysts.iter().any(|c| reag.contains(c.as_str()) || r.product_species().any(|p| p == c)) {
        return bad("catalyst also appears as reagent or product");
    }
    Ok(())
}
