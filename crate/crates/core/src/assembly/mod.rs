//! Copy-number detectability: how many copies of a molecule must be made
//! for enough flawless ones to clear a detection threshold, the bounds on
//! assembly index, and a Monte Carlo of flawless-copy decay.

mod mc;

pub use mc::{monte_carlo, MCResult, MonteCarloConfig, DEFAULT_EPS0, AVOGADRO};

use serde::{Deserialize, Serialize};

use crate::rules::Species;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("phi must be positive, got {0}")]
    BadPhi(f64),
    #[error("step error {0} outside [0, 1)")]
    BadEpsilon(f64),
    #[error("assembly index must be at least 1")]
    ZeroIndex,
    #[error("{n} copies cannot reach the threshold {phi}")]
    NotDetectable { phi: f64, n: f64 },
    #[error("bond count {0} is below 2")]
    TooFewBonds(u64),
    #[error("invalid Monte Carlo config: {0}")]
    Config(String),
}

/// Threshold `phi` and per-step error probabilities for a molecule with
/// `eps_vec.len()` assembly steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilitySpec {
    pub phi: f64,
    pub eps_vec: Vec<f64>,
}

impl DetectabilitySpec {
    pub fn new(phi: f64, eps_vec: Vec<f64>) -> Result<Self, AssemblyError> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(AssemblyError::BadPhi(phi));
        }
        if eps_vec.is_empty() {
            return Err(AssemblyError::ZeroIndex);
        }
        if let Some(e) = eps_vec.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return Err(AssemblyError::BadEpsilon(*e));
        }
        Ok(DetectabilitySpec { phi, eps_vec })
    }

    /// Same error at every step.
    pub fn constant(phi: f64, eps: f64, assembly_index: u32) -> Result<Self, AssemblyError> {
        Self::new(phi, vec![eps; assembly_index as usize])
    }

    pub fn assembly_index(&self) -> usize {
        self.eps_vec.len()
    }
}

/// Copies that must be made so that `phi` come out flawless. Returns
/// `f64::INFINITY` when the flawless fraction underflows to zero.
pub fn n_min(spec: &DetectabilitySpec) -> f64 {
    // Summing logs keeps long products from underflowing early.
    let log_survive: f64 = spec.eps_vec.iter().map(|e| (-e).ln_1p()).sum();
    let survive = log_survive.exp();
    if survive == 0.0 {
        return f64::INFINITY;
    }
    spec.phi / survive
}

/// Fraction of copies that survive `a` steps flawlessly at per-step
/// error `eps`.
pub fn survival_fraction(eps: f64, a: u32) -> f64 {
    (1.0 - eps).powi(a as i32)
}

/// Largest constant per-step error at which `n_available` copies still
/// leave `phi` flawless ones after `a` steps.
pub fn max_error_for(phi: f64, a: u32, n_available: f64) -> Result<f64, AssemblyError> {
    if a == 0 {
        return Err(AssemblyError::ZeroIndex);
    }
    if !(phi > 0.0) {
        return Err(AssemblyError::BadPhi(phi));
    }
    if n_available < phi {
        return Err(AssemblyError::NotDetectable { phi, n: n_available });
    }
    // 1 - r^(1/a) with r = phi/n, written to keep precision near r = 1.
    Ok(-((phi / n_available).ln() / a as f64).exp_m1())
}

/// Lower and upper bound on the assembly index of a molecule with `b`
/// bonds: `(ceil(log2 b), b - 1)`.
pub fn assembly_bounds(b: u64) -> Result<(u64, u64), AssemblyError> {
    if b < 2 {
        return Err(AssemblyError::TooFewBonds(b));
    }
    let lo = 64 - (b - 1).leading_zeros() as u64;
    Ok((lo, b - 1))
}

/// Realisability verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realisability {
    pub realisable: bool,
    pub reasons: Vec<String>,
}

/// A species is realisable when it is stable and the expected number of
/// flawless copies reaches the threshold.
pub fn check_realisable(species: &Species, produced_perfect: f64, phi: f64) -> Realisability {
    let mut reasons = Vec::new();
    if !species.stable {
        reasons.push(format!("species `{}` is not stable", species.id));
    }
    if produced_perfect < phi {
        reasons.push(format!("{produced_perfect:e} flawless copies below threshold {phi:e}"));
    }
    Realisability {
        realisable: reasons.is_empty(),
        reasons,
    }
}
