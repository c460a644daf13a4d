//! Dynamic error correction: noisy sensing after each reaction, threshold
//! detection against the declared yield, severity classes and bounded
//! corrective actions, with checkpoints to revert to.

mod run;

pub use run::{
    compare_paired, restore_checkpoint, run_plan_with_dec, run_with_dec, DecOutcome, Injector, InjectorMode,
    PairedComparison,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cstm::{CellSnapshot, ReactionEvent};
use crate::TINY;

/// Largest temperature nudge a single tune may apply, in °C.
pub const MAX_TUNE_C: f64 = 10.0;
/// Interventions allowed on one reading before the step is given up.
pub const MAX_INTERVENTIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecError {
    #[error("observable `{0}` is undefined for this snapshot")]
    Undefined(&'static str),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("policy file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Photon,
    Conductivity,
    Temperature,
    Chromatograph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Extent realized over the extent available.
    YieldFraction,
    /// Share of the most abundant species in the cell.
    Purity,
    TemperatureC,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub kind: SensorKind,
    pub noise_sd: f64,
    pub observable: Observable,
}

impl SensorModel {
    pub fn yield_probe(noise_sd: f64) -> Self {
        SensorModel {
            kind: SensorKind::Photon,
            noise_sd,
            observable: Observable::YieldFraction,
        }
    }
}

/// True value of an observable.
pub fn true_value(cell: &CellSnapshot, event: Option<&ReactionEvent>, obs: Observable) -> Result<f64, DecError> {
    match obs {
        Observable::YieldFraction => match event {
            Some(ev) if ev.max_extent > 0.0 => Ok(ev.extent / ev.max_extent),
            _ => Err(DecError::Undefined("yield_fraction")),
        },
        Observable::Purity => {
            let total: f64 = cell.contents.values().sum();
            if total <= 0.0 {
                return Err(DecError::Undefined("purity"));
            }
            Ok(cell.contents.values().fold(0.0f64, |a, b| a.max(*b)) / total)
        }
        Observable::TemperatureC => Ok(cell.temperature),
    }
}

/// Reading: true value plus Gaussian noise from `rng`.
pub fn sample_sensor<R: Rng + ?Sized>(
    cell: &CellSnapshot,
    event: Option<&ReactionEvent>,
    sensor: &SensorModel,
    rng: &mut R,
) -> Result<f64, DecError> {
    let v = true_value(cell, event, sensor.observable)?;
    if sensor.noise_sd == 0.0 {
        return Ok(v);
    }
    let n = Normal::new(0.0, sensor.noise_sd).map_err(|e| DecError::Policy(e.to_string()))?;
    Ok(v + n.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Eq, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Minor,
    Intermediate,
    Major,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::None => "none",
            Severity::Minor => "minor",
            Severity::Intermediate => "intermediate",
            Severity::Major => "major",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub observed: f64,
    pub expected: f64,
    pub relative_gap: f64,
    pub step_ref: u64,
}

pub fn relative_gap(observed: f64, expected: f64) -> f64 {
    (observed - expected).abs() / expected.abs().max(TINY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionPolicy {
    pub minor: f64,
    pub intermediate: f64,
    pub major: f64,
    pub max_redoses: u32,
    pub max_reverts: u32,
    pub sensor_noise: f64,
    /// Off means sense nothing and fail any step that misses tolerance.
    pub enabled: bool,
    /// Temperature nudge per tune, °C.
    pub tune_delta_c: f64,
    /// Fraction of the original charge added on a redose.
    pub redose_fraction: f64,
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy {
            minor: 0.05,
            intermediate: 0.15,
            major: 0.35,
            max_redoses: 2,
            max_reverts: 3,
            sensor_noise: 0.01,
            enabled: true,
            tune_delta_c: 5.0,
            redose_fraction: 0.25,
        }
    }
}

impl CorrectionPolicy {
    pub fn disabled() -> Self {
        CorrectionPolicy {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecError> {
        let bad = |m: &str| Err(DecError::Policy(m.to_string()));
        if !(0.0 < self.minor && self.minor < self.intermediate && self.intermediate < self.major && self.major < 1.0) {
            return bad("thresholds must satisfy 0 < minor < intermediate < major < 1");
        }
        if !(self.sensor_noise >= 0.0) {
            return bad("sensor_noise must be >= 0");
        }
        if !(self.tune_delta_c.abs() <= MAX_TUNE_C) {
            return bad("tune_delta_c exceeds 10 C");
        }
        if !(self.redose_fraction > 0.0 && self.redose_fraction <= 0.5) {
            return bad("redose_fraction must lie in (0, 0.5]");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DecError> {
        let p: CorrectionPolicy = serde_json::from_str(text).map_err(|e| DecError::Policy(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DecError> {
        let text = std::fs::read_to_string(path).map_err(|e| DecError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn sensor(&self) -> SensorModel {
        SensorModel::yield_probe(self.sensor_noise)
    }
}

/// A deviation when the gap reaches the minor threshold.
pub fn detect_deviation(observed: f64, expected: f64, policy: &CorrectionPolicy, step_ref: u64) -> Option<Deviation> {
    let gap = relative_gap(observed, expected);
    (gap >= policy.minor).then_some(Deviation {
        observed,
        expected,
        relative_gap: gap,
        step_ref,
    })
}

pub fn classify_severity(dev: &Deviation, policy: &CorrectionPolicy) -> Severity {
    let g = dev.relative_gap;
    if g >= policy.major {
        Severity::Major
    } else if g >= policy.intermediate {
        Severity::Intermediate
    } else if g >= policy.minor {
        Severity::Minor
    } else {
        Severity::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Tune { delta_temp: f64, delta_time: f64 },
    RedoseExtend { fraction: f64, delta_time: f64 },
    Revert,
    /// Budgets spent: the step cannot be saved.
    Escalate,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Tune { .. } => "tune",
            Action::RedoseExtend { .. } => "redose_extend",
            Action::Revert => "revert",
            Action::Escalate => "escalate",
        }
    }
}

/// Interventions already spent on the current step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Spent {
    pub redoses: u32,
    pub reverts: u32,
}

/// Action for a severity. Intermediate falls through to a revert when
/// redoses are spent; a revert with none left escalates.
pub fn corrective_action(sev: Severity, policy: &CorrectionPolicy, spent: Spent, step_duration: f64) -> Action {
    let revert = || {
        if spent.reverts < policy.max_reverts {
            Action::Revert
        } else {
            Action::Escalate
        }
    };
    match sev {
        Severity::None | Severity::Minor => Action::Tune {
            delta_temp: policy.tune_delta_c.clamp(-MAX_TUNE_C, MAX_TUNE_C),
            delta_time: 0.0,
        },
        Severity::Intermediate if spent.redoses < policy.max_redoses => Action::RedoseExtend {
            fraction: policy.redose_fraction,
            delta_time: 0.5 * step_duration,
        },
        Severity::Intermediate | Severity::Major => revert(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dev(gap: f64) -> Deviation {
        Deviation {
            observed: 1.0 - gap,
            expected: 1.0,
            relative_gap: gap,
            step_ref: 0,
        }
    }

    #[test]
    fn detection_threshold() {
        let p = CorrectionPolicy::default();
        assert!(detect_deviation(0.97, 1.0, &p, 0).is_none());
        let d = detect_deviation(0.80, 1.0, &p, 0).unwrap();
        assert!((d.relative_gap - 0.2).abs() < 1e-12);
        assert!(detect_deviation(0.1, 0.0, &p, 0).unwrap().relative_gap.is_finite());
    }

    #[test]
    fn severity_brackets() {
        let p = CorrectionPolicy::default();
        assert_eq!(classify_severity(&dev(0.08), &p), Severity::Minor);
        assert_eq!(classify_severity(&dev(0.20), &p), Severity::Intermediate);
        assert_eq!(classify_severity(&dev(0.40), &p), Severity::Major);
        assert!(Severity::None < Severity::Minor && Severity::Intermediate < Severity::Major);
    }

    #[test]
    fn actions_respect_budgets() {
        let p = CorrectionPolicy::default();
        let none = Spent::default();
        assert!(matches!(corrective_action(Severity::Minor, &p, none, 60.0), Action::Tune { .. }));
        assert!(matches!(
            corrective_action(Severity::Intermediate, &p, none, 60.0),
            Action::RedoseExtend { .. }
        ));
        let spent = Spent {
            redoses: p.max_redoses,
            reverts: p.max_reverts,
        };
        assert_eq!(corrective_action(Severity::Major, &p, spent, 60.0), Action::Escalate);
        assert_eq!(corrective_action(Severity::Intermediate, &p, spent, 60.0), Action::Escalate);
    }

    #[test]
    fn sensor_noise_statistics() {
        let cell = CellSnapshot {
            state: crate::cstm::CellState::Filled,
            contents: [("a".to_string(), 1.0)].into(),
            temperature: 25.0,
        };
        let s = SensorModel {
            kind: SensorKind::Temperature,
            noise_sd: 0.0,
            observable: Observable::TemperatureC,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_sensor(&cell, None, &s, &mut rng).unwrap(), 25.0);
        let s = SensorModel { noise_sd: 0.01, ..s };
        let xs: Vec<f64> = (0..10_000).map(|_| sample_sensor(&cell, None, &s, &mut rng).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((0.009..=0.011).contains(&sd), "{sd}");
        let yield_probe = SensorModel::yield_probe(0.0);
        assert!(sample_sensor(&cell, None, &yield_probe, &mut rng).is_err());
    }

    #[test]
    fn policy_json() {
        let p = CorrectionPolicy::from_json(r#"{"minor": 0.1, "intermediate": 0.2, "major": 0.4}"#).unwrap();
        assert_eq!(p.max_reverts, 3);
        assert!(CorrectionPolicy::from_json(r#"{"minor": 0.3, "intermediate": 0.2}"#).is_err());
        assert!(CorrectionPolicy::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
