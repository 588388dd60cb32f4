//! Domains, feature spaces and trajectories.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered feature space: the continuous block first, then the binary block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub continuous_dims: usize,
    pub binary_dims: usize,
    pub names: Vec<String>,
}

impl FeatureSpace {
    pub fn new(continuous: &[&str], binary: &[&str]) -> Result<Self> {
        let names = continuous
            .iter()
            .chain(binary.iter())
            .map(|s| s.to_string())
            .collect();
        Self::from_parts(continuous.len(), binary.len(), names)
    }

    pub fn from_parts(continuous_dims: usize, binary_dims: usize, names: Vec<String>) -> Result<Self> {
        let fs = FeatureSpace {
            continuous_dims,
            binary_dims,
            names,
        };
        fs.check()?;
        Ok(fs)
    }

    /// Anonymous space with generated names `{prefix}{i}`.
    pub fn anonymous(prefix: &str, continuous_dims: usize, binary_dims: usize) -> Result<Self> {
        let names = (0..continuous_dims + binary_dims)
            .map(|i| format!("{prefix}{i}"))
            .collect();
        Self::from_parts(continuous_dims, binary_dims, names)
    }

    pub fn check(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::config("feature space must have at least one dimension"));
        }
        if self.names.len() != self.dim() {
            return Err(Error::dim("feature names", self.dim(), self.names.len()));
        }
        let mut seen = HashSet::new();
        for n in &self.names {
            if !seen.insert(n.as_str()) {
                return Err(Error::config(format!("duplicate feature name '{n}'")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.continuous_dims + self.binary_dims
    }

    pub fn is_binary(&self, i: usize) -> bool {
        i >= self.continuous_dims && i < self.dim()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Sub-space keeping the given indices (in ascending order).
    pub fn project(&self, keep: &[usize]) -> Result<FeatureSpace> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let continuous = keep.iter().filter(|&&i| i < self.continuous_dims).count();
        let names = keep.iter().map(|&i| self.names[i].clone()).collect::<Vec<_>>();
        FeatureSpace::from_parts(continuous, keep.len() - continuous, names)
    }
}

/// Categorical action space `0..cardinality`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub cardinality: usize,
}

impl ActionSpace {
    pub fn new(cardinality: usize) -> Result<Self> {
        if cardinality < 2 {
            return Err(Error::config("action space needs at least two actions"));
        }
        Ok(ActionSpace { cardinality })
    }

    /// Number of binary sub-actions when the cardinality is a power of two.
    pub fn factored_bits(&self) -> Option<usize> {
        self.cardinality
            .is_power_of_two()
            .then(|| self.cardinality.trailing_zeros() as usize)
    }

    /// Binary view of an action index (bit 0 first).
    pub fn factor(&self, action: usize) -> Option<Vec<bool>> {
        let bits = self.factored_bits()?;
        (action < self.cardinality).then(|| (0..bits).map(|b| action >> b & 1 == 1).collect())
    }

    pub fn unfactor(&self, bits: &[bool]) -> Option<usize> {
        if Some(bits.len()) != self.factored_bits() {
            return None;
        }
        Some(bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as usize) << i))
    }

    pub fn one_hot(&self, action: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.cardinality];
        if action < self.cardinality {
            v[action] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub name: String,
    pub static_space: FeatureSpace,
    pub temporal_space: FeatureSpace,
    pub action_space: ActionSpace,
    pub max_length: usize,
}

const WARD_STATIC_CONT: &[&str] = &["age", "weight", "height"];
const WARD_STATIC_BIN: &[&str] = &[
    "sex_female",
    "admit_emergency",
    "admit_transfer",
    "service_medicine",
    "service_surgery",
];
const WARD_TEMPORAL_CONT: &[&str] = &[
    "pulse", "systolic_bp", "diastolic_bp", "resp_rate", "temperature", "spo2", "o2_flow",
    "gcs", "pain_score", "sodium", "potassium", "chloride", "bicarbonate", "bun", "creatinine",
    "glucose", "calcium", "magnesium", "phosphate", "hemoglobin", "hematocrit", "wbc",
    "platelets", "albumin", "total_bilirubin", "ast", "alt", "alk_phos", "lactate", "inr",
];
const WARD_TEMPORAL_BIN: &[&str] = &[
    "on_telemetry",
    "fall_risk",
    "pressure_ulcer",
    "culture_positive",
    "acute_event",
];

const ICU_STATIC_CONT: &[&str] = &["age", "height", "initial_weight", "bmi"];
const ICU_STATIC_BIN: &[&str] = &[
    "sex_female", "admission_urgent", "admission_surgical",
    "specialty_cardiothoracic", "specialty_neuro", "specialty_trauma", "specialty_general",
    "specialty_internal", "specialty_pulmonary", "specialty_vascular", "specialty_other",
    "diabetes", "hypertension", "copd", "chf", "ckd", "liver_disease", "malignancy",
    "immunosuppression", "cva_history", "mi_history", "pvd", "dementia", "obesity", "asthma",
    "afib", "hiv", "alcohol_abuse", "smoker", "anemia", "thyroid", "osteoporosis",
];
const ICU_TEMPORAL_CONT: &[&str] = &[
    "heart_rate", "map", "sbp", "dbp", "resp_rate", "spo2", "temperature", "fio2", "peep",
    "tidal_volume", "ph", "pao2", "paco2", "bicarbonate", "lactate", "sodium", "potassium",
    "chloride", "glucose", "hemoglobin", "creatinine", "urine_output",
];
const ICU_TEMPORAL_BIN: &[&str] = &["sedated", "vasopressor_active"];

impl DomainSchema {
    pub fn new(
        name: impl Into<String>,
        static_space: FeatureSpace,
        temporal_space: FeatureSpace,
        action_space: ActionSpace,
        max_length: usize,
    ) -> Result<Self> {
        let s = DomainSchema {
            name: name.into(),
            static_space,
            temporal_space,
            action_space,
            max_length,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        self.static_space.check()?;
        self.temporal_space.check()?;
        ActionSpace::new(self.action_space.cardinality)?;
        if self.max_length == 0 {
            return Err(Error::config("max_length must be at least 1"));
        }
        Ok(())
    }

    /// General-ward domain: 8 static features (categoricals already one-hot
    /// expanded) and 35 temporal features. `actions` is 2, 4 or 8.
    pub fn ward_synth(actions: usize) -> Result<Self> {
        Self::new(
            "ward_synth",
            FeatureSpace::new(WARD_STATIC_CONT, WARD_STATIC_BIN)?,
            FeatureSpace::new(WARD_TEMPORAL_CONT, WARD_TEMPORAL_BIN)?,
            ActionSpace::new(actions)?,
            64,
        )
    }

    /// Intensive-care domain: 36 static and 24 temporal features.
    pub fn icu_synth(actions: usize) -> Result<Self> {
        Self::new(
            "icu_synth",
            FeatureSpace::new(ICU_STATIC_CONT, ICU_STATIC_BIN)?,
            FeatureSpace::new(ICU_TEMPORAL_CONT, ICU_TEMPORAL_BIN)?,
            ActionSpace::new(actions)?,
            72,
        )
    }

    pub fn builtin(name: &str, actions: usize) -> Result<Self> {
        match name {
            "ward_synth" => Self::ward_synth(actions),
            "icu_synth" => Self::icu_synth(actions),
            other => Err(Error::config(format!("unknown built-in domain '{other}'"))),
        }
    }

    /// Schema as seen after removing the named temporal features.
    pub fn without_temporal(&self, hidden: &[String]) -> Result<DomainSchema> {
        let hidden_idx = self.temporal_indices(hidden)?;
        let keep: Vec<usize> = (0..self.temporal_space.dim())
            .filter(|i| !hidden_idx.contains(i))
            .collect();
        if keep.is_empty() {
            return Err(Error::config("cannot hide every temporal feature"));
        }
        Ok(DomainSchema {
            temporal_space: self.temporal_space.project(&keep)?,
            ..self.clone()
        })
    }

    pub fn temporal_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.temporal_space
                    .index_of(n)
                    .ok_or_else(|| Error::config(format!("unknown temporal feature '{n}'")))
            })
            .collect()
    }
}

/// One patient record: static features, `T` observations and `T` actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "static")]
    pub static_features: Vec<f64>,
    #[serde(rename = "obs")]
    pub observations: Vec<Vec<f64>>,
    #[serde(rename = "act")]
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    TooLong { len: usize, max: usize },
    ActionCount { observations: usize, actions: usize },
    StaticDim { expected: usize, actual: usize },
    TemporalDim { t: usize, expected: usize, actual: usize },
    NotBinary { feature: String, t: Option<usize>, value: f64 },
    NotFinite { feature: String, t: Option<usize> },
    ActionOutOfRange { t: usize, action: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |t: &Option<usize>| t.map(|t| format!(" at t={t}")).unwrap_or_default();
        match self {
            Violation::Empty => write!(f, "T ≥ 1 required"),
            Violation::TooLong { len, max } => write!(f, "length {len} exceeds max_length {max}"),
            Violation::ActionCount { observations, actions } => {
                write!(f, "{observations} observations but {actions} actions")
            }
            Violation::StaticDim { expected, actual } => {
                write!(f, "static vector has {actual} entries, expected {expected}")
            }
            Violation::TemporalDim { t, expected, actual } => {
                write!(f, "observation at t={t} has {actual} entries, expected {expected}")
            }
            Violation::NotBinary { feature, t, value } => {
                write!(f, "binary feature '{feature}'{} holds {value}", at(t))
            }
            Violation::NotFinite { feature, t } => {
                write!(f, "feature '{feature}'{} is not finite", at(t))
            }
            Violation::ActionOutOfRange { t, action } => {
                write!(f, "action {action} at t={t} outside the action space")
            }
        }
    }
}

fn check_vector(space: &FeatureSpace, v: &[f64], t: Option<usize>, out: &mut Vec<Violation>) {
    for (i, &x) in v.iter().enumerate().take(space.dim()) {
        let feature = space.names[i].clone();
        if !x.is_finite() {
            out.push(Violation::NotFinite { feature, t });
        } else if space.is_binary(i) && x != 0.0 && x != 1.0 {
            out.push(Violation::NotBinary { feature, t, value: x });
        }
    }
}

/// Every way in which `t` fails to conform to `schema`; empty when valid.
pub fn validate_trajectory(t: &Trajectory, schema: &DomainSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.observations.is_empty() {
        out.push(Violation::Empty);
    }
    if t.observations.len() > schema.max_length {
        out.push(Violation::TooLong {
            len: t.observations.len(),
            max: schema.max_length,
        });
    }
    if t.actions.len() != t.observations.len() {
        out.push(Violation::ActionCount {
            observations: t.observations.len(),
            actions: t.actions.len(),
        });
    }
    if t.static_features.len() != schema.static_space.dim() {
        out.push(Violation::StaticDim {
            expected: schema.static_space.dim(),
            actual: t.static_features.len(),
        });
    }
    check_vector(&schema.static_space, &t.static_features, None, &mut out);
    for (i, x) in t.observations.iter().enumerate() {
        if x.len() != schema.temporal_space.dim() {
            out.push(Violation::TemporalDim {
                t: i + 1,
                expected: schema.temporal_space.dim(),
                actual: x.len(),
            });
        }
        check_vector(&schema.temporal_space, x, Some(i + 1), &mut out);
    }
    for (i, &a) in t.actions.iter().enumerate() {
        if a >= schema.action_space.cardinality {
            out.push(Violation::ActionOutOfRange { t: i + 1, action: a });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ward_traj(schema: &DomainSchema, len: usize) -> Trajectory {
        Trajectory {
            static_features: vec![0.0; schema.static_space.dim()],
            observations: vec![vec![0.0; schema.temporal_space.dim()]; len],
            actions: vec![0; len],
        }
    }

    #[test]
    fn builtin_dimensions() {
        let w = DomainSchema::ward_synth(8).unwrap();
        assert_eq!(w.static_space.dim(), 8);
        assert_eq!(w.temporal_space.dim(), 35);
        let i = DomainSchema::icu_synth(8).unwrap();
        assert_eq!(i.static_space.dim(), 36);
        assert_eq!(i.temporal_space.dim(), 24);
        assert_eq!(w.action_space.factored_bits(), Some(3));
    }

    #[test]
    fn zero_length_is_a_violation() {
        let w = DomainSchema::ward_synth(2).unwrap();
        let v = validate_trajectory(&ward_traj(&w, 0), &w);
        assert!(v.contains(&Violation::Empty));
        assert_eq!(Violation::Empty.to_string(), "T ≥ 1 required");
    }

    #[test]
    fn conforming_trajectory_is_ok() {
        let w = DomainSchema::ward_synth(2).unwrap();
        assert!(validate_trajectory(&ward_traj(&w, 5), &w).is_empty());
    }

    #[test]
    fn half_in_binary_slot_names_the_feature() {
        let w = DomainSchema::ward_synth(2).unwrap();
        let mut t = ward_traj(&w, 3);
        t.observations[1][31] = 0.5;
        let v = validate_trajectory(&t, &w);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("fall_risk"), "{}", v[0]);
    }

    #[test]
    fn overflow_and_dims_reported() {
        let w = DomainSchema::ward_synth(2).unwrap();
        let mut t = ward_traj(&w, 65);
        t.observations[0].pop();
        t.actions[2] = 5;
        t.static_features.push(1.0);
        let v = validate_trajectory(&t, &w);
        assert!(v.iter().any(|v| matches!(v, Violation::TooLong { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::TemporalDim { t: 1, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::ActionOutOfRange { t: 3, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::StaticDim { .. })));
    }

    #[test]
    fn factored_view() {
        let a = ActionSpace::new(8).unwrap();
        assert_eq!(a.factor(5), Some(vec![true, false, true]));
        assert_eq!(a.unfactor(&[true, false, true]), Some(5));
        assert_eq!(ActionSpace::new(6).unwrap().factored_bits(), None);
        assert!(ActionSpace::new(1).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(FeatureSpace::new(&["a", "a"], &[]).is_err());
        assert!(FeatureSpace::new(&[], &[]).is_err());
    }

    #[test]
    fn hiding_projects_schema() {
        let w = DomainSchema::ward_synth(2).unwrap();
        let h = w.without_temporal(&["pulse".into(), "acute_event".into()]).unwrap();
        assert_eq!(h.temporal_space.dim(), 33);
        assert_eq!(h.temporal_space.continuous_dims, 29);
        assert_eq!(h.temporal_space.binary_dims, 4);
        assert!(w.without_temporal(&["nope".into()]).is_err());
    }
}
