//! Policy side of the generative process.
//!
//! `Q(y | h) = Σ_i w_i · softmax(β_i · q_i(y | g_i(proj_i(h))))` where each
//! component has its own base decider `q_i`, feature mask `proj_i`, history
//! window `g_i` and inverse temperature `β_i`.

pub mod decider;
pub mod markov;
pub mod presets;
pub mod truth;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use decider::{BaseDecider, DecisionTree, FeatureRef, LinearSoftmax, RecurrentScorer, TreeNode};
pub use markov::{measure_markovianity, Markovianity, ProbeConfig};
pub use truth::{export_ground_truth, load_ground_truth, load_policy_file, GroundTruth};

use crate::diff::head::sample_categorical;
use crate::error::{Error, Result};
use crate::schema::DomainSchema;

/// What a policy sees at step `t`: `x_s`, `x_{1:t}` and `y_{1:t-1}`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub static_features: &'a [f64],
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [usize],
}

impl<'a> History<'a> {
    pub fn new(static_features: &'a [f64], observations: &'a [Vec<f64>], actions: &'a [usize]) -> Self {
        History {
            static_features,
            observations,
            actions,
        }
    }

    pub fn to_view(&self) -> View {
        View {
            static_features: self.static_features.to_vec(),
            observations: self.observations.to_vec(),
            actions: self.actions.to_vec(),
        }
    }
}

/// An owned, possibly masked and windowed, history.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub static_features: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
}

/// How far back a component may look.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lag {
    Full,
    Steps(usize),
}

impl fmt::Display for Lag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lag::Full => write!(f, "full"),
            Lag::Steps(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Lag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lag::Full => s.serialize_str("full"),
            Lag::Steps(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Lag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Lag::Steps(n as usize)),
            Raw::S(s) if s == "full" => Ok(Lag::Full),
            Raw::S(s) => Err(serde::de::Error::custom(format!("lag must be a count or \"full\", got \"{s}\""))),
        }
    }
}

/// Keep the last `lag` observations and the last `lag` actions.
pub fn window_history(v: &View, lag: Lag) -> View {
    match lag {
        Lag::Full => v.clone(),
        Lag::Steps(l) => View {
            static_features: v.static_features.clone(),
            observations: v.observations[v.observations.len().saturating_sub(l)..].to_vec(),
            actions: v.actions[v.actions.len().saturating_sub(l)..].to_vec(),
        },
    }
}

/// Visible feature subsets `X'` (indices into the temporal and static spaces).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub temporal: Vec<usize>,
    #[serde(rename = "static")]
    pub static_features: Vec<usize>,
}

impl Mask {
    pub fn all(static_dim: usize, temporal_dim: usize) -> Self {
        Mask {
            temporal: (0..temporal_dim).collect(),
            static_features: (0..static_dim).collect(),
        }
    }

    /// Mask keeping the named temporal features and every static feature.
    pub fn from_names(schema: &DomainSchema, temporal: &[&str]) -> Result<Self> {
        let names: Vec<String> = temporal.iter().map(|s| s.to_string()).collect();
        let mut idx = schema.temporal_indices(&names)?;
        idx.sort_unstable();
        Ok(Mask {
            temporal: idx,
            static_features: (0..schema.static_space.dim()).collect(),
        })
    }

    pub fn check(&self, static_dim: usize, temporal_dim: usize) -> Result<()> {
        if self.temporal.is_empty() {
            return Err(Error::config("mask must keep at least one temporal feature"));
        }
        let sorted = |v: &[usize], n: usize| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&i| i < n);
        if !sorted(&self.temporal, temporal_dim) || !sorted(&self.static_features, static_dim) {
            return Err(Error::config("mask indices must be strictly increasing and within the feature space"));
        }
        Ok(())
    }

    /// `dim X' / dim X` over the temporal space.
    pub fn rationality(&self, temporal_dim: usize) -> f64 {
        self.temporal.len() as f64 / temporal_dim as f64
    }
}

/// Drop masked-out features (dimensionality shrinks).
pub fn apply_mask(v: &View, mask: &Mask) -> Result<View> {
    if mask.temporal.is_empty() {
        return Err(Error::config("mask must keep at least one temporal feature"));
    }
    Ok(View {
        static_features: mask.static_features.iter().map(|&i| v.static_features[i]).collect(),
        observations: v
            .observations
            .iter()
            .map(|x| mask.temporal.iter().map(|&i| x[i]).collect())
            .collect(),
        actions: v.actions.clone(),
    })
}

/// `softmax(β·q)`.
pub fn boltzmann(q: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = q.iter().map(|v| beta * v).collect();
    crate::diff::tape::softmax(&scaled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComponent {
    pub decider: BaseDecider,
    pub mask: Mask,
    pub lag: Lag,
    pub beta: f64,
}

impl PolicyComponent {
    pub fn rationality(&self, temporal_dim: usize) -> f64 {
        self.mask.rationality(temporal_dim)
    }
}

/// Whether mixture weights act per step or pick one member per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureMode {
    #[default]
    PerStep,
    Committee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub static_dim: usize,
    pub temporal_dim: usize,
    pub actions: usize,
    pub components: Vec<PolicyComponent>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub mode: MixtureMode,
}

impl PolicySpec {
    pub fn new(
        static_dim: usize,
        temporal_dim: usize,
        actions: usize,
        components: Vec<PolicyComponent>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let p = PolicySpec {
            static_dim,
            temporal_dim,
            actions,
            components,
            weights,
            mode: MixtureMode::PerStep,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::config("policy needs at least one component"));
        }
        if self.actions < 2 {
            return Err(Error::config("policy needs at least 2 actions"));
        }
        if self.weights.len() != self.components.len() {
            return Err(Error::dim("mixture weights", self.components.len(), self.weights.len()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture weights must be positive and sum to 1 (got {:?})",
                self.weights
            )));
        }
        for (i, c) in self.components.iter().enumerate() {
            let ctx = |e: Error| Error::Config(format!("component {i}: {e}"));
            if !(c.beta >= 0.0 && c.beta.is_finite()) {
                return Err(Error::Config(format!("component {i}: beta must be finite and >= 0")));
            }
            if c.lag == Lag::Steps(0) {
                return Err(Error::Config(format!("component {i}: lag must be >= 1 or \"full\"")));
            }
            c.mask.check(self.static_dim, self.temporal_dim).map_err(ctx)?;
            c.decider
                .check(c.mask.static_features.len(), c.mask.temporal.len(), self.actions)
                .map_err(ctx)?;
        }
        Ok(())
    }

    /// Check the spec against a domain.
    pub fn check_schema(&self, schema: &DomainSchema) -> Result<()> {
        if self.static_dim != schema.static_space.dim()
            || self.temporal_dim != schema.temporal_space.dim()
            || self.actions != schema.action_space.cardinality
        {
            return Err(Error::Scenario(format!(
                "policy dimensions (static {}, temporal {}, actions {}) do not match domain '{}'",
                self.static_dim, self.temporal_dim, self.actions, schema.name
            )));
        }
        Ok(())
    }

    fn check_history(&self, h: &History) -> Result<()> {
        if h.observations.is_empty() {
            return Err(Error::dim("history length", 1, 0));
        }
        if h.actions.len() + 1 != h.observations.len() {
            return Err(Error::dim("history actions", h.observations.len() - 1, h.actions.len()));
        }
        if h.static_features.len() != self.static_dim {
            return Err(Error::dim("static features", self.static_dim, h.static_features.len()));
        }
        for x in h.observations {
            if x.len() != self.temporal_dim {
                return Err(Error::dim("observation", self.temporal_dim, x.len()));
            }
        }
        if let Some(&a) = h.actions.iter().find(|&&a| a >= self.actions) {
            return Err(Error::dim("action index bound", self.actions, a + 1));
        }
        Ok(())
    }

    pub fn component_distribution(&self, i: usize, h: &History) -> Result<Vec<f64>> {
        self.check_history(h)?;
        let c = &self.components[i];
        let v = apply_mask(&h.to_view(), &c.mask)?;
        let v = window_history(&v, c.lag);
        let q = c.decider.scores(&v, c.mask.temporal.len(), self.actions);
        Ok(boltzmann(&q, c.beta))
    }

    /// `Σ_i w_i · component_distribution_i`.
    pub fn distribution(&self, h: &History) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.actions];
        for (i, w) in self.weights.iter().enumerate() {
            let p = self.component_distribution(i, h)?;
            for (o, pi) in out.iter_mut().zip(&p) {
                *o += w * pi;
            }
        }
        Ok(out)
    }

    /// Draw the committee member for one trajectory (committee mode only).
    pub fn draw_member<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        match self.mode {
            MixtureMode::PerStep => None,
            MixtureMode::Committee => Some(sample_categorical(&self.weights, rng)),
        }
    }

    /// Action distribution actually used for sampling.
    pub fn acting_distribution(&self, h: &History, member: Option<usize>) -> Result<Vec<f64>> {
        match member {
            Some(i) => self.component_distribution(i, h),
            None => self.distribution(h),
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, h: &History, member: Option<usize>, rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(&self.acting_distribution(h, member)?, rng))
    }
}

/// Policy distribution of a spec (free-function form).
pub fn policy_distribution(p: &PolicySpec, h: &History) -> Result<Vec<f64>> {
    p.distribution(h)
}

/// Distribution of a single component given its knobs.
pub fn component_distribution(c: &PolicyComponent, actions: usize, h: &History) -> Result<Vec<f64>> {
    let v = apply_mask(&h.to_view(), &c.mask)?;
    let v = window_history(&v, c.lag);
    Ok(boltzmann(&c.decider.scores(&v, c.mask.temporal.len(), actions), c.beta))
}
