//! Base deciders: score functions `q(y | view)` over the action space.

use serde::{Deserialize, Serialize};

use super::View;
use crate::diff::{Dense, Graph, GruCell, ParamStore};
use crate::error::{Error, Result};

/// Largest number of leaves a decision tree may have.
pub const MAX_LEAVES: usize = 32;

/// A scalar read from the (masked, windowed) view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum FeatureRef {
    /// Masked static feature `index`.
    Static { index: usize },
    /// Masked temporal feature `index` at `lag` steps back (0 = current).
    Temporal { index: usize, lag: usize },
    /// Indicator that the action `lag ≥ 1` steps back equals `action`.
    Action { lag: usize, action: usize },
}

impl FeatureRef {
    /// Value in the view, or `None` when it lies before the start of the view.
    pub fn read(&self, v: &View) -> Option<f64> {
        match *self {
            FeatureRef::Static { index } => v.static_features.get(index).copied(),
            FeatureRef::Temporal { index, lag } => {
                let n = v.observations.len();
                (lag < n).then(|| v.observations[n - 1 - lag][index])
            }
            FeatureRef::Action { lag, action } => {
                let n = v.actions.len();
                (lag >= 1 && lag <= n).then(|| f64::from(u8::from(v.actions[n - lag] == action)))
            }
        }
    }

    /// How many steps back this reference reaches (observations and actions).
    pub fn reach(&self) -> usize {
        match *self {
            FeatureRef::Static { .. } => 0,
            FeatureRef::Temporal { lag, .. } => lag,
            FeatureRef::Action { lag, .. } => lag,
        }
    }

    fn check(&self, static_dim: usize, temporal_dim: usize, actions: usize) -> Result<()> {
        let ok = match *self {
            FeatureRef::Static { index } => index < static_dim,
            FeatureRef::Temporal { index, .. } => index < temporal_dim,
            FeatureRef::Action { lag, action } => lag >= 1 && action < actions,
        };
        if !ok {
            return Err(Error::Config(format!("feature reference {self:?} is outside the policy's visible inputs")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum TreeNode {
    /// Go to `left` when the feature is `≤ threshold` or unavailable, else `right`.
    Split {
        feature: FeatureRef,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { scores: Vec<f64> },
}

/// Guideline-style tree of single-feature threshold splits; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    fn check(&self, static_dim: usize, temporal_dim: usize, actions: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::config("decision tree has no nodes"));
        }
        if self.leaves() > MAX_LEAVES {
            return Err(Error::Config(format!("decision tree has {} leaves (max {MAX_LEAVES})", self.leaves())));
        }
        // every node reachable at most once from the root, children after parents
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                TreeNode::Split { feature, threshold, left, right } => {
                    feature.check(static_dim, temporal_dim, actions)?;
                    if !threshold.is_finite() || *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                        return Err(Error::Config(format!("decision tree node {i} has invalid children or threshold")));
                    }
                }
                TreeNode::Leaf { scores } => {
                    if scores.len() != actions || scores.iter().any(|s| !s.is_finite()) {
                        return Err(Error::Config(format!("decision tree leaf {i} needs {actions} finite scores")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn scores(&self, v: &View) -> Vec<f64> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { scores } => return scores.clone(),
                TreeNode::Split { feature, threshold, left, right } => {
                    i = match feature.read(v) {
                        Some(x) if x > *threshold => *right,
                        _ => *left,
                    };
                }
            }
        }
    }

    fn reach(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                TreeNode::Split { feature, .. } => feature.reach(),
                TreeNode::Leaf { .. } => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Linear scores on the last `depth` observations and actions (zero-padded)
/// plus the static features: `q_y = w_y · φ + b_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    pub depth: usize,
    /// One row per action over `φ = [x_t, x_{t-1}, …, y_{t-1} onehot, …, x_s]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearSoftmax {
    pub fn feature_dim(depth: usize, static_dim: usize, temporal_dim: usize, actions: usize) -> usize {
        depth * temporal_dim + depth * actions + static_dim
    }

    pub fn features(&self, v: &View, temporal_dim: usize, actions: usize) -> Vec<f64> {
        let mut phi = Vec::with_capacity(Self::feature_dim(self.depth, v.static_features.len(), temporal_dim, actions));
        let n = v.observations.len();
        for lag in 0..self.depth {
            match n.checked_sub(1 + lag) {
                Some(i) => phi.extend_from_slice(&v.observations[i]),
                None => phi.extend(std::iter::repeat(0.0).take(temporal_dim)),
            }
        }
        let m = v.actions.len();
        for lag in 1..=self.depth {
            let mut oh = vec![0.0; actions];
            if let Some(i) = m.checked_sub(lag) {
                oh[v.actions[i]] = 1.0;
            }
            phi.extend(oh);
        }
        phi.extend_from_slice(&v.static_features);
        phi
    }

    pub fn scores(&self, v: &View, temporal_dim: usize, actions: usize) -> Vec<f64> {
        let phi = self.features(v, temporal_dim, actions);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(&phi).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    fn check(&self, static_dim: usize, temporal_dim: usize, actions: usize) -> Result<()> {
        let d = Self::feature_dim(self.depth, static_dim, temporal_dim, actions);
        if self.depth == 0 {
            return Err(Error::config("linear decider depth must be at least 1"));
        }
        if self.weights.len() != actions || self.bias.len() != actions {
            return Err(Error::dim("linear decider rows", actions, self.weights.len()));
        }
        for w in &self.weights {
            if w.len() != d {
                return Err(Error::dim("linear decider features", d, w.len()));
            }
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::config("linear decider weights must be finite"));
        }
        Ok(())
    }
}

/// GRU over the view `[x_τ, onehot(y_{τ-1}), x_s]`, scores from the last state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentScorer {
    pub params: ParamStore,
    pub cell: GruCell,
    pub out: Dense,
}

impl RecurrentScorer {
    pub fn new(static_dim: usize, temporal_dim: usize, actions: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let cell = GruCell::new(&mut params, "cell", temporal_dim + actions + static_dim, hidden)?;
        let out = Dense::new(&mut params, "out", hidden, actions)?;
        Ok(RecurrentScorer { params, cell, out })
    }

    pub fn scores(&self, v: &View, actions: usize) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let mut h = self.cell.zero_state(&mut g);
        let n = v.observations.len();
        let first_action = v.actions.len() as isize - (n as isize - 1);
        for (i, x) in v.observations.iter().enumerate() {
            let mut input = x.clone();
            let mut oh = vec![0.0; actions];
            // action preceding observation i, when it is in view
            let ai = first_action + i as isize - 1;
            if ai >= 0 && (ai as usize) < v.actions.len() {
                oh[v.actions[ai as usize]] = 1.0;
            }
            input.extend(oh);
            input.extend_from_slice(&v.static_features);
            let xv = g.constant(input);
            h = self.cell.step(&mut g, xv, h);
        }
        let q = self.out.forward(&mut g, h);
        g.value(q).to_vec()
    }

    fn check(&self, static_dim: usize, temporal_dim: usize, actions: usize) -> Result<()> {
        if self.cell.inputs != temporal_dim + actions + static_dim || self.out.outputs != actions {
            return Err(Error::dim("recurrent decider inputs", temporal_dim + actions + static_dim, self.cell.inputs));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDecider {
    DecisionTree(DecisionTree),
    LinearSoftmax(LinearSoftmax),
    RecurrentScorer(RecurrentScorer),
}

impl BaseDecider {
    pub fn kind_name(&self) -> &'static str {
        match self {
            BaseDecider::DecisionTree(_) => "decision-tree",
            BaseDecider::LinearSoftmax(_) => "linear-softmax",
            BaseDecider::RecurrentScorer(_) => "recurrent-scorer",
        }
    }

    /// Validate against the masked input dimensions.
    pub fn check(&self, static_dim: usize, temporal_dim: usize, actions: usize) -> Result<()> {
        match self {
            BaseDecider::DecisionTree(t) => t.check(static_dim, temporal_dim, actions),
            BaseDecider::LinearSoftmax(l) => l.check(static_dim, temporal_dim, actions),
            BaseDecider::RecurrentScorer(r) => r.check(static_dim, temporal_dim, actions),
        }
    }

    pub fn scores(&self, v: &View, temporal_dim: usize, actions: usize) -> Vec<f64> {
        match self {
            BaseDecider::DecisionTree(t) => t.scores(v),
            BaseDecider::LinearSoftmax(l) => l.scores(v, temporal_dim, actions),
            BaseDecider::RecurrentScorer(r) => r.scores(v, actions),
        }
    }

    /// Steps of history the decider can read at most (`None`: unbounded).
    pub fn reach(&self) -> Option<usize> {
        match self {
            BaseDecider::DecisionTree(t) => Some(t.reach() + 1),
            BaseDecider::LinearSoftmax(l) => Some(l.depth),
            BaseDecider::RecurrentScorer(_) => None,
        }
    }
}
