//! Comparing a recovered policy against the demonstrator.

use serde::{Deserialize, Serialize};

use crate::dataset::BatchDataset;
use crate::error::{Error, Result};
use crate::policy::{BaseDecider, GroundTruth, History, Lag, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMatch {
    /// Fraction of prefixes where the most probable actions agree.
    pub agreement: f64,
    pub mean_tv: f64,
    pub prefixes: usize,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Evaluate both policies on every prefix `(x_{1:t}, y_{1:t-1})` of `probes`.
pub fn action_match(a: &PolicySpec, b: &PolicySpec, probes: &BatchDataset) -> Result<ActionMatch> {
    if a.actions != b.actions {
        return Err(Error::dim("action space", a.actions, b.actions));
    }
    let (mut agree, mut tv, mut n) = (0usize, 0.0, 0usize);
    for t in &probes.trajectories {
        for len in 1..=t.len() {
            let h = History::new(&t.static_features, &t.observations[..len], &t.actions[..len - 1]);
            let (pa, pb) = (a.distribution(&h)?, b.distribution(&h)?);
            agree += usize::from(argmax(&pa) == argmax(&pb));
            tv += 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("no probe histories".into()));
    }
    Ok(ActionMatch {
        agreement: agree as f64 / n as f64,
        mean_tv: tv / n as f64,
        prefixes: n,
    })
}

/// Difference in lag between two components: `Some(hat - truth)` when both
/// are finite, `Some(0)` when both are full, `None` when only one is.
fn lag_delta(hat: Lag, truth: Lag) -> Option<i64> {
    match (hat, truth) {
        (Lag::Full, Lag::Full) => Some(0),
        (Lag::Steps(a), Lag::Steps(b)) => Some(a as i64 - b as i64),
        _ => None,
    }
}

fn jaccard(a: &[usize], b: &[usize], a_static: &[usize], b_static: &[usize]) -> f64 {
    let inter = a.iter().filter(|i| b.contains(i)).count() + a_static.iter().filter(|i| b_static.contains(i)).count();
    let union = a.len() + b.len() + a_static.len() + b_static.len() - inter;
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn linf(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute parameter difference, when the deciders share a shape.
fn decider_error(hat: &BaseDecider, truth: &BaseDecider) -> Option<f64> {
    match (hat, truth) {
        (BaseDecider::LinearSoftmax(a), BaseDecider::LinearSoftmax(b)) => {
            let same = a.depth == b.depth && a.weights.len() == b.weights.len()
                && a.weights.iter().zip(&b.weights).all(|(x, y)| x.len() == y.len());
            same.then(|| {
                linf(
                    a.weights.iter().flatten().chain(&a.bias).copied(),
                    b.weights.iter().flatten().chain(&b.bias).copied(),
                )
            })
        }
        (BaseDecider::DecisionTree(a), BaseDecider::DecisionTree(b)) => {
            // same topology and split features; compare thresholds and leaf scores
            use crate::policy::TreeNode::*;
            if a.nodes.len() != b.nodes.len() {
                return None;
            }
            let mut err: f64 = 0.0;
            for (x, y) in a.nodes.iter().zip(&b.nodes) {
                match (x, y) {
                    (Split { feature: fa, threshold: ta, left: la, right: ra }, Split { feature: fb, threshold: tb, left: lb, right: rb })
                        if fa == fb && la == lb && ra == rb =>
                    {
                        err = err.max((ta - tb).abs())
                    }
                    (Leaf { scores: sa }, Leaf { scores: sb }) if sa.len() == sb.len() => {
                        err = err.max(linf(sa.iter().copied(), sb.iter().copied()))
                    }
                    _ => return None,
                }
            }
            Some(err)
        }
        (BaseDecider::RecurrentScorer(a), BaseDecider::RecurrentScorer(b)) => a
            .params
            .same_layout(&b.params)
            .then(|| linf(a.params.flatten().into_iter(), b.params.flatten().into_iter())),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentError {
    pub decider: String,
    pub beta_abs_error: f64,
    pub mask_jaccard: f64,
    pub lag_delta: Option<i64>,
    /// Largest parameter difference; absent when the shapes differ.
    pub decider_max_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum GroundTruthComparison {
    Comparable {
        weight_l1_error: f64,
        components: Vec<ComponentError>,
    },
    Incomparable {
        reason: String,
    },
}

impl GroundTruthComparison {
    /// True when every reported error is exactly zero.
    pub fn is_exact(&self) -> bool {
        match self {
            GroundTruthComparison::Comparable { weight_l1_error, components } => {
                *weight_l1_error == 0.0
                    && components.iter().all(|c| {
                        c.beta_abs_error == 0.0
                            && c.mask_jaccard == 1.0
                            && c.lag_delta == Some(0)
                            && c.decider_max_abs_error == Some(0.0)
                    })
            }
            GroundTruthComparison::Incomparable { .. } => false,
        }
    }
}

/// Per-knob errors of `hat` against `truth`, component by component.
pub fn compare_ground_truth(hat: &GroundTruth, truth: &GroundTruth) -> GroundTruthComparison {
    let (p, q) = (&hat.policy, &truth.policy);
    let incomparable = |reason: String| GroundTruthComparison::Incomparable { reason };
    if p.components.len() != q.components.len() {
        return incomparable(format!("{} components vs {}", p.components.len(), q.components.len()));
    }
    if p.actions != q.actions {
        return incomparable(format!("{} actions vs {}", p.actions, q.actions));
    }
    for (i, (a, b)) in p.components.iter().zip(&q.components).enumerate() {
        if a.decider.kind_name() != b.decider.kind_name() {
            return incomparable(format!(
                "component {i} is a {} but the ground truth has a {}",
                a.decider.kind_name(),
                b.decider.kind_name()
            ));
        }
    }
    let components = p
        .components
        .iter()
        .zip(&q.components)
        .map(|(a, b)| ComponentError {
            decider: a.decider.kind_name().to_string(),
            beta_abs_error: (a.beta - b.beta).abs(),
            mask_jaccard: jaccard(&a.mask.temporal, &b.mask.temporal, &a.mask.static_features, &b.mask.static_features),
            lag_delta: lag_delta(a.lag, b.lag),
            decider_max_abs_error: decider_error(&a.decider, &b.decider),
        })
        .collect();
    GroundTruthComparison::Comparable {
        weight_l1_error: p.weights.iter().zip(&q.weights).map(|(a, b)| (a - b).abs()).sum(),
        components,
    }
}
