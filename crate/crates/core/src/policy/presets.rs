//! Ready-made policies for the built-in domains.

use rand::Rng;
use rand_distr::StandardNormal;

use super::decider::{BaseDecider, DecisionTree, FeatureRef, LinearSoftmax, RecurrentScorer, TreeNode};
use super::{Lag, Mask, PolicyComponent, PolicySpec};
use crate::error::Result;
use crate::rng::keyed;
use crate::schema::DomainSchema;

fn leaf(actions: usize, favoured: usize) -> TreeNode {
    let mut scores = vec![0.0; actions];
    scores[favoured % actions] = 1.0;
    TreeNode::Leaf { scores }
}

/// Two-level threshold tree on the first two visible temporal features.
pub fn guideline_tree(actions: usize) -> DecisionTree {
    let f = |index| FeatureRef::Temporal { index, lag: 0 };
    DecisionTree {
        nodes: vec![
            TreeNode::Split { feature: f(0), threshold: 0.0, left: 1, right: 2 },
            TreeNode::Split { feature: f(1), threshold: 0.0, left: 3, right: 4 },
            TreeNode::Split { feature: f(1), threshold: 0.5, left: 5, right: 6 },
            leaf(actions, 0),
            leaf(actions, 1),
            leaf(actions, 2),
            leaf(actions, 3),
        ],
    }
}

/// Linear decider with `N(0, scale²)` weights.
pub fn random_linear(depth: usize, static_dim: usize, temporal_dim: usize, actions: usize, scale: f64, seed: u64) -> LinearSoftmax {
    let mut rng = keyed(seed, "preset/linear", 0);
    let d = LinearSoftmax::feature_dim(depth, static_dim, temporal_dim, actions);
    let mut draw = || scale * rng.sample::<f64, _>(StandardNormal);
    let weights = (0..actions).map(|_| (0..d).map(|_| draw()).collect()).collect();
    let bias = (0..actions).map(|_| draw()).collect();
    LinearSoftmax { depth, weights, bias }
}

/// Single-component tree policy over the first `visible` temporal features.
pub fn guideline(schema: &DomainSchema, visible: usize, beta: f64) -> Result<PolicySpec> {
    let s = schema.static_space.dim();
    let t = schema.temporal_space.dim();
    let a = schema.action_space.cardinality;
    let mask = Mask {
        temporal: (0..visible.clamp(2, t)).collect(),
        static_features: (0..s).collect(),
    };
    PolicySpec::new(
        s,
        t,
        a,
        vec![PolicyComponent {
            decider: BaseDecider::DecisionTree(guideline_tree(a)),
            mask,
            lag: Lag::Steps(1),
            beta,
        }],
        vec![1.0],
    )
}

/// Three clinicians: a guideline follower seeing 20% of the vitals, a linear
/// scorer with two steps of memory, and a recurrent scorer over three steps.
pub fn clinician_team(schema: &DomainSchema, seed: u64) -> Result<PolicySpec> {
    let s = schema.static_space.dim();
    let t = schema.temporal_space.dim();
    let a = schema.action_space.cardinality;
    let visible = ((t as f64) * 0.2).round().max(2.0) as usize;
    let all = Mask::all(s, t);
    let components = vec![
        PolicyComponent {
            decider: BaseDecider::DecisionTree(guideline_tree(a)),
            mask: Mask {
                temporal: (0..visible).collect(),
                static_features: (0..s).collect(),
            },
            lag: Lag::Steps(1),
            beta: 3.0,
        },
        PolicyComponent {
            decider: BaseDecider::LinearSoftmax(random_linear(2, s, t, a, 0.3, seed)),
            mask: all.clone(),
            lag: Lag::Steps(2),
            beta: 1.0,
        },
        PolicyComponent {
            decider: BaseDecider::RecurrentScorer(RecurrentScorer::new(s, t, a, 8, crate::rng::child_seed(seed, "preset/recurrent", 0))?),
            mask: all,
            lag: Lag::Steps(3),
            beta: 1.0,
        },
    ];
    PolicySpec::new(s, t, a, components, vec![0.5, 0.3, 0.2])
}

/// Random complete tree of the given depth over a view of the given shape.
pub fn random_tree(depth: usize, static_dim: usize, temporal_dim: usize, actions: usize, seed: u64) -> DecisionTree {
    let mut rng = keyed(seed, "preset/tree", 0);
    let splits = (1usize << depth) - 1;
    let mut nodes = Vec::with_capacity(2 * splits + 1);
    for i in 0..splits {
        let feature = match rng.random_range(0..4) {
            0 if static_dim > 0 => FeatureRef::Static { index: rng.random_range(0..static_dim) },
            1 => FeatureRef::Action { lag: rng.random_range(1..=2), action: rng.random_range(0..actions) },
            _ => FeatureRef::Temporal { index: rng.random_range(0..temporal_dim), lag: rng.random_range(0..=2) },
        };
        nodes.push(TreeNode::Split {
            feature,
            threshold: rng.sample::<f64, _>(StandardNormal) * 0.5,
            left: 2 * i + 1,
            right: 2 * i + 2,
        });
    }
    for _ in 0..=splits {
        nodes.push(TreeNode::Leaf {
            scores: (0..actions).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        });
    }
    DecisionTree { nodes }
}

/// Random valid spec: `components` members with random masks, lags, betas and
/// tree or linear deciders (recurrent too when `recurrent` is set).
pub fn random_spec(
    static_dim: usize,
    temporal_dim: usize,
    actions: usize,
    components: usize,
    recurrent: bool,
    seed: u64,
) -> Result<PolicySpec> {
    let mut rng = keyed(seed, "preset/spec", 0);
    let mut members = Vec::with_capacity(components);
    for c in 0..components as u64 {
        let sub = crate::rng::child_seed(seed, "preset/spec/member", c);
        let mut temporal: Vec<usize> = (0..temporal_dim).filter(|_| rng.random_bool(0.6)).collect();
        if temporal.is_empty() {
            temporal.push(rng.random_range(0..temporal_dim));
        }
        let static_features: Vec<usize> = (0..static_dim).filter(|_| rng.random_bool(0.6)).collect();
        let (ms, mt) = (static_features.len(), temporal.len());
        let kinds = if recurrent { 3 } else { 2 };
        let decider = match rng.random_range(0..kinds) {
            0 => BaseDecider::DecisionTree(random_tree(rng.random_range(1..=3), ms, mt, actions, sub)),
            1 => BaseDecider::LinearSoftmax(random_linear(rng.random_range(1..=3), ms, mt, actions, 1.0, sub)),
            _ => BaseDecider::RecurrentScorer(RecurrentScorer::new(ms, mt, actions, 4, sub)?),
        };
        let lag = match rng.random_range(0..5) {
            0 => Lag::Full,
            n => Lag::Steps(n),
        };
        members.push(PolicyComponent {
            decider,
            mask: Mask { temporal, static_features },
            lag,
            beta: rng.random_range(0.0..5.0),
        });
    }
    let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    PolicySpec::new(static_dim, temporal_dim, actions, members, weights)
}
