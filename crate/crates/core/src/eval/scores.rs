//! Predictive (train on synthetic, test on real) and discriminative scores.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierConfig, SequenceClassifier, SequenceExample};
use crate::dataset::BatchDataset;
use crate::error::{Error, Result};
use crate::rng::keyed;
use crate::schema::{DomainSchema, Trajectory};

/// Area under the ROC curve by the Mann-Whitney statistic, ties counted half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auroc labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "AUROC needs both classes in the evaluation labels ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Per-feature standardization fitted on one set of sequences.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(seqs: &[Vec<Vec<f64>>]) -> Self {
        let d = seqs.iter().flatten().next().map_or(0, |x| x.len());
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for x in seqs.iter().flatten() {
            n += 1.0;
            for k in 0..d {
                mean[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let n = f64::max(n, 1.0);
        let scale = (0..d)
            .map(|k| {
                let m = mean[k] / n;
                let var = (sq[k] / n - m * m).max(0.0);
                if var > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        mean.iter_mut().for_each(|m| *m /= n);
        Standardizer { mean, scale }
    }

    fn apply(&self, seq: &mut [Vec<f64>]) {
        for x in seq {
            for k in 0..x.len() {
                x[k] = (x[k] - self.mean[k]) / self.scale[k];
            }
        }
    }
}

/// Classifier input at step `t`: `[x_t, onehot(y_t), x_s]`.
fn encode(t: &Trajectory, actions: usize) -> Vec<Vec<f64>> {
    t.observations
        .iter()
        .zip(&t.actions)
        .map(|(x, &y)| {
            let mut v = x.clone();
            let mut oh = vec![0.0; actions];
            oh[y] = 1.0;
            v.extend(oh);
            v.extend_from_slice(&t.static_features);
            v
        })
        .collect()
}

fn shared_schema(a: &BatchDataset, b: &BatchDataset) -> Result<DomainSchema> {
    let sa = a.visible_schema()?;
    let sb = b.visible_schema()?;
    if sa != sb {
        return Err(Error::Config(format!(
            "datasets have different visible schemas ('{}' vs '{}')",
            sa.name, sb.name
        )));
    }
    Ok(sa)
}

/// What the predictive classifier forecasts one step ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PredictiveTarget {
    /// A binary temporal feature of `x_{t+1}`.
    Feature { name: String },
    /// Indicator `y_{t+1} = class`; `class` defaults to 1 for two actions.
    Action {
        #[serde(default)]
        class: Option<usize>,
    },
    /// Macro average of the one-vs-rest AUROCs over all action classes.
    ActionOneVsRest,
}

enum Label {
    Feature(usize),
    Action(usize),
}

impl Label {
    fn of(&self, t: &Trajectory, step: usize) -> f64 {
        match *self {
            Label::Feature(k) => t.observations[step][k],
            Label::Action(c) => f64::from(u8::from(t.actions[step] == c)),
        }
    }
}

fn next_step_examples(d: &BatchDataset, actions: usize, label: &Label) -> Vec<SequenceExample> {
    d.trajectories
        .iter()
        .filter(|t| t.len() >= 2)
        .map(|t| SequenceExample {
            inputs: encode(t, actions),
            labels: (0..t.len() - 1).map(|s| (s, label.of(t, s + 1))).collect(),
        })
        .collect()
}

fn train_and_score(train: &[SequenceExample], test: &[SequenceExample], cfg: &ClassifierConfig) -> Result<f64> {
    let inputs: Vec<Vec<Vec<f64>>> = train.iter().map(|e| e.inputs.clone()).collect();
    let st = Standardizer::fit(&inputs);
    let norm = |set: &[SequenceExample]| -> Vec<SequenceExample> {
        set.iter()
            .map(|e| {
                let mut e = e.clone();
                st.apply(&mut e.inputs);
                e
            })
            .collect()
    };
    let (train, test) = (norm(train), norm(test));
    let dim = train.first().or(test.first()).map_or(0, |e| e.inputs[0].len());
    let mut clf = SequenceClassifier::new(dim, cfg)?;
    clf.train(&train, cfg)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in &test {
        let p = clf.predict(&e.inputs);
        for &(s, y) in &e.labels {
            scores.push(p[s]);
            labels.push(y > 0.5);
        }
    }
    auroc(&scores, &labels)
}

/// Train on `synthetic`, report AUROC on `real`.
pub fn predictive_score(
    synthetic: &BatchDataset,
    real: &BatchDataset,
    target: &PredictiveTarget,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    let schema = shared_schema(synthetic, real)?;
    let actions = schema.action_space.cardinality;
    let label = match target {
        PredictiveTarget::Feature { name } => {
            let k = schema
                .temporal_space
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("unknown or hidden target feature '{name}'")))?;
            if !schema.temporal_space.is_binary(k) {
                return Err(Error::Config(format!("target feature '{name}' is not binary")));
            }
            Label::Feature(k)
        }
        PredictiveTarget::Action { class } => {
            let c = match class {
                Some(c) if *c < actions => *c,
                Some(c) => return Err(Error::Config(format!("action class {c} outside 0..{actions}"))),
                None if actions == 2 => 1,
                None => {
                    return Err(Error::config(
                        "action target over more than 2 actions needs a class (or use one-vs-rest)",
                    ))
                }
            };
            Label::Action(c)
        }
        PredictiveTarget::ActionOneVsRest => {
            let mut total = 0.0;
            for c in 0..actions {
                total += predictive_score(synthetic, real, &PredictiveTarget::Action { class: Some(c) }, cfg)?;
            }
            return Ok(total / actions as f64);
        }
    };
    let train = next_step_examples(synthetic, actions, &label);
    let test = next_step_examples(real, actions, &label);
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("predictive score needs trajectories of length at least 2"));
    }
    train_and_score(&train, &test, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminativeConfig {
    pub classifier: ClassifierConfig,
    pub min_trajectories: usize,
    /// Permute the real/synthetic labels (null calibration).
    pub shuffle_labels: bool,
}

impl Default for DiscriminativeConfig {
    fn default() -> Self {
        DiscriminativeConfig {
            classifier: ClassifierConfig::default(),
            min_trajectories: 100,
            shuffle_labels: false,
        }
    }
}

/// `|test accuracy − 0.5|` of a real-vs-synthetic sequence classifier.
pub fn discriminative_score(synthetic: &BatchDataset, real: &BatchDataset, cfg: &DiscriminativeConfig) -> Result<f64> {
    let schema = shared_schema(synthetic, real)?;
    let min = cfg.min_trajectories;
    if synthetic.len() < min || real.len() < min {
        return Err(Error::Config(format!(
            "discriminative score needs at least {min} trajectories in each dataset (got {} synthetic, {} real)",
            synthetic.len(),
            real.len()
        )));
    }
    let actions = schema.action_space.cardinality;
    let seed = cfg.classifier.seed;
    let n = synthetic.len().min(real.len());
    let half = n / 2;
    let pick = |d: &BatchDataset, label: &str| {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.shuffle(&mut keyed(seed, label, 0));
        idx.truncate(n);
        idx
    };
    let (si, ri) = (pick(synthetic, "disc/synthetic"), pick(real, "disc/real"));
    let example = |t: &Trajectory, y: f64| {
        let inputs = encode(t, actions);
        let last = inputs.len() - 1;
        SequenceExample { inputs, labels: vec![(last, y)] }
    };
    let build = |range: std::ops::Range<usize>| -> Vec<SequenceExample> {
        let tag = range.start as u64;
        let mut v: Vec<SequenceExample> = range
            .clone()
            .map(|k| example(&real.trajectories[ri[k]], 1.0))
            .chain(range.map(|k| example(&synthetic.trajectories[si[k]], 0.0)))
            .collect();
        v.shuffle(&mut keyed(seed, "disc/order", tag));
        v
    };
    let (mut train, mut test) = (build(0..half), build(half..n));
    if cfg.shuffle_labels {
        for (set, tag) in [(&mut train, 0u64), (&mut test, 1)] {
            let mut ys: Vec<f64> = set.iter().map(|e| e.labels[0].1).collect();
            ys.shuffle(&mut keyed(seed, "disc/null", tag));
            for (e, y) in set.iter_mut().zip(ys) {
                e.labels[0].1 = y;
            }
        }
    }

    let inputs: Vec<Vec<Vec<f64>>> = train.iter().map(|e| e.inputs.clone()).collect();
    let st = Standardizer::fit(&inputs);
    for e in train.iter_mut().chain(test.iter_mut()) {
        st.apply(&mut e.inputs);
    }
    let mut clf = SequenceClassifier::new(train[0].inputs[0].len(), &cfg.classifier)?;
    clf.train(&train, &cfg.classifier)?;
    let correct = test
        .iter()
        .filter(|e| {
            let (s, y) = e.labels[0];
            (clf.predict(&e.inputs)[s] > 0.5) == (y > 0.5)
        })
        .count();
    Ok((correct as f64 / test.len() as f64 - 0.5).abs())
}
