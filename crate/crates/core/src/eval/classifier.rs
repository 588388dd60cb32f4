//! Recurrent binary classifier: one GRU layer followed by two dense layers.

use serde::{Deserialize, Serialize};

use crate::diff::{fit, Graph, GruCell, Mlp, ParamStore, TrainConfig, Trainable, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub dense: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 16,
            dense: 16,
            epochs: 50,
            learning_rate: 0.05,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            grad_clip: Some(5.0),
            momentum: self.momentum,
            dp: None,
            seed: self.seed,
        }
    }
}

/// One input sequence with labels attached to some of its steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub inputs: Vec<Vec<f64>>,
    /// `(step, label ∈ {0, 1})`.
    pub labels: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    pub params: ParamStore,
    pub cell: GruCell,
    pub head: Mlp,
}

impl SequenceClassifier {
    pub fn new(inputs: usize, cfg: &ClassifierConfig) -> Result<Self> {
        let mut params = ParamStore::new(cfg.seed);
        let cell = GruCell::new(&mut params, "clf.cell", inputs, cfg.hidden)?;
        let head = Mlp::new(&mut params, "clf.head", cfg.hidden, &[cfg.dense], 1)?;
        Ok(SequenceClassifier { params, cell, head })
    }

    fn logits(&self, g: &mut Graph, inputs: &[Vec<f64>]) -> Vec<Var> {
        let mut h = self.cell.zero_state(g);
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let xv = g.constant(x.clone());
            h = self.cell.step(g, xv, h);
            out.push(self.head.forward(g, h));
        }
        out
    }

    /// `P(label = 1)` after every step.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, inputs);
        logits.iter().map(|&l| 1.0 / (1.0 + (-g.scalar(l)).exp())).collect()
    }

    pub fn train(&mut self, examples: &[SequenceExample], cfg: &ClassifierConfig) -> Result<Vec<f64>> {
        fit(self, examples, &cfg.train_config())
    }
}

impl Trainable for SequenceClassifier {
    type Example = SequenceExample;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Mean binary cross-entropy `softplus(l) − y·l` over labelled steps.
    fn example_loss(&self, g: &mut Graph, ex: &SequenceExample, _rng: &mut StreamRng) -> Result<Var> {
        if ex.labels.is_empty() {
            return Err(Error::config("classifier example has no labels"));
        }
        let last = ex.labels.iter().map(|(s, _)| *s).max().unwrap_or(0);
        if last >= ex.inputs.len() {
            return Err(Error::dim("labelled step", ex.inputs.len(), last + 1));
        }
        let logits = self.logits(g, &ex.inputs[..=last]);
        let terms: Vec<Var> = ex
            .labels
            .iter()
            .map(|&(s, y)| {
                let sp = g.softplus(logits[s]);
                let yl = g.scale(logits[s], y);
                g.sub(sp, yl)
            })
            .collect();
        let total = g.add_all(&terms);
        Ok(g.scale(total, 1.0 / ex.labels.len() as f64))
    }
}
