//! Conditional distribution of the next observation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::head::sample_categorical;
use crate::diff::tape::log_sum_exp;
use crate::diff::HeadParams;
use crate::error::{Error, Result};

/// A single head, or a finite mixture of heads (latent-state models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepDistribution {
    Single(HeadParams),
    Mixture {
        weights: Vec<f64>,
        components: Vec<HeadParams>,
    },
}

impl StepDistribution {
    pub fn mixture(weights: Vec<f64>, components: Vec<HeadParams>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::dim("mixture weights", components.len(), weights.len()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights must lie on the simplex (sum {total})")));
        }
        Ok(StepDistribution::Mixture { weights, components })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            StepDistribution::Single(h) => h.sample(rng),
            StepDistribution::Mixture { weights, components } => {
                let k = sample_categorical(weights, rng);
                components[k].sample(rng)
            }
        }
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        match self {
            StepDistribution::Single(h) => h.log_prob(x),
            StepDistribution::Mixture { weights, components } => {
                let mut terms = Vec::with_capacity(weights.len());
                for (w, c) in weights.iter().zip(components) {
                    if *w > 0.0 {
                        terms.push(w.ln() + c.log_prob(x)?);
                    }
                }
                Ok(log_sum_exp(&terms))
            }
        }
    }

    /// Mean of the distribution (Bernoulli slots report probabilities).
    pub fn mean(&self) -> Vec<f64> {
        fn head_mean(h: &HeadParams) -> Vec<f64> {
            let mut m = h.means().to_vec();
            m.extend(h.bernoulli_probs());
            m
        }
        match self {
            StepDistribution::Single(h) => head_mean(h),
            StepDistribution::Mixture { weights, components } => {
                let mut acc = vec![0.0; components[0].head.sample_dim()];
                for (w, c) in weights.iter().zip(components) {
                    for (a, m) in acc.iter_mut().zip(head_mean(c)) {
                        *a += w * m;
                    }
                }
                acc
            }
        }
    }

    pub fn components(&self) -> Vec<(f64, &HeadParams)> {
        match self {
            StepDistribution::Single(h) => vec![(1.0, h)],
            StepDistribution::Mixture { weights, components } => weights.iter().copied().zip(components).collect(),
        }
    }
}
