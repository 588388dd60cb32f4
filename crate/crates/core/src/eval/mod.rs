//! Benchmarking metrics for synthetic datasets and recovered policies.

pub mod classifier;
pub mod policy_match;
pub mod projection;
pub mod scores;

use serde::{Deserialize, Serialize};

pub use classifier::{ClassifierConfig, SequenceClassifier, SequenceExample};
pub use policy_match::{action_match, compare_ground_truth, ActionMatch, ComponentError, GroundTruthComparison};
pub use projection::{project2d, save_projection_csv, write_projection_csv, ProjectedPoint};
pub use scores::{auroc, discriminative_score, predictive_score, DiscriminativeConfig, PredictiveTarget};

use crate::error::Result;

/// A metric value with its seed spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Normal-approximation 95% interval over seeds; absent for one seed.
    pub ci: Option<[f64; 2]>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl MetricReport {
    /// Run `f` once per seed and summarize.
    pub fn over_seeds(
        metric: &str,
        seeds: &[u64],
        config_digest: String,
        mut f: impl FnMut(u64) -> Result<f64>,
    ) -> Result<Self> {
        let per_seed = seeds.iter().map(|&s| f(s)).collect::<Result<Vec<f64>>>()?;
        Ok(Self::from_values(metric, seeds.to_vec(), per_seed, config_digest))
    }

    pub fn from_values(metric: &str, seeds: Vec<u64>, per_seed: Vec<f64>, config_digest: String) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let ci = (per_seed.len() > 1).then(|| {
            let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let half = 1.96 * (var / n).sqrt();
            [mean - half, mean + half]
        });
        MetricReport {
            metric: metric.to_string(),
            value: mean,
            ci,
            seeds,
            per_seed,
            config_digest,
            details: serde_json::Value::Null,
        }
    }
}
