//! Falsification-based measurement of how far back a policy looks.
//!
//! A lag `L` is accepted when, on every probe history, re-drawing all
//! observations older than the last `L` and all actions older than the last
//! `L` never moves the action distribution by more than `threshold` in total
//! variation.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{History, PolicySpec};
use crate::error::Result;
use crate::rng::{keyed, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Random probe histories.
    pub probes: usize,
    /// Largest lag tested; anything needing more is reported as `AtLeast(budget)`.
    pub budget: usize,
    /// Perturbations per probe and lag.
    pub trials: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            probes: 20,
            budget: 5,
            trials: 10,
            threshold: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Markovianity {
    Lag(usize),
    AtLeast(usize),
}

impl fmt::Display for Markovianity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Markovianity::Lag(l) => write!(f, "{l}"),
            Markovianity::AtLeast(b) => write!(f, "≥ {b}"),
        }
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

struct Probe {
    static_features: Vec<f64>,
    observations: Vec<Vec<f64>>,
    actions: Vec<usize>,
}

fn random_obs(dim: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_probe(p: &PolicySpec, len: usize, rng: &mut StreamRng) -> Probe {
    Probe {
        static_features: random_obs(p.static_dim, rng),
        observations: (0..len).map(|_| random_obs(p.temporal_dim, rng)).collect(),
        actions: (0..len - 1).map(|_| rng.random_range(0..p.actions)).collect(),
    }
}

/// Smallest lag in `1..budget` that survives every perturbation trial.
pub fn measure_markovianity(p: &PolicySpec, cfg: &ProbeConfig) -> Result<Markovianity> {
    p.validate()?;
    // long enough that every tested lag leaves something to perturb
    let len = cfg.budget + 2;
    let probes: Vec<Probe> = (0..cfg.probes as u64)
        .map(|i| random_probe(p, len, &mut keyed(cfg.seed, "markov/probe", i)))
        .collect();
    let base: Vec<Vec<f64>> = probes
        .iter()
        .map(|pr| p.distribution(&History::new(&pr.static_features, &pr.observations, &pr.actions)))
        .collect::<Result<_>>()?;

    'lag: for lag in 1..cfg.budget {
        let mut rng = keyed(cfg.seed, "markov/perturb", lag as u64);
        for (pr, reference) in probes.iter().zip(&base) {
            for _ in 0..cfg.trials {
                let mut obs = pr.observations.clone();
                let mut acts = pr.actions.clone();
                for x in obs.iter_mut().take(len - lag) {
                    *x = random_obs(p.temporal_dim, &mut rng);
                }
                for a in acts.iter_mut().take((len - 1).saturating_sub(lag)) {
                    *a = rng.random_range(0..p.actions);
                }
                let d = p.distribution(&History::new(&pr.static_features, &obs, &acts))?;
                if total_variation(reference, &d) > cfg.threshold {
                    continue 'lag;
                }
            }
        }
        return Ok(Markovianity::Lag(lag));
    }
    Ok(Markovianity::AtLeast(cfg.budget))
}
