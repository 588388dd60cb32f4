//! Step-by-step interaction with a scenario's environment.
//!
//! The caller supplies every action; the scenario's policy is not consulted.
//! Returned observations are projected exactly like exported data, and no
//! reward is ever produced.

use serde::Serialize;

use super::Scenario;
use crate::env::EnvCursor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// What the caller sees after a reset or a step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiveStep {
    /// Static features (present on every step for convenience).
    pub static_features: Vec<f64>,
    /// Current observation with hidden columns removed.
    pub observation: Vec<f64>,
    /// 1-based step index of `observation`.
    pub t: usize,
    pub done: bool,
}

pub struct LiveSession<'a> {
    scenario: &'a Scenario,
    rng: StreamRng,
    cursor: EnvCursor,
    static_features: Vec<f64>,
    t: usize,
}

impl<'a> LiveSession<'a> {
    /// Start episode `episode` using the same environment stream as batch
    /// trajectory `episode`.
    pub fn reset(scenario: &'a Scenario, episode: u64) -> Result<(Self, LiveStep)> {
        let mut rng = scenario.env_stream(episode);
        let (x_s, x_1) = scenario.env.sample_start(&mut rng)?;
        let cursor = scenario.env.cursor(&x_s, &x_1)?;
        let s = LiveSession {
            scenario,
            rng,
            cursor,
            static_features: x_s,
            t: 1,
        };
        let first = s.visible(&x_1);
        Ok((s, first))
    }

    fn visible(&self, x: &[f64]) -> LiveStep {
        let hidden = self.scenario.hidden_indices();
        LiveStep {
            static_features: self.static_features.clone(),
            observation: (0..x.len()).filter(|i| hidden.binary_search(i).is_err()).map(|i| x[i]).collect(),
            t: self.t,
            done: self.done(),
        }
    }

    pub fn done(&self) -> bool {
        self.t >= self.scenario.horizon()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Apply `action` at the current step and return the next observation.
    pub fn step(&mut self, action: usize) -> Result<LiveStep> {
        if self.done() {
            return Err(Error::Session(format!("episode finished at t = {}", self.t)));
        }
        let env = &self.scenario.env;
        let x = env.advance(&mut self.cursor, action)?.sample(&mut self.rng);
        env.observe(&mut self.cursor, &x)?;
        self.t += 1;
        Ok(self.visible(&x))
    }
}
