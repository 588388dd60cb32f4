//! Scenarios: a domain, an environment and a policy sampled jointly.
//!
//! Each trajectory `i` draws from three independent streams keyed by the
//! scenario seed and `i`: one for the environment, one for the policy and one
//! for the episode length. Swapping the policy therefore leaves every
//! environment draw that does not depend on the realized actions unchanged.

pub mod live;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use live::{LiveSession, LiveStep};

use crate::dataset::BatchDataset;
use crate::digest::digest_of;
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::policy::{load_policy_file, presets, History, PolicySpec};
use crate::rng::{keyed, StreamRng};
use crate::schema::{DomainSchema, Trajectory};

pub const ENV_STREAM: &str = "scenario/env";
pub const POLICY_STREAM: &str = "scenario/policy";
pub const LENGTH_STREAM: &str = "scenario/length";

fn default_min_len() -> usize {
    5
}

/// Where the domain schema comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSource {
    Builtin { builtin: String, actions: usize },
    Inline(DomainSchema),
}

impl DomainSource {
    pub fn resolve(&self) -> Result<DomainSchema> {
        match self {
            DomainSource::Builtin { builtin, actions } => DomainSchema::builtin(builtin, *actions),
            DomainSource::Inline(s) => {
                s.check()?;
                Ok(s.clone())
            }
        }
    }
}

/// Where the policy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySource {
    /// `clinician-team` or `guideline`.
    #[serde(rename_all = "snake_case")]
    Preset {
        preset: String,
        #[serde(default)]
        seed: u64,
    },
    /// A policy spec or an exported ground-truth file.
    File { file: PathBuf },
    Inline(PolicySpec),
}

impl PolicySource {
    pub fn resolve(&self, schema: &DomainSchema, base_dir: Option<&Path>) -> Result<PolicySpec> {
        let spec = match self {
            PolicySource::Preset { preset, seed } => match preset.as_str() {
                "clinician-team" => presets::clinician_team(schema, *seed)?,
                "guideline" => presets::guideline(schema, 7, 2.0)?,
                other => return Err(Error::Config(format!("unknown policy preset '{other}'"))),
            },
            PolicySource::File { file } => {
                let path = match base_dir {
                    Some(b) if file.is_relative() => b.join(file),
                    _ => file.clone(),
                };
                load_policy_file(&path)?
            }
            PolicySource::Inline(p) => p.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSource,
    pub environment: EnvConfig,
    pub policy: PolicySource,
    /// Temporal features removed from exported and live-visible data.
    #[serde(default)]
    pub confounding: Vec<String>,
    pub horizon: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub schema: DomainSchema,
    pub env: Environment,
    pub policy: PolicySpec,
    hidden: Vec<usize>,
    provenance: String,
}

#[derive(Serialize)]
struct ProvenanceRecord<'a> {
    config: &'a ScenarioConfig,
    environment: String,
    policy: String,
    length_distribution: &'static str,
}

impl Scenario {
    /// Resolve and cross-check a config; relative paths resolve against `base_dir`.
    pub fn from_config(config: ScenarioConfig, base_dir: Option<&Path>) -> Result<Self> {
        let schema = config.domain.resolve()?;
        let env = config.environment.build(&schema, base_dir)?;
        let policy = config.policy.resolve(&schema, base_dir)?;
        Self::assemble(config, schema, env, policy)
    }

    /// Bind already-built parts; the config's environment and policy entries
    /// are kept for provenance only.
    pub fn assemble(config: ScenarioConfig, schema: DomainSchema, env: Environment, policy: PolicySpec) -> Result<Self> {
        if env.schema != schema {
            return Err(Error::Scenario(format!(
                "environment schema '{}' does not match domain '{}'",
                env.schema.name, schema.name
            )));
        }
        policy.check_schema(&schema)?;
        if config.horizon == 0 || config.horizon > schema.max_length {
            return Err(Error::Scenario(format!(
                "horizon {} must lie in [1, {}]",
                config.horizon, schema.max_length
            )));
        }
        if config.min_len == 0 || config.min_len > config.horizon {
            return Err(Error::Scenario(format!(
                "min_len {} must lie in [1, horizon = {}]",
                config.min_len, config.horizon
            )));
        }
        let mut hidden = schema.temporal_indices(&config.confounding)?;
        hidden.sort_unstable();
        hidden.dedup();
        if hidden.len() != config.confounding.len() {
            return Err(Error::config("confounding lists a feature twice"));
        }
        if hidden.len() == schema.temporal_space.dim() {
            return Err(Error::config("cannot hide every temporal feature"));
        }
        let provenance = digest_of(&ProvenanceRecord {
            config: &config,
            environment: digest_of(&env)?,
            policy: digest_of(&policy)?,
            length_distribution: "uniform[min_len, horizon]",
        })?;
        Ok(Scenario {
            config,
            schema,
            env,
            policy,
            hidden,
            provenance,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(ScenarioConfig::load(path)?, path.parent())
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn hidden_indices(&self) -> &[usize] {
        &self.hidden
    }

    /// Visible fraction `dim X' / dim X` of the temporal space.
    pub fn confoundedness(&self) -> f64 {
        let d = self.schema.temporal_space.dim();
        (d - self.hidden.len()) as f64 / d as f64
    }

    pub fn env_stream(&self, i: u64) -> StreamRng {
        keyed(self.config.seed, ENV_STREAM, i)
    }

    pub fn policy_stream(&self, i: u64) -> StreamRng {
        keyed(self.config.seed, POLICY_STREAM, i)
    }

    pub fn episode_length(&self, i: u64) -> usize {
        keyed(self.config.seed, LENGTH_STREAM, i).random_range(self.config.min_len..=self.config.horizon)
    }

    /// Trajectory `i` over the full feature set.
    pub fn sample_full(&self, i: u64) -> Result<Trajectory> {
        let len = self.episode_length(i);
        let mut env_rng = self.env_stream(i);
        let mut pol_rng = self.policy_stream(i);
        let member = self.policy.draw_member(&mut pol_rng);
        let (x_s, x_1) = self.env.sample_start(&mut env_rng)?;
        let mut cur = self.env.cursor(&x_s, &x_1)?;
        let mut obs = vec![x_1];
        let mut acts = Vec::with_capacity(len);
        loop {
            let y = self.policy.sample_action(&History::new(&x_s, &obs, &acts), member, &mut pol_rng)?;
            acts.push(y);
            if obs.len() == len {
                break;
            }
            let x = self.env.advance(&mut cur, y)?.sample(&mut env_rng);
            self.env.observe(&mut cur, &x)?;
            obs.push(x);
        }
        Ok(Trajectory {
            static_features: x_s,
            observations: obs,
            actions: acts,
        })
    }

    /// Full-feature batch of trajectories `0..n`, in index order.
    pub fn generate_full(&self, n: usize) -> Result<BatchDataset> {
        let trajectories = (0..n as u64)
            .into_par_iter()
            .map(|i| self.sample_full(i))
            .collect::<Result<Vec<_>>>()?;
        let mut d = BatchDataset::new(self.schema.clone(), self.config.seed, self.provenance.clone());
        d.trajectories = trajectories;
        Ok(d)
    }

    /// Generate `n` trajectories with the confounding projection applied.
    pub fn generate_batch(&self, n: usize) -> Result<BatchDataset> {
        let full = self.generate_full(n)?;
        Ok(hide_confounders(&full, &self.config.confounding)?.0)
    }

    pub fn live(&self, episode: u64) -> Result<(LiveSession<'_>, LiveStep)> {
        LiveSession::reset(self, episode)
    }
}

/// Remove the named temporal columns; returns the projected dataset and the
/// visible fraction `dim X' / dim X` of the full temporal space.
pub fn hide_confounders(d: &BatchDataset, hide: &[String]) -> Result<(BatchDataset, f64)> {
    let visible = d.visible_schema()?;
    let mut idx = visible.temporal_indices(hide)?;
    idx.sort_unstable();
    idx.dedup();
    let keep: Vec<usize> = (0..visible.temporal_space.dim()).filter(|i| idx.binary_search(i).is_err()).collect();
    if keep.is_empty() {
        return Err(Error::config("cannot hide every temporal feature"));
    }
    let mut out = d.clone();
    for t in &mut out.trajectories {
        for x in &mut t.observations {
            *x = keep.iter().map(|&i| x[i]).collect();
        }
    }
    for &i in &idx {
        out.hidden_columns.push(visible.temporal_space.names[i].clone());
    }
    let measure = keep.len() as f64 / d.schema.temporal_space.dim() as f64;
    Ok((out, measure))
}
