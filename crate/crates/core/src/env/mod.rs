//! Environment side of the generative process: initial state `(x_s, x_1)`
//! and autoregressive dynamics `p(x_{t+1} | history)`.

pub mod align;
pub mod css;
pub mod ground_truth;
pub mod init;
pub mod recurrent;
pub mod step;
pub mod svae;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use css::{css_attention, Attention, CssModel, CssObjective, ElboEstimate, ExactPosterior, PathSampler};
pub use init::{FirstObsModel, InitModel, StaticModel};
pub use recurrent::{BalancedLoss, BalancedModel, TForceModel};
pub use step::StepDistribution;
pub use svae::{EncoderMode, SvaeModel};

use crate::diff::checkpoint::Checkpoint;
use crate::diff::{fit, DistributionHead, TrainConfig};
use crate::dataset::BatchDataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::schema::{DomainSchema, Trajectory};

/// Dimensions an environment model is built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDims {
    pub static_dim: usize,
    pub temporal: usize,
    pub continuous: usize,
    pub actions: usize,
}

impl EnvDims {
    pub fn from_schema(s: &DomainSchema) -> Self {
        EnvDims {
            static_dim: s.static_space.dim(),
            temporal: s.temporal_space.dim(),
            continuous: s.temporal_space.continuous_dims,
            actions: s.action_space.cardinality,
        }
    }

    pub fn head(&self) -> DistributionHead {
        DistributionHead::Factored {
            continuous: self.continuous,
            binary: self.temporal - self.continuous,
        }
    }

    pub fn one_hot(&self, a: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.actions];
        v[a] = 1.0;
        v
    }

    pub fn check_static(&self, x_s: &[f64]) -> Result<()> {
        if x_s.len() != self.static_dim {
            return Err(Error::dim("static features", self.static_dim, x_s.len()));
        }
        Ok(())
    }

    pub fn check_obs(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.temporal {
            return Err(Error::dim("observation", self.temporal, x.len()));
        }
        Ok(())
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions {
            return Err(Error::dim("action index bound", self.actions, a + 1));
        }
        Ok(())
    }

    pub fn check_trajectory(&self, t: &Trajectory) -> Result<()> {
        if t.observations.is_empty() {
            return Err(Error::dim("trajectory length", 1, 0));
        }
        if t.actions.len() != t.observations.len() {
            return Err(Error::dim("actions", t.observations.len(), t.actions.len()));
        }
        self.check_static(&t.static_features)?;
        for x in &t.observations {
            self.check_obs(x)?;
        }
        for &a in &t.actions {
            self.check_action(a)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Tforce,
    Balanced,
    Css,
    Svae,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Tforce, EnvKind::Balanced, EnvKind::Css, EnvKind::Svae];

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Tforce => "tforce",
            EnvKind::Balanced => "balanced",
            EnvKind::Css => "css",
            EnvKind::Svae => "svae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment kind '{s}' (tforce, balanced, css, svae)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvironmentModel {
    Tforce(TForceModel),
    Balanced(BalancedModel),
    Css(CssModel),
    Svae(SvaeModel),
}

impl EnvironmentModel {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvironmentModel::Tforce(_) => EnvKind::Tforce,
            EnvironmentModel::Balanced(_) => EnvKind::Balanced,
            EnvironmentModel::Css(_) => EnvKind::Css,
            EnvironmentModel::Svae(_) => EnvKind::Svae,
        }
    }

    pub fn dims(&self) -> EnvDims {
        match self {
            EnvironmentModel::Tforce(m) => m.core.dims,
            EnvironmentModel::Balanced(m) => m.core.dims,
            EnvironmentModel::Css(m) => m.dims,
            EnvironmentModel::Svae(m) => m.dims,
        }
    }
}

/// Rollout state of any environment.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvCursor {
    Recurrent(recurrent::RecurrentCursor),
    Css(css::CssCursor),
    Svae(svae::SvaeCursor),
}

/// A complete environment: schema, initial-state model and dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub schema: DomainSchema,
    pub init: InitModel,
    pub model: EnvironmentModel,
}

impl Environment {
    pub fn new(schema: DomainSchema, init: InitModel, model: EnvironmentModel) -> Result<Self> {
        schema.check()?;
        let dims = EnvDims::from_schema(&schema);
        if model.dims() != dims {
            return Err(Error::Scenario(format!(
                "environment model dimensions {:?} do not match schema '{}' {:?}",
                model.dims(),
                schema.name,
                dims
            )));
        }
        if init.static_model.mean.len() != schema.static_space.continuous_dims
            || init.static_model.binary_probs.len() != schema.static_space.binary_dims
        {
            return Err(Error::Scenario("initial-state model does not match the static space".into()));
        }
        let env = Environment { schema, init, model };
        if env.own_first_obs().is_none() && env.init.first_obs.is_none() {
            return Err(Error::Scenario(
                "recurrent environments need a first-observation model".into(),
            ));
        }
        Ok(env)
    }

    pub fn kind(&self) -> EnvKind {
        self.model.kind()
    }

    pub fn dims(&self) -> EnvDims {
        self.model.dims()
    }

    /// Whether the dynamics generate `x_1` themselves (latent-state models).
    fn own_first_obs(&self) -> Option<()> {
        matches!(self.model, EnvironmentModel::Css(_) | EnvironmentModel::Svae(_)).then_some(())
    }

    /// Distribution of `x_1` given `x_s`, when the dynamics define one.
    pub fn first_distribution(&self, x_s: &[f64]) -> Result<Option<StepDistribution>> {
        match &self.model {
            EnvironmentModel::Css(m) => m.first_distribution(x_s).map(Some),
            EnvironmentModel::Svae(m) => m.first_distribution(x_s).map(Some),
            _ => Ok(None),
        }
    }

    /// Draw `(x_s, x_1)`.
    pub fn sample_start(&self, rng: &mut StreamRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let x_s = self.init.sample_static(rng);
        let x_1 = match self.first_distribution(&x_s)? {
            Some(d) => d.sample(rng),
            None => self
                .init
                .sample_first(&x_s, rng)
                .ok_or_else(|| Error::Scenario("no first-observation model".into()))?,
        };
        Ok((x_s, x_1))
    }

    pub fn cursor(&self, x_s: &[f64], x_1: &[f64]) -> Result<EnvCursor> {
        Ok(match &self.model {
            EnvironmentModel::Tforce(m) => EnvCursor::Recurrent(m.core.cursor(&m.params, x_s, x_1)?),
            EnvironmentModel::Balanced(m) => EnvCursor::Recurrent(m.core.cursor(&m.params, x_s, x_1)?),
            EnvironmentModel::Css(m) => EnvCursor::Css(m.cursor(x_s, x_1)?),
            EnvironmentModel::Svae(m) => EnvCursor::Svae(m.cursor(x_s, x_1)?),
        })
    }

    /// Record the action taken at the current step and return the
    /// distribution of the next observation.
    pub fn advance(&self, cur: &mut EnvCursor, action: usize) -> Result<StepDistribution> {
        self.dims().check_action(action)?;
        match (&self.model, cur) {
            (EnvironmentModel::Tforce(m), EnvCursor::Recurrent(c)) => m.core.advance(&m.params, c, action),
            (EnvironmentModel::Balanced(m), EnvCursor::Recurrent(c)) => m.core.advance(&m.params, c, action),
            (EnvironmentModel::Css(_), EnvCursor::Css(c)) => c.advance(action),
            (EnvironmentModel::Svae(m), EnvCursor::Svae(c)) => m.advance(c, action),
            _ => Err(Error::Session("cursor belongs to a different environment kind".into())),
        }
    }

    /// Absorb the realized next observation.
    pub fn observe(&self, cur: &mut EnvCursor, x: &[f64]) -> Result<()> {
        self.dims().check_obs(x)?;
        match (&self.model, cur) {
            (EnvironmentModel::Tforce(m), EnvCursor::Recurrent(c)) => m.core.observe(&m.params, c, x),
            (EnvironmentModel::Balanced(m), EnvCursor::Recurrent(c)) => m.core.observe(&m.params, c, x),
            (EnvironmentModel::Css(_), EnvCursor::Css(c)) => c.observe(x),
            (EnvironmentModel::Svae(m), EnvCursor::Svae(c)) => m.observe(c, x),
            _ => Err(Error::Session("cursor belongs to a different environment kind".into())),
        }
    }

    /// Distribution of `x_{t}` given `x_s`, `x_{1:t-1}` and `y_{1:t-1}`.
    pub fn step_distribution(&self, x_s: &[f64], obs: &[Vec<f64>], actions: &[usize]) -> Result<StepDistribution> {
        if obs.is_empty() {
            return Err(Error::dim("history length", 1, 0));
        }
        if actions.len() != obs.len() {
            return Err(Error::dim("history actions", obs.len(), actions.len()));
        }
        let mut cur = self.cursor(x_s, &obs[0])?;
        let mut dist = self.advance(&mut cur, actions[0])?;
        for t in 1..obs.len() {
            self.observe(&mut cur, &obs[t])?;
            dist = self.advance(&mut cur, actions[t])?;
        }
        Ok(dist)
    }

    /// `Σ_{t≥2} ln p(x_t | history)` under the one-step predictive.
    pub fn transition_log_lik(&self, traj: &Trajectory) -> Result<f64> {
        self.dims().check_trajectory(traj)?;
        let mut cur = self.cursor(&traj.static_features, &traj.observations[0])?;
        let mut total = 0.0;
        for t in 1..traj.len() {
            let d = self.advance(&mut cur, traj.actions[t - 1])?;
            total += d.log_prob(&traj.observations[t])?;
            self.observe(&mut cur, &traj.observations[t])?;
        }
        Ok(total)
    }

    pub fn save(&self, path: impl AsRef<Path>, train_config_digest: Option<String>) -> Result<()> {
        Checkpoint::new(self.clone(), train_config_digest).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let env = Checkpoint::<Environment>::load(path)?.model;
        Environment::new(env.schema, env.init, env.model)
    }
}

fn default_hidden() -> usize {
    32
}
fn default_dense() -> Vec<usize> {
    vec![32, 32]
}
fn default_states() -> usize {
    3
}
fn default_small() -> Vec<usize> {
    vec![16]
}
fn default_inference_hidden() -> usize {
    16
}
fn default_latent() -> usize {
    4
}
fn default_particles() -> usize {
    16
}
fn default_lambda() -> f64 {
    1.0
}

/// Architecture knobs of every environment kind; each kind reads its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvHyper {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dense")]
    pub dense: Vec<usize>,
    #[serde(default = "default_states")]
    pub states: usize,
    #[serde(default = "default_small")]
    pub emission_hidden: Vec<usize>,
    #[serde(default = "default_inference_hidden")]
    pub inference_hidden: usize,
    #[serde(default = "default_latent")]
    pub latent: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_small")]
    pub adversary_hidden: Vec<usize>,
    #[serde(default)]
    pub attention: Option<Attention>,
    /// CSS objective; chosen from the exact-inference guard when absent.
    #[serde(default)]
    pub objective: Option<CssObjective>,
}

impl Default for EnvHyper {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Build an untrained dynamics model of the given kind.
pub fn build_model(kind: EnvKind, dims: EnvDims, hyper: &EnvHyper, seed: u64) -> Result<EnvironmentModel> {
    Ok(match kind {
        EnvKind::Tforce => EnvironmentModel::Tforce(TForceModel::new(dims, hyper.hidden, &hyper.dense, seed)?),
        EnvKind::Balanced => EnvironmentModel::Balanced(BalancedModel::new(
            dims,
            hyper.hidden,
            &hyper.dense,
            &hyper.adversary_hidden,
            hyper.lambda,
            seed,
        )?),
        EnvKind::Css => EnvironmentModel::Css(CssModel::new(
            dims,
            hyper.states,
            hyper.attention.clone().unwrap_or(Attention::Markov),
            &hyper.emission_hidden,
            hyper.inference_hidden,
            seed,
        )?),
        EnvKind::Svae => EnvironmentModel::Svae(SvaeModel::new(
            dims,
            hyper.latent,
            hyper.hidden,
            &hyper.dense,
            hyper.particles,
            seed,
        )?),
    })
}

/// Result of [`train_env`].
#[derive(Debug, Clone)]
pub struct TrainedEnv {
    pub env: Environment,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

/// Fit an environment of `kind` to `data` (its visible schema).
pub fn train_env(kind: EnvKind, data: &BatchDataset, hyper: &EnvHyper, cfg: &TrainConfig) -> Result<TrainedEnv> {
    cfg.validate()?;
    data.validate()?;
    if data.trajectories.is_empty() {
        return Err(Error::config("cannot train an environment on an empty dataset"));
    }
    let schema = data.visible_schema()?;
    let dims = EnvDims::from_schema(&schema);
    let recurrent = matches!(kind, EnvKind::Tforce | EnvKind::Balanced);
    let init = InitModel::fit(&schema.static_space, &schema.temporal_space, &data.trajectories, recurrent)?;
    let mut model = build_model(kind, dims, hyper, cfg.seed)?;
    let examples = &data.trajectories;
    let curve = match &mut model {
        EnvironmentModel::Tforce(m) => fit(m, examples, cfg)?,
        EnvironmentModel::Balanced(m) => fit(m, examples, cfg)?,
        EnvironmentModel::Css(m) => {
            m.objective = match hyper.objective {
                Some(o) => o,
                None => {
                    let longest = examples.iter().map(|t| t.len()).max().unwrap_or(1);
                    if m.exact_state_count(longest) <= css::MAX_EXACT_STATES as f64 {
                        CssObjective::Exact
                    } else {
                        CssObjective::Variational { samples: 4 }
                    }
                }
            };
            fit(m, examples, cfg)?
        }
        EnvironmentModel::Svae(m) => fit(m, examples, cfg)?,
    };
    Ok(TrainedEnv {
        env: Environment::new(schema, init, model)?,
        curve,
    })
}

/// JSON description of an environment inside a scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default)]
    pub kind: Option<EnvKind>,
    /// Name of a built-in ground-truth generator (`ward_synth`, `icu_synth`).
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub hyperparameters: Option<EnvHyper>,
    #[serde(default)]
    pub attention: Option<Attention>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Seed for untrained initialization (ignored with a checkpoint or ground truth).
    #[serde(default)]
    pub seed: Option<u64>,
}

impl EnvConfig {
    /// Materialize the environment against `schema`. Relative checkpoint
    /// paths resolve against `base_dir`.
    pub fn build(&self, schema: &DomainSchema, base_dir: Option<&Path>) -> Result<Environment> {
        let env = if let Some(path) = &self.checkpoint {
            let path = match base_dir {
                Some(b) if path.is_relative() => b.join(path),
                _ => path.clone(),
            };
            Environment::load(&path)?
        } else if let Some(name) = &self.ground_truth {
            ground_truth::builtin(name, schema)?
        } else if let Some(kind) = self.kind {
            let mut hyper = self.hyperparameters.clone().unwrap_or_default();
            if self.attention.is_some() {
                hyper.attention = self.attention.clone();
            }
            let dims = EnvDims::from_schema(schema);
            let model = build_model(kind, dims, &hyper, self.seed.unwrap_or(0))?;
            Environment::new(schema.clone(), InitModel::standard(schema), model)?
        } else {
            return Err(Error::Config(
                "environment: one of 'checkpoint', 'ground_truth' or 'kind' is required".into(),
            ));
        };
        if let Some(kind) = self.kind {
            if env.kind() != kind {
                return Err(Error::Config(format!(
                    "environment.kind is '{}' but the loaded environment is '{}'",
                    kind.name(),
                    env.kind().name()
                )));
            }
        }
        if &env.schema != schema {
            return Err(Error::Scenario(format!(
                "environment schema '{}' does not match domain '{}'",
                env.schema.name, schema.name
            )));
        }
        Ok(env)
    }
}
