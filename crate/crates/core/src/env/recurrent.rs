//! Teacher-forced recurrent environment and its balanced variant.
//!
//! A GRU reads `[x_t, onehot(y_{t-1}), x_s]` (zero action vector at the first
//! step) into `h_t`; a dense stack on `[h_t, onehot(y_t)]` emits the head
//! parameters of `x_{t+1}`. The balanced variant adds an adversary that
//! predicts `y_t` from `h_t` through a gradient-reversal node, so the encoder
//! is pushed towards action-independent representations.

use serde::{Deserialize, Serialize};

use super::step::StepDistribution;
use super::EnvDims;
use crate::diff::{DistributionHead, Graph, GruCell, HeadParams, Mlp, ParamStore, Trainable, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::schema::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCore {
    pub dims: EnvDims,
    pub head: DistributionHead,
    pub cell: GruCell,
    pub out: Mlp,
}

impl RecurrentCore {
    pub fn new(p: &mut ParamStore, dims: EnvDims, hidden: usize, dense: &[usize]) -> Result<Self> {
        let head = dims.head();
        let cell = GruCell::new(p, "cell", dims.temporal + dims.actions + dims.static_dim, hidden)?;
        let out = Mlp::new(p, "out", hidden + dims.actions, dense, head.param_dim())?;
        Ok(RecurrentCore { dims, head, cell, out })
    }

    fn step_input(&self, x: &[f64], prev: Option<usize>, x_s: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.cell.inputs);
        v.extend_from_slice(x);
        let mut onehot = vec![0.0; self.dims.actions];
        if let Some(a) = prev {
            onehot[a] = 1.0;
        }
        v.extend(onehot);
        v.extend_from_slice(x_s);
        v
    }

    pub fn hidden_step(&self, g: &mut Graph, h: Var, x: &[f64], prev: Option<usize>, x_s: &[f64]) -> Var {
        let input = g.constant(self.step_input(x, prev, x_s));
        self.cell.step(g, input, h)
    }

    pub fn head_params(&self, g: &mut Graph, h: Var, action: usize) -> Var {
        let a = g.constant(self.dims.one_hot(action));
        let input = g.concat(&[h, a]);
        self.out.forward(g, input)
    }

    /// Hidden states `h_1..h_T` of a trajectory.
    pub fn hidden_states(&self, g: &mut Graph, traj: &Trajectory) -> Result<Vec<Var>> {
        self.dims.check_trajectory(traj)?;
        let mut h = self.cell.zero_state(g);
        let mut out = Vec::with_capacity(traj.len());
        for t in 0..traj.len() {
            let prev = if t == 0 { None } else { Some(traj.actions[t - 1]) };
            h = self.hidden_step(g, h, &traj.observations[t], prev, &traj.static_features);
            out.push(h);
        }
        Ok(out)
    }

    /// Mean next-observation NLL over the `T - 1` transitions, `None` when `T = 1`.
    pub fn nll(&self, g: &mut Graph, traj: &Trajectory, hidden: &[Var]) -> Result<Option<Var>> {
        let n = traj.len();
        if n < 2 {
            return Ok(None);
        }
        let mut terms = Vec::with_capacity(n - 1);
        for t in 0..n - 1 {
            let p = self.head_params(g, hidden[t], traj.actions[t]);
            terms.push(self.head.nll_var(g, p, &traj.observations[t + 1])?);
        }
        let total = g.add_all(&terms);
        Ok(Some(g.scale(total, 1.0 / (n - 1) as f64)))
    }

    pub fn cursor(&self, params: &ParamStore, x_s: &[f64], x_1: &[f64]) -> Result<RecurrentCursor> {
        self.dims.check_static(x_s)?;
        self.dims.check_obs(x_1)?;
        let mut g = Graph::new(params);
        let h0 = self.cell.zero_state(&mut g);
        let h = self.hidden_step(&mut g, h0, x_1, None, x_s);
        Ok(RecurrentCursor {
            x_s: x_s.to_vec(),
            h: g.value(h).to_vec(),
            last_action: None,
        })
    }

    pub fn advance(&self, params: &ParamStore, cur: &mut RecurrentCursor, action: usize) -> Result<StepDistribution> {
        self.dims.check_action(action)?;
        let mut g = Graph::new(params);
        let h = g.constant(cur.h.clone());
        let p = self.head_params(&mut g, h, action);
        cur.last_action = Some(action);
        Ok(StepDistribution::Single(HeadParams::new(self.head.clone(), g.value(p).to_vec())?))
    }

    pub fn observe(&self, params: &ParamStore, cur: &mut RecurrentCursor, x: &[f64]) -> Result<()> {
        self.dims.check_obs(x)?;
        let prev = cur
            .last_action
            .ok_or_else(|| Error::Session("observation supplied before the action that produced it".into()))?;
        let mut g = Graph::new(params);
        let h = g.constant(cur.h.clone());
        let h = self.hidden_step(&mut g, h, x, Some(prev), &cur.x_s);
        cur.h = g.value(h).to_vec();
        cur.last_action = None;
        Ok(())
    }
}

/// Incremental state of a recurrent environment during rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCursor {
    x_s: Vec<f64>,
    h: Vec<f64>,
    last_action: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TForceModel {
    pub params: ParamStore,
    pub core: RecurrentCore,
}

impl TForceModel {
    pub fn new(dims: EnvDims, hidden: usize, dense: &[usize], seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let core = RecurrentCore::new(&mut params, dims, hidden, dense)?;
        Ok(TForceModel { params, core })
    }

    /// Mean next-observation NLL of one trajectory (0 when `T = 1`).
    pub fn nll(&self, traj: &Trajectory) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let l = self.example_loss(&mut g, traj, &mut crate::rng::keyed(0, "unused", 0))?;
        Ok(g.scalar(l))
    }
}

impl Trainable for TForceModel {
    type Example = Trajectory;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn example_loss(&self, g: &mut Graph, traj: &Trajectory, _rng: &mut StreamRng) -> Result<Var> {
        let hidden = self.core.hidden_states(g, traj)?;
        Ok(match self.core.nll(g, traj, &hidden)? {
            Some(l) => l,
            None => g.scalar_const(0.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedModel {
    pub params: ParamStore,
    pub core: RecurrentCore,
    pub adversary: Mlp,
    pub lambda: f64,
}

/// The two parts of the balanced objective for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedLoss {
    pub nll: f64,
    pub adversarial: f64,
    pub lambda: f64,
}

impl BalancedLoss {
    pub fn total(&self) -> f64 {
        self.nll - self.lambda * self.adversarial
    }
}

impl BalancedModel {
    /// Core parameters are initialized exactly as a [`TForceModel`] with the same seed.
    pub fn new(dims: EnvDims, hidden: usize, dense: &[usize], adversary_hidden: &[usize], lambda: f64, seed: u64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("balancing weight lambda must be finite and >= 0"));
        }
        let mut params = ParamStore::new(seed);
        let core = RecurrentCore::new(&mut params, dims, hidden, dense)?;
        let adversary = Mlp::new(&mut params, "adversary", hidden, adversary_hidden, dims.actions)?;
        Ok(BalancedModel {
            params,
            core,
            adversary,
            lambda,
        })
    }

    /// Builds `(nll, adversarial)` on the graph. The adversary sees the hidden
    /// states through a reversal node scaled by `lambda`.
    fn graph_terms(&self, g: &mut Graph, traj: &Trajectory) -> Result<(Option<Var>, Var)> {
        let hidden = self.core.hidden_states(g, traj)?;
        let nll = self.core.nll(g, traj, &hidden)?;
        let action_head = DistributionHead::CategoricalSoftmax { classes: self.core.dims.actions };
        let mut terms = Vec::with_capacity(traj.len());
        for (t, &h) in hidden.iter().enumerate() {
            let r = g.reverse_gradient(h, self.lambda);
            let logits = self.adversary.forward(g, r);
            terms.push(action_head.nll_var(g, logits, &[traj.actions[t] as f64])?);
        }
        let total = g.add_all(&terms);
        Ok((nll, g.scale(total, 1.0 / traj.len() as f64)))
    }

    /// Mean next-observation NLL and mean adversary cross-entropy.
    pub fn balanced_repr_loss(&self, traj: &Trajectory) -> Result<BalancedLoss> {
        let mut g = Graph::new(&self.params);
        let (nll, adv) = self.graph_terms(&mut g, traj)?;
        Ok(BalancedLoss {
            nll: nll.map(|v| g.scalar(v)).unwrap_or(0.0),
            adversarial: g.scalar(adv),
            lambda: self.lambda,
        })
    }

    /// Fraction of steps where the adversary's argmax equals the taken action.
    pub fn adversary_accuracy(&self, data: &[Trajectory]) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for traj in data {
            let mut g = Graph::new(&self.params);
            let hidden = self.core.hidden_states(&mut g, traj)?;
            for (t, &h) in hidden.iter().enumerate() {
                let logits = self.adversary.forward(&mut g, h);
                let v = g.value(logits);
                let best = (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
                hits += usize::from(best == traj.actions[t]);
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::config("no steps to score"));
        }
        Ok(hits as f64 / total as f64)
    }
}

impl Trainable for BalancedModel {
    type Example = Trajectory;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Value is `nll - lambda * adversarial`; gradients train the adversary to
    /// predict actions and the encoder (through reversal) to defeat it.
    fn example_loss(&self, g: &mut Graph, traj: &Trajectory, _rng: &mut StreamRng) -> Result<Var> {
        let (nll, adv) = self.graph_terms(g, traj)?;
        let nll = match nll {
            Some(v) => v,
            None => g.scalar_const(0.0),
        };
        let frozen = g.detach(adv);
        let grad_only = g.sub(adv, frozen);
        let with_adv = g.add(nll, grad_only);
        let penalty = g.scale(frozen, -self.lambda);
        Ok(g.add(with_adv, penalty))
    }
}
