//! Attentive state-space environment.
//!
//! Discrete latent `z_t ∈ {0..Z}`. The transition into `z_t` mixes per-action
//! baseline matrices over past (state, action) pairs:
//! `p(z_t | past) = Σ_k α_k P_{y_{t-k}}(z_{t-k}, z_t)` for lags `k = 1..W`.
//! Observations are emitted by a net on `(onehot z_t, x_s)`.
//!
//! Exact inference runs a forward recursion over tuples of the last `W`
//! latents, so its cost is `T · Z^(W+1)` rather than `Z^T`.

use serde::{Deserialize, Serialize};

use super::step::StepDistribution;
use super::EnvDims;
use crate::diff::head::PROB_FLOOR;
use crate::diff::tape::log_sum_exp;
use crate::diff::{DistributionHead, Graph, GruCell, HeadParams, Init, Mlp, ParamId, ParamStore, Trainable, Var};
use crate::diff::Dense;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::schema::Trajectory;

/// Upper bound on latent tuples tracked by the exact recursion.
pub const MAX_EXACT_STATES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Attention {
    /// All weight on lag 1.
    Markov,
    /// Fixed weights over lags `1..=len`, renormalized over the lags that exist.
    Fixed { weights: Vec<f64> },
    /// Softmax of learned logits over lags `1..=window`.
    Learned { window: usize },
}

impl Attention {
    pub fn window(&self) -> usize {
        match self {
            Attention::Markov => 1,
            Attention::Fixed { weights } => weights.len(),
            Attention::Learned { window } => *window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Attention::Markov => Ok(()),
            Attention::Fixed { weights } => {
                if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::config("fixed attention weights must be finite and non-negative"));
                }
                // every prefix must be normalizable, i.e. the lag-1 weight is positive
                if weights[0] <= 0.0 {
                    return Err(Error::config("fixed attention needs a positive lag-1 weight"));
                }
                Ok(())
            }
            Attention::Learned { window } => {
                if *window == 0 {
                    return Err(Error::config("attention window must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Attention weights over lags `1..t-1` for the transition into step `t`
/// (1-based). Lags beyond the window get weight 0.
pub fn css_attention(spec: &Attention, logits: Option<&[f64]>, t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::config("attention is defined from t = 2"));
    }
    spec.validate()?;
    let lags = t - 1;
    let m = spec.window().min(lags);
    let mut out = vec![0.0; lags];
    match spec {
        Attention::Markov => out[0] = 1.0,
        Attention::Fixed { weights } => {
            let total: f64 = weights[..m].iter().sum();
            for k in 0..m {
                out[k] = weights[k] / total;
            }
        }
        Attention::Learned { window } => {
            let l = logits.ok_or_else(|| Error::config("learned attention needs logits"))?;
            if l.len() != *window {
                return Err(Error::dim("attention logits", *window, l.len()));
            }
            let p = crate::diff::tape::softmax(&l[..m]);
            out[..m].copy_from_slice(&p);
        }
    }
    Ok(out)
}

/// Parameter-derived quantities of a model for one static-feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CssTables {
    pub states: usize,
    pub log_init: Vec<f64>,
    /// Row `y·Z + a` holds `ln P_y(a, ·)`.
    pub log_trans: Vec<Vec<f64>>,
    /// Row `m-1` holds log attention over lags `1..=m` when `m` lags exist.
    pub log_attn: Vec<Vec<f64>>,
    pub emission: Vec<HeadParams>,
}

impl CssTables {
    pub fn window(&self) -> usize {
        self.log_attn.len()
    }

    pub fn log_emit(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.emission.iter().map(|h| h.log_prob(x)).collect()
    }

    /// `ln p(z_next = c | ·)` for each `c`, given recent latents (most recent
    /// first) and the actions at the matching steps.
    fn log_transition(&self, recent: &[usize], recent_actions: &[usize]) -> Vec<f64> {
        let z = self.states;
        let m = recent.len();
        let la = &self.log_attn[m - 1];
        (0..z)
            .map(|c| {
                let terms: Vec<f64> = (0..m)
                    .filter(|&k| la[k] > f64::NEG_INFINITY)
                    .map(|k| la[k] + self.log_trans[recent_actions[k] * z + recent[k]][c])
                    .collect();
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// `ln p(x_{1:T}, z_{1:T} | y)` for one latent path.
    pub fn joint_log_prob(&self, traj: &Trajectory, path: &[usize]) -> Result<f64> {
        if path.len() != traj.len() {
            return Err(Error::dim("latent path", traj.len(), path.len()));
        }
        let w = self.window();
        let mut total = self.log_init[path[0]];
        for t in 0..traj.len() {
            if t > 0 {
                let m = w.min(t);
                let recent: Vec<usize> = (1..=m).map(|k| path[t - k]).collect();
                let acts: Vec<usize> = (1..=m).map(|k| traj.actions[t - k]).collect();
                total += self.log_transition(&recent, &acts)[path[t]];
            }
            total += self.emission[path[t]].log_prob(&traj.observations[t])?;
        }
        Ok(total)
    }
}

fn tuple_digits(mut idx: usize, z: usize, m: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(m);
    for _ in 0..m {
        d.push(idx % z);
        idx /= z;
    }
    d
}

/// Filtering state of the exact recursion; belief over the last `min(t, W)`
/// latents (most recent first), normalized in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct CssCursor {
    tables: CssTables,
    belief: Vec<f64>,
    t: usize,
    actions: Vec<usize>,
    /// `ln p(tuple, z_next | past)` from the last `advance`, row-major `[tuple][c]`.
    joint: Option<Vec<f64>>,
    log_lik: f64,
}

impl CssCursor {
    pub fn new(tables: CssTables, x_1: &[f64]) -> Result<Self> {
        let le = tables.log_emit(x_1)?;
        let raw: Vec<f64> = tables.log_init.iter().zip(&le).map(|(a, b)| a + b).collect();
        let norm = log_sum_exp(&raw);
        Ok(CssCursor {
            belief: raw.iter().map(|v| v - norm).collect(),
            tables,
            t: 1,
            actions: Vec::new(),
            joint: None,
            log_lik: norm,
        })
    }

    /// Log-likelihood of the observations absorbed so far.
    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }

    /// Posterior over the current latent given everything observed.
    pub fn current_state_probs(&self) -> Vec<f64> {
        let z = self.tables.states;
        let mut p = vec![0.0; z];
        for (s, b) in self.belief.iter().enumerate() {
            p[s % z] += b.exp();
        }
        p
    }

    pub fn advance(&mut self, action: usize) -> Result<StepDistribution> {
        let z = self.tables.states;
        self.actions.push(action);
        let m = self.tables.window().min(self.t);
        let acts: Vec<usize> = (1..=m).map(|k| self.actions[self.t - k]).collect();
        let mut joint = Vec::with_capacity(self.belief.len() * z);
        let mut pred = vec![Vec::with_capacity(self.belief.len()); z];
        for (s, b) in self.belief.iter().enumerate() {
            let lt = self.tables.log_transition(&tuple_digits(s, z, m), &acts);
            for c in 0..z {
                let j = b + lt[c];
                joint.push(j);
                pred[c].push(j);
            }
        }
        let w: Vec<f64> = pred.iter().map(|v| log_sum_exp(v).exp()).collect();
        let total: f64 = w.iter().sum();
        self.joint = Some(joint);
        StepDistribution::mixture(
            w.iter().map(|v| v / total).collect(),
            self.tables.emission.clone(),
        )
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<()> {
        let z = self.tables.states;
        let joint = self
            .joint
            .take()
            .ok_or_else(|| Error::Session("observation supplied before the action that produced it".into()))?;
        let le = self.tables.log_emit(x)?;
        let m = self.tables.window().min(self.t);
        let m_next = self.tables.window().min(self.t + 1);
        let keep = z.pow((m_next - 1) as u32);
        let mut buckets = vec![Vec::new(); z.pow(m_next as u32)];
        for (i, j) in joint.iter().enumerate() {
            let (s, c) = (i / z, i % z);
            debug_assert!(s < z.pow(m as u32));
            buckets[c + z * (s % keep)].push(j + le[c]);
        }
        let raw: Vec<f64> = buckets.iter().map(|b| log_sum_exp(b)).collect();
        let norm = log_sum_exp(&raw);
        self.belief = raw.iter().map(|v| v - norm).collect();
        self.log_lik += norm;
        self.t += 1;
        Ok(())
    }
}

/// How the environment is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CssObjective {
    /// Exact log-likelihood by the forward recursion.
    #[default]
    Exact,
    /// Score-function ELBO with `samples` latent paths per trajectory and a
    /// leave-one-out baseline.
    Variational { samples: usize },
}

/// Backward-recurrent amortized posterior
/// `q(z_1 | b_1) Π q(z_t | z_{t-1}, b_t)` with `b_t` summarizing `(x, y)_{t:T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssInferenceNet {
    pub cell: GruCell,
    pub first: Dense,
    pub next: Dense,
}

/// Log-probability tables of the inference net for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTables {
    pub first: Vec<f64>,
    /// `[t][z_{t-1}]` → log-probs over `z_t`, for `t ≥ 1` (index 0 unused).
    pub next: Vec<Vec<Vec<f64>>>,
}

/// Something that draws latent paths with their log-probability.
pub trait PathSampler {
    fn sample_path(&self, rng: &mut StreamRng) -> (Vec<usize>, f64);
}

fn draw(logp: &[f64], rng: &mut StreamRng) -> usize {
    let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    crate::diff::head::sample_categorical(&p, rng)
}

impl PathSampler for PosteriorTables {
    fn sample_path(&self, rng: &mut StreamRng) -> (Vec<usize>, f64) {
        let mut path = Vec::with_capacity(self.next.len());
        let z0 = draw(&self.first, rng);
        let mut lq = self.first[z0];
        path.push(z0);
        for t in 1..self.next.len() {
            let row = &self.next[t][path[t - 1]];
            let z = draw(row, rng);
            lq += row[z];
            path.push(z);
        }
        (path, lq)
    }
}

/// The true posterior over paths, by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub paths: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub log_evidence: f64,
    cumulative: Vec<f64>,
}

impl ExactPosterior {
    pub fn new(model: &CssModel, traj: &Trajectory) -> Result<Self> {
        let z = model.states;
        let n = traj.len();
        let count = (z as f64).powi(n as i32);
        if count > MAX_EXACT_STATES as f64 {
            return Err(Error::Size(format!(
                "{z}^{n} latent paths exceed the enumeration limit of {MAX_EXACT_STATES}"
            )));
        }
        let tables = model.tables(&traj.static_features)?;
        let count = count as usize;
        let mut paths = Vec::with_capacity(count);
        let mut joint = Vec::with_capacity(count);
        for i in 0..count {
            let path = tuple_digits(i, z, n);
            joint.push(tables.joint_log_prob(traj, &path)?);
            paths.push(path);
        }
        let log_evidence = log_sum_exp(&joint);
        let log_probs: Vec<f64> = joint.iter().map(|j| j - log_evidence).collect();
        let mut acc = 0.0;
        let cumulative = log_probs
            .iter()
            .map(|l| {
                acc += l.exp();
                acc
            })
            .collect();
        Ok(ExactPosterior {
            paths,
            log_probs,
            log_evidence,
            cumulative,
        })
    }
}

impl PathSampler for ExactPosterior {
    fn sample_path(&self, rng: &mut StreamRng) -> (Vec<usize>, f64) {
        use rand::Rng;
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.paths.len() - 1);
        (self.paths[i].clone(), self.log_probs[i])
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl ElboEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        ElboEstimate {
            mean,
            std_err: (var / n).sqrt(),
            samples: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssModel {
    pub params: ParamStore,
    pub dims: EnvDims,
    pub head: DistributionHead,
    pub states: usize,
    pub attention: Attention,
    pub init_logits: ParamId,
    pub trans_logits: ParamId,
    pub attn_logits: Option<ParamId>,
    pub emission: Mlp,
    pub inference: CssInferenceNet,
    #[serde(default)]
    pub objective: CssObjective,
}

/// Graph nodes for the parameter tables of one trajectory.
struct GraphTables {
    init: Vec<Var>,
    trans: Vec<Vec<Var>>,
    attn: Vec<Vec<Option<Var>>>,
    emit: Vec<Vec<Var>>,
}

impl CssModel {
    pub fn new(
        dims: EnvDims,
        states: usize,
        attention: Attention,
        emission_hidden: &[usize],
        inference_hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if states < 2 {
            return Err(Error::config("a state-space environment needs at least 2 latent states"));
        }
        attention.validate()?;
        let mut p = ParamStore::new(seed);
        let head = dims.head();
        let init_logits = p.add("init", 1, states, Init::Zeros)?;
        let trans_logits = p.add("trans", dims.actions * states, states, Init::Normal(0.5))?;
        let attn_logits = match attention {
            Attention::Learned { window } => Some(p.add("attn", 1, window, Init::Zeros)?),
            _ => None,
        };
        let emission = Mlp::new(&mut p, "emit", states + dims.static_dim, emission_hidden, head.param_dim())?;
        let inputs = dims.temporal + dims.actions + dims.static_dim;
        let inference = CssInferenceNet {
            cell: GruCell::new(&mut p, "infer.cell", inputs, inference_hidden)?,
            first: Dense::new(&mut p, "infer.first", inference_hidden, states)?,
            next: Dense::new(&mut p, "infer.next", states + inference_hidden, states)?,
        };
        Ok(CssModel {
            params: p,
            dims,
            head,
            states,
            attention,
            init_logits,
            trans_logits,
            attn_logits,
            emission,
            inference,
            objective: CssObjective::Exact,
        })
    }

    /// Overwrite the initial and transition distributions with the given
    /// probabilities (floored at 1e-12 before taking logs).
    pub fn set_probabilities(&mut self, init: &[f64], trans: &[Vec<Vec<f64>>]) -> Result<()> {
        let z = self.states;
        if init.len() != z {
            return Err(Error::dim("initial distribution", z, init.len()));
        }
        if trans.len() != self.dims.actions {
            return Err(Error::dim("transition matrices", self.dims.actions, trans.len()));
        }
        let check_row = |row: &[f64]| -> Result<()> {
            let s: f64 = row.iter().sum();
            if row.len() != z || row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::config("probability rows must be length |Z| and sum to 1"));
            }
            Ok(())
        };
        check_row(init)?;
        let logit = |p: f64| p.max(PROB_FLOOR).ln();
        self.params.get_mut(self.init_logits).data = init.iter().map(|&p| logit(p)).collect();
        let mut data = Vec::with_capacity(self.dims.actions * z * z);
        for m in trans {
            if m.len() != z {
                return Err(Error::dim("transition matrix rows", z, m.len()));
            }
            for row in m {
                check_row(row)?;
                data.extend(row.iter().map(|&p| logit(p)));
            }
        }
        self.params.get_mut(self.trans_logits).data = data;
        Ok(())
    }

    pub fn attention_weights(&self, t: usize) -> Result<Vec<f64>> {
        let logits = self.attn_logits.map(|id| self.params.get(id).data.clone());
        css_attention(&self.attention, logits.as_deref(), t)
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        crate::diff::tape::softmax(&self.params.get(self.init_logits).data)
    }

    /// Row-stochastic `P_y` as a `Z × Z` matrix.
    pub fn transition_matrix(&self, y: usize) -> Vec<Vec<f64>> {
        let t = self.params.get(self.trans_logits);
        (0..self.states)
            .map(|a| crate::diff::tape::softmax(t.row(y * self.states + a)))
            .collect()
    }

    /// Emission head parameters of every latent state for static features `x_s`.
    pub fn emission_params(&self, x_s: &[f64]) -> Result<Vec<HeadParams>> {
        Ok(self.tables(x_s)?.emission)
    }

    fn graph_tables(&self, g: &mut Graph, x_s: &[f64], obs: &[Vec<f64>]) -> Result<(GraphTables, Vec<Var>)> {
        let z = self.states;
        let w = self.attention.window();
        let init_row = g.param_row(self.init_logits, 0);
        let li = g.log_softmax(init_row);
        let init = (0..z).map(|c| g.pick(li, c)).collect();
        let mut trans = Vec::with_capacity(self.dims.actions * z);
        for r in 0..self.dims.actions * z {
            let row = g.param_row(self.trans_logits, r);
            let lr = g.log_softmax(row);
            trans.push((0..z).map(|c| g.pick(lr, c)).collect());
        }
        let mut attn = Vec::with_capacity(w);
        for m in 1..=w {
            let row: Vec<Option<Var>> = match &self.attention {
                Attention::Markov => vec![Some(g.scalar_const(0.0))],
                Attention::Fixed { weights } => {
                    let total: f64 = weights[..m].iter().sum();
                    weights[..m]
                        .iter()
                        .map(|&a| (a > 0.0).then(|| g.scalar_const((a / total).ln())))
                        .collect()
                }
                Attention::Learned { .. } => {
                    let id = self.attn_logits.expect("learned attention has logits");
                    let all = g.param(id);
                    let l = g.slice(all, 0, m);
                    let ls = g.log_softmax(l);
                    (0..m).map(|k| Some(g.pick(ls, k))).collect()
                }
            };
            attn.push(row);
        }
        let mut heads = Vec::with_capacity(z);
        for s in 0..z {
            let mut input = vec![0.0; z];
            input[s] = 1.0;
            input.extend_from_slice(x_s);
            let x = g.constant(input);
            heads.push(self.emission.forward(g, x));
        }
        let mut emit = Vec::with_capacity(obs.len());
        for x in obs {
            let mut row = Vec::with_capacity(z);
            for &h in &heads {
                let nll = self.head.nll_var(g, h, x)?;
                row.push(g.neg(nll));
            }
            emit.push(row);
        }
        Ok((GraphTables { init, trans, attn, emit }, heads))
    }

    /// Parameter tables for static features `x_s`.
    pub fn tables(&self, x_s: &[f64]) -> Result<CssTables> {
        self.dims.check_static(x_s)?;
        let mut g = Graph::new(&self.params);
        let (t, heads) = self.graph_tables(&mut g, x_s, &[])?;
        let val = |g: &Graph, v: &Var| g.scalar(*v);
        Ok(CssTables {
            states: self.states,
            log_init: t.init.iter().map(|v| val(&g, v)).collect(),
            log_trans: t.trans.iter().map(|r| r.iter().map(|v| val(&g, v)).collect()).collect(),
            log_attn: t
                .attn
                .iter()
                .map(|r| r.iter().map(|v| v.map(|v| val(&g, &v)).unwrap_or(f64::NEG_INFINITY)).collect())
                .collect(),
            emission: heads
                .iter()
                .map(|&h| HeadParams::new(self.head.clone(), g.value(h).to_vec()))
                .collect::<Result<_>>()?,
        })
    }

    /// Number of latent tuples the exact recursion tracks for length `len`.
    pub fn exact_state_count(&self, len: usize) -> f64 {
        (self.states as f64).powi(self.attention.window().min(len) as i32)
    }

    fn guard(&self, len: usize) -> Result<()> {
        let n = self.exact_state_count(len);
        if n > MAX_EXACT_STATES as f64 {
            return Err(Error::Size(format!(
                "exact inference would track {n} latent tuples (limit {MAX_EXACT_STATES}); use the ELBO instead"
            )));
        }
        Ok(())
    }

    pub fn cursor(&self, x_s: &[f64], x_1: &[f64]) -> Result<CssCursor> {
        self.dims.check_obs(x_1)?;
        CssCursor::new(self.tables(x_s)?, x_1)
    }

    /// Distribution of `x_1` given `x_s`: emissions mixed by the initial distribution.
    pub fn first_distribution(&self, x_s: &[f64]) -> Result<StepDistribution> {
        let t = self.tables(x_s)?;
        let w: Vec<f64> = t.log_init.iter().map(|v| v.exp()).collect();
        let total: f64 = w.iter().sum();
        StepDistribution::mixture(w.iter().map(|v| v / total).collect(), t.emission)
    }

    /// `ln p(x_{1:T} | x_s, y)` summed over all latent paths.
    pub fn exact_loglik(&self, traj: &Trajectory) -> Result<f64> {
        self.dims.check_trajectory(traj)?;
        self.guard(traj.len())?;
        let mut cur = self.cursor(&traj.static_features, &traj.observations[0])?;
        for t in 1..traj.len() {
            cur.advance(traj.actions[t - 1])?;
            cur.observe(&traj.observations[t])?;
        }
        Ok(cur.log_lik())
    }

    /// The exact log-likelihood as a graph node (for gradients).
    fn graph_loglik(&self, g: &mut Graph, traj: &Trajectory) -> Result<Var> {
        let z = self.states;
        let (tb, _) = self.graph_tables(g, &traj.static_features, &traj.observations)?;
        let w = self.attention.window();
        let mut alpha: Vec<Var> = (0..z).map(|c| g.add(tb.init[c], tb.emit[0][c])).collect();
        for t in 1..traj.len() {
            let m = w.min(t);
            let m_next = w.min(t + 1);
            let keep = z.pow((m_next - 1) as u32);
            let mut buckets: Vec<Vec<Var>> = vec![Vec::new(); z.pow(m_next as u32)];
            for (s, &a) in alpha.iter().enumerate() {
                let recent = tuple_digits(s, z, m);
                for c in 0..z {
                    let terms: Vec<Var> = (0..m)
                        .filter_map(|k| {
                            let la = tb.attn[m - 1][k]?;
                            let row = traj.actions[t - 1 - k] * z + recent[k];
                            Some(g.add(la, tb.trans[row][c]))
                        })
                        .collect();
                    let lm = lse_vars(g, &terms);
                    buckets[c + z * (s % keep)].push(g.add(a, lm));
                }
            }
            alpha = buckets
                .iter()
                .enumerate()
                .map(|(s, b)| {
                    let l = lse_vars(g, b);
                    g.add(l, tb.emit[t][s % z])
                })
                .collect();
        }
        Ok(lse_vars(g, &alpha))
    }

    /// Log joint of one latent path as a graph node.
    fn graph_joint(&self, g: &mut Graph, tb: &GraphTables, traj: &Trajectory, path: &[usize]) -> Var {
        let z = self.states;
        let w = self.attention.window();
        let mut terms = vec![tb.init[path[0]], tb.emit[0][path[0]]];
        for t in 1..traj.len() {
            let m = w.min(t);
            let lt: Vec<Var> = (0..m)
                .filter_map(|k| {
                    let la = tb.attn[m - 1][k]?;
                    let row = traj.actions[t - 1 - k] * z + path[t - 1 - k];
                    Some(g.add(la, tb.trans[row][path[t]]))
                })
                .collect();
            terms.push(lse_vars(g, &lt));
            terms.push(tb.emit[t][path[t]]);
        }
        g.add_all(&terms)
    }

    /// Log-probability tables of the inference net (as graph nodes).
    fn graph_posterior(&self, g: &mut Graph, traj: &Trajectory) -> (Var, Vec<Vec<Var>>) {
        let z = self.states;
        let net = &self.inference;
        let n = traj.len();
        let mut b = vec![None; n];
        let mut h = net.cell.zero_state(g);
        for t in (0..n).rev() {
            let mut input = traj.observations[t].clone();
            input.extend(self.dims.one_hot(traj.actions[t]));
            input.extend_from_slice(&traj.static_features);
            let x = g.constant(input);
            h = net.cell.step(g, x, h);
            b[t] = Some(h);
        }
        let b: Vec<Var> = b.into_iter().map(|v| v.expect("filled")).collect();
        let f = net.first.forward(g, b[0]);
        let first = g.log_softmax(f);
        let mut next = vec![Vec::new()];
        for &bt in &b[1..] {
            let mut rows = Vec::with_capacity(z);
            for zp in 0..z {
                let mut oh = vec![0.0; z];
                oh[zp] = 1.0;
                let oh = g.constant(oh);
                let input = g.concat(&[oh, bt]);
                let l = net.next.forward(g, input);
                rows.push(g.log_softmax(l));
            }
            next.push(rows);
        }
        (first, next)
    }

    /// Inference-net posterior tables for one trajectory.
    pub fn posterior_tables(&self, traj: &Trajectory) -> Result<PosteriorTables> {
        self.dims.check_trajectory(traj)?;
        let mut g = Graph::new(&self.params);
        let (first, next) = self.graph_posterior(&mut g, traj);
        Ok(PosteriorTables {
            first: g.value(first).to_vec(),
            next: next
                .iter()
                .map(|rows| rows.iter().map(|&r| g.value(r).to_vec()).collect())
                .collect(),
        })
    }

    /// MC estimate of `E_q[ln p(x, z | y) − ln q(z)]`.
    pub fn elbo(&self, traj: &Trajectory, q: &dyn PathSampler, n_mc: usize, rng: &mut StreamRng) -> Result<ElboEstimate> {
        if n_mc == 0 {
            return Err(Error::config("n_mc must be at least 1"));
        }
        self.dims.check_trajectory(traj)?;
        let tables = self.tables(&traj.static_features)?;
        let mut v = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let (path, lq) = q.sample_path(rng);
            v.push(tables.joint_log_prob(traj, &path)? - lq);
        }
        Ok(ElboEstimate::from_samples(&v))
    }

    /// Score-function ELBO surrogate for given latent paths. The value is the
    /// negative ELBO estimate divided by `T`; gradients are unbiased for the
    /// model and the inference net.
    pub fn variational_loss_for_paths(&self, g: &mut Graph, traj: &Trajectory, paths: &[Vec<usize>]) -> Result<Var> {
        let (tb, _) = self.graph_tables(g, &traj.static_features, &traj.observations)?;
        let (first, next) = self.graph_posterior(g, traj);
        let k = paths.len();
        let mut lp = Vec::with_capacity(k);
        let mut lq = Vec::with_capacity(k);
        for path in paths {
            lp.push(self.graph_joint(g, &tb, traj, path));
            let mut terms = vec![g.pick(first, path[0])];
            for t in 1..path.len() {
                terms.push(g.pick(next[t][path[t - 1]], path[t]));
            }
            lq.push(g.add_all(&terms));
        }
        let f: Vec<f64> = (0..k).map(|i| g.scalar(lp[i]) - g.scalar(lq[i])).collect();
        let sum_f: f64 = f.iter().sum();
        let mut terms = Vec::with_capacity(k);
        for i in 0..k {
            let baseline = if k > 1 { (sum_f - f[i]) / (k - 1) as f64 } else { 0.0 };
            let frozen = g.detach(lq[i]);
            let elbo_term = g.sub(lp[i], frozen);
            let score = g.sub(lq[i], frozen);
            let score = g.scale(score, f[i] - baseline);
            terms.push(g.add(elbo_term, score));
        }
        let total = g.add_all(&terms);
        Ok(g.scale(total, -1.0 / (k * traj.len()) as f64))
    }
}

fn lse_vars(g: &mut Graph, v: &[Var]) -> Var {
    match v {
        [] => g.scalar_const(f64::NEG_INFINITY),
        [one] => *one,
        _ => {
            let c = g.concat(v);
            g.log_sum_exp(c)
        }
    }
}

impl Trainable for CssModel {
    type Example = Trajectory;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn example_loss(&self, g: &mut Graph, traj: &Trajectory, rng: &mut StreamRng) -> Result<Var> {
        self.dims.check_trajectory(traj)?;
        match self.objective {
            CssObjective::Exact => {
                self.guard(traj.len())?;
                let ll = self.graph_loglik(g, traj)?;
                Ok(g.scale(ll, -1.0 / traj.len() as f64))
            }
            CssObjective::Variational { samples } => {
                let q = self.posterior_tables(traj)?;
                let paths: Vec<Vec<usize>> = (0..samples.max(1)).map(|_| q.sample_path(rng).0).collect();
                self.variational_loss_for_paths(g, traj, &paths)
            }
        }
    }
}

impl CssModel {
    /// Exact log-likelihood computed on the graph; agrees with
    /// [`CssModel::exact_loglik`] to rounding.
    pub fn graph_exact_loglik(&self, traj: &Trajectory) -> Result<f64> {
        self.dims.check_trajectory(traj)?;
        self.guard(traj.len())?;
        let mut g = Graph::new(&self.params);
        let v = self.graph_loglik(&mut g, traj)?;
        Ok(g.scalar(v))
    }
}
