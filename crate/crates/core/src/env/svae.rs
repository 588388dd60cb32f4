//! Sequential variational autoencoder environment with a continuous latent.
//!
//! Prior `z_1 ~ N(0, I)`, `z_t ~ N(μ, σ²)(z_{t-1}, y_{t-1})`; emission on
//! `(z_t, x_s)`. The encoder is a backward GRU over `[x_t, onehot(y_t), x_s]`
//! whose summary `b_t` feeds `q(z_t | z_{t-1}, b_t)` (zero `z_0`) through the
//! combiner `½(tanh(W z_{t-1} + c) + b_t)`. The tanh keeps the posterior
//! bounded in `z_{t-1}`; a linear read of the previous draw compounds over
//! time and overflows on long or wide trajectories.
//!
//! The one-step predictive used for rollout propagates the posterior-mean
//! path of the observed prefix through the transition and mixes the emission
//! over a fixed set of standard-normal particles, so it is a deterministic
//! function of the history.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::css::ElboEstimate;
use super::step::StepDistribution;
use super::EnvDims;
use crate::diff::head::{LOGVAR_MAX, LOGVAR_MIN};
use crate::diff::{Dense, DistributionHead, Graph, GruCell, HeadParams, Mlp, ParamStore, Trainable, Var};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::schema::Trajectory;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    #[default]
    Learned,
    /// The posterior is the prior itself (zero KL by construction).
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvaeModel {
    pub params: ParamStore,
    pub dims: EnvDims,
    pub head: DistributionHead,
    pub latent: usize,
    pub transition: Mlp,
    pub emission: Mlp,
    pub encoder: GruCell,
    pub combiner: Dense,
    pub posterior: Mlp,
    pub encoder_mode: EncoderMode,
    pub particles: Vec<Vec<f64>>,
}

/// `-ln N(z; μ, exp(lv))` summed over dimensions, with `z` a graph node.
fn gaussian_nll(g: &mut Graph, mu: Var, lv: Var, z: Var) -> Var {
    let d = g.len(mu);
    let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
    let diff = g.sub(z, mu);
    let d2 = g.square(diff);
    let nlv = g.neg(lv);
    let prec = g.exp(nlv);
    let q = g.mul(d2, prec);
    let s = g.add(q, lv);
    let s = g.sum(s);
    let s = g.scale(s, 0.5);
    let k = g.scalar_const(d as f64 * HALF_LN_2PI);
    g.add(s, k)
}

/// Closed-form `KL(N(μ1, e^{lv1}) ‖ N(μ2, e^{lv2}))` for diagonal Gaussians.
pub fn diag_gaussian_kl(mu1: &[f64], lv1: &[f64], mu2: &[f64], lv2: &[f64]) -> f64 {
    mu1.iter()
        .zip(lv1)
        .zip(mu2.iter().zip(lv2))
        .map(|((m1, l1), (m2, l2))| 0.5 * (l2 - l1 + ((l1 - l2).exp()) + (m1 - m2).powi(2) / l2.exp() - 1.0))
        .sum()
}

/// Terms of one reparameterized ELBO draw.
struct ElboDraw {
    log_prior: Var,
    log_q: Var,
    recon: Var,
}

impl SvaeModel {
    pub fn new(
        dims: EnvDims,
        latent: usize,
        hidden: usize,
        dense: &[usize],
        particles: usize,
        seed: u64,
    ) -> Result<Self> {
        if latent == 0 || particles == 0 {
            return Err(Error::config("latent dimension and particle count must be positive"));
        }
        let mut p = ParamStore::new(seed);
        let head = dims.head();
        let transition = Mlp::new(&mut p, "trans", latent + dims.actions, dense, 2 * latent)?;
        let emission = Mlp::new(&mut p, "emit", latent + dims.static_dim, dense, head.param_dim())?;
        let encoder = GruCell::new(&mut p, "enc.cell", dims.temporal + dims.actions + dims.static_dim, hidden)?;
        let combiner = Dense::new(&mut p, "enc.comb", latent, hidden)?;
        let posterior = Mlp::new(&mut p, "enc.post", hidden, &[], 2 * latent)?;
        let mut r = rng::keyed(seed, "svae/particles", 0);
        let particles = (0..particles)
            .map(|_| (0..latent).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        Ok(SvaeModel {
            params: p,
            dims,
            head,
            latent,
            transition,
            emission,
            encoder,
            combiner,
            posterior,
            encoder_mode: EncoderMode::Learned,
            particles,
        })
    }

    fn split(&self, g: &mut Graph, v: Var) -> (Var, Var) {
        (g.slice(v, 0, self.latent), g.slice(v, self.latent, self.latent))
    }

    fn transition_params(&self, g: &mut Graph, z: Var, action: usize) -> (Var, Var) {
        let a = g.constant(self.dims.one_hot(action));
        let input = g.concat(&[z, a]);
        let out = self.transition.forward(g, input);
        self.split(g, out)
    }

    fn emission_params(&self, g: &mut Graph, z: Var, x_s: &[f64]) -> Var {
        let s = g.constant(x_s.to_vec());
        let input = g.concat(&[z, s]);
        self.emission.forward(g, input)
    }

    /// Backward summaries `b_1..b_n` of the given prefix.
    fn summaries(&self, g: &mut Graph, x_s: &[f64], obs: &[Vec<f64>], actions: &[usize]) -> Vec<Var> {
        let n = obs.len();
        let mut out = vec![None; n];
        let mut h = self.encoder.zero_state(g);
        for t in (0..n).rev() {
            let mut input = obs[t].clone();
            input.extend(self.dims.one_hot(actions[t]));
            input.extend_from_slice(x_s);
            let x = g.constant(input);
            h = self.encoder.step(g, x, h);
            out[t] = Some(h);
        }
        out.into_iter().map(|v| v.expect("filled")).collect()
    }

    /// Posterior parameters for `z_t` given `z_{t-1}` (or the zero vector) and
    /// `b_t`; in prior mode these are the prior's parameters.
    fn posterior_params(&self, g: &mut Graph, prev: Option<(Var, usize)>, b: Var) -> (Var, Var) {
        match self.encoder_mode {
            EncoderMode::Prior => match prev {
                None => (g.constant(vec![0.0; self.latent]), g.constant(vec![0.0; self.latent])),
                Some((z, a)) => self.transition_params(g, z, a),
            },
            EncoderMode::Learned => {
                let z = match prev {
                    None => g.constant(vec![0.0; self.latent]),
                    Some((z, _)) => z,
                };
                let c = self.combiner.forward(g, z);
                let c = g.tanh(c);
                let h = g.add(c, b);
                let h = g.scale(h, 0.5);
                let out = self.posterior.forward(g, h);
                self.split(g, out)
            }
        }
    }

    fn draw(&self, g: &mut Graph, traj: &Trajectory, eps: &[Vec<f64>]) -> Result<ElboDraw> {
        self.dims.check_trajectory(traj)?;
        let b = self.summaries(g, &traj.static_features, &traj.observations, &traj.actions);
        let mut prior_terms = Vec::with_capacity(traj.len());
        let mut q_terms = Vec::with_capacity(traj.len());
        let mut recon_terms = Vec::with_capacity(traj.len());
        let mut prev: Option<Var> = None;
        for t in 0..traj.len() {
            let prev_pair = prev.map(|z| (z, traj.actions[t - 1]));
            let (mq, lq) = self.posterior_params(g, prev_pair, b[t]);
            let lq = g.clamp(lq, LOGVAR_MIN, LOGVAR_MAX);
            let half = g.scale(lq, 0.5);
            let sd = g.exp(half);
            let e = g.constant(eps[t].clone());
            let noise = g.mul(sd, e);
            let z = g.add(mq, noise);
            let (mp, lp) = match prev_pair {
                None => (g.constant(vec![0.0; self.latent]), g.constant(vec![0.0; self.latent])),
                Some((zp, a)) => match self.encoder_mode {
                    // identical nodes, so log q − log p is exactly zero
                    EncoderMode::Prior => (mq, lq),
                    EncoderMode::Learned => self.transition_params(g, zp, a),
                },
            };
            let nq = gaussian_nll(g, mq, lq, z);
            q_terms.push(g.neg(nq));
            let np = if matches!(self.encoder_mode, EncoderMode::Prior) {
                nq
            } else {
                gaussian_nll(g, mp, lp, z)
            };
            prior_terms.push(g.neg(np));
            let ep = self.emission_params(g, z, &traj.static_features);
            let nll = self.head.nll_var(g, ep, &traj.observations[t])?;
            recon_terms.push(g.neg(nll));
            prev = Some(z);
        }
        Ok(ElboDraw {
            log_prior: g.add_all(&prior_terms),
            log_q: g.add_all(&q_terms),
            recon: g.add_all(&recon_terms),
        })
    }

    fn noise(&self, len: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..self.latent).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    /// Reparameterized MC estimate of the ELBO.
    pub fn elbo(&self, traj: &Trajectory, n_mc: usize, rng: &mut StreamRng) -> Result<ElboEstimate> {
        if n_mc == 0 {
            return Err(Error::config("n_mc must be at least 1"));
        }
        let mut v = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let eps = self.noise(traj.len(), rng);
            let mut g = Graph::new(&self.params);
            let d = self.draw(&mut g, traj, &eps)?;
            v.push(g.scalar(d.log_prior) - g.scalar(d.log_q) + g.scalar(d.recon));
        }
        Ok(ElboEstimate::from_samples(&v))
    }

    /// MC estimate of `E_q[ln p(x | z)]` alone.
    pub fn reconstruction(&self, traj: &Trajectory, n_mc: usize, rng: &mut StreamRng) -> Result<ElboEstimate> {
        if n_mc == 0 {
            return Err(Error::config("n_mc must be at least 1"));
        }
        let mut v = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let eps = self.noise(traj.len(), rng);
            let mut g = Graph::new(&self.params);
            let d = self.draw(&mut g, traj, &eps)?;
            v.push(g.scalar(d.recon));
        }
        Ok(ElboEstimate::from_samples(&v))
    }

    /// Negative single-draw ELBO over `T` for fixed noise (exposed for gradient checks).
    pub fn loss_for_noise(&self, g: &mut Graph, traj: &Trajectory, eps: &[Vec<f64>]) -> Result<Var> {
        let d = self.draw(g, traj, eps)?;
        let kl = g.sub(d.log_prior, d.log_q);
        let elbo = g.add(kl, d.recon);
        Ok(g.scale(elbo, -1.0 / traj.len() as f64))
    }

    fn particle_mixture(&self, g: &mut Graph, mu: &[f64], lv: &[f64], x_s: &[f64]) -> Result<StepDistribution> {
        let k = self.particles.len();
        let mut comps = Vec::with_capacity(k);
        for e in &self.particles {
            let z: Vec<f64> = mu
                .iter()
                .zip(lv)
                .zip(e)
                .map(|((m, l), e)| m + (0.5 * l.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e)
                .collect();
            let zv = g.constant(z);
            let p = self.emission_params(g, zv, x_s);
            comps.push(HeadParams::new(self.head.clone(), g.value(p).to_vec())?);
        }
        StepDistribution::mixture(vec![1.0 / k as f64; k], comps)
    }

    pub fn first_distribution(&self, x_s: &[f64]) -> Result<StepDistribution> {
        self.dims.check_static(x_s)?;
        let mut g = Graph::new(&self.params);
        let zeros = vec![0.0; self.latent];
        self.particle_mixture(&mut g, &zeros, &zeros, x_s)
    }

    /// Predictive of `x_{n+1}` given `n` observations and `n` actions.
    pub fn predictive(&self, x_s: &[f64], obs: &[Vec<f64>], actions: &[usize]) -> Result<StepDistribution> {
        if obs.is_empty() || obs.len() != actions.len() {
            return Err(Error::dim("history actions", obs.len(), actions.len()));
        }
        let mut g = Graph::new(&self.params);
        let b = self.summaries(&mut g, x_s, obs, actions);
        let mut z: Option<Var> = None;
        for t in 0..obs.len() {
            let prev = z.map(|z| (z, actions[t - 1]));
            let (m, _) = self.posterior_params(&mut g, prev, b[t]);
            z = Some(m);
        }
        let (mu, lv) = self.transition_params(&mut g, z.expect("non-empty history"), *actions.last().expect("non-empty"));
        let (mu, lv) = (g.value(mu).to_vec(), g.value(lv).to_vec());
        self.particle_mixture(&mut g, &mu, &lv, x_s)
    }

    pub fn cursor(&self, x_s: &[f64], x_1: &[f64]) -> Result<SvaeCursor> {
        self.dims.check_static(x_s)?;
        self.dims.check_obs(x_1)?;
        Ok(SvaeCursor {
            x_s: x_s.to_vec(),
            obs: vec![x_1.to_vec()],
            actions: Vec::new(),
        })
    }

    pub fn advance(&self, cur: &mut SvaeCursor, action: usize) -> Result<StepDistribution> {
        self.dims.check_action(action)?;
        if cur.actions.len() != cur.obs.len() - 1 {
            return Err(Error::Session("two actions without an observation in between".into()));
        }
        cur.actions.push(action);
        self.predictive(&cur.x_s, &cur.obs, &cur.actions)
    }

    pub fn observe(&self, cur: &mut SvaeCursor, x: &[f64]) -> Result<()> {
        self.dims.check_obs(x)?;
        if cur.actions.len() != cur.obs.len() {
            return Err(Error::Session("observation supplied before the action that produced it".into()));
        }
        cur.obs.push(x.to_vec());
        Ok(())
    }
}

/// Rollout state of an SVAE environment: the observed prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvaeCursor {
    x_s: Vec<f64>,
    obs: Vec<Vec<f64>>,
    actions: Vec<usize>,
}

impl Trainable for SvaeModel {
    type Example = Trajectory;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn example_loss(&self, g: &mut Graph, traj: &Trajectory, rng: &mut StreamRng) -> Result<Var> {
        let eps = self.noise(traj.len(), rng);
        self.loss_for_noise(g, traj, &eps)
    }
}
