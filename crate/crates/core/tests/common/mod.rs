//! Shared builders and reference implementations for integration tests.
#![allow(dead_code)]

use dmkit::diff::{Grads, HeadParams, ParamStore};
use dmkit::env::{Attention, CssModel, EnvDims};
use dmkit::rng::{self, StreamRng};
use dmkit::schema::{ActionSpace, DomainSchema, FeatureSpace, Trajectory};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn tiny_schema(actions: usize) -> DomainSchema {
    DomainSchema::new(
        "tiny",
        FeatureSpace::anonymous("s", 1, 1).unwrap(),
        FeatureSpace::anonymous("x", 2, 1).unwrap(),
        ActionSpace::new(actions).unwrap(),
        16,
    )
    .unwrap()
}

pub fn random_trajectory(dims: EnvDims, len: usize, r: &mut StreamRng) -> Trajectory {
    let cont_s = 1.min(dims.static_dim);
    let static_features = (0..dims.static_dim)
        .map(|i| if i < cont_s { r.sample(StandardNormal) } else { f64::from(u8::from(r.random::<bool>())) })
        .collect();
    let observations = (0..len)
        .map(|_| {
            (0..dims.temporal)
                .map(|i| {
                    if i < dims.continuous {
                        r.sample(StandardNormal)
                    } else {
                        f64::from(u8::from(r.random::<bool>()))
                    }
                })
                .collect()
        })
        .collect();
    let actions = (0..len).map(|_| r.random_range(0..dims.actions)).collect();
    Trajectory {
        static_features,
        observations,
        actions,
    }
}

/// Random small CSS with all parameters (including attention and emission)
/// drawn from `N(0, scale²)`.
pub fn random_css(dims: EnvDims, states: usize, attention: Attention, seed: u64) -> CssModel {
    let mut m = CssModel::new(dims, states, attention, &[3], 3, seed).unwrap();
    let mut r = rng::keyed(seed, "random-css", 0);
    for t in m.params.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = r.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Emission log-density written out from the head's means, log-variances
/// and Bernoulli probabilities.
pub fn emission_log_density(h: &HeadParams, x: &[f64]) -> f64 {
    let mu = h.means();
    let lv = h.log_variances();
    let c = mu.len();
    let mut total = 0.0;
    for j in 0..c {
        let var = lv[j].exp();
        total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x[j] - mu[j]).powi(2) / (2.0 * var);
    }
    for (k, p) in h.bernoulli_probs().iter().enumerate() {
        total += if x[c + k] == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    total
}

/// Textbook scaled forward algorithm for a first-order input-output HMM.
pub fn forward_algorithm(m: &CssModel, traj: &Trajectory) -> f64 {
    let z = m.states;
    let heads = m.emission_params(&traj.static_features).unwrap();
    // emissions rescaled per step by their maximum, added back into `ll`
    let scaled = |t: usize| -> (Vec<f64>, f64) {
        let le: Vec<f64> = (0..z).map(|s| emission_log_density(&heads[s], &traj.observations[t])).collect();
        let mx = le.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (le.iter().map(|v| (v - mx).exp()).collect(), mx)
    };
    let pi = m.initial_distribution();
    let (e0, mut ll) = scaled(0);
    let mut alpha: Vec<f64> = (0..z).map(|s| pi[s] * e0[s]).collect();
    let c: f64 = alpha.iter().sum();
    ll += c.ln();
    alpha.iter_mut().for_each(|a| *a /= c);
    for t in 1..traj.len() {
        let p = m.transition_matrix(traj.actions[t - 1]);
        let (et, mx) = scaled(t);
        ll += mx;
        let mut next = vec![0.0; z];
        for (b, nb) in next.iter_mut().enumerate() {
            *nb = (0..z).map(|a| alpha[a] * p[a][b]).sum::<f64>() * et[b];
        }
        let c: f64 = next.iter().sum();
        ll += c.ln();
        alpha = next.iter().map(|v| v / c).collect();
    }
    ll
}

/// Log joint of every latent path, by direct summation of the model's
/// defining formula.
pub fn enumerate_paths(m: &CssModel, traj: &Trajectory) -> Vec<(Vec<usize>, f64)> {
    let z = m.states;
    let n = traj.len();
    let heads = m.emission_params(&traj.static_features).unwrap();
    let pi = m.initial_distribution();
    let mats: Vec<Vec<Vec<f64>>> = (0..m.dims.actions).map(|y| m.transition_matrix(y)).collect();
    let attn: Vec<Vec<f64>> = (2..=n).map(|t| m.attention_weights(t).unwrap()).collect();
    let mut out = Vec::new();
    for i in 0..z.pow(n as u32) {
        let path: Vec<usize> = (0..n).map(|t| (i / z.pow(t as u32)) % z).collect();
        let mut lp = pi[path[0]].ln() + emission_log_density(&heads[path[0]], &traj.observations[0]);
        for t in 1..n {
            let alpha = &attn[t - 1];
            let p: f64 = (1..=t)
                .map(|k| alpha[k - 1] * mats[traj.actions[t - k]][path[t - k]][path[t]])
                .sum();
            lp += p.ln() + emission_log_density(&heads[path[t]], &traj.observations[t]);
        }
        out.push((path, lp));
    }
    out
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn brute_force_loglik(m: &CssModel, traj: &Trajectory) -> f64 {
    let lps: Vec<f64> = enumerate_paths(m, traj).into_iter().map(|(_, l)| l).collect();
    log_sum_exp(&lps)
}

/// Loss-and-gradient closure output for gradient checks.
pub type LossGrad = (f64, Grads);

pub fn perturb(p: &mut ParamStore, sd: f64, seed: u64) {
    let mut r = rng::keyed(seed, "perturb", 0);
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += sd * r.sample::<f64, _>(StandardNormal);
        }
    }
}
