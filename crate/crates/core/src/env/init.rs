//! Initial-state model for `(x_s, x_1)`.
//!
//! Static features: a full-covariance Gaussian over the continuous block and
//! independent Bernoullis over the binary block. First observation, when
//! modelled here: linear-Gaussian and linear-logistic in `[x_s, 1]`. Latent
//! environments leave the first observation to their own dynamics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::tape::sigmoid;
use crate::error::{Error, Result};
use crate::schema::{FeatureSpace, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticModel {
    pub mean: Vec<f64>,
    /// Lower-triangular factor `L`, covariance `L Lᵀ`, row-major.
    pub chol: Vec<Vec<f64>>,
    pub binary_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstObsModel {
    /// One row per continuous temporal feature over `[x_s, 1]`.
    pub weights: Vec<Vec<f64>>,
    pub chol: Vec<Vec<f64>>,
    /// One row of logit weights per binary temporal feature over `[x_s, 1]`.
    pub logit_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitModel {
    pub static_model: StaticModel,
    pub first_obs: Option<FirstObsModel>,
}

fn lower_mul(l: &[Vec<f64>], e: &[f64]) -> Vec<f64> {
    l.iter()
        .map(|row| row.iter().zip(e).take(row.len()).map(|(a, b)| a * b).sum())
        .collect()
}

fn with_bias(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(1.0);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factor of `cov + jitter·I`, retrying with growing jitter.
fn cholesky(cov: DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut jitter = 1e-9;
    for _ in 0..12 {
        let m = &cov + DMatrix::identity(n, n) * jitter;
        if let Some(c) = m.cholesky() {
            let l = c.l();
            return Ok((0..n).map(|i| (0..n).map(|j| l[(i, j)]).collect()).collect());
        }
        jitter *= 10.0;
    }
    Err(Error::Config("covariance is not positive semi-definite".into()))
}

impl StaticModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let e: Vec<f64> = (0..self.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut out: Vec<f64> = lower_mul(&self.chol, &e)
            .iter()
            .zip(&self.mean)
            .map(|(a, m)| a + m)
            .collect();
        for &p in &self.binary_probs {
            let u: f64 = rng.random();
            out.push(if u < p { 1.0 } else { 0.0 });
        }
        out
    }
}

impl FirstObsModel {
    pub fn sample<R: Rng + ?Sized>(&self, x_s: &[f64], rng: &mut R) -> Vec<f64> {
        let xb = with_bias(x_s);
        let e: Vec<f64> = (0..self.weights.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noise = lower_mul(&self.chol, &e);
        let mut out: Vec<f64> = self
            .weights
            .iter()
            .zip(noise)
            .map(|(w, n)| dot(w, &xb) + n)
            .collect();
        for w in &self.logit_weights {
            let u: f64 = rng.random();
            out.push(if u < sigmoid(dot(w, &xb)) { 1.0 } else { 0.0 });
        }
        out
    }
}

impl InitModel {
    /// Standard-normal static block, fair Bernoullis, and a first observation
    /// of unit-variance noise around zero with fair binary slots.
    pub fn standard(schema: &crate::schema::DomainSchema) -> Self {
        let sc = schema.static_space.continuous_dims;
        let k = schema.static_space.dim() + 1;
        let tc = schema.temporal_space.continuous_dims;
        let identity = |n: usize| (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        InitModel {
            static_model: StaticModel {
                mean: vec![0.0; sc],
                chol: identity(sc),
                binary_probs: vec![0.5; schema.static_space.binary_dims],
            },
            first_obs: Some(FirstObsModel {
                weights: vec![vec![0.0; k]; tc],
                chol: identity(tc),
                logit_weights: vec![vec![0.0; k]; schema.temporal_space.binary_dims],
            }),
        }
    }

    pub fn sample_static<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.static_model.sample(rng)
    }

    pub fn sample_first<R: Rng + ?Sized>(&self, x_s: &[f64], rng: &mut R) -> Option<Vec<f64>> {
        self.first_obs.as_ref().map(|m| m.sample(x_s, rng))
    }

    pub fn static_mean(&self) -> Vec<f64> {
        let mut m = self.static_model.mean.clone();
        m.extend(&self.static_model.binary_probs);
        m
    }

    /// Fit to the static features and (optionally) first observations of `data`.
    pub fn fit(
        static_space: &FeatureSpace,
        temporal_space: &FeatureSpace,
        data: &[Trajectory],
        with_first_obs: bool,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config("cannot fit an initial-state model to an empty dataset"));
        }
        let n = data.len() as f64;
        let sc = static_space.continuous_dims;
        let sdim = static_space.dim();
        let mut mean = vec![0.0; sc];
        for t in data {
            for (m, x) in mean.iter_mut().zip(&t.static_features) {
                *m += x / n;
            }
        }
        let mut cov = DMatrix::zeros(sc, sc);
        for t in data {
            let d = DVector::from_iterator(sc, t.static_features[..sc].iter().zip(&mean).map(|(x, m)| x - m));
            cov += &d * d.transpose() / n;
        }
        let binary_probs = (sc..sdim)
            .map(|j| data.iter().map(|t| t.static_features[j]).sum::<f64>() / n)
            .collect();
        let static_model = StaticModel {
            mean,
            chol: cholesky(cov)?,
            binary_probs,
        };
        let first_obs = if with_first_obs {
            Some(fit_first_obs(temporal_space, sdim, data)?)
        } else {
            None
        };
        Ok(InitModel { static_model, first_obs })
    }
}

fn fit_first_obs(temporal: &FeatureSpace, sdim: usize, data: &[Trajectory]) -> Result<FirstObsModel> {
    let n = data.len();
    let k = sdim + 1;
    let design = DMatrix::from_fn(n, k, |i, j| if j < sdim { data[i].static_features[j] } else { 1.0 });
    let xtx = design.transpose() * &design + DMatrix::identity(k, k) * 1e-6;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::config("singular design in first-observation fit"))?;
    let tc = temporal.continuous_dims;
    let mut weights = Vec::with_capacity(tc);
    let mut resid = DMatrix::zeros(n, tc);
    for j in 0..tc {
        let y = DVector::from_iterator(n, data.iter().map(|t| t.observations[0][j]));
        let w = &xtx_inv * design.transpose() * &y;
        let r = &y - &design * &w;
        resid.set_column(j, &r);
        weights.push(w.iter().copied().collect());
    }
    let cov = resid.transpose() * &resid / n as f64;
    // logistic regression by full-batch gradient descent
    let mut logit_weights = Vec::with_capacity(temporal.binary_dims);
    for j in tc..temporal.dim() {
        let mut w = vec![0.0; k];
        for _ in 0..300 {
            let mut grad = vec![0.0; k];
            for (i, t) in data.iter().enumerate() {
                let row: Vec<f64> = design.row(i).iter().copied().collect();
                let err = sigmoid(dot(&w, &row)) - t.observations[0][j];
                for (g, x) in grad.iter_mut().zip(&row) {
                    *g += err * x / n as f64;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= 0.5 * g;
            }
        }
        logit_weights.push(w);
    }
    Ok(FirstObsModel {
        weights,
        chol: cholesky(cov)?,
        logit_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model() -> InitModel {
        InitModel {
            static_model: StaticModel {
                mean: vec![1.0, -2.0],
                chol: vec![vec![0.5, 0.0], vec![0.3, 0.4]],
                binary_probs: vec![1.0, 0.25],
            },
            first_obs: Some(FirstObsModel {
                weights: vec![vec![0.5, 0.0, 0.0, 0.0, 1.0]],
                chol: vec![vec![0.1]],
                logit_weights: vec![vec![0.0, 0.0, 0.0, 0.0, 0.0]],
            }),
        }
    }

    #[test]
    fn zero_covariance_gives_exact_mean() {
        let mut m = model();
        m.static_model.mean = vec![0.0, 0.0];
        m.static_model.chol = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let mut r = rng::keyed(1, "t", 0);
        for _ in 0..100 {
            let x = m.sample_static(&mut r);
            assert_eq!(&x[..2], &[0.0, 0.0]);
        }
    }

    #[test]
    fn certain_bernoulli_always_one() {
        let m = model();
        let mut r = rng::keyed(1, "t", 1);
        for _ in 0..1000 {
            assert_eq!(m.sample_static(&mut r)[2], 1.0);
        }
    }

    #[test]
    fn empirical_mean_within_clt_bound() {
        let m = model();
        let mut r = rng::keyed(3, "t", 2);
        let n = 100_000;
        let mut sum = vec![0.0; 4];
        for _ in 0..n {
            for (s, x) in sum.iter_mut().zip(m.sample_static(&mut r)) {
                *s += x;
            }
        }
        // marginal standard deviations of the model
        let sd = [0.5, (0.3f64 * 0.3 + 0.4 * 0.4).sqrt(), 0.0, (0.25f64 * 0.75).sqrt()];
        for ((s, mu), sd) in sum.iter().zip(m.static_mean()).zip(sd) {
            let emp = s / n as f64;
            assert!((emp - mu).abs() <= 4.0 * sd / (n as f64).sqrt() + 1e-12, "{emp} vs {mu}");
        }
    }

    #[test]
    fn fit_recovers_simple_structure() {
        let mut truth = model();
        // a constant binary column would be collinear with the intercept
        truth.static_model.binary_probs = vec![0.5, 0.25];
        let mut r = rng::keyed(5, "fit", 0);
        let data: Vec<Trajectory> = (0..4000)
            .map(|_| {
                let s = truth.sample_static(&mut r);
                let x1 = truth.sample_first(&s, &mut r).unwrap();
                Trajectory { static_features: s, observations: vec![x1], actions: vec![0] }
            })
            .collect();
        let sspace = FeatureSpace::anonymous("s", 2, 2).unwrap();
        let tspace = FeatureSpace::anonymous("x", 1, 1).unwrap();
        let fitted = InitModel::fit(&sspace, &tspace, &data, true).unwrap();
        assert!((fitted.static_model.mean[0] - 1.0).abs() < 0.05);
        assert!((fitted.static_model.chol[1][1] - 0.4).abs() < 0.05);
        let fo = fitted.first_obs.unwrap();
        assert!((fo.weights[0][0] - 0.5).abs() < 0.05);
        assert!((fo.weights[0][4] - 1.0).abs() < 0.1);
        assert!((fo.chol[0][0] - 0.1).abs() < 0.02);
    }
}
