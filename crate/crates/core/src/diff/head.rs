//! Output distributions parameterized by network heads.
//!
//! A factored head over a feature space carries, in order, the Gaussian means
//! and log-variances of the continuous block followed by the Bernoulli logits
//! of the binary block. A categorical head carries one logit per class.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, softmax, softplus, Graph, Var};
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const PROB_FLOOR: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionHead {
    /// Gaussian continuous block followed by a Bernoulli binary block.
    /// `binary = 0` is a factored Gaussian, `continuous = 0` a factored Bernoulli.
    Factored { continuous: usize, binary: usize },
    CategoricalSoftmax { classes: usize },
}

impl DistributionHead {
    pub fn param_dim(&self) -> usize {
        match *self {
            DistributionHead::Factored { continuous, binary } => 2 * continuous + binary,
            DistributionHead::CategoricalSoftmax { classes } => classes,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match *self {
            DistributionHead::Factored { binary: 0, .. } => "factored-gaussian",
            DistributionHead::Factored { continuous: 0, .. } => "factored-bernoulli",
            DistributionHead::Factored { .. } => "factored-gaussian-bernoulli",
            DistributionHead::CategoricalSoftmax { .. } => "categorical-softmax",
        }
    }

    /// Dimension of a sample (1 for a categorical index).
    pub fn sample_dim(&self) -> usize {
        match *self {
            DistributionHead::Factored { continuous, binary } => continuous + binary,
            DistributionHead::CategoricalSoftmax { .. } => 1,
        }
    }

    pub(crate) fn split(&self) -> (usize, usize) {
        match *self {
            DistributionHead::Factored { continuous, binary } => (continuous, binary),
            DistributionHead::CategoricalSoftmax { .. } => (0, 0),
        }
    }

    fn check_target(&self, target: &[f64]) -> Result<()> {
        if target.len() != self.sample_dim() {
            return Err(Error::dim("head target", self.sample_dim(), target.len()));
        }
        match *self {
            DistributionHead::Factored { continuous, .. } => {
                for (i, &x) in target.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(Error::Domain(format!("target entry {i} is not finite")));
                    }
                    if i >= continuous && x != 0.0 && x != 1.0 {
                        return Err(Error::Domain(format!(
                            "bernoulli target {x} at entry {i} is not in {{0, 1}}"
                        )));
                    }
                }
            }
            DistributionHead::CategoricalSoftmax { classes } => {
                let k = target[0];
                if k < 0.0 || k.fract() != 0.0 || k as usize >= classes {
                    return Err(Error::Domain(format!("class {k} outside 0..{classes}")));
                }
            }
        }
        Ok(())
    }

    /// Negative log density/mass of `target` as a graph node.
    pub fn nll_var(&self, g: &mut Graph, params: Var, target: &[f64]) -> Result<Var> {
        if g.len(params) != self.param_dim() {
            return Err(Error::dim("head parameters", self.param_dim(), g.len(params)));
        }
        self.check_target(target)?;
        if let DistributionHead::CategoricalSoftmax { .. } = *self {
            let ls = g.log_softmax(params);
            let p = g.pick(ls, target[0] as usize);
            return Ok(g.neg(p));
        }
        let (c, b) = self.split();
        let mut terms = Vec::with_capacity(2);
        if c > 0 {
            let mu = g.slice(params, 0, c);
            let lv = g.slice(params, c, c);
            let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
            let neg_x: Vec<f64> = target[..c].iter().map(|x| -x).collect();
            let d = g.offset(mu, &neg_x);
            let d2 = g.square(d);
            let nlv = g.neg(lv);
            let prec = g.exp(nlv);
            let q = g.mul(d2, prec);
            let s = g.add(q, lv);
            let s = g.sum(s);
            let s = g.scale(s, 0.5);
            let k = g.scalar_const(c as f64 * HALF_LN_2PI);
            terms.push(g.add(s, k));
        }
        if b > 0 {
            let logits = g.slice(params, 2 * c, b);
            let sp = g.softplus(logits);
            let tl: Vec<f64> = target[c..].to_vec();
            let tv = g.constant(tl);
            let xl = g.mul(tv, logits);
            let t = g.sub(sp, xl);
            terms.push(g.sum(t));
        }
        Ok(g.add_all(&terms))
    }
}

/// Concrete head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub head: DistributionHead,
    pub params: Vec<f64>,
}

impl HeadParams {
    pub fn new(head: DistributionHead, params: Vec<f64>) -> Result<Self> {
        if params.len() != head.param_dim() {
            return Err(Error::dim("head parameters", head.param_dim(), params.len()));
        }
        Ok(HeadParams { head, params })
    }

    pub fn means(&self) -> &[f64] {
        let (c, _) = self.head.split();
        &self.params[..c]
    }

    /// Log-variances after clamping.
    pub fn log_variances(&self) -> Vec<f64> {
        let (c, _) = self.head.split();
        self.params[c..2 * c]
            .iter()
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect()
    }

    pub fn logits(&self) -> &[f64] {
        match self.head {
            DistributionHead::Factored { continuous, .. } => &self.params[2 * continuous..],
            DistributionHead::CategoricalSoftmax { .. } => &self.params,
        }
    }

    /// Bernoulli probabilities of the binary block.
    pub fn bernoulli_probs(&self) -> Vec<f64> {
        self.logits().iter().map(|&l| sigmoid(l)).collect()
    }

    /// Class probabilities of a categorical head.
    pub fn class_probs(&self) -> Vec<f64> {
        softmax(&self.params)
    }

    pub fn nll(&self, target: &[f64]) -> Result<f64> {
        self.head.check_target(target)?;
        if let DistributionHead::CategoricalSoftmax { .. } = self.head {
            let p = self.class_probs()[target[0] as usize];
            return Ok(-p.max(PROB_FLOOR).ln());
        }
        let (c, _) = self.head.split();
        let mut total = 0.0;
        for ((x, mu), lv) in target[..c].iter().zip(self.means()).zip(self.log_variances()) {
            total += 0.5 * ((x - mu) * (x - mu) * (-lv).exp() + lv) + HALF_LN_2PI;
        }
        for (x, l) in target[c..].iter().zip(self.logits()) {
            total += softplus(*l) - x * l;
        }
        Ok(total)
    }

    pub fn log_prob(&self, target: &[f64]) -> Result<f64> {
        Ok(-self.nll(target)?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        if let DistributionHead::CategoricalSoftmax { .. } = self.head {
            return vec![sample_categorical(&self.class_probs(), rng) as f64];
        }
        let mut out = Vec::with_capacity(self.head.sample_dim());
        for (mu, lv) in self.means().iter().zip(self.log_variances()) {
            let e: f64 = rng.sample(StandardNormal);
            out.push(mu + (0.5 * lv).exp() * e);
        }
        for p in self.bernoulli_probs() {
            let u: f64 = rng.random();
            out.push(if u < p { 1.0 } else { 0.0 });
        }
        out
    }

    /// Differential entropy of the Gaussian block plus Shannon entropy of the rest.
    pub fn entropy(&self) -> f64 {
        if let DistributionHead::CategoricalSoftmax { .. } = self.head {
            return self
                .class_probs()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
        }
        let gauss: f64 = self
            .log_variances()
            .iter()
            .map(|lv| 0.5 * (1.0 + (2.0 * PI).ln() + lv))
            .sum();
        let bern: f64 = self
            .logits()
            .iter()
            .map(|&l| {
                let p = sigmoid(l);
                // H = softplus(l) - p l, stable for large |l|
                let h = softplus(l) - p * l;
                h.clamp(0.0, LN_2)
            })
            .sum();
        gauss + bern
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u beyond the cumulative sum: take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::{Init, ParamStore};

    #[test]
    fn standard_gaussian_at_zero() {
        let h = HeadParams::new(
            DistributionHead::Factored { continuous: 3, binary: 0 },
            vec![0.0; 6],
        )
        .unwrap();
        let expect = 3.0 * 0.5 * (2.0 * PI).ln();
        assert!((h.nll(&[0.0, 0.0, 0.0]).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn fair_bernoulli_is_ln2() {
        let h = HeadParams::new(DistributionHead::Factored { continuous: 0, binary: 1 }, vec![0.0])
            .unwrap();
        for x in [0.0, 1.0] {
            assert!((h.nll(&[x]).unwrap() - LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn bernoulli_target_outside_support() {
        let h = HeadParams::new(DistributionHead::Factored { continuous: 0, binary: 1 }, vec![0.0])
            .unwrap();
        assert!(matches!(h.nll(&[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn mixed_head_equals_componentwise_oracle() {
        let params = vec![0.3, -1.2, 0.4, -0.8, 1.7];
        let target = [0.9, -0.5, 1.0];
        let h = HeadParams::new(DistributionHead::Factored { continuous: 2, binary: 1 }, params.clone())
            .unwrap();
        // independent per-component densities
        let gauss = |x: f64, mu: f64, lv: f64| {
            let var = lv.exp();
            (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
        };
        let p = 1.0 / (1.0 + (-1.7f64).exp());
        let oracle = -(gauss(0.9, 0.3, 0.4).ln() + gauss(-0.5, -1.2, -0.8).ln() + p.ln());
        assert!((h.nll(&target).unwrap() - oracle).abs() < 1e-12);

        // graph form agrees with the numeric form
        let mut ps = ParamStore::new(0);
        let id = ps.add("p", 5, 1, Init::Values(params)).unwrap();
        let mut g = Graph::new(&ps);
        let v = g.param(id);
        let l = h.head.nll_var(&mut g, v, &target).unwrap();
        assert!((g.scalar(l) - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_give_uniform_categorical() {
        let h = HeadParams::new(DistributionHead::CategoricalSoftmax { classes: 4 }, vec![0.0; 4])
            .unwrap();
        let p = h.class_probs();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logvar_is_clamped() {
        let h = HeadParams::new(DistributionHead::Factored { continuous: 1, binary: 0 }, vec![0.0, 50.0])
            .unwrap();
        assert_eq!(h.log_variances(), vec![LOGVAR_MAX]);
    }
}
