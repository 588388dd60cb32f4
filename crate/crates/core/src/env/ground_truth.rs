//! Hand-specified state-space environments that stand in for real data.
//!
//! Three latent health states (stable, deteriorating, critical) with banded
//! transitions: a patient moves at most one state per step. Higher treatment
//! intensity lowers the chance of worsening and raises the chance of
//! improving. Transitions attend to the last two steps with weights
//! `(0.8, 0.2)`. Emissions are linear in `(onehot z, x_s)`.

use rand::Rng;

use super::css::{Attention, CssModel};
use super::init::{InitModel, StaticModel};
use super::{EnvDims, Environment, EnvironmentModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::DomainSchema;

pub const STATES: usize = 3;
pub const ATTENTION: [f64; 2] = [0.8, 0.2];
pub const INITIAL: [f64; 3] = [0.6, 0.3, 0.1];

/// Treatment intensity of an action in `[0, 1]`: fraction of set bits for
/// factored action spaces, otherwise the index scaled to `[0, 1]`.
pub fn intensity(schema: &DomainSchema, y: usize) -> f64 {
    let a = &schema.action_space;
    match a.factor(y) {
        Some(bits) if !bits.is_empty() => bits.iter().filter(|b| **b).count() as f64 / bits.len() as f64,
        _ => y as f64 / (a.cardinality - 1) as f64,
    }
}

/// Banded transition matrix for treatment intensity `k`.
pub fn banded_transitions(k: f64) -> Vec<Vec<f64>> {
    let worsen = 0.02 + 0.18 * (1.0 - k);
    let improve = 0.05 + 0.3 * k;
    vec![
        vec![1.0 - worsen, worsen, 0.0],
        vec![improve, 1.0 - improve - worsen, worsen],
        vec![0.0, improve, 1.0 - improve],
    ]
}

/// The ground-truth state-space environment for `schema`, with all free
/// coefficients drawn from a stream keyed by the schema name.
pub fn css_for_schema(schema: &DomainSchema) -> Result<Environment> {
    schema.check()?;
    let dims = EnvDims::from_schema(schema);
    let mut r = rng::keyed(0, &format!("ground-truth/{}", schema.name), 0);
    let mut model = CssModel::new(
        dims,
        STATES,
        Attention::Fixed { weights: ATTENTION.to_vec() },
        &[],
        8,
        0,
    )?;
    let trans: Vec<Vec<Vec<f64>>> = (0..dims.actions)
        .map(|y| banded_transitions(intensity(schema, y)))
        .collect();
    model.set_probabilities(&INITIAL, &trans)?;

    let layer = model.emission.layers[0];
    let inputs = STATES + dims.static_dim;
    let sc = schema.static_space.continuous_dims;
    let c = dims.continuous;
    let b = dims.temporal - c;
    let mut w = vec![0.0; (2 * c + b) * inputs];
    let mut bias = vec![0.0; 2 * c + b];
    let level = [-1.0, 0.5, 2.0];
    for j in 0..c {
        let load = r.random_range(0.5..1.5) * if r.random::<bool>() { 1.0 } else { -1.0 };
        for z in 0..STATES {
            w[j * inputs + z] = level[z] * load;
        }
        for i in 0..sc {
            w[j * inputs + STATES + i] = r.random_range(-0.3..0.3);
        }
        bias[j] = r.random_range(-1.0..1.0);
        // log-variance: 0.25 baseline, wider when critical
        bias[c + j] = 0.25f64.ln();
        w[(c + j) * inputs + 2] = 0.5;
    }
    for k in 0..b {
        let row = 2 * c + k;
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        for z in 0..STATES {
            w[row * inputs + z] = sign * 1.5 * (z as f64 - 1.0);
        }
        for i in 0..dims.static_dim {
            w[row * inputs + STATES + i] = r.random_range(-0.3..0.3);
        }
        bias[row] = -0.5;
    }
    model.params.get_mut(layer.w).data = w;
    model.params.get_mut(layer.b).data = bias;

    let init = InitModel {
        static_model: StaticModel {
            mean: vec![0.0; sc],
            chol: (0..sc).map(|i| (0..sc).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
            binary_probs: (0..schema.static_space.binary_dims)
                .map(|_| r.random_range(0.2..0.8))
                .collect(),
        },
        first_obs: None,
    };
    Environment::new(schema.clone(), init, EnvironmentModel::Css(model))
}

/// Built-in ground truth by name; `schema` must be the matching built-in domain.
pub fn builtin(name: &str, schema: &DomainSchema) -> Result<Environment> {
    match name {
        "ward_synth" | "icu_synth" => {
            if schema.name != name {
                return Err(Error::Config(format!(
                    "ground truth '{name}' needs the '{name}' domain, got '{}'",
                    schema.name
                )));
            }
            css_for_schema(schema)
        }
        other => Err(Error::Config(format!(
            "unknown ground truth '{other}' (ward_synth, icu_synth)"
        ))),
    }
}
