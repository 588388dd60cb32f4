//! Simulation of sequential clinical decision-making datasets.
//!
//! A [`scenario::Scenario`] binds a domain schema, an environment model that
//! generates patient observations, and a decision policy that generates
//! actions. The two sides are modelled and sampled independently, so either
//! can be swapped while the other is held fixed, and the policy's full
//! parameterization is exportable as ground truth.

pub mod dataset;
pub mod diff;
pub mod digest;
pub mod env;
pub mod policy;
pub mod error;
pub mod eval;
pub mod rng;
pub mod scenario;
pub mod schema;

pub use error::{Error, Result};
