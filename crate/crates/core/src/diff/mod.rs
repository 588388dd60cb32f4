//! Minimal differentiable compute for the fixed model zoo.

pub mod checkpoint;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use head::{DistributionHead, HeadParams};
pub use layers::{Dense, GruCell, Mlp};
pub use optim::{fit, sgd_step, DpConfig, TrainConfig, Trainable};
pub use params::{Grads, Init, ParamId, ParamStore};
pub use tape::{Graph, Var};
