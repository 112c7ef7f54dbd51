//! Reverse-mode differentiation over rollouts and the optimizer that
//! consumes its gradients.

mod adam;
mod tape;

pub(crate) use tape::{dot, sigmoid};

pub use adam::{adam_step, AdamConfig, OptimizerState, StepOutcome};
pub use tape::{Gradients, Tape, Var};

use std::fmt::Debug;
use std::iter::Sum;

/// Scalar types the tape can record: `f32` (narrow, training) and `f64`
/// (wide, gradient checks).
pub trait Real:
    num_traits::Float + Default + Debug + Send + Sync + Sum + 'static
{
    fn lit(x: f64) -> Self;
    fn real(self) -> f64;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn real(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn real(self) -> f64 {
        self
    }
}

/// Numeric precision of a rollout tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Narrow,
    Wide,
}
