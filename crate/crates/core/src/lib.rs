pub mod autodiff;
pub mod bench;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod math;
pub mod policy;
pub mod render;
pub mod rollout;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
