//! Semantic-aware knowledge distillation for few-shot class-incremental
//! learning.

pub mod error;
pub mod evalsuite;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod memory;
pub mod model;
pub mod objective;
pub mod optim;
pub mod seeds;
pub mod semantics;
pub mod sessions;
pub mod trainer;

pub use error::{Error, Result};
