//! Hierarchical relational imitation learning for bimanual manipulation.

pub mod checkpoint;
pub mod dynamics;
mod error;
pub mod kinematics;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod planning;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
