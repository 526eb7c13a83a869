//! Safe LiDAR-driven navigation with constrained reinforcement learning.

pub mod autodiff;
pub mod cbf;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod trainer;
pub mod world;

pub use config::RunConfig;
pub use error::{Error, Result};
