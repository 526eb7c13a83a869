//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod adam;
pub mod checkpoint;
mod graph;
mod mat;
pub mod nn;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{sigmoid, Graph, Var};
pub(crate) use mat::gemm;
pub use mat::Mat;
pub use nn::{gaussian_logprob, gru_step, mlp_forward, Activation, GaussianHead, GruCell, LayerSpec, Mlp};
pub use params::{orthogonal_init, ParamStore};
