pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod distributional;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod hypersphere;
pub mod network;
pub mod normalizers;
pub mod optim;
pub mod params;
pub mod sac;
pub mod telemetry;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
