pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod lgrpe;
pub mod model;
pub mod params;
pub mod rng;
pub mod spatial;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
