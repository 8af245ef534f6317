pub mod backbone;
pub mod data;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod params;
pub mod run;
pub mod select;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Batch, ExoStModel, ModelConfig, ModelDims};
