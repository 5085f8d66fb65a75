pub mod denoise;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
