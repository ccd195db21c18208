pub mod audio;
pub mod autograd;
pub mod eigen;
pub mod error;
pub mod factor;
pub(crate) mod geom;
pub mod gradcheck;
pub mod manifest;
pub mod metrics;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod operators;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
