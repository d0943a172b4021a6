pub mod csi;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod linalg;
pub mod localizer;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
