//! File formats, synthetic data, experiments and the command line for the
//! HighAir forecaster. The model itself lives in [`highair_core`].

pub mod error;
pub mod experiment;
pub mod frame;
pub mod pipeline;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
pub use highair_core;
