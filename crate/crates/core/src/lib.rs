//! Hierarchical graph-neural-network air-quality forecasting.
//!
//! Cities and their monitoring stations form a two-level graph. Each hour,
//! a shared city LSTM summarizes city air quality, one message-passing round
//! runs on the city graph, its result is pushed down into the station graphs
//! as a global attribute, and one message-passing round runs on each station
//! graph. The per-station sequence of representations feeds an LSTM
//! encoder-decoder that forecasts the next hours of AQI.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, ingestion and
//! the command line live in the `highair` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::{Ablation, AblationFlag, TrainConfig};
pub use error::{Error, Result};
pub use model::{ForecastResult, HighAir};
pub use tensor::Tensor;
