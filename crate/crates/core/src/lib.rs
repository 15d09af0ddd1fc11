//! Multitask LSTM forecaster for arboviral case counts and outbreak months.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod training;
pub mod tuning;

pub use error::{Error, Result};
pub use par::Exec;
