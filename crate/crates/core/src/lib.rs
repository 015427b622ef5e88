pub mod autodiff;
pub mod cell;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod es;
pub mod evaluation;
pub mod forecasting;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod synthetic;
pub mod timeseries;
pub mod training;

pub use error::{Error, Result};
