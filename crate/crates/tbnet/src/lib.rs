//! Training, evaluation and visualisation front end for the two-stream
//! tamper localisation network in `tbnet-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod predictor;
pub mod train;
pub mod viz;

pub use config::RunConfig;
pub use error::{AppError, AppResult};
