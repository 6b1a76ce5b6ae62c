//! Ingestion, file formats and the `tutorflow` command-line tool built on
//! [`tutorflow_core`].

pub mod canonical;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod kt1;
pub mod oj;
pub mod report;

pub use error::{AppError, AppResult};
