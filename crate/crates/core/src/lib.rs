//! Learning-signal processing, Bayesian knowledge tracing, curriculum
//! allocation and the adaptive tutoring loop.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the
//! command-line front end live in the `tutorflow` crate.

#![no_std]

extern crate alloc;

pub mod allocation;
pub mod bkt;
pub mod error;
pub mod event;
pub mod flywheel;
pub mod metrics;
pub mod signal;
pub mod synthetic;

pub use error::{Error, Result};
