//! Conditional waveform flow for audio super-resolution, plus the data
//! preparation, training, sampling and evaluation pipeline around it.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod flow;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};

/// Worker-thread cap from `WSRGLOW_THREADS` (default 1).
pub fn worker_threads() -> usize {
    std::env::var("WSRGLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
