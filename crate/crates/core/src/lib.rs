//! Benchmark engine for 1:N and 1:First iris identification search.

pub mod calibration;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod search;
pub mod synth;
pub mod templates;
