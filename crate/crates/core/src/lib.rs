//! polgen: a deterministic, needs-driven agent-based human mobility generator.
//!
//! Agents live on a [`worldmap::WorldMap`], are driven by the tick loop in
//! [`engine`], and everything they do is written through [`logsys`]. Around
//! that core sit checkpointing, a parallel runner, trip metrics, a genetic
//! calibrator and offline log processing.

pub mod anomaly;
pub mod calibrate;
pub mod checkpoint;
pub mod digest;
pub mod engine;
pub mod exec;
pub mod grid;
pub mod logsys;
pub mod manifest;
pub mod metrics;
pub mod params;
pub mod process;
pub mod rng;
pub mod runner;
pub mod viz;
pub mod worldmap;
