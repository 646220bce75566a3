//! Benchmark and verification harness for the `aha` engine.
//!
//! Reproduces oscillating read-heavy/write-heavy workloads at desk scale
//! against three engine organizations (adaptive, LSM-only, page-only),
//! with deterministic workload generation, per-op metrics, and exact
//! oracle replay. The `bench` binary fronts [`runner::run`] and
//! [`verify::verify`]; integration tests drive the same entry points.

pub mod cli;
pub mod runner;
pub mod verify;
pub mod workload;
