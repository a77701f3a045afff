//! Experiment plumbing behind the `edgefed` binary: spec loading, run
//! execution, manifests, the theorem battery and plot tables.

pub mod manifest;
pub mod plots;
pub mod runner;
pub mod spec;
pub mod theorem;
