//! Configuration, run manifests and experiment execution behind the `torus-mix` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod runner;
