//! Command-line front end for the risk-sensitive actor-critic library:
//! JSON experiment configs, run execution with trace/summary emission,
//! exact-solver verification commands, and seed sweeps with deterministic
//! aggregation.
//!
//! The binary (`risk-ac`) is a thin argument parser over [`commands`];
//! everything testable lives here.

pub mod commands;
pub mod config;
pub mod output;
