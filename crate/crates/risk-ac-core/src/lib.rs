//! Risk-sensitive actor-critic algorithms for tabular Markov decision
//! processes, with exact linear-algebra references for every sampled
//! estimator. Core crate: no_std with alloc, all IO lives in the companion
//! CLI crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actor;
pub mod critic;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod perturb;
pub mod rng;
pub mod traffic;
