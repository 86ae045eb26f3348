//! Priming networks and the kernel-regime analysis behind them.
//!
//! This crate holds the pure numerical core: dense linear algebra, seeded
//! synthetic dataset generators, two-layer networks with symmetric
//! initialization, small MLPs with manual backpropagation, the NTK / linear
//! feature maps together with closed-form gradient-descent trajectories, and
//! the priming composition (key input, priming module, stop-gradient fusion,
//! interventions).
//!
//! Everything here is `no_std` + `alloc`. File formats, the experiment
//! runners and the command-line tool live in the `primelab` crate.
#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod kernel;
pub mod linalg;
mod math;
pub mod nnet;
pub mod priming;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymmetricEigen};
