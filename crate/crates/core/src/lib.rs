//! Learning explicit neural-network surrogates of (possibly set-valued) soft-constrained
//! MPC policies.
//!
//! The pipeline has two stages. First, the optimal value function of the soft-constrained
//! MPC problem is regressed from solver data ([`valuefit`]). Second, a policy network is
//! trained to minimize the one-step look-ahead loss `l(x, u) + V(f(x, u))` built from that
//! value function ([`policyfit`]). Behavioral cloning is provided as the baseline, and
//! [`simulate`] / [`checks`] evaluate the resulting closed loops.
//!
//! The crate is `no_std` and only needs `alloc`. Enable the `std` feature to let the
//! matrix kernels pick SIMD paths at runtime.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checks;
pub mod data;
pub mod dynamics;
mod error;
pub mod exec;
pub mod linalg;
pub mod nn;
pub mod policyfit;
pub mod presets;
pub mod rng;
pub mod scmpc;
pub mod simulate;
pub mod valuefit;

pub use error::{Error, Result};
