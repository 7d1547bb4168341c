//! Deterministic co-simulation of secondary frequency control in an
//! islanded microgrid, with an emulated communication network in the loop.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comm;
pub mod control;
pub mod cosim;
pub mod message;
pub mod plant;
pub mod rng;
pub mod scenario;
pub mod time;
