//! Simulation and learning toolkit for planar magnetic soft robots.
//!
//! Robots are modelled as magnetically actuated Cosserat rods resting on a
//! frictional ground. A TD3 agent learns field-increment policies that make
//! the robot crawl, and trained policies are rolled out into 100 Hz field
//! waveforms for coil hardware.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod contact;
pub mod dissipation;
pub mod env;
pub mod error;
pub mod io;
pub mod magnetics;
pub mod rod;
pub mod td3;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use rod::Vec3;

/// Random generator used for every seeded draw.
pub type SimRng = rand_chacha::ChaCha8Rng;
