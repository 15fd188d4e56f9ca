//! Cascade extended state observer (ESO) for active disturbance rejection
//! control (ADRC) under measurement noise.
//!
//! The crate covers the whole simulation stack: chain-of-integrators models,
//! standard and multi-level cascade observers, the ADRC law with the two
//! benchmark feedbacks, the benchmark plants (a generic second-order plant and
//! a PVTOL aircraft), band-limited white measurement noise, a fixed-step
//! closed-loop engine, integral quality criteria and bandwidth sweeps.

pub mod analysis;
pub mod chainform;
pub mod cli;
pub mod control;
pub mod engine;
pub mod error;
pub mod noise;
pub mod observer;
pub mod plants;
pub mod plot;
pub mod rk4;

pub use error::{Error, Result};
