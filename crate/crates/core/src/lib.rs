//! Thermostatically controlled load populations: exact single-device
//! dynamics, a decentralized desynchronization protocol driven only by
//! broadcast setpoint steps and aggregate power-change timestamps, a
//! deterministic population simulator, and the linear averaging map that
//! governs the protocol's switch timings.
//!
//! The crate is `no_std` and needs only `alloc`. Enable `parallel` to step
//! devices on a rayon pool; results do not depend on the worker count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod averaging;
pub mod error;
pub mod population;
pub mod protocol;
pub mod thermostat;

pub use error::{Error, Result};
