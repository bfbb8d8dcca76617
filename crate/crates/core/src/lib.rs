//! Multi-user, multi-server mobile edge computing simulator with a
//! user-centric hybrid offloading pipeline.
//!
//! The crate is organised bottom-up:
//!
//! - [`simcore`]: task generation, delay/energy physics, server CPU queueing,
//!   battery dynamics and the slot state machine.
//! - [`coselect`]: the user-server co-selection matching.
//! - [`hybrid`]: state encoding, action mapping and server-side refinement.
//! - [`tinynet`]: dense networks with analytic backprop and Adam.
//! - [`replay`]: composite reward/TD-error priority replay.
//! - [`trainer`]: multi-agent actor-critic training and baseline policies.
//! - [`harness`]: presets, smoothing, aggregation and experiment runners.

pub mod config;
pub mod coselect;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod replay;
pub mod simcore;
pub mod tinynet;
pub mod trainer;

pub use config::{EnvConfig, Interval};
pub use error::{Error, Result};
