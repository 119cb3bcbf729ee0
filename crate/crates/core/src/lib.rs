//! Flooding denial-of-service detection and localization for mesh
//! networks-on-chip.
//!
//! * [`sim`]: cycle-level mesh simulator with a tunable flooding attacker,
//! * [`telemetry`]: VC-occupancy and buffer-operation feature frames,
//! * [`cnn`]: small CNN detector and segmentor with hand-written backprop,
//! * [`localize`]: mask fusion, route completion and attacker lookup,
//! * [`bench`]: dataset generation, the detect/localize loop and metrics.

pub mod bench;
pub mod cnn;
pub mod config;
pub mod error;
pub mod localize;
pub mod mesh;
pub mod sim;
pub mod telemetry;
pub mod traffic;

pub use error::{Error, Result};
pub use mesh::{xy_route, Direction, Entry, NodeId};
