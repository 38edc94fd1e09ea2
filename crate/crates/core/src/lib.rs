//! Socially compliant adaptive cruise control at platoon scale.
//!
//! The crate simulates a mixed platoon (a data-driven leader, one neural
//! controlled AV, and intelligent-driver-model followers), calibrates the
//! follower models from trajectory data, trains the AV controller against a
//! social-preference weighted composite loss by differentiating through the
//! rollout, and reports the energy/speed trade-offs across preference
//! settings.
//!
//! Modules:
//! - [`model`]: shared domain types and validation
//! - [`dynamics`]: Euler platoon stepping with pluggable acceleration laws
//! - [`calibration`]: grid-search fitting of follower parameters
//! - [`controller`]: the LSTM acceleration policy and its checkpoint format
//! - [`training`]: composite loss, analytic gradients, and the training loop
//! - [`metrics`]: post-hoc energy and speed reporting across preferences
//! - [`ingest`]: trajectory CSV I/O, resampling, smoothing, and synthetic
//!   scenario generation

pub mod calibration;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
