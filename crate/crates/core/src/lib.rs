//! Environment monitoring station, entirely in software.
//!
//! The crate models the full pipeline of a small IoT weather station:
//! a simulated temperature/humidity sensor with a bit-exact frame codec
//! ([`sensor`]), a binary virtual-pin wire protocol ([`protocol`]), an
//! emulated device firmware loop ([`device`]), a telemetry broker with
//! persistence and query endpoints ([`broker`]), and an evaluation layer
//! comparing measurements against reference data ([`analytics`]).
//!
//! Everything time-driven runs against the [`clock::Clock`] abstraction so
//! the same logic works on wall time and on a virtual clock. [`sim`] wires
//! device state machines to a broker core through real encoded bytes in a
//! single-threaded, fully deterministic event loop.

pub mod analytics;
pub mod broker;
pub mod clock;
pub mod device;
pub mod protocol;
pub mod sensor;
pub mod sim;

pub use clock::{Clock, SimClock, SystemClock};
pub use sensor::Reading;
