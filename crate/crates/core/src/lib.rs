//! Slot-based simulator of a multi-AP 60 GHz (WiGig) room in which a shared,
//! online-trained 1-D convolutional network forecasts each user's RSSI and
//! traffic, and a sequential greedy association pass uses those forecasts to
//! hand users over between access points before their link degrades.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: room, APs, points of interest, arrivals and waypoint mobility.
//! - [`channel`]: path loss, RSSI sampling, rate table and airtime sharing.
//! - [`telemetry`]: per-user tuple histories, training pairs and normalisation.
//! - [`predictor`]: the convolutional forecaster with exact backpropagation.
//! - [`policy`]: the greedy association pass and reactive baselines.
//! - [`engine`]: the per-slot loop tying everything together.
//! - [`experiment`]: seeds, sweeps, summaries and CSV emission.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod policy;
pub mod predictor;
pub mod rng;
pub mod scenario;
pub mod telemetry;

pub use config::SimConfig;
pub use error::{Result, SimError};
