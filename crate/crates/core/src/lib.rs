//! Analysis library for residential broadband reliability.
//!
//! The pipeline starts from per-gateway telemetry (hourly ping loss, traffic
//! counters, DNS probe results, unit metadata), cleans it into hourly
//! records, and derives reliability metrics: failure events, MTBF/MDT and
//! availability, DNS resolver availability, demand-based natural
//! experiments, multihoming simulations, WiFi neighborhood surveys, and a
//! fluid model of video playback across link failovers.

pub mod apsurvey;
pub mod cohort;
pub mod dns;
pub mod error;
pub mod experiments;
pub mod failover;
pub mod ingest;
pub mod model;
pub mod multihome;
pub mod net;
pub mod reliability;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
