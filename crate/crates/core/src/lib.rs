//! Continuous authentication from seated posture patterns.
//!
//! A 16-sensor chair reports pressure every 0.5 s. This crate turns those
//! frame streams into a working authentication engine and an evaluation kit:
//!
//! - [`ingest`] reads, writes and replays the canonical recording CSV.
//! - [`synth`] generates synthetic subjects and sessions.
//! - [`features`] normalizes frames, segments windows and tests occupancy.
//! - [`classify`] holds the from-scratch random forest, k-NN and one-vs-one SVM.
//! - [`eval`] runs repeated stratified cross-validation and the cross-session
//!   permanence experiment.
//! - [`session`] is the enrollment / accept / de-authenticate state machine.
//! - [`store`] persists subject profiles.
//! - [`config`] parses `key=value` experiment files.

pub mod classify;
pub mod config;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod seed;
pub mod session;
pub mod store;
pub mod synth;

/// Number of pressure sensors in the chair.
pub const SENSOR_COUNT: usize = 16;

/// Largest reading a 10-bit ADC can emit.
pub const MAX_READING: u16 = 1023;

/// Nominal sampling period.
pub const FRAME_PERIOD_MS: u64 = 500;

/// Frames in a canonical 10-minute session.
pub const CANONICAL_SESSION_FRAMES: usize = 1200;

pub use classify::{AlgorithmSpec, Dataset, Prediction, TrainedModel};
pub use eval::EvalReport;
pub use ingest::{SensorFrame, SessionRecording};
pub use session::{AuthDecision, SessionConfig, SessionState};
pub use store::SubjectProfile;
pub use synth::{PopulationParams, SyntheticSubjectSpec};
