//! Confidence calibration toolkit for document question answering logs.
//!
//! Reads logged predictions, scores how well confidence tracks correctness,
//! mines contrastive triplets from overconfident failures, trains a
//! projection head and temperature scaler against them, and decides when to
//! abstain.

pub mod config;
pub mod metrics;
pub mod mining;
pub mod policy;
pub mod records;
pub mod synth;
pub mod training;
pub mod transport;
pub mod uncertainty;

pub use config::{ConfigError, Hyperparams, ReportFormat, RunConfig};
pub use metrics::{HonestyReport, ReportOptions};
pub use mining::Triplet;
pub use policy::{AbstainReason, Decision, Outcome};
pub use records::{AnswerDistribution, AnswerId, Mask, PredictionRecord, RecordError};
pub use synth::SynthConfig;
pub use training::{Checkpoint, ProjectionHead, TemperatureScaler, TrainState};
pub use transport::{TokenBag, TransportPlan};
pub use uncertainty::UncertaintySignal;
