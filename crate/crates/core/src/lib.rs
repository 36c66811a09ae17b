//! Defense engine and discrete-event simulator against resource-consumption
//! attacks on token-generation services.
//!
//! A finished request is graded by its resource index (consumption ratio and
//! centred-cosine tendency against benign reference profiles). Grades feed a
//! per-user reputation that orders the input queue and sets an output cap,
//! past which the EOS logit is boosted until generation stops.
//!
//! Telemetry is synthesized by [`gensim`]; [`engine`] drives the three
//! scheduling policies over a shared simulated clock and [`metrics`] turns
//! the execution log into throughput and detection reports.

pub mod cli;
pub mod engine;
pub mod error;
pub mod gensim;
pub mod index;
pub mod metrics;
pub mod scenario;
pub mod scheduler;
pub mod suppression;
pub mod telemetry;

pub use error::{Error, Result};
