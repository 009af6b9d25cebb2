//! Open-loop workload injection and publish-to-all-subscribers latency.
//!
//! Publishers update keys on a fixed schedule; a registered callback turns
//! each update into an event on the benchmark channel; subscribers timestamp
//! arrivals. A send that falls behind schedule goes out immediately but keeps
//! its intended time, so both raw and coordinated-omission-corrected
//! latencies are available.

mod record;
mod run;
mod schedule;
mod stats;

pub use record::{write_records_csv, LatencyRecord, RECORD_CSV_HEADER};
pub use run::{run, RunResult};
pub use schedule::{payload, payload_digest, schedule, send_count, Schedule};
pub use stats::{mean, percentiles, LatencySummary};

use serde::{Deserialize, Serialize};

pub const MIN_MESSAGE_SIZE: usize = 64;
pub const MAX_MESSAGE_SIZE: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("no samples")]
    EmptyInput,
    #[error("quantile {0} is outside [0, 1]")]
    InvalidQuantile(f64),
    #[error("connection lost: {reason}")]
    ConnectionLost {
        reason: String,
        /// Whatever was collected before the failure.
        partial: Box<RunResult>,
    },
    #[error("cannot set up run: {0}")]
    Setup(#[from] crate::wire::ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Messages per second across all publishers.
    pub target_rate: f64,
    pub message_size_bytes: usize,
    pub duration_s: f64,
    pub publishers: usize,
    pub subscribers: usize,
    pub channel: String,
    pub seed: u64,
    /// Permit message sizes outside 64..=512 bytes.
    #[serde(default)]
    pub allow_any_size: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            target_rate: 1000.0,
            message_size_bytes: 64,
            duration_s: 10.0,
            publishers: 1,
            subscribers: 1,
            channel: "bench".into(),
            seed: 42,
            allow_any_size: false,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidSpec(m));
        if !(self.target_rate.is_finite() && self.target_rate > 0.0) {
            return bad(format!("target rate must be positive, got {}", self.target_rate));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !self.allow_any_size && !(MIN_MESSAGE_SIZE..=MAX_MESSAGE_SIZE).contains(&self.message_size_bytes) {
            return bad(format!(
                "message size {} is outside {MIN_MESSAGE_SIZE}..={MAX_MESSAGE_SIZE}",
                self.message_size_bytes
            ));
        }
        if self.message_size_bytes > crate::store::DEFAULT_MAX_VALUE_LEN {
            return bad(format!("message size {} exceeds the value limit", self.message_size_bytes));
        }
        if self.publishers == 0 {
            return bad("at least one publisher is required".into());
        }
        if self.subscribers == 0 {
            return bad("at least one subscriber is required".into());
        }
        crate::pubsub::validate_channel(self.channel.as_bytes()).or_else(|e| bad(e.to_string()))?;
        Ok(())
    }
}
