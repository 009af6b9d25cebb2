use super::{BenchError, LatencyRecord};

/// Nearest-rank quantiles: the smallest sample with at least `q * n` samples at or below it.
pub fn percentiles(samples: &[u64], quantiles: &[f64]) -> Result<Vec<u64>, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    quantiles
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(BenchError::InvalidQuantile(q));
            }
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            Ok(sorted[rank - 1])
        })
        .collect()
}

pub fn mean(samples: &[u64]) -> Option<f64> {
    (!samples.is_empty()).then(|| samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

impl LatencySummary {
    fn from_samples(samples: &[u64]) -> Result<Self, BenchError> {
        let q = percentiles(samples, &[0.5, 0.99, 1.0])?;
        Ok(LatencySummary {
            count: samples.len(),
            mean_ns: mean(samples).unwrap_or(0.0),
            p50_ns: q[0],
            p99_ns: q[1],
            max_ns: q[2],
        })
    }

    /// Publish-to-last-subscriber latency over completely delivered events.
    pub fn event(records: &[LatencyRecord]) -> Result<Self, BenchError> {
        let s: Vec<u64> = records.iter().filter_map(LatencyRecord::event_latency_ns).collect();
        Self::from_samples(&s)
    }

    /// Intended-send-to-last-subscriber latency over completely delivered events.
    pub fn corrected(records: &[LatencyRecord]) -> Result<Self, BenchError> {
        let s: Vec<u64> = records.iter().filter_map(LatencyRecord::corrected_latency_ns).collect();
        Self::from_samples(&s)
    }
}
