use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BenchError, WorkloadSpec};

/// Intended send offsets, in nanoseconds from the start of the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub offsets_ns: Vec<u64>,
    /// `per_publisher[p]` lists the send indices publisher `p` owns.
    pub per_publisher: Vec<Vec<usize>>,
}

/// `ceil(rate * duration)`, tolerant of floating-point noise in the product.
pub fn send_count(target_rate: f64, duration_s: f64) -> usize {
    let x = target_rate * duration_s;
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Send `i` is due at `i / rate` seconds; sends are dealt round-robin to publishers.
pub fn schedule(spec: &WorkloadSpec) -> Result<Schedule, BenchError> {
    spec.validate()?;
    let n = send_count(spec.target_rate, spec.duration_s);
    let offsets_ns = (0..n)
        .map(|i| (i as f64 * 1e9 / spec.target_rate).round() as u64)
        .collect();
    let per_publisher = (0..spec.publishers)
        .map(|p| (p..n).step_by(spec.publishers).collect())
        .collect();
    Ok(Schedule {
        offsets_ns,
        per_publisher,
    })
}

/// Incompressible payload for send `index`: ChaCha8 keyed by the seed, one stream per send.
pub fn payload(seed: u64, index: usize, size: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut buf = vec![0u8; size];
    rng.fill_bytes(&mut buf);
    buf
}

/// SHA-256 over the concatenated payloads of sends `0..count`.
pub fn payload_digest(seed: u64, count: usize, size: usize) -> String {
    let mut hasher = Sha256::new();
    for i in 0..count {
        hasher.update(payload(seed, i, size));
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rate: f64, duration: f64, publishers: usize) -> WorkloadSpec {
        WorkloadSpec {
            target_rate: rate,
            duration_s: duration,
            publishers,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_offsets() {
        assert_eq!(schedule(&spec(1000.0, 2.0, 1)).unwrap().offsets_ns.len(), 2000);
        let s = schedule(&spec(4.0, 1.0, 1)).unwrap();
        assert_eq!(s.offsets_ns, [0, 250_000_000, 500_000_000, 750_000_000]);
        assert_eq!(send_count(0.1 * 3.0, 10.0), 3);
        assert_eq!(send_count(3.0, 0.5), 2);
    }

    #[test]
    fn round_robin() {
        let s = schedule(&spec(4.0, 1.0, 2)).unwrap();
        assert_eq!(s.per_publisher, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(schedule(&spec(0.0, 1.0, 1)).is_err());
    }

    #[test]
    fn payloads_are_seeded() {
        assert_eq!(payload(7, 3, 64), payload(7, 3, 64));
        assert_ne!(payload(7, 3, 64), payload(8, 3, 64));
        assert_ne!(payload(7, 3, 64), payload(7, 4, 64));
        assert_eq!(payload(7, 0, 512).len(), 512);
        assert_eq!(payload_digest(1, 10, 64), payload_digest(1, 10, 64));
        assert_ne!(payload_digest(1, 10, 64), payload_digest(2, 10, 64));
    }
}
