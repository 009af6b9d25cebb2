//! Host-wide monotonic clock.
//!
//! Every latency timestamp in the system comes from `CLOCK_MONOTONIC`, so a
//! server process and a benchmark process on the same host share one time base.

use std::time::Duration;

/// Nanoseconds on the host's monotonic clock.
pub fn now_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid, writable timespec and CLOCK_MONOTONIC is always supported on Linux.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    debug_assert_eq!(rc, 0);
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Busy-waits for `ns` nanoseconds.
///
/// Sleeping has a granularity of tens of microseconds, far coarser than the
/// delays the protection model injects, so this spins on the clock instead.
pub fn spin_for_ns(ns: u64) {
    if ns == 0 {
        return;
    }
    let deadline = now_ns().saturating_add(ns);
    while now_ns() < deadline {
        std::hint::spin_loop();
    }
}

/// How far ahead of a deadline [`sleep_until_ns`] stops sleeping and starts spinning.
pub const SPIN_WINDOW_NS: u64 = 60_000;

/// Sleeps until the monotonic clock reaches `deadline_ns`.
///
/// Coarse sleep for most of the wait, then spins for the last stretch.
pub fn sleep_until_ns(deadline_ns: u64) {
    sleep_coarse_until_ns(deadline_ns);
    spin_until_ns(deadline_ns);
}

/// Sleeps until about [`SPIN_WINDOW_NS`] before `deadline_ns`, never past it.
pub fn sleep_coarse_until_ns(deadline_ns: u64) {
    loop {
        let now = now_ns();
        if now.saturating_add(SPIN_WINDOW_NS) >= deadline_ns {
            return;
        }
        std::thread::sleep(Duration::from_nanos(deadline_ns - now - SPIN_WINDOW_NS));
    }
}

pub fn spin_until_ns(deadline_ns: u64) {
    while now_ns() < deadline_ns {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_is_monotonic() {
        let a = now_ns();
        let b = now_ns();
        assert!(b >= a);
    }

    #[test]
    fn spin_waits_at_least_requested() {
        let start = now_ns();
        spin_for_ns(50_000);
        assert!(now_ns() - start >= 50_000);
    }

    #[test]
    fn sleep_until_past_deadline_returns() {
        let start = now_ns();
        sleep_until_ns(start + 200_000);
        assert!(now_ns() >= start + 200_000);
        sleep_until_ns(0);
    }
}
