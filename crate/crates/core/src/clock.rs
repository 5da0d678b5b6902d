//! Time sources: wall clock for normal runs, virtual clock for fast
//! deterministic runs.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Source of milliseconds-since-epoch timestamps plus a sleep primitive.
///
/// `sleep_ms` advances time by `ms`: the system clock actually sleeps, the
/// virtual clock just jumps forward. Callers waiting on both the clock and
/// real I/O use `is_virtual` to decide whether waiting costs wall time.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;

    fn sleep_ms(&self, ms: u64);

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Wall-clock time (milliseconds since the Unix epoch).
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

/// Virtual clock: time only moves when someone sleeps on it.
///
/// Shared freely across threads; all handles observe the same timeline.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        Self { now: AtomicU64::new(start_ms) }
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        self.advance(ms);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_advances_on_sleep() {
        let clock = SimClock::new(100);
        assert_eq!(clock.now_ms(), 100);
        clock.sleep_ms(2000);
        assert_eq!(clock.now_ms(), 2100);
        clock.advance(50);
        assert_eq!(clock.now_ms(), 2150);
    }

    #[test]
    fn system_clock_is_roughly_monotonic() {
        let clock = SystemClock;
        let a = clock.now_ms();
        let b = clock.now_ms();
        assert!(b >= a);
    }
}
