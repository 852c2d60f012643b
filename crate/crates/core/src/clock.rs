//! Injectable time sources. Every timed loop in the crate goes through
//! [`Clock`] so that rate behaviour can be tested on a virtual timeline.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub trait Clock {
    /// Microseconds since the clock's epoch.
    fn now_us(&self) -> u64;

    /// Block (or jump) until `deadline_us`.
    fn sleep_until(&self, deadline_us: u64);

    /// True when time only moves through `sleep_until`.
    fn is_virtual(&self) -> bool {
        false
    }

    /// Time left until `deadline_us`, zero if already past.
    fn until(&self, deadline_us: u64) -> Duration {
        Duration::from_micros(deadline_us.saturating_sub(self.now_us()))
    }
}

#[derive(Debug, Clone)]
pub struct WallClock {
    epoch: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    fn sleep_until(&self, deadline_us: u64) {
        let wait = self.until(deadline_us);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Manually advanced clock; sleeping jumps straight to the deadline.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(us: u64) -> Self {
        Self {
            now: AtomicU64::new(us),
        }
    }

    pub fn advance(&self, by_us: u64) {
        self.now.fetch_add(by_us, Ordering::SeqCst);
    }

    pub fn set(&self, us: u64) {
        self.now.store(us, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, deadline_us: u64) {
        self.now.fetch_max(deadline_us, Ordering::SeqCst);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}
