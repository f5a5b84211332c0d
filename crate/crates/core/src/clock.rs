//! Time sources.
//!
//! Timestamps are milliseconds. The system clock counts from the Unix epoch;
//! the virtual clock counts from whatever origin the simulation picks and only
//! moves when told to.

use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds on some clock's timeline.
pub type Timestamp = u64;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Blocks (or, for simulated time, advances) for `ms` milliseconds.
    fn sleep(&self, ms: u64);

    fn is_virtual(&self) -> bool {
        false
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }
}

/// A deterministic clock for simulation. Cloning shares the same timeline.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now_ms: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            now_ms: Arc::new(AtomicU64::new(start)),
        }
    }

    pub fn advance(&self, ms: u64) {
        self.now_ms.fetch_add(ms, Ordering::AcqRel);
    }

    pub fn set(&self, t: Timestamp) {
        self.now_ms.store(t, Ordering::Release);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        self.now_ms.load(Ordering::Acquire)
    }

    fn sleep(&self, ms: u64) {
        self.advance(ms);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

pub type SharedClock = Arc<dyn Clock>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_only_moves_when_told() {
        let clock = VirtualClock::new(1_000);
        assert_eq!(clock.now(), 1_000);
        clock.sleep(250);
        assert_eq!(clock.now(), 1_250);
        let shared = clock.clone();
        shared.advance(50);
        assert_eq!(clock.now(), 1_300);
    }
}
