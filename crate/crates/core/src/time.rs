//! Virtual time for the simulation.
//!
//! All latencies in the model are expressed in virtual nanoseconds and are
//! derived purely from configuration and payload sizes, never from wall
//! clock. The clock is a shared monotonic counter; resources that serialize
//! work (the DMA engine, the controller event processor, each device) keep
//! their own `free_at` timelines and advance the clock as events complete.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Virtual time in nanoseconds since simulation start.
pub type TimeNs = u64;

pub const NS_PER_US: u64 = 1_000;
pub const NS_PER_MS: u64 = 1_000_000;

/// A shared, monotonically advancing virtual clock.
#[derive(Clone, Debug, Default)]
pub struct VirtualClock {
    now_ns: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn now_ns(&self) -> TimeNs {
        self.now_ns.load(Ordering::Acquire)
    }

    /// Moves the clock forward to `t` if `t` is later than now.
    pub fn advance_to(&self, t: TimeNs) {
        self.now_ns.fetch_max(t, Ordering::AcqRel);
    }

    pub fn advance(&self, delta_ns: u64) -> TimeNs {
        self.now_ns.fetch_add(delta_ns, Ordering::AcqRel) + delta_ns
    }
}

/// Converts whole milliseconds to nanoseconds.
pub const fn ms_to_ns(ms: u64) -> u64 {
    ms * NS_PER_MS
}

/// Converts microseconds to nanoseconds.
pub const fn us_to_ns(us: u64) -> u64 {
    us * NS_PER_US
}
