//! Time source abstraction.
//!
//! Snapshots and run logs carry timestamps and latencies. Replays that must be
//! byte-identical swap in [`FixedClock`], which pins every timestamp and
//! reports zero elapsed time.

use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;

    /// Elapsed time since `start`, as recorded in run logs.
    fn elapsed(&self, start: Instant) -> Duration;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn elapsed(&self, start: Instant) -> Duration {
        start.elapsed()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl FixedClock {
    /// 2024-01-01T00:00:00Z.
    pub fn epoch() -> Self {
        FixedClock(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }

    fn elapsed(&self, _start: Instant) -> Duration {
        Duration::ZERO
    }
}
