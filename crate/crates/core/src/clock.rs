//! Tick-based virtual time shared by the bus, scheduler and simulator.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Number of reactive ticks per virtual second (100 Hz control rate).
pub const TICKS_PER_SECOND: u64 = 100;

/// A point on the virtual timeline, counted in reactive ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    pub fn from_seconds(secs: f64) -> Tick {
        Tick((secs * TICKS_PER_SECOND as f64).round().max(0.0) as u64)
    }

    pub fn as_seconds(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn saturating_sub(self, other: Tick) -> u64 {
        self.0.saturating_sub(other.0)
    }

    /// Wall-clock instant of this tick for an episode starting at `epoch`.
    pub fn to_utc(self, epoch: DateTime<Utc>) -> DateTime<Utc> {
        epoch + chrono::Duration::milliseconds((self.0 * 1000 / TICKS_PER_SECOND) as i64)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Monotone virtual clock. Cloning shares the underlying counter.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        Tick(self.now.load(Ordering::Acquire))
    }

    /// Advance by one tick and return the new time.
    pub fn advance(&self) -> Tick {
        Tick(self.now.fetch_add(1, Ordering::AcqRel) + 1)
    }

    /// Jump forward to `tick`. Moving backwards is ignored.
    pub fn advance_to(&self, tick: Tick) {
        self.now.fetch_max(tick.0, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_share_time() {
        let a = VirtualClock::new();
        let b = a.clone();
        a.advance();
        a.advance();
        assert_eq!(b.now(), Tick(2));
        b.advance_to(Tick(1));
        assert_eq!(a.now(), Tick(2));
    }

    #[test]
    fn sixty_seconds_is_six_thousand_ticks() {
        assert_eq!(Tick::from_seconds(60.0), Tick(6000));
        assert_eq!(Tick(6400).as_seconds(), 64.0);
    }
}
