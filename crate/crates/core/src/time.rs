//! Integer-nanosecond timestamps and an injectable clock.

use core::cell::Cell;
use core::ops::{Add, Sub};
use core::time::Duration;

/// A point in stream or simulation time, in nanoseconds since an arbitrary epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_nanos(ns: u64) -> Self {
        Timestamp(ns)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    /// Rounds to the nearest nanosecond. Negative inputs saturate to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if secs <= 0.0 {
            return Timestamp(0);
        }
        Timestamp(libm::round(secs * 1e9) as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// Elapsed time since `earlier`, zero if `earlier` is later.
    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.as_nanos() as u64)
    }
}

impl Sub<Timestamp> for Timestamp {
    type Output = Duration;

    /// Panics if `rhs` is later than `self`.
    fn sub(self, rhs: Timestamp) -> Duration {
        Duration::from_nanos(self.0.checked_sub(rhs.0).expect("timestamp subtraction underflow"))
    }
}

/// Source of "now" for components that need to stamp events.
pub trait Clock {
    fn now(&self) -> Timestamp;
}

/// A clock that only moves when told to. Used by simulations and tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Cell<Timestamp>,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self { now: Cell::new(start) }
    }

    /// Moves the clock to `t`. Time never runs backwards; earlier values are ignored.
    pub fn set(&self, t: Timestamp) {
        if t > self.now.get() {
            self.now.set(t);
        }
    }

    pub fn advance(&self, d: Duration) {
        self.now.set(self.now.get() + d);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.now.get()
    }
}

/// Nanosecond period of a fixed-rate tick, rounded to the nearest nanosecond.
pub fn tick_period(rate_hz: f64) -> Duration {
    Duration::from_nanos(libm::round(1e9 / rate_hz) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_round_trip() {
        let t = Timestamp::from_secs_f64(1.5);
        assert_eq!(t.as_nanos(), 1_500_000_000);
        assert_eq!(t.as_secs_f64(), 1.5);
        assert_eq!(Timestamp::from_secs_f64(-3.0), Timestamp::ZERO);
    }

    #[test]
    fn manual_clock_is_monotonic() {
        let clock = ManualClock::new(Timestamp(10));
        clock.set(Timestamp(5));
        assert_eq!(clock.now(), Timestamp(10));
        clock.advance(Duration::from_nanos(7));
        assert_eq!(clock.now(), Timestamp(17));
    }

    #[test]
    fn thirty_hertz_period() {
        assert_eq!(tick_period(30.0), Duration::from_nanos(33_333_333));
    }
}
