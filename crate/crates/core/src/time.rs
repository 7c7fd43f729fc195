//! Logical time.
//!
//! A [`Tag`] is a superdense timestamp: a time in nanoseconds since the
//! experiment epoch plus a microstep. Tags are totally ordered
//! lexicographically. Adding a positive [`Duration`] to a tag resets the
//! microstep; adding zero advances it, so zero-delay scheduling stays
//! causally ordered.

use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign};
use core::str::FromStr;

/// A non-negative span of time in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(u64);

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_nanos(nanos: u64) -> Self {
        Duration(nanos)
    }

    pub const fn from_micros(micros: u64) -> Self {
        Duration(micros * 1_000)
    }

    pub const fn from_millis(millis: u64) -> Self {
        Duration(millis * 1_000_000)
    }

    pub const fn from_secs(secs: u64) -> Self {
        Duration(secs * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Duration) -> Option<Duration> {
        self.0.checked_add(other.0).map(Duration)
    }

    pub fn saturating_sub(self, other: Duration) -> Duration {
        Duration(self.0.saturating_sub(other.0))
    }
}

impl Add for Duration {
    type Output = Duration;

    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0.checked_add(rhs.0).expect("duration overflow"))
    }
}

impl AddAssign for Duration {
    fn add_assign(&mut self, rhs: Duration) {
        *self = *self + rhs;
    }
}

impl Sum for Duration {
    fn sum<I: Iterator<Item = Duration>>(iter: I) -> Duration {
        iter.fold(Duration::ZERO, Add::add)
    }
}

const UNITS: [(&str, u64); 4] = [
    ("s", 1_000_000_000),
    ("ms", 1_000_000),
    ("us", 1_000),
    ("ns", 1),
];

/// Formats with the largest unit that represents the value exactly, e.g.
/// `5ms`, `1500us`, `0ns`.
impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str("0ns");
        }
        for (suffix, scale) in UNITS {
            if self.0.is_multiple_of(scale) {
                return write!(f, "{}{}", self.0 / scale, suffix);
            }
        }
        unreachable!("nanoseconds always divide")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration `{0}`: expected an integer followed by s, ms, us or ns")]
pub struct ParseDurationError(pub alloc::string::String);

impl FromStr for Duration {
    type Err = ParseDurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || ParseDurationError(s.into());
        let split = s.find(|c: char| !c.is_ascii_digit()).ok_or_else(err)?;
        let (digits, unit) = s.split_at(split);
        let value: u64 = digits.parse().map_err(|_| err())?;
        let scale = UNITS
            .iter()
            .find(|(suffix, _)| *suffix == unit.trim())
            .map(|(_, scale)| *scale)
            .ok_or_else(err)?;
        value.checked_mul(scale).map(Duration).ok_or_else(err)
    }
}

/// A superdense logical timestamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    /// Nanoseconds since the experiment epoch.
    pub time: u64,
    pub microstep: u32,
}

impl Tag {
    pub const ZERO: Tag = Tag {
        time: 0,
        microstep: 0,
    };

    /// Later than any reachable tag.
    pub const MAX: Tag = Tag {
        time: u64::MAX,
        microstep: u32::MAX,
    };

    pub const fn new(time: u64, microstep: u32) -> Self {
        Tag { time, microstep }
    }

    /// The tag at `time` with microstep zero.
    pub const fn at(time: u64) -> Self {
        Tag { time, microstep: 0 }
    }

    /// `self + delay` under superdense arithmetic.
    pub fn delayed(self, delay: Duration) -> Tag {
        if delay.is_zero() {
            self.next_microstep()
        } else {
            Tag {
                time: self
                    .time
                    .checked_add(delay.as_nanos())
                    .expect("tag time overflow"),
                microstep: 0,
            }
        }
    }

    pub fn next_microstep(self) -> Tag {
        Tag {
            time: self.time,
            microstep: self.microstep.checked_add(1).expect("microstep overflow"),
        }
    }

    /// Elapsed logical time from `earlier` to `self`, ignoring microsteps.
    pub fn since(self, earlier: Tag) -> Duration {
        Duration::from_nanos(self.time.saturating_sub(earlier.time))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})",
            Duration::from_nanos(self.time),
            self.microstep
        )
    }
}

/// Whether a deadline `bound` attached to a reaction triggered at
/// `event_tag` is violated when dispatched at `physical_now`.
///
/// The bound is exceeded only when physical time is strictly past
/// `event_tag.time + bound`.
pub fn check_deadline(event_tag: Tag, bound: Duration, physical_now: u64) -> bool {
    physical_now > event_tag.time.saturating_add(bound.as_nanos())
}
