//! Simulation clock and UTC timestamp text.

use alloc::string::{String, ToString};
use core::fmt;
use core::ops::{Add, AddAssign};
use core::time::Duration;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Milliseconds since the start of a run.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }

    pub fn saturating_sub(self, d: Duration) -> SimTime {
        SimTime(self.0.saturating_sub(d.as_millis() as u64))
    }

    pub fn is_whole_second(self) -> bool {
        self.0 % 1000 == 0
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;
    fn add(self, d: Duration) -> SimTime {
        SimTime(self.0 + d.as_millis() as u64)
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, d: Duration) {
        self.0 += d.as_millis() as u64;
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

/// Whole-second UTC instant, as Unix seconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct UtcSeconds(pub i64);

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

impl UtcSeconds {
    /// `YYYY-MM-DDTHH:MM:SSZ`
    pub fn to_iso8601(self) -> String {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => dt.format(ISO_FORMAT).to_string(),
            None => String::from("invalid"),
        }
    }

    pub fn parse_iso8601(s: &str) -> Option<UtcSeconds> {
        // chrono accepts some non-padded fields; the wire form is fixed width.
        if s.len() != 20 {
            return None;
        }
        let dt = NaiveDateTime::parse_from_str(s, ISO_FORMAT).ok()?;
        Some(UtcSeconds(dt.and_utc().timestamp()))
    }

    /// Seconds since midnight UTC.
    pub fn second_of_day(self) -> u32 {
        self.0.rem_euclid(86_400) as u32
    }
}

/// Maps simulation time onto wall-clock UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch(pub UtcSeconds);

impl Epoch {
    pub fn utc(self, t: SimTime) -> UtcSeconds {
        UtcSeconds(self.0 .0 + (t.0 / 1000) as i64)
    }

    /// Fractional seconds-of-day at `t`, as a GPS receiver would report it.
    pub fn time_of_day(self, t: SimTime) -> f64 {
        let base = self.0.second_of_day() as u64 * 1000 + t.0;
        (base % 86_400_000) as f64 / 1000.0
    }
}

impl Default for Epoch {
    fn default() -> Self {
        // 2020-01-01T00:00:00Z
        Epoch(UtcSeconds(1_577_836_800))
    }
}
