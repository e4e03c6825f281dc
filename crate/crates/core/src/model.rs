//! Core domain types for gateway telemetry.
//!
//! Everything downstream keys on `(UnitId, HourStamp)`. Timestamps are stored
//! in UTC and truncated to the hour; conversions to local time happen lazily
//! through the unit's timezone when an analysis needs wall-clock hours.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact ratio used wherever availability arithmetic must not round.
pub type Rational = num::BigRational;

/// Build a `Rational` from an integer pair. `den` must be nonzero.
pub fn ratio(num: u64, den: u64) -> Rational {
    assert!(den != 0, "zero denominator");
    Rational::new(num.into(), den.into())
}

/// Opaque identifier of a measurement gateway.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub String);

impl UnitId {
    pub fn new(s: impl Into<String>) -> Self {
        UnitId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_owned())
    }
}

/// One hour of UTC time, counted from the Unix epoch.
///
/// Consecutive hours differ by exactly 1, which makes gap detection in an
/// hourly series a subtraction instead of calendar arithmetic.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HourStamp(pub i64);

impl HourStamp {
    /// Truncate an instant to the hour containing it.
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        HourStamp(dt.timestamp().div_euclid(3600))
    }

    /// Parse an ISO-8601 timestamp, accepting either RFC 3339 or the
    /// space-separated `YYYY-MM-DD HH:MM:SS` form common in telemetry dumps.
    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Self::from_datetime(dt.with_timezone(&Utc)));
        }
        if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
            return Ok(Self::from_datetime(Utc.from_utc_datetime(&naive)));
        }
        Err(Error::Malformed {
            file: String::new(),
            line: 0,
            msg: format!("unparseable timestamp `{s}`"),
        })
    }

    pub fn start(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * 3600, 0).unwrap()
    }

    /// UTC calendar year containing this hour. Longitudinal groupings use
    /// this; local-time grouping would split years differently per unit.
    pub fn year_utc(&self) -> i32 {
        self.start().year()
    }

    pub fn next(&self) -> Self {
        HourStamp(self.0 + 1)
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.start().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

/// Access technology of a unit's subscription.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technology {
    Fiber,
    Cable,
    Dsl,
    Satellite,
    Wireless,
    Other,
}

impl Technology {
    pub fn as_str(&self) -> &'static str {
        match self {
            Technology::Fiber => "fiber",
            Technology::Cable => "cable",
            Technology::Dsl => "dsl",
            Technology::Satellite => "satellite",
            Technology::Wireless => "wireless",
            Technology::Other => "other",
        }
    }
}

impl FromStr for Technology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fiber" | "fibre" | "ftth" => Ok(Technology::Fiber),
            "cable" => Ok(Technology::Cable),
            "dsl" | "adsl" | "vdsl" => Ok(Technology::Dsl),
            "satellite" => Ok(Technology::Satellite),
            "wireless" | "fixed-wireless" | "wisp" => Ok(Technology::Wireless),
            "other" | "" => Ok(Technology::Other),
            other => Err(Error::Config(format!("unknown technology `{other}`"))),
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of one measurement unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMeta {
    pub unit_id: UnitId,
    pub isp: String,
    pub technology: Technology,
    /// Subscribed downstream capacity in kbit/s.
    pub down_kbps: u64,
    /// Subscribed upstream capacity in kbit/s.
    pub up_kbps: u64,
    /// Coarse geographic label (state or province).
    pub region: String,
    /// Census block group, empty when unknown. Multihoming candidates must
    /// share this value.
    pub block_group: String,
    /// IANA zone name or fixed UTC offset; `None` when unknown.
    pub timezone: Option<String>,
    pub active: bool,
}

impl UnitMeta {
    /// Service tier label, used as a grouping key.
    pub fn tier(&self) -> String {
        format!("{}k/{}k", self.down_kbps, self.up_kbps)
    }

    pub fn zone(&self) -> Result<Zone> {
        match &self.timezone {
            Some(tz) => Zone::parse(tz)
                .ok_or_else(|| Error::NoTimezone(self.unit_id.to_string())),
            None => Err(Error::NoTimezone(self.unit_id.to_string())),
        }
    }
}

/// Parsed timezone: either a named IANA zone or a fixed offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Zone {
    Named(chrono_tz::Tz),
    Fixed(chrono::FixedOffset),
}

impl Zone {
    /// Accepts IANA names (`America/Chicago`), `UTC`, `UTC±H`, `UTC±HH:MM`
    /// and bare `±HH:MM` offsets.
    pub fn parse(s: &str) -> Option<Zone> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        if let Ok(tz) = s.parse::<chrono_tz::Tz>() {
            return Some(Zone::Named(tz));
        }
        let rest = s.strip_prefix("UTC").or_else(|| s.strip_prefix("GMT")).unwrap_or(s);
        if rest.is_empty() {
            return Some(Zone::Fixed(chrono::FixedOffset::east_opt(0)?));
        }
        let (sign, body) = match rest.as_bytes()[0] {
            b'+' => (1i32, &rest[1..]),
            b'-' => (-1i32, &rest[1..]),
            _ => return None,
        };
        let (h, m) = match body.split_once(':') {
            Some((h, m)) => (h.parse::<i32>().ok()?, m.parse::<i32>().ok()?),
            None => (body.parse::<i32>().ok()?, 0),
        };
        if h > 14 || m > 59 {
            return None;
        }
        chrono::FixedOffset::east_opt(sign * (h * 3600 + m * 60)).map(Zone::Fixed)
    }

    /// Local wall-clock hour (0..24) at the start of a UTC hour.
    pub fn local_hour(&self, hour: HourStamp) -> u32 {
        let utc = hour.start();
        match self {
            Zone::Named(tz) => utc.with_timezone(tz).hour(),
            Zone::Fixed(off) => utc.with_timezone(off).hour(),
        }
    }
}

/// One observed unit-hour after ingest: cleaned loss rate plus the traffic
/// and DNS counters that landed in the same hour.
///
/// Hours with zero probes sent never become records; a missing hour in a
/// series is a gap, not a zero. Hours with no traffic rows report zero bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub unit_id: UnitId,
    pub hour: HourStamp,
    /// Minimum loss rate across ping targets, in [0, 1].
    pub loss_rate: f64,
    /// Downstream bytes with active-test traffic removed.
    pub bytes_down: u64,
    /// Upstream bytes with active-test traffic removed.
    pub bytes_up: u64,
    /// DNS queries observed across both configured resolvers.
    pub dns_queries: u64,
    /// DNS failures observed across both configured resolvers.
    pub dns_failures: u64,
    /// Whether the primary resolver failed the majority of its queries;
    /// `None` when that resolver was not observed this hour.
    pub dns_primary_failed: Option<bool>,
    pub dns_secondary_failed: Option<bool>,
}

impl HourlyRecord {
    /// Minimal record for analyses that only need the loss series.
    pub fn loss_only(unit_id: UnitId, hour: HourStamp, loss_rate: f64) -> Self {
        HourlyRecord {
            unit_id,
            hour,
            loss_rate,
            bytes_down: 0,
            bytes_up: 0,
            dns_queries: 0,
            dns_failures: 0,
            dns_primary_failed: None,
            dns_secondary_failed: None,
        }
    }

    pub fn valid(&self) -> bool {
        self.loss_rate >= 0.0 && self.loss_rate <= 1.0 && self.dns_failures <= self.dns_queries
    }
}
