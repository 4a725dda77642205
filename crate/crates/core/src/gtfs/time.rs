use super::GtfsError;
use crate::clock::Epoch;
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Parses `H+:MM:SS` into seconds since service-day midnight.
pub fn parse_gtfs_time(text: &str) -> Result<u32, GtfsError> {
    let bad = || GtfsError::BadTimeFormat(text.to_string());
    let mut parts = text.split(':');
    let (h, m, s) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(m), Some(s), None) => (h, m, s),
        _ => return Err(bad()),
    };
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(h) || m.len() != 2 || s.len() != 2 || !digits(m) || !digits(s) || h.len() > 5 {
        return Err(bad());
    }
    let (h, m, s): (u32, u32, u32) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?, s.parse().map_err(|_| bad())?);
    if m > 59 || s > 59 {
        return Err(bad());
    }
    Ok(3600 * h + 60 * m + s)
}

/// Canonical form: hours zero-padded to at least two digits.
pub fn format_gtfs_time(seconds: u32) -> String {
    format!("{:02}:{:02}:{:02}", seconds / 3600, (seconds / 60) % 60, seconds % 60)
}

/// Calendar date encoded `YYYYMMDD` in GTFS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceDate(NaiveDate);

impl ServiceDate {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(ServiceDate)
    }

    pub fn naive(&self) -> NaiveDate {
        self.0
    }

    /// 0 = Monday … 6 = Sunday.
    pub fn weekday_index(&self) -> usize {
        self.0.weekday().num_days_from_monday() as usize
    }

    /// Service-day midnight as UTC epoch seconds; feed times are service-local
    /// and no timezone conversion is applied.
    pub fn midnight_epoch(&self) -> Epoch {
        self.0.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
    }

    pub fn from_epoch(t: Epoch) -> Option<Self> {
        chrono::DateTime::from_timestamp(t, 0).map(|dt| ServiceDate(dt.date_naive()))
    }

    pub fn today_utc() -> Self {
        ServiceDate(chrono::Utc::now().date_naive())
    }

    pub fn add_days(&self, days: i64) -> Self {
        ServiceDate(self.0 + chrono::Duration::days(days))
    }
}

impl fmt::Display for ServiceDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y%m%d"))
    }
}

impl FromStr for ServiceDate {
    type Err = GtfsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(GtfsError::BadDate(s.to_string()));
        }
        NaiveDate::parse_from_str(s, "%Y%m%d")
            .map(ServiceDate)
            .map_err(|_| GtfsError::BadDate(s.to_string()))
    }
}

impl Serialize for ServiceDate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ServiceDate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
