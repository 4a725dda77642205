//! Epoch-second clocks and ISO-8601 helpers.
//!
//! All timestamps inside the crate are UTC epoch seconds (`i64`). ISO-8601 is
//! only used on the wire.

use chrono::{DateTime, SecondsFormat, Utc};
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

pub type Epoch = i64;

pub trait Clock: Send + Sync {
    fn now(&self) -> Epoch;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Epoch {
        Utc::now().timestamp()
    }
}

/// Manually driven clock for tests and simulations.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start: Epoch) -> Self {
        ManualClock(Arc::new(AtomicI64::new(start)))
    }

    pub fn set(&self, t: Epoch) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, seconds: i64) -> Epoch {
        self.0.fetch_add(seconds, Ordering::SeqCst) + seconds
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Epoch {
        self.0.load(Ordering::SeqCst)
    }
}

/// Wall-clock time shifted so that it read `start` when created.
#[derive(Debug, Clone, Copy)]
pub struct OffsetClock {
    offset: i64,
}

impl OffsetClock {
    pub fn starting_at(start: Epoch) -> Self {
        OffsetClock { offset: start - Utc::now().timestamp() }
    }
}

impl Clock for OffsetClock {
    fn now(&self) -> Epoch {
        Utc::now().timestamp() + self.offset
    }
}

pub type SharedClock = Arc<dyn Clock>;

pub fn system_clock() -> SharedClock {
    Arc::new(SystemClock)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid ISO-8601 timestamp {0:?}")]
pub struct TimestampError(pub String);

pub fn to_iso8601(t: Epoch) -> String {
    match DateTime::<Utc>::from_timestamp(t, 0) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => t.to_string(),
    }
}

/// Accepts RFC 3339 with any offset, or a bare integer epoch.
pub fn parse_iso8601(text: &str) -> Result<Epoch, TimestampError> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.timestamp());
    }
    if let Ok(n) = text.parse::<i64>() {
        return Ok(n);
    }
    // Orion tolerates a missing offset; treat it as UTC.
    chrono::NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f")
        .map(|dt| dt.and_utc().timestamp())
        .map_err(|_| TimestampError(text.to_string()))
}

/// Display adapter for log lines.
pub struct Iso(pub Epoch);

impl fmt::Display for Iso {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&to_iso8601(self.0))
    }
}
