//! GTFS static feeds: records, times, service dates and the zipped-CSV codec.

mod io;
mod time;

pub use io::{read_feed, write_feed, FEED_FILES};
pub use time::{format_gtfs_time, parse_gtfs_time, ServiceDate};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Agency {
    pub agency_id: String,
    pub name: String,
    pub url: String,
    pub timezone: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Stop {
    pub stop_id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Route {
    pub route_id: String,
    pub agency_id: String,
    pub short_name: String,
    pub route_type: i32,
}

/// One `calendar.txt` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Service {
    pub service_id: String,
    /// Monday first.
    pub weekdays: [bool; 7],
    pub start_date: ServiceDate,
    pub end_date: ServiceDate,
}

impl Service {
    pub fn covers(&self, date: ServiceDate) -> bool {
        self.start_date <= date && date <= self.end_date
    }

    /// Date range and weekday flag both admit `date`.
    pub fn runs_on(&self, date: ServiceDate) -> bool {
        self.covers(date) && self.weekdays[date.weekday_index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trip {
    pub trip_id: String,
    pub route_id: String,
    pub service_id: String,
    pub headsign: String,
}

/// Times are seconds since service-day midnight and may exceed 24 h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StopTime {
    pub trip_id: String,
    pub stop_id: String,
    pub stop_sequence: u32,
    pub arrival_time: u32,
    pub departure_time: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GtfsFeed {
    pub agencies: Vec<Agency>,
    pub stops: Vec<Stop>,
    pub routes: Vec<Route>,
    pub services: Vec<Service>,
    pub trips: Vec<Trip>,
    pub stop_times: Vec<StopTime>,
    /// Not serialized into the archive; set by whoever knows the version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feed_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GtfsError {
    #[error("bad GTFS time {0:?}, expected H+:MM:SS")]
    BadTimeFormat(String),
    #[error("bad service date {0:?}, expected a valid YYYYMMDD")]
    BadDate(String),
    #[error("archive lacks {0}")]
    MissingFile(String),
    #[error("{file} lacks column {column}")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: {detail}")]
    InvalidRecord { file: String, line: usize, detail: String },
    #[error("{file} line {line}: {detail}")]
    ReferentialViolation { file: String, line: usize, detail: String },
    #[error("archive error: {0}")]
    Archive(String),
}

impl GtfsFeed {
    /// Sorts every table by primary key, the order `write_feed` emits.
    pub fn canonicalize(&mut self) {
        self.agencies.sort_by(|a, b| a.agency_id.cmp(&b.agency_id));
        self.stops.sort_by(|a, b| a.stop_id.cmp(&b.stop_id));
        self.routes.sort_by(|a, b| a.route_id.cmp(&b.route_id));
        self.services.sort_by(|a, b| a.service_id.cmp(&b.service_id));
        self.trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
        self.stop_times
            .sort_by(|a, b| (&a.trip_id, a.stop_sequence).cmp(&(&b.trip_id, b.stop_sequence)));
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    /// True iff some service's date range contains `date`.
    pub fn valid_on(&self, date: ServiceDate) -> bool {
        self.services.iter().any(|s| s.covers(date))
    }

    /// Union of all service ranges, if any.
    pub fn validity_range(&self) -> Option<(ServiceDate, ServiceDate)> {
        let start = self.services.iter().map(|s| s.start_date).min()?;
        let end = self.services.iter().map(|s| s.end_date).max()?;
        Some((start, end))
    }

    /// Stop times of one trip in stop-sequence order.
    pub fn trip_stop_times<'a>(&'a self, trip_id: &'a str) -> impl Iterator<Item = &'a StopTime> + 'a {
        let mut v: Vec<&StopTime> = self.stop_times.iter().filter(|st| st.trip_id == trip_id).collect();
        v.sort_by_key(|st| st.stop_sequence);
        v.into_iter()
    }

    pub fn row_counts(&self) -> RowCounts {
        RowCounts {
            agencies: self.agencies.len(),
            stops: self.stops.len(),
            routes: self.routes.len(),
            services: self.services.len(),
            trips: self.trips.len(),
            stop_times: self.stop_times.len(),
        }
    }
}

/// Free-function form of [`GtfsFeed::valid_on`].
pub fn feed_valid_on(feed: &GtfsFeed, date: ServiceDate) -> bool {
    feed.valid_on(date)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RowCounts {
    pub agencies: usize,
    pub stops: usize,
    pub routes: usize,
    pub services: usize,
    pub trips: usize,
    pub stop_times: usize,
}
