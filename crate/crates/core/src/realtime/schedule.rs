use crate::clock::Epoch;
use crate::gtfs::{read_feed, GtfsError, GtfsFeed, ServiceDate};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("feed is not valid on {0}")]
    NotValidOnDate(ServiceDate),
    #[error(transparent)]
    Feed(#[from] GtfsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledStop {
    pub arrival: Epoch,
    pub stop_sequence: u32,
}

/// Scheduled absolute arrivals for the trips running on one service day.
#[derive(Debug, Clone, Default)]
pub struct ScheduleIndex {
    date: Option<ServiceDate>,
    stops: HashMap<(String, String), ScheduledStop>,
    routes: HashMap<String, String>,
}

impl ScheduleIndex {
    pub fn build(feed: &GtfsFeed, date: ServiceDate) -> Result<Self, ScheduleError> {
        if !feed.valid_on(date) {
            return Err(ScheduleError::NotValidOnDate(date));
        }
        let running: HashMap<&str, &str> = feed
            .trips
            .iter()
            .filter(|t| feed.services.iter().any(|s| s.service_id == t.service_id && s.runs_on(date)))
            .map(|t| (t.trip_id.as_str(), t.route_id.as_str()))
            .collect();
        let midnight = date.midnight_epoch();
        let mut stops: HashMap<(String, String), ScheduledStop> = HashMap::new();
        for st in feed.stop_times.iter().filter(|st| running.contains_key(st.trip_id.as_str())) {
            let entry = ScheduledStop { arrival: midnight + st.arrival_time as Epoch, stop_sequence: st.stop_sequence };
            // a trip looping through a stop keeps its first visit
            stops
                .entry((st.trip_id.clone(), st.stop_id.clone()))
                .and_modify(|cur| {
                    if entry.stop_sequence < cur.stop_sequence {
                        *cur = entry;
                    }
                })
                .or_insert(entry);
        }
        let routes = running.into_iter().map(|(t, r)| (t.to_string(), r.to_string())).collect();
        Ok(ScheduleIndex { date: Some(date), stops, routes })
    }

    pub fn from_zip(bytes: &[u8], date: ServiceDate) -> Result<Self, ScheduleError> {
        Self::build(&read_feed(bytes)?, date)
    }

    pub fn date(&self) -> Option<ServiceDate> {
        self.date
    }

    pub fn lookup(&self, trip_id: &str, stop_id: &str) -> Option<ScheduledStop> {
        self.stops.get(&(trip_id.to_string(), stop_id.to_string())).copied()
    }

    pub fn route_of(&self, trip_id: &str) -> Option<&str> {
        self.routes.get(trip_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.stops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }
}
