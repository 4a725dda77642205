use crate::clock::Epoch;
use crate::geo::GeoPoint;
use crate::gtfs::{GtfsFeed, ServiceDate};
use crate::realtime::RtFeedMessage;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Minimum time between alighting one trip and boarding another at the same stop.
pub const TRANSFER_SLACK: Epoch = 120;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RouterError {
    #[error("feed is not valid on {0}")]
    FeedNotValidOnDate(ServiceDate),
    #[error("unknown stop {0:?}")]
    UnknownStop(String),
    #[error("no feed loaded")]
    NoFeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connection {
    pub dep_stop: usize,
    pub arr_stop: usize,
    pub dep_time: Epoch,
    pub arr_time: Epoch,
    pub trip: usize,
    /// Position of the departure event along the trip.
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopNode {
    pub stop_id: String,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    stop: usize,
    stop_sequence: u32,
    arrival: Epoch,
    departure: Epoch,
}

#[derive(Debug, Clone, PartialEq)]
struct TripNode {
    trip_id: String,
    /// Scheduled events in stop-sequence order.
    events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Leg {
    pub trip_id: String,
    pub board_stop: String,
    pub board_time: Epoch,
    pub alight_stop: String,
    pub alight_time: Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Journey {
    pub legs: Vec<Leg>,
    pub total_arrival: Epoch,
}

impl Journey {
    pub fn trip_ids(&self) -> Vec<&str> {
        self.legs.iter().map(|l| l.trip_id.as_str()).collect()
    }
}

/// Connections of one service day with real-time delays applied.
#[derive(Debug, Clone)]
pub struct TransitGraph {
    date: ServiceDate,
    stops: Vec<StopNode>,
    stop_index: HashMap<String, usize>,
    trips: Vec<TripNode>,
    trip_index: HashMap<String, usize>,
    /// Trip indices in ascending trip-id order.
    trip_rank: Vec<usize>,
    delays: BTreeMap<(String, String), i32>,
    /// Sorted by effective departure, then arrival, trip and position.
    connections: Vec<Connection>,
    /// Per trip, effective (arrival, departure) per event.
    effective: Vec<Vec<(Epoch, Epoch)>>,
}

/// One connection per consecutive stop-time pair of every trip running on `date`.
pub fn build_graph(feed: &GtfsFeed, date: ServiceDate) -> Result<TransitGraph, RouterError> {
    if !feed.valid_on(date) {
        return Err(RouterError::FeedNotValidOnDate(date));
    }
    let mut stops = Vec::with_capacity(feed.stops.len());
    let mut stop_index = HashMap::new();
    for s in &feed.stops {
        stop_index.insert(s.stop_id.clone(), stops.len());
        stops.push(StopNode { stop_id: s.stop_id.clone(), location: GeoPoint { lat: s.lat, lon: s.lon } });
    }
    let running: HashMap<&str, bool> =
        feed.services.iter().map(|s| (s.service_id.as_str(), s.runs_on(date))).collect();
    let mut by_trip: BTreeMap<&str, Vec<Event>> = BTreeMap::new();
    let midnight = date.midnight_epoch();
    for st in &feed.stop_times {
        if let Some(&stop) = stop_index.get(&st.stop_id) {
            by_trip.entry(st.trip_id.as_str()).or_default().push(Event {
                stop,
                stop_sequence: st.stop_sequence,
                arrival: midnight + st.arrival_time as Epoch,
                departure: midnight + st.departure_time as Epoch,
            });
        }
    }
    let mut trips = Vec::new();
    for t in &feed.trips {
        if !running.get(t.service_id.as_str()).copied().unwrap_or(false) {
            continue;
        }
        let mut events = by_trip.remove(t.trip_id.as_str()).unwrap_or_default();
        events.sort_by_key(|e| e.stop_sequence);
        trips.push(TripNode { trip_id: t.trip_id.clone(), events });
    }
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    let trip_index = trips.iter().enumerate().map(|(i, t)| (t.trip_id.clone(), i)).collect();
    let trip_rank = (0..trips.len()).collect();
    let mut g = TransitGraph {
        date,
        stops,
        stop_index,
        trips,
        trip_index,
        trip_rank,
        delays: BTreeMap::new(),
        connections: Vec::new(),
        effective: Vec::new(),
    };
    g.recompute();
    Ok(g)
}

impl TransitGraph {
    pub fn date(&self) -> ServiceDate {
        self.date
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn stops(&self) -> &[StopNode] {
        &self.stops
    }

    pub fn stop_id(&self, idx: usize) -> &str {
        &self.stops[idx].stop_id
    }

    pub fn trip_id(&self, idx: usize) -> &str {
        &self.trips[idx].trip_id
    }

    pub fn trip_count(&self) -> usize {
        self.trips.len()
    }

    pub fn delays(&self) -> &BTreeMap<(String, String), i32> {
        &self.delays
    }

    /// A graph whose delays are exactly those of `rt` (a full dataset
    /// replaces any earlier one). Unknown trips and stops are ignored.
    pub fn apply_realtime(&self, rt: &RtFeedMessage) -> TransitGraph {
        let mut delays = BTreeMap::new();
        for tu in rt.trip_updates() {
            let Some(&t) = self.trip_index.get(&tu.trip_id) else { continue };
            for u in &tu.stop_time_updates {
                let trip = &self.trips[t];
                let event = match (&u.stop_id, u.stop_sequence) {
                    (Some(stop), _) => trip.events.iter().find(|e| self.stops[e.stop].stop_id == *stop),
                    (None, Some(seq)) => trip.events.iter().find(|e| e.stop_sequence == seq),
                    (None, None) => None,
                };
                if let Some(e) = event {
                    delays.insert((tu.trip_id.clone(), self.stops[e.stop].stop_id.clone()), u.arrival_delay);
                }
            }
        }
        let mut g = self.clone();
        g.delays = delays;
        g.recompute();
        g
    }

    /// Effective times: each delay shifts its stop and every later stop of the
    /// trip until the next delayed stop; times are then made non-decreasing.
    fn recompute(&mut self) {
        self.effective = self
            .trips
            .iter()
            .map(|trip| {
                let mut delay: Epoch = 0;
                let mut floor = Epoch::MIN;
                trip.events
                    .iter()
                    .map(|e| {
                        if let Some(d) = self.delays.get(&(trip.trip_id.clone(), self.stops[e.stop].stop_id.clone())) {
                            delay = *d as Epoch;
                        }
                        let arrival = (e.arrival + delay).max(floor);
                        let departure = (e.departure + delay).max(arrival);
                        floor = departure;
                        (arrival, departure)
                    })
                    .collect()
            })
            .collect();
        let mut conns = Vec::new();
        for (t, trip) in self.trips.iter().enumerate() {
            for pos in 0..trip.events.len().saturating_sub(1) {
                conns.push(Connection {
                    dep_stop: trip.events[pos].stop,
                    arr_stop: trip.events[pos + 1].stop,
                    dep_time: self.effective[t][pos].1,
                    arr_time: self.effective[t][pos + 1].0,
                    trip: t,
                    pos,
                });
            }
        }
        conns.sort_by_key(|c| (c.dep_time, c.arr_time, c.trip, c.pos));
        self.connections = conns;
    }

    fn stop(&self, id: &str) -> Result<usize, RouterError> {
        self.stop_index.get(id).copied().ok_or_else(|| RouterError::UnknownStop(id.to_string()))
    }

    /// Round-based connection scan. `labels[k][s]` is the earliest arrival at
    /// `s` using at most `k` legs; boarding from a source needs `ready`,
    /// boarding after a leg needs the arrival plus [`TRANSFER_SLACK`].
    fn rounds(&self, sources: &[(usize, Epoch)], max_legs: usize) -> Vec<Vec<Epoch>> {
        let n = self.stops.len();
        let mut labels = vec![vec![Epoch::MAX; n]];
        let mut ready = vec![Epoch::MAX; n];
        for &(s, r) in sources {
            labels[0][s] = labels[0][s].min(r);
            ready[s] = ready[s].min(r);
        }
        for _ in 0..max_legs {
            let prev = labels.last().expect("round 0 exists").clone();
            let mut cur = prev.clone();
            let mut on_trip = vec![false; self.trips.len()];
            for c in &self.connections {
                if on_trip[c.trip] || ready[c.dep_stop] <= c.dep_time {
                    on_trip[c.trip] = true;
                    if c.arr_time < cur[c.arr_stop] {
                        cur[c.arr_stop] = c.arr_time;
                    }
                }
            }
            let improved = cur != prev;
            for s in 0..n {
                if cur[s] < prev[s] {
                    ready[s] = ready[s].min(cur[s].saturating_add(TRANSFER_SLACK));
                }
            }
            labels.push(cur);
            if !improved {
                break;
            }
        }
        labels
    }

    /// Earliest arrival at `to` from `(stop, ready)` within `legs` legs.
    fn reach(&self, stop: usize, ready: Epoch, to: usize, legs: usize) -> Epoch {
        let labels = self.rounds(&[(stop, ready)], legs);
        labels.last().expect("non-empty")[to]
    }

    /// Journey minimizing arrival at `to`, then leg count, then the
    /// lexicographic sequence of trip ids. `Ok(None)` means no route.
    pub fn earliest_arrival(&self, from: &str, to: &str, depart_after: Epoch) -> Result<Option<Journey>, RouterError> {
        let (from_i, to_i) = (self.stop(from)?, self.stop(to)?);
        if from_i == to_i {
            return Ok(Some(Journey { legs: Vec::new(), total_arrival: depart_after }));
        }
        let labels = self.rounds(&[(from_i, depart_after)], self.trips.len());
        let best = labels.last().expect("non-empty")[to_i];
        if best == Epoch::MAX {
            return Ok(None);
        }
        let legs = labels.iter().position(|l| l[to_i] == best).expect("best occurs in some round");
        Ok(Some(self.reconstruct(from_i, to_i, depart_after, best, legs)))
    }

    /// Picks leg by leg the smallest trip id that still admits a completion
    /// arriving at `best` with the remaining legs.
    fn reconstruct(&self, from: usize, to: usize, depart_after: Epoch, best: Epoch, legs: usize) -> Journey {
        // frontier: (stop, ready time, legs so far)
        let mut frontier: Vec<(usize, Epoch, Vec<Leg>)> = vec![(from, depart_after, Vec::new())];
        for leg_no in 0..legs {
            let remaining = legs - leg_no - 1;
            let mut chosen: Option<usize> = None;
            let mut next: Vec<(usize, Epoch, Vec<Leg>)> = Vec::new();
            for &t in &self.trip_rank {
                for (stop, ready, path) in &frontier {
                    let trip = &self.trips[t];
                    let eff = &self.effective[t];
                    let Some(board) = (0..trip.events.len()).find(|&p| trip.events[p].stop == *stop && eff[p].1 >= *ready) else {
                        continue;
                    };
                    for alight in board + 1..trip.events.len() {
                        let (a_stop, a_time) = (trip.events[alight].stop, eff[alight].0);
                        let ok = if remaining == 0 {
                            a_stop == to && a_time <= best
                        } else {
                            a_stop != to && self.reach(a_stop, a_time + TRANSFER_SLACK, to, remaining) <= best
                        };
                        if ok {
                            let mut p = path.clone();
                            p.push(Leg {
                                trip_id: trip.trip_id.clone(),
                                board_stop: self.stops[*stop].stop_id.clone(),
                                board_time: eff[board].1,
                                alight_stop: self.stops[a_stop].stop_id.clone(),
                                alight_time: a_time,
                            });
                            next.push((a_stop, a_time + TRANSFER_SLACK, p));
                            chosen = Some(t);
                        }
                    }
                }
                if chosen.is_some() {
                    break;
                }
            }
            debug_assert!(chosen.is_some(), "optimal journey must be reconstructible");
            // keep the earliest-ready state per stop
            next.sort_by_key(|(s, r, _)| (*s, *r));
            next.dedup_by_key(|(s, _, _)| *s);
            frontier = next;
        }
        let (_, _, legs) = frontier.into_iter().next().expect("a completion exists");
        Journey { total_arrival: legs.last().map(|l| l.alight_time).unwrap_or(best), legs }
    }
}
