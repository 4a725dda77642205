//! Exhaustive journey enumeration over a small timetable.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub stop: String,
    pub arrival: i64,
    pub departure: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub id: String,
    /// In travel order.
    pub calls: Vec<Call>,
}

/// Applies per-stop delays: a delay holds from its stop onwards until the
/// next stop carrying its own delay, and no time may precede the previous one.
pub fn delayed(trip: &Trip, delays: &BTreeMap<String, i64>) -> Trip {
    let mut shift = 0;
    let mut last = i64::MIN;
    let calls = trip
        .calls
        .iter()
        .map(|c| {
            if let Some(d) = delays.get(&c.stop) {
                shift = *d;
            }
            let arrival = std::cmp::max(c.arrival + shift, last);
            let departure = std::cmp::max(c.departure + shift, arrival);
            last = departure;
            Call { stop: c.stop.clone(), arrival, departure }
        })
        .collect();
    Trip { id: trip.id.clone(), calls }
}

/// Earliest arrival and, among journeys reaching it, the fewest legs.
/// Boarding at the origin needs `departure >= depart_after`; boarding after a
/// leg needs `departure >= arrival + slack`.
pub fn earliest(trips: &[Trip], from: &str, to: &str, depart_after: i64, slack: i64) -> Option<(i64, usize)> {
    if from == to {
        return Some((depart_after, 0));
    }
    let mut best: Option<(i64, usize)> = None;
    let mut used = vec![false; trips.len()];
    explore(trips, to, from, depart_after, 0, slack, &mut used, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn explore(
    trips: &[Trip],
    to: &str,
    at: &str,
    ready: i64,
    legs: usize,
    slack: i64,
    used: &mut Vec<bool>,
    best: &mut Option<(i64, usize)>,
) {
    for (t, trip) in trips.iter().enumerate() {
        if used[t] {
            continue;
        }
        for i in 0..trip.calls.len() {
            if trip.calls[i].stop != at || trip.calls[i].departure < ready {
                continue;
            }
            for j in i + 1..trip.calls.len() {
                let c = &trip.calls[j];
                let candidate = (c.arrival, legs + 1);
                if c.stop == to {
                    if best.map_or(true, |b| candidate < b) {
                        *best = Some(candidate);
                    }
                } else if best.map_or(true, |b| c.arrival <= b.0) {
                    used[t] = true;
                    explore(trips, to, &c.stop, c.arrival + slack, legs + 1, slack, used, best);
                    used[t] = false;
                }
            }
        }
    }
}
