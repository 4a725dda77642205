use super::*;
use crate::broker::ContextEntity;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FindingKind {
    /// A model-typed entity that does not convert.
    Malformed,
    DuplicateId,
    DanglingReference,
    InvariantViolation,
    NonIncreasingSequence,
    /// A feed cannot be built without at least one agency.
    NoAgency,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub entity_id: String,
    pub kind: FindingKind,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}: {}", self.entity_id, self.kind, self.detail)
    }
}

/// Every rule violation found in an entity set, sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub findings: Vec<Finding>,
}

impl ConsistencyReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    pub fn push(&mut self, entity_id: impl Into<String>, kind: FindingKind, detail: impl Into<String>) {
        self.findings.push(Finding { entity_id: entity_id.into(), kind, detail: detail.into() });
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

impl MobilityEntity {
    /// Single-entity invariant violations, independent of other entities.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            MobilityEntity::Service(s) if s.start_date > s.end_date => {
                v.push(format!("startDate {} after endDate {}", s.start_date, s.end_date));
            }
            MobilityEntity::StopTime(st) if st.departure_time < st.arrival_time => {
                v.push(format!("departureTime {} before arrivalTime {}", st.departure_time, st.arrival_time));
            }
            MobilityEntity::Stop(s) => {
                if let Err(e) = GeoPoint::new(s.lat, s.lon) {
                    v.push(e.to_string());
                }
            }
            MobilityEntity::ArrivalEstimation(a) if a.estimated_arrival <= 0 => {
                v.push(format!("estimatedArrivalTime {} not positive", a.estimated_arrival));
            }
            MobilityEntity::VehiclePosition(p) => {
                if let Some(b) = p.bearing {
                    if !(0.0..360.0).contains(&b) {
                        v.push(format!("bearing {b} outside [0, 360)"));
                    }
                }
            }
            MobilityEntity::FeedPointer(p) => {
                if p.valid_from > p.valid_until {
                    v.push(format!("validFrom {} after validUntil {}", p.valid_from, p.valid_until));
                }
                if p.source_url.is_empty() {
                    v.push("empty sourceUrl".into());
                }
            }
            MobilityEntity::ParkingSpotGroup(p) => {
                if p.total_spots == 0 {
                    v.push("totalSpots must be positive".into());
                }
                if p.available_spots > p.total_spots {
                    v.push(format!("availableSpots {} exceeds totalSpots {}", p.available_spots, p.total_spots));
                }
            }
            MobilityEntity::TrafficFlowObserved(t) if !(t.intensity.is_finite() && t.intensity >= 0.0) => {
                v.push(format!("intensity {} not a finite non-negative number", t.intensity));
            }
            _ => {}
        }
        v
    }

    /// `(field, target type, target business id)` for each reference held.
    pub fn references(&self) -> Vec<(&'static str, &'static str, &str)> {
        match self {
            MobilityEntity::Route(r) => vec![("agencyRef", GTFS_AGENCY, r.agency_id.as_str())],
            MobilityEntity::Trip(t) => {
                vec![("routeRef", GTFS_ROUTE, t.route_id.as_str()), ("serviceRef", GTFS_SERVICE, t.service_id.as_str())]
            }
            MobilityEntity::StopTime(st) => {
                vec![("tripRef", GTFS_TRIP, st.trip_id.as_str()), ("stopRef", GTFS_STOP, st.stop_id.as_str())]
            }
            MobilityEntity::ArrivalEstimation(a) => {
                vec![("tripRef", GTFS_TRIP, a.trip_id.as_str()), ("stopRef", GTFS_STOP, a.stop_id.as_str())]
            }
            MobilityEntity::VehiclePosition(v) => {
                v.trip_id.iter().map(|t| ("tripRef", GTFS_TRIP, t.as_str())).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Checks broker entities against the urban-mobility rules. Entities of
/// types outside the model are ignored.
pub fn validate_consistency(entities: &[ContextEntity]) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let mut typed = Vec::with_capacity(entities.len());
    for e in entities.iter().filter(|e| ALL_TYPES.contains(&e.entity_type.as_str())) {
        match MobilityEntity::from_context(e) {
            Ok(t) => typed.push(t),
            Err(err) => report.push(&e.id, FindingKind::Malformed, err.to_string()),
        }
    }
    report.findings.extend(validate_typed(&typed).findings);
    report.findings.sort();
    report
}

/// Rule checks over already-typed entities:
/// duplicate business ids, dangling references, per-entity invariants and
/// strictly increasing stop sequences along each trip.
pub fn validate_typed(entities: &[MobilityEntity]) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let mut known: HashSet<(&'static str, String)> = HashSet::new();
    for e in entities {
        // a StopTime key is (trip, sequence); repeats are sequence findings
        if !known.insert((e.type_name(), e.business_id())) && !matches!(e, MobilityEntity::StopTime(_)) {
            report.push(e.entity_id(), FindingKind::DuplicateId, format!("{} {} repeated", e.type_name(), e.business_id()));
        }
    }
    let mut by_trip: BTreeMap<&str, Vec<&StopTime>> = BTreeMap::new();
    for e in entities {
        for (field, target, id) in e.references() {
            if !known.contains(&(target, id.to_string())) {
                report.push(e.entity_id(), FindingKind::DanglingReference, format!("{field} -> {}", urn(target, id)));
            }
        }
        for v in e.violations() {
            report.push(e.entity_id(), FindingKind::InvariantViolation, v);
        }
        if let MobilityEntity::StopTime(st) = e {
            by_trip.entry(st.trip_id.as_str()).or_default().push(st);
        }
    }
    for (trip, mut sts) in by_trip {
        sts.sort_by_key(|st| st.stop_sequence);
        for pair in sts.windows(2) {
            if pair[1].stop_sequence <= pair[0].stop_sequence {
                report.push(
                    stop_time_urn(trip, pair[1].stop_sequence),
                    FindingKind::NonIncreasingSequence,
                    format!("stopSequence {} repeats along trip {trip}", pair[1].stop_sequence),
                );
            }
        }
    }
    report.findings.sort();
    report
}
