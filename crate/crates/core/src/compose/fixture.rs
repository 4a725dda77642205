use crate::broker::{BrokerError, ContextBroker, ContextEntity};
use crate::clock::{to_iso8601, Epoch};
use crate::geo::GeoPoint;
use crate::gtfs::{Agency, Route, Service, ServiceDate, Stop, StopTime, Trip};
use crate::model::{MobilityEntity, ParkingSpotGroup, TrafficFlowObserved};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const ENTITIES_FILE: &str = "entities.json";
pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const HOUR: i64 = 3600;
const HISTORY_HOURS: i64 = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureSize {
    Tiny,
    Small,
}

impl FromStr for FixtureSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(FixtureSize::Tiny),
            "small" => Ok(FixtureSize::Small),
            other => Err(format!("unknown fixture size {other:?} (tiny|small)")),
        }
    }
}

impl fmt::Display for FixtureSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixtureSize::Tiny => "tiny",
            FixtureSize::Small => "small",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleStop {
    pub stop_id: String,
    pub stop_sequence: u32,
    pub arrival: Epoch,
    pub arrival_iso: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleTrip {
    pub trip_id: String,
    pub route_id: String,
    pub stops: Vec<SampleStop>,
}

/// A query with a known answer: riding `trip_id` from `from` to `to` is the
/// unique optimum, and a delay reported at `delay_stop` carries to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Probe {
    pub trip_id: String,
    pub from: String,
    pub to: String,
    pub depart_after: Epoch,
    pub expected_arrival: Epoch,
    pub delay_stop: String,
    pub delay_stop_arrival: Epoch,
    /// Largest delay that keeps this trip the optimum.
    pub max_safe_delay: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub seed: u64,
    pub size: FixtureSize,
    pub service_date: ServiceDate,
    /// Suggested "now" for services consuming the observation history.
    pub clock_start: Epoch,
    /// Distinct entities per type, observations included.
    pub counts: BTreeMap<String, usize>,
    pub observation_count: usize,
    pub sample_trips: Vec<SampleTrip>,
    pub probe: Option<Probe>,
    /// `entityId:attr:kind` estimator targets.
    pub estimator_targets: Vec<String>,
}

/// A generated city: static entities, a time-ordered observation history
/// (parking and traffic), and the manifest of expected values.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub entities: Vec<ContextEntity>,
    pub observations: Vec<ContextEntity>,
    pub manifest: Manifest,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("fixture entity: {0}")]
    Entity(#[from] BrokerError),
}

pub fn service_date() -> ServiceDate {
    ServiceDate::from_ymd(2019, 6, 17).expect("valid date")
}

const STOP_NAMES: [&str; 20] = [
    "Porta Nuova", "Porta Susa", "Vinzaglio", "Re Umberto", "Marconi", "Nizza", "Dante", "Carducci", "Spezia", "Lingotto",
    "Bengasi", "XVIII Dicembre", "Principi d'Acaja", "Bernini", "Racconigi", "Rivoli", "Monte Grappa", "Pozzo Strada", "Massaua", "Fermi",
];

struct Builder {
    rng: ChaCha8Rng,
    entities: Vec<MobilityEntity>,
    stop_times: Vec<StopTime>,
}

impl Builder {
    fn stop(&mut self, i: usize) -> String {
        let id = format!("S{}", i + 1);
        let location = GeoPoint { lat: 45.06 + self.rng.gen_range(0.0..0.04), lon: 7.64 + self.rng.gen_range(0.0..0.06) };
        self.entities.push(Stop { stop_id: id.clone(), name: STOP_NAMES[i % STOP_NAMES.len()].into(), lat: location.lat, lon: location.lon }.into());
        id
    }

    fn trip(&mut self, trip_id: &str, route_id: &str, service_id: &str, calls: &[(String, u32)]) {
        let headsign = calls.last().map(|c| c.0.clone()).unwrap_or_default();
        self.entities.push(Trip { trip_id: trip_id.into(), route_id: route_id.into(), service_id: service_id.into(), headsign }.into());
        for (i, (stop, t)) in calls.iter().enumerate() {
            self.stop_times.push(StopTime {
                trip_id: trip_id.into(),
                stop_id: stop.clone(),
                stop_sequence: i as u32 + 1,
                arrival_time: *t,
                departure_time: *t + if i == 0 || i + 1 == calls.len() { 0 } else { 30 },
            });
        }
    }
}

fn agency(i: usize) -> MobilityEntity {
    Agency {
        agency_id: format!("A{i}"),
        name: format!("Transit Company {i}"),
        url: format!("https://transit{i}.example.org/"),
        timezone: "Europe/Rome".into(),
    }
    .into()
}

fn route(id: &str, agency_id: &str) -> MobilityEntity {
    Route { route_id: id.into(), agency_id: agency_id.into(), short_name: id.trim_start_matches('R').into(), route_type: 3 }.into()
}

fn service(id: &str, weekdays: [bool; 7]) -> MobilityEntity {
    Service {
        service_id: id.into(),
        weekdays,
        start_date: ServiceDate::from_ymd(2019, 1, 1).expect("valid"),
        end_date: ServiceDate::from_ymd(2030, 12, 31).expect("valid"),
    }
    .into()
}

/// Deterministic per `(seed, size)`.
pub fn gen_fixture(seed: u64, size: FixtureSize) -> Fixture {
    let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(seed), entities: Vec::new(), stop_times: Vec::new() };
    let date = service_date();
    let midnight = date.midnight_epoch();
    let mut probe = None;
    match size {
        FixtureSize::Tiny => {
            b.entities.push(agency(1));
            b.entities.push(route("R1", "A1"));
            b.entities.push(route("R2", "A1"));
            b.entities.push(service("WEEK", [true; 7]));
            let stops: Vec<String> = (0..4).map(|i| b.stop(i)).collect();
            let start = 8 * 3600 + b.rng.gen_range(0..30) * 60;
            let hop = b.rng.gen_range(10..20) * 60;
            let t1 = vec![(stops[0].clone(), start), (stops[1].clone(), start + hop), (stops[2].clone(), start + 2 * hop)];
            let t2: Vec<(String, u32)> = t1.iter().map(|(s, t)| (s.clone(), t + 3600)).collect();
            let t3 = vec![(stops[2].clone(), start + 2 * hop + 600), (stops[3].clone(), start + 3 * hop + 600)];
            b.trip("T1", "R1", "WEEK", &t1);
            b.trip("T2", "R1", "WEEK", &t2);
            b.trip("T3", "R2", "WEEK", &t3);
            probe = Some(Probe {
                trip_id: "T1".into(),
                from: stops[0].clone(),
                to: stops[2].clone(),
                depart_after: midnight + (start - 1800) as Epoch,
                expected_arrival: midnight + (start + 2 * hop) as Epoch,
                delay_stop: stops[1].clone(),
                delay_stop_arrival: midnight + (start + hop) as Epoch,
                max_safe_delay: 3600 - 1,
            });
        }
        FixtureSize::Small => {
            b.entities.push(agency(1));
            b.entities.push(agency(2));
            b.entities.push(service("WEEK", [true; 7]));
            b.entities.push(service("WKDY", [true, true, true, true, true, false, false]));
            let stops: Vec<String> = (0..20).map(|i| b.stop(i)).collect();
            for r in 1..=6 {
                let route_id = format!("R{r}");
                b.entities.push(route(&route_id, if r <= 3 { "A1" } else { "A2" }));
                let n = b.rng.gen_range(4..=6);
                let pattern: Vec<String> = stops.choose_multiple(&mut b.rng, n).cloned().collect();
                let first = 6 * 3600 + b.rng.gen_range(0..60) * 60;
                let hops: Vec<u32> = (1..n).map(|_| b.rng.gen_range(3..10) * 60).collect();
                let service = if r <= 4 { "WEEK" } else { "WKDY" };
                for k in 0..5u32 {
                    let mut t = first + k * 3600;
                    let mut calls = vec![(pattern[0].clone(), t)];
                    for (stop, hop) in pattern[1..].iter().zip(&hops) {
                        t += hop + 30;
                        calls.push((stop.clone(), t - 30));
                    }
                    b.trip(&format!("T{}", (r - 1) * 5 + k as usize + 1), &route_id, service, &calls);
                }
            }
        }
    }
    let stop_times = std::mem::take(&mut b.stop_times);
    let sample_trips = sample_trips(&b.entities, &stop_times, midnight);
    b.entities.extend(stop_times.into_iter().map(MobilityEntity::from));

    let clock_start = midnight + 12 * HOUR;
    let mut observations = Vec::new();
    let (park_id, seg_id) = ("P1", "SEG1");
    let park_loc = GeoPoint { lat: 45.07, lon: 7.66 };
    let phase = b.rng.gen_range(0.0..std::f64::consts::TAU);
    for h in 0..HISTORY_HOURS {
        let at = clock_start - (HISTORY_HOURS - 1 - h) * HOUR;
        let angle = std::f64::consts::TAU * (at.rem_euclid(86_400) as f64 / 86_400.0) + phase;
        let ratio = (0.5 + 0.35 * angle.sin() + b.rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
        observations.push(
            MobilityEntity::from(ParkingSpotGroup {
                group_id: park_id.into(),
                location: park_loc,
                total_spots: 200,
                available_spots: (ratio * 200.0).round() as u32,
                observed_at: at,
            })
            .to_context(),
        );
        let flow = (600.0 + 400.0 * (angle + 1.0).sin() + b.rng.gen_range(-20.0..20.0)).max(0.0);
        observations.push(
            MobilityEntity::from(TrafficFlowObserved { segment_id: seg_id.into(), location: park_loc, intensity: flow.round(), observed_at: at })
                .to_context(),
        );
    }

    let entities: Vec<ContextEntity> = b.entities.iter().map(MobilityEntity::to_context).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &entities {
        *counts.entry(e.entity_type.clone()).or_default() += 1;
    }
    let mut distinct: BTreeMap<&str, &str> = BTreeMap::new();
    for o in &observations {
        distinct.insert(&o.id, &o.entity_type);
    }
    for ty in distinct.values() {
        *counts.entry(ty.to_string()).or_default() += 1;
    }
    let manifest = Manifest {
        seed,
        size,
        service_date: date,
        clock_start,
        counts,
        observation_count: observations.len(),
        sample_trips,
        probe,
        estimator_targets: vec![
            format!("urn:ngsi:ParkingSpotGroup:{park_id}:availableSpots:parking"),
            format!("urn:ngsi:TrafficFlowObserved:{seg_id}:intensity:traffic"),
        ],
    };
    Fixture { entities, observations, manifest }
}

fn sample_trips(entities: &[MobilityEntity], stop_times: &[StopTime], midnight: Epoch) -> Vec<SampleTrip> {
    let mut seen_routes = std::collections::BTreeSet::new();
    entities
        .iter()
        .filter_map(|e| match e {
            MobilityEntity::Trip(t) if seen_routes.insert(t.route_id.clone()) => Some(t),
            _ => None,
        })
        .map(|t| SampleTrip {
            trip_id: t.trip_id.clone(),
            route_id: t.route_id.clone(),
            stops: stop_times
                .iter()
                .filter(|st| st.trip_id == t.trip_id)
                .map(|st| {
                    let arrival = midnight + st.arrival_time as Epoch;
                    SampleStop { stop_id: st.stop_id.clone(), stop_sequence: st.stop_sequence, arrival, arrival_iso: to_iso8601(arrival) }
                })
                .collect(),
        })
        .collect()
}

impl Fixture {
    pub fn entities_json(&self) -> String {
        to_json_array(&self.entities)
    }

    pub fn observations_json(&self) -> String {
        to_json_array(&self.observations)
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n"
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), FixtureError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(ENTITIES_FILE), self.entities_json())?;
        std::fs::write(dir.join(OBSERVATIONS_FILE), self.observations_json())?;
        std::fs::write(dir.join(MANIFEST_FILE), self.manifest_json())?;
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Fixture, FixtureError> {
        Ok(Fixture {
            entities: from_json_array(&std::fs::read_to_string(dir.join(ENTITIES_FILE))?)?,
            observations: from_json_array(&std::fs::read_to_string(dir.join(OBSERVATIONS_FILE))?)?,
            manifest: serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?,
        })
    }

    /// Upserts the static entities, then replays observations in order.
    pub fn load_into(&self, broker: &dyn ContextBroker) -> Result<usize, BrokerError> {
        for e in self.entities.iter().chain(&self.observations) {
            broker.upsert(e.clone())?;
        }
        Ok(self.entities.len() + self.observations.len())
    }
}

fn to_json_array(entities: &[ContextEntity]) -> String {
    let wire: Vec<serde_json::Value> = entities.iter().map(ContextEntity::to_wire).collect();
    serde_json::to_string_pretty(&wire).expect("entities serialize") + "\n"
}

fn from_json_array(text: &str) -> Result<Vec<ContextEntity>, FixtureError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text)?;
    Ok(values.iter().map(ContextEntity::from_wire).collect::<Result<_, _>>()?)
}
