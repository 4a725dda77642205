//! One pass/fail line per acceptance criterion; exits non-zero if any fails.

use atomic_transit_core::broker::{Broker, ContextBroker, ContextEntity, Notification, NotificationSink, NotifyTarget, SharedBroker, Subscription};
use atomic_transit_core::clock::{Clock, Epoch, ManualClock};
use atomic_transit_core::compose::{gen_fixture, service_date, FixtureSize, Mode, Pipeline, PipelineConfig};
use atomic_transit_core::estimator::{
    estimator_handler, Estimator, EstimatorConfig, EventKind, EventLog, Prediction, SeasonalRidge, Target, TargetKind, PREDICTION,
};
use atomic_transit_core::fetcher::{FeedPayload, Fetcher, PluginError, RoutingEnginePlugin};
use atomic_transit_core::geo::{GeoFilter, GeoPoint};
use atomic_transit_core::gtfs::{read_feed, write_feed, Agency, GtfsFeed, Route, Service, ServiceDate, Stop, StopTime, Trip};
use atomic_transit_core::http::{self, HttpServer};
use atomic_transit_core::model::generate::{random_city, CityShape};
use atomic_transit_core::model::{ArrivalEstimation, FeedPointer, MobilityEntity, ParkingSpotGroup, VehiclePosition};
use atomic_transit_core::ngsi2gtfs::{build_feed, feed_entities, feed_version};
use atomic_transit_core::realtime::{
    BridgeConfig, RtEntity, RtFeedMessage, RtHeader, RtPayload, ScheduleIndex, StopTimeUpdate, Translator, TripUpdate,
};
use atomic_transit_core::router::{build_graph, TRANSFER_SLACK};
use atomic_transit_oracles::{geo as ogeo, journeys, rt as ort, signal};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(label: &str, check: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS  {label:<34} {detail} ({secs:.2}s)"),
        Err(detail) => println!("FAIL  {label:<34} {detail} ({secs:.2}s)"),
    }
    outcome.is_ok()
}

fn main() {
    let results = [
        run("ngsi-gtfs round-trip", round_trip),
        run("gtfs-rt wire conformance", rt_conformance),
        run("routing oracle equivalence", routing_oracle),
        run("end-to-end delay propagation", end_to_end),
        run("validity gate", validity_gate),
        run("estimator accuracy floor", estimator_accuracy),
        run("broker notification exactness", broker_exactness),
        run("prediction cache semantics", cache_semantics),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

fn sorted_contexts(entities: &[MobilityEntity]) -> Vec<ContextEntity> {
    let mut v: Vec<ContextEntity> = entities.iter().map(MobilityEntity::to_context).collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut exact = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = CityShape::random(&mut rng, 12);
        let original = random_city(&mut rng, &shape);
        let feed = build_feed(&original).map_err(|e| format!("seed {seed}: {e}"))?;
        let bytes = write_feed(&feed).map_err(|e| format!("seed {seed}: {e}"))?;
        let back = read_feed(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        if sorted_contexts(&feed_entities(&back)) == sorted_contexts(&original) {
            exact += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(exact == 100, || format!("{exact}/100 exact"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("100/100 exact in {:.2}s", elapsed.as_secs_f64()))
}

fn small_feed() -> GtfsFeed {
    let fixture = gen_fixture(11, FixtureSize::Small);
    let typed: Vec<MobilityEntity> = fixture.entities.iter().map(|e| MobilityEntity::from_context(e).expect("typed")).collect();
    build_feed(&typed).expect("consistent fixture")
}

fn rt_conformance() -> Outcome {
    let empty = RtFeedMessage::empty(0).encode();
    let expected_empty = [0x0A, 0x09, 0x0A, 0x03, b'2', b'.', b'0', 0x10, 0x00, 0x18, 0x00];
    ensure(empty == expected_empty, || format!("empty feed bytes {empty:02x?}"))?;
    let now: Epoch = 1_560_772_800;
    let stamped = RtFeedMessage::empty(now as u64).encode();
    let expected_stamped = [0x0A, 0x0D, 0x0A, 0x03, b'2', b'.', b'0', 0x10, 0x00, 0x18, 0xC0, 0x81, 0x9E, 0xE8, 0x05];
    ensure(stamped == expected_stamped, || format!("stamped header bytes {stamped:02x?}"))?;

    let feed = small_feed();
    let date = service_date();
    let midnight = date.midnight_epoch();
    let schedule = Arc::new(ScheduleIndex::build(&feed, date).map_err(|e| e.to_string())?);
    let calls: Vec<&StopTime> = feed.stop_times.iter().collect();
    let mut ok = 0;
    for seq in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seq);
        let clock = ManualClock::new(now);
        let translator = Translator::new(Arc::clone(&schedule), BridgeConfig::default(), Arc::new(clock.clone()));
        let mut delays: BTreeMap<String, BTreeMap<u32, (String, i32)>> = BTreeMap::new();
        let mut vehicles: BTreeMap<String, (Option<String>, f32, f32)> = BTreeMap::new();
        let mut good = true;
        for n in 0..rng.gen_range(1..15) {
            let mut data = Vec::new();
            for _ in 0..rng.gen_range(1..4) {
                let observed_at = now - rng.gen_range(0..600);
                match rng.gen_range(0..10) {
                    0..=5 => {
                        let st = calls.choose(&mut rng).expect("stop times");
                        let delay = rng.gen_range(-300..1800);
                        let scheduled = midnight + st.arrival_time as Epoch;
                        let est = ArrivalEstimation { trip_id: st.trip_id.clone(), stop_id: st.stop_id.clone(), estimated_arrival: scheduled + delay, observed_at };
                        delays.entry(st.trip_id.clone()).or_default().insert(st.stop_sequence, (st.stop_id.clone(), delay as i32));
                        data.push(MobilityEntity::from(est).to_context());
                    }
                    6 => {
                        let est = ArrivalEstimation { trip_id: "GHOST".into(), stop_id: "S1".into(), estimated_arrival: now, observed_at };
                        data.push(MobilityEntity::from(est).to_context());
                    }
                    _ => {
                        let id = format!("V{}", rng.gen_range(0..4));
                        let trip = rng.gen_bool(0.7).then(|| format!("T{}", rng.gen_range(1..31)));
                        let location = GeoPoint::new(rng.gen_range(45.0..45.2), rng.gen_range(7.5..7.8)).expect("valid");
                        let bearing = rng.gen_bool(0.5).then(|| rng.gen_range(0.0..360.0));
                        vehicles.insert(id.clone(), (trip.clone(), location.lat as f32, location.lon as f32));
                        data.push(MobilityEntity::from(VehiclePosition { vehicle_id: id, trip_id: trip, location, bearing, observed_at }).to_context());
                    }
                }
            }
            clock.advance(rng.gen_range(0..30));
            translator.on_notification(&Notification { subscription_id: "s".into(), emitted_at: clock.now(), data });
            let snap = translator.snapshot();
            let tu = ort::decode(&snap.trip_updates_pb).map_err(|e| format!("sequence {seq}/{n}: trip updates undecodable: {e}"))?;
            let vp = ort::decode(&snap.vehicle_positions_pb).map_err(|e| format!("sequence {seq}/{n}: vehicles undecodable: {e}"))?;
            let header_ok = [&tu, &vp].iter().all(|d| d.version == "2.0" && d.full_dataset && d.timestamp == Some(clock.now() as u64));
            if !header_ok || tu.delays != delays || !vp.delays.is_empty() || vp.vehicles != vehicles || !tu.vehicles.is_empty() {
                good = false;
            }
        }
        if good {
            ok += 1;
        }
    }
    ensure(ok == 1000, || format!("{ok}/1000 sequences matched the replay"))?;
    Ok("header bytes exact; 1000/1000 sequences decode to the replayed state".into())
}

fn network(rng: &mut ChaCha8Rng) -> (GtfsFeed, RtFeedMessage) {
    let n_stops = rng.gen_range(2..=6);
    let stops: Vec<String> = (0..n_stops).map(|i| format!("S{i}")).collect();
    let mut feed = GtfsFeed {
        agencies: vec![Agency { agency_id: "A".into(), name: "A".into(), url: "https://a.example.org/".into(), timezone: "UTC".into() }],
        stops: stops.iter().map(|s| Stop { stop_id: s.clone(), name: s.clone(), lat: 45.0, lon: 7.0 }).collect(),
        routes: vec![Route { route_id: "R".into(), agency_id: "A".into(), short_name: "R".into(), route_type: 3 }],
        services: vec![Service {
            service_id: "ALL".into(),
            weekdays: [true; 7],
            start_date: ServiceDate::from_ymd(2019, 1, 1).expect("valid"),
            end_date: ServiceDate::from_ymd(2019, 12, 31).expect("valid"),
        }],
        ..GtfsFeed::default()
    };
    let mut updates = Vec::new();
    for t in 0..rng.gen_range(1..=8) {
        let trip_id = format!("T{t}");
        feed.trips.push(Trip { trip_id: trip_id.clone(), route_id: "R".into(), service_id: "ALL".into(), headsign: String::new() });
        let len = rng.gen_range(2..=n_stops.min(5));
        let pattern: Vec<&String> = stops.choose_multiple(rng, len).collect();
        let mut time = rng.gen_range(6 * 60..8 * 60) * 60;
        let mut stu = Vec::new();
        for (i, stop) in pattern.iter().enumerate() {
            let dwell = rng.gen_range(0..3) * 60;
            feed.stop_times.push(StopTime { trip_id: trip_id.clone(), stop_id: (*stop).clone(), stop_sequence: i as u32 + 1, arrival_time: time, departure_time: time + dwell });
            if rng.gen_bool(0.2) {
                stu.push(StopTimeUpdate { stop_sequence: Some(i as u32 + 1), stop_id: Some((*stop).clone()), arrival_delay: rng.gen_range(-120..900) });
            }
            time += dwell + rng.gen_range(1..15) * 60;
        }
        if !stu.is_empty() {
            updates.push(RtEntity {
                id: trip_id.clone(),
                payload: RtPayload::TripUpdate(TripUpdate { trip_id, route_id: None, stop_time_updates: stu, timestamp: None }),
            });
        }
    }
    (feed, RtFeedMessage { header: RtHeader::full_dataset(0), entities: updates })
}

fn oracle_trips(feed: &GtfsFeed, rt: &RtFeedMessage, midnight: Epoch) -> Vec<journeys::Trip> {
    feed.trips
        .iter()
        .map(|t| {
            let mut sts: Vec<&StopTime> = feed.stop_times.iter().filter(|s| s.trip_id == t.trip_id).collect();
            sts.sort_by_key(|s| s.stop_sequence);
            let trip = journeys::Trip {
                id: t.trip_id.clone(),
                calls: sts
                    .iter()
                    .map(|s| journeys::Call { stop: s.stop_id.clone(), arrival: midnight + s.arrival_time as i64, departure: midnight + s.departure_time as i64 })
                    .collect(),
            };
            let delays: BTreeMap<String, i64> = rt
                .trip_updates()
                .filter(|u| u.trip_id == t.trip_id)
                .flat_map(|u| u.stop_time_updates.iter().map(|s| (s.stop_id.clone().expect("stop id"), s.arrival_delay as i64)))
                .collect();
            journeys::delayed(&trip, &delays)
        })
        .collect()
}

fn routing_oracle() -> Outcome {
    let start = Instant::now();
    let date = ServiceDate::from_ymd(2019, 6, 17).expect("valid");
    let midnight = date.midnight_epoch();
    let mut agree = 0;
    let mut queries = 0;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (feed, rt) = network(&mut rng);
        let graph = build_graph(&feed, date).map_err(|e| e.to_string())?.apply_realtime(&rt);
        let trips = oracle_trips(&feed, &rt, midnight);
        let mut all = true;
        for _ in 0..4 {
            let from = feed.stops.choose(&mut rng).expect("stops").stop_id.clone();
            let to = feed.stops.choose(&mut rng).expect("stops").stop_id.clone();
            let depart_after = midnight + rng.gen_range(5 * 3600..9 * 3600);
            let got = graph.earliest_arrival(&from, &to, depart_after).map_err(|e| e.to_string())?;
            let want = journeys::earliest(&trips, &from, &to, depart_after, TRANSFER_SLACK);
            queries += 1;
            if got.map(|j| (j.total_arrival, j.legs.len())) != want {
                all = false;
            }
        }
        if all {
            agree += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(agree == 500, || format!("{agree}/500 networks agree"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("500/500 networks ({queries} queries) match enumeration"))
}

fn delay_shift(mode: Mode) -> Result<(), String> {
    let config = PipelineConfig::new(5, FixtureSize::Tiny);
    let p = Pipeline::start(&config, mode, Path::new(env!("CARGO_BIN_EXE_atomic-transit"))).map_err(|e| e.to_string())?;
    let probe = p.manifest().probe.clone().ok_or("tiny fixture has no probe")?;
    let base = p.route(&probe.from, &probe.to, probe.depart_after)?.ok_or("no base route")?;
    ensure(base.total_arrival == probe.expected_arrival, || format!("{mode:?}: base arrival {} != {}", base.total_arrival, probe.expected_arrival))?;
    p.inject_delay(&probe.trip_id, &probe.delay_stop, probe.delay_stop_arrival, 300)?;
    let delayed = p
        .route_until(&probe.from, &probe.to, probe.depart_after, Duration::from_secs(15), |j| {
            j.as_ref().is_some_and(|j| j.total_arrival != probe.expected_arrival)
        })?
        .ok_or("no delayed route")?;
    p.shutdown();
    ensure(delayed.total_arrival - base.total_arrival == 300, || format!("{mode:?}: shift {}", delayed.total_arrival - base.total_arrival))
}

fn end_to_end() -> Outcome {
    delay_shift(Mode::Inproc)?;
    delay_shift(Mode::Multiproc)?;
    Ok("+300 s shifts arrival by exactly 300 s in inproc and multiproc".into())
}

#[derive(Default)]
struct CountingPlugin {
    calls: AtomicUsize,
}

impl RoutingEnginePlugin for CountingPlugin {
    fn load_feed(&self, _feed_id: &str, _payload: &FeedPayload) -> Result<(), PluginError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

fn validity_gate() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let today = service_date();
    let mut feed = small_feed();
    let current = write_feed(&feed).map_err(|e| e.to_string())?;
    for s in &mut feed.services {
        s.end_date = today.add_days(-1);
        s.start_date = s.start_date.min(s.end_date);
    }
    let lapsed = write_feed(&feed).map_err(|e| e.to_string())?;
    let write = |name: &str, bytes: &[u8]| -> Result<String, String> {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        Ok(format!("file://{}", path.display()))
    };
    let pointer = |id: &str, url: String, bytes: &[u8], from: ServiceDate, until: ServiceDate| {
        MobilityEntity::from(FeedPointer { feed_id: id.into(), source_url: url, version: feed_version(bytes), valid_from: from, valid_until: until }).to_context()
    };
    let gated = |entities: Vec<ContextEntity>| -> Result<usize, String> {
        let broker = Broker::with_clock(Arc::new(ManualClock::new(today.midnight_epoch())));
        for e in entities {
            broker.upsert(e).map_err(|e| e.to_string())?;
        }
        let plugin = Arc::new(CountingPlugin::default());
        let fetcher = Fetcher::new(Arc::clone(&plugin) as Arc<dyn RoutingEnginePlugin>, Arc::new(ManualClock::new(today.midnight_epoch())));
        for _ in 0..3 {
            fetcher.poll_once(&broker, today).map_err(|e| e.to_string())?;
        }
        Ok(plugin.calls.load(Ordering::SeqCst))
    };
    let expired_pointer = gated(vec![pointer("old", write("current.zip", &current)?, &current, today.add_days(-30), today.add_days(-1))])?;
    let expired_calendar = gated(vec![pointer("lapsed", write("lapsed.zip", &lapsed)?, &lapsed, today.add_days(-30), today.add_days(30))])?;
    let control = gated(vec![pointer("live", write("live.zip", &current)?, &current, today.add_days(-30), today.add_days(30))])?;
    ensure(expired_pointer == 0, || format!("expired pointer reached the plugin {expired_pointer} times"))?;
    ensure(expired_calendar == 0, || format!("expired calendar reached the plugin {expired_calendar} times"))?;
    ensure(control == 1, || format!("valid control feed loaded {control} times, expected 1"))?;
    Ok("0 plugin calls over 3 polls (expired pointer and expired calendar); valid control loaded once".into())
}

const HOUR: i64 = 3600;
const DAY: i64 = 86_400;
const SPOTS: u32 = 10_000;

fn parking(broker: &Broker, ratio: f64, at: Epoch) {
    let available = (ratio.clamp(0.0, 1.0) * SPOTS as f64).round() as u32;
    let g = ParkingSpotGroup { group_id: "P1".into(), location: GeoPoint { lat: 45.0, lon: 7.0 }, total_spots: SPOTS, available_spots: available, observed_at: at };
    broker.upsert(MobilityEntity::from(g).to_context()).expect("upsert");
}

fn estimator_over(broker: &Arc<Broker>, clock: &ManualClock, log: EventLog) -> Arc<Estimator> {
    let target = Target::new("urn:ngsi:ParkingSpotGroup:P1", "availableSpots", TargetKind::Parking);
    Estimator::new(
        Arc::clone(broker) as SharedBroker,
        Arc::new(clock.clone()),
        EstimatorConfig { targets: vec![target], ..EstimatorConfig::default() },
        Arc::new(SeasonalRidge::default()),
        Arc::new(log),
    )
    .expect("estimator")
}

fn forecast_run() -> Result<(Vec<f64>, Vec<f64>), String> {
    let truth = signal::DailySine { mean: 0.5, amplitude: 0.35, phase: 0.7 };
    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    let t0: Epoch = 1_559_347_200;
    let clock = ManualClock::new(t0);
    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    let first_issue = t0 + 14 * DAY;
    for h in 0..14 * 24 {
        let at = t0 + h * HOUR;
        parking(&broker, truth.at(at) + rng.gen_range(-0.02..=0.02), at);
    }
    let est = estimator_over(&broker, &clock, EventLog::new());
    let target = est.config().targets[0].clone();
    let (mut predicted, mut expected) = (Vec::new(), Vec::new());
    for k in 0..100 {
        let now = first_issue + k * HOUR;
        clock.set(now);
        parking(&broker, truth.at(now) + rng.gen_range(-0.02..=0.02), now);
        let p = est.estimate(&target).map_err(|e| e.to_string())?;
        predicted.push(p.predicted_value);
        expected.push(truth.at(now + HOUR));
    }
    Ok((predicted, expected))
}

fn estimator_accuracy() -> Outcome {
    let (a, expected) = forecast_run()?;
    let (b, _) = forecast_run()?;
    let mae = signal::mae(&a, &expected);
    let identical = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(mae <= 0.06, || format!("MAE {mae:.4} > 0.06"))?;
    ensure(identical, || "predictions differ between runs".into())?;
    Ok(format!("MAE {mae:.4} over 100 predictions; bit-identical across runs"))
}

struct SubSpec {
    entity_type: &'static str,
    prefix: Option<&'static str>,
    watched: &'static [&'static str],
    near: Option<(f64, f64, f64)>,
}

fn broker_exactness() -> Outcome {
    let specs = [
        SubSpec { entity_type: "Vehicle", prefix: None, watched: &[], near: None },
        SubSpec { entity_type: "Vehicle", prefix: None, watched: &["speed"], near: None },
        SubSpec { entity_type: "Vehicle", prefix: Some("car-1"), watched: &[], near: None },
        SubSpec { entity_type: "Vehicle", prefix: None, watched: &["color", "speed"], near: Some((45.0, 7.0, 3000.0)) },
        SubSpec { entity_type: "Vehicle", prefix: None, watched: &[], near: Some((45.05, 7.05, 5000.0)) },
        SubSpec { entity_type: "Sensor", prefix: None, watched: &[], near: None },
        SubSpec { entity_type: "Sensor", prefix: None, watched: &["reading"], near: None },
        SubSpec { entity_type: "Sensor", prefix: Some("sensor-2"), watched: &["status"], near: None },
        SubSpec { entity_type: "Sensor", prefix: None, watched: &["status"], near: Some((45.02, 7.02, 2000.0)) },
        SubSpec { entity_type: "Parking", prefix: None, watched: &[], near: None },
    ];
    let broker = Broker::with_clock(Arc::new(ManualClock::new(1_560_000_000)));
    let mut receivers = Vec::new();
    for s in &specs {
        let (sink, rx) = NotificationSink::channel();
        let mut sub = Subscription::new(s.entity_type, NotifyTarget::Sink(sink)).watching(s.watched.iter().copied());
        if let Some(p) = s.prefix {
            sub = sub.with_id_pattern(&format!("{p}*"));
        }
        if let Some((lat, lon, r)) = s.near {
            sub = sub.within(GeoFilter { center: GeoPoint::new(lat, lon).expect("valid"), max_distance_meters: r });
        }
        broker.subscribe(sub).map_err(|e| e.to_string())?;
        receivers.push(rx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut state: BTreeMap<String, (String, BTreeMap<String, String>)> = BTreeMap::new();
    let mut expected: Vec<Vec<i64>> = vec![Vec::new(); specs.len()];
    for n in 0..1000i64 {
        let (ty, id) = match rng.gen_range(0..3) {
            0 => ("Vehicle", format!("car-{}", rng.gen_range(0..25))),
            1 => ("Sensor", format!("sensor-{}", rng.gen_range(0..25))),
            _ => ("Parking", format!("lot-{}", rng.gen_range(0..5))),
        };
        let mut e = ContextEntity::new(&id, ty).with("n", n);
        let mut plain: BTreeMap<String, String> = BTreeMap::from([("n".to_string(), n.to_string())]);
        let mut add = |e: ContextEntity, name: &str, value: String, v: atomic_transit_core::broker::AttrValue| {
            plain.insert(name.to_string(), value);
            e.with(name, v)
        };
        if rng.gen_bool(0.6) {
            let (lat, lon) = (45.0 + rng.gen_range(0..8) as f64 * 0.01, 7.0 + rng.gen_range(0..8) as f64 * 0.01);
            e = add(e, "location", format!("{lat},{lon}"), GeoPoint::new(lat, lon).expect("valid").into());
        }
        let names: &[&str] = match ty {
            "Vehicle" => &["speed", "color"],
            "Sensor" => &["reading", "status"],
            _ => &["free"],
        };
        for name in names {
            if rng.gen_bool(0.5) {
                let v = rng.gen_range(0..3);
                e = add(e, name, v.to_string(), (v as f64).into());
            }
        }
        let (prev_ty, prev) = state.entry(id.clone()).or_insert_with(|| (ty.to_string(), BTreeMap::new()));
        assert_eq!(prev_ty, ty);
        let changed: Vec<String> = plain.iter().filter(|(k, v)| prev.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect();
        prev.extend(plain);
        let location = prev.get("location").map(|l| {
            let (a, b) = l.split_once(',').expect("lat,lon");
            (a.parse::<f64>().expect("lat"), b.parse::<f64>().expect("lon"))
        });
        for (i, s) in specs.iter().enumerate() {
            let selected = s.entity_type == ty
                && s.prefix.map_or(true, |p| id.starts_with(p))
                && s.near.map_or(true, |(lat, lon, r)| location.is_some_and(|(a, b)| ogeo::distance_m(lat, lon, a, b) <= r));
            let triggered = s.watched.is_empty() || changed.iter().any(|c| s.watched.contains(&c.as_str()));
            if selected && triggered {
                expected[i].push(n);
            }
        }
        broker.upsert(e).map_err(|e| e.to_string())?;
    }
    ensure(broker.wait_idle(Duration::from_secs(10)), || "notifications still queued".into())?;
    let mut total = 0;
    for (i, rx) in receivers.iter().enumerate() {
        let got: Vec<i64> = rx.try_iter().map(|n| n.data[0].number("n").expect("n") as i64).collect();
        ensure(got == expected[i], || format!("subscription {i}: {} delivered, {} expected", got.len(), expected[i].len()))?;
        total += got.len();
    }
    Ok(format!("{total} notifications across 10 subscriptions match the upsert log in count and order"))
}

fn cache_semantics() -> Outcome {
    let t0: Epoch = 1_559_347_200;
    let clock = ManualClock::new(t0);
    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    let truth = signal::DailySine { mean: 0.5, amplitude: 0.3, phase: 0.0 };
    for h in 0..72 {
        parking(&broker, truth.at(t0 + h * HOUR), t0 + h * HOUR);
    }
    let mut now = t0 + 71 * HOUR;
    clock.set(now);
    let est = estimator_over(&broker, &clock, EventLog::new());
    let server = HttpServer::bind("127.0.0.1:0", estimator_handler(Arc::clone(&est)), 2).map_err(|e| e.to_string())?;
    let url = format!("{}/predictions?entityId=urn:ngsi:ParkingSpotGroup:P1&attr=availableSpots", server.base_url());
    let urn = "urn:ngsi:Prediction:urn:ngsi:ParkingSpotGroup:P1:availableSpots";
    let cached = |b: &Broker| b.get_entity(urn).expect("online").and_then(|e| Prediction::from_entity(&e));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut from_cache, mut recomputed, mut fallback) = (0, 0, 0);
    for cycle in 0..200 {
        now += rng.gen_range(0..2 * HOUR);
        clock.set(now);
        if rng.gen_bool(0.65) {
            parking(&broker, truth.at(now), now);
        }
        if rng.gen_bool(0.3) {
            est.cycle();
        }
        let before = cached(&broker);
        let logged = est.events().len();
        let v = http::get(&url).map_err(|e| e.to_string())?.json_body().map_err(|e| e.to_string())?;
        let after = cached(&broker).ok_or("no persisted prediction after serving")?;
        let value = v["predictedValue"].as_f64().ok_or("no predictedValue")?;
        let issued = v["issuedAt"].as_i64().ok_or("no issuedAt")?;
        ensure(value == after.predicted_value && issued == after.issued_at, || format!("cycle {cycle}: served {value}@{issued}, latest persisted {after:?}"))?;
        match v["source"].as_str() {
            Some("cache") => {
                ensure(before.as_ref() == Some(&after), || format!("cycle {cycle}: cache hit changed the persisted entity"))?;
                if now - issued <= HOUR {
                    from_cache += 1;
                } else {
                    let failed = est.events().records()[logged..].iter().any(|r| r.kind == EventKind::Error);
                    ensure(failed, || format!("cycle {cycle}: stale cache served without a failed recomputation"))?;
                    fallback += 1;
                }
            }
            Some("recomputed") => {
                recomputed += 1;
                ensure(issued == now && before.as_ref().map_or(true, |b| b.issued_at < issued), || format!("cycle {cycle}: recomputation not fresher"))?;
            }
            other => return Err(format!("cycle {cycle}: source {other:?}")),
        }
        let records = est.events().records();
        let serve = records.iter().rev().find(|r| r.kind == EventKind::Serve).ok_or("no serve event")?;
        let persist = records.iter().rev().find(|r| r.kind == EventKind::Persist).ok_or("no persist event")?;
        ensure(serve.value == Some(value) && persist.value == Some(value), || format!("cycle {cycle}: event log disagrees with served value"))?;
    }
    let records = est.events().records();
    let serves = records.iter().filter(|r| r.kind == EventKind::Serve).count();
    ensure(serves == 200, || format!("{serves} serve events for 200 requests"))?;
    ensure(broker.query(&atomic_transit_core::broker::EntityQuery::by_type(PREDICTION)).map_err(|e| e.to_string())?.len() == 1, || "more than one cache entity".into())?;
    server.shutdown();
    Ok(format!("200/200 responses equal the latest persisted prediction ({from_cache} cached, {recomputed} recomputed, {fallback} stale after failed recomputation)"))
}
