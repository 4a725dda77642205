use super::*;
use crate::broker::{Broker, EntityQuery, NotificationSink, NotifyTarget, Subscription};
use crate::clock::{Clock, ManualClock};
use crate::http::{self, HttpServer};
use crate::model::{MobilityEntity, ParkingSpotGroup, TrafficFlowObserved};
use crate::GeoPoint;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::atomic::AtomicUsize;

const T0: Epoch = 1_560_729_600;
const HOUR: i64 = 3600;
const PARK: &str = "urn:ngsi:ParkingSpotGroup:P1";
const ROAD: &str = "urn:ngsi:TrafficFlowObserved:R1";

fn series(values: &[f64]) -> TimeSeries {
    TimeSeries {
        entity_id: PARK.into(),
        attr_name: "availableSpots".into(),
        samples: values.iter().enumerate().map(|(i, v)| (T0 + i as i64 * HOUR, *v)).collect(),
        step_seconds: HOUR,
    }
}

fn sinusoid(t: Epoch) -> f64 {
    0.5 + 0.4 * (2.0 * PI * (t - T0) as f64 / 86_400.0).sin()
}

fn park(broker: &Broker, available: u32, at: Epoch) {
    let g = ParkingSpotGroup { group_id: "P1".into(), location: GeoPoint { lat: 45.0, lon: 7.0 }, total_spots: 100, available_spots: available, observed_at: at };
    broker.upsert(MobilityEntity::from(g).to_context()).unwrap();
}

fn road(broker: &Broker, intensity: f64, at: Epoch) {
    let f = TrafficFlowObserved { segment_id: "R1".into(), location: GeoPoint { lat: 45.0, lon: 7.0 }, intensity, observed_at: at };
    broker.upsert(MobilityEntity::from(f).to_context()).unwrap();
}

struct Env {
    clock: ManualClock,
    broker: Arc<Broker>,
    estimator: Arc<Estimator>,
}

/// Three days of hourly parking history ending at `T0 + 71h`.
fn env() -> Env {
    let clock = ManualClock::new(T0);
    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    for h in 0..72 {
        park(&broker, (50.0 + 40.0 * (2.0 * PI * h as f64 / 24.0).sin()).round() as u32, T0 + h * HOUR);
    }
    clock.set(T0 + 71 * HOUR);
    let config = EstimatorConfig { targets: vec![Target::new(PARK, "availableSpots", TargetKind::Parking)], ..EstimatorConfig::default() };
    let estimator = Estimator::new(
        Arc::clone(&broker) as SharedBroker,
        Arc::new(clock.clone()),
        config,
        Arc::new(SeasonalRidge::default()),
        Arc::new(EventLog::new()),
    )
    .unwrap();
    Env { clock, broker, estimator }
}

#[test]
fn regularize_fills_short_gaps_and_splits_long_ones() {
    let hourly: Vec<(Epoch, f64)> = (0..48).map(|h| (T0 + h * HOUR, h as f64)).collect();
    assert_eq!(regularize(&hourly, HOUR).0.len(), 48);
    let mut holed = hourly.clone();
    holed.remove(20);
    let (filled, report) = regularize(&holed, HOUR);
    assert_eq!(filled.len(), 48);
    assert_eq!(filled[20], (T0 + 20 * HOUR, 19.0));
    assert!(report.is_empty());
    let mut long: Vec<(Epoch, f64)> = hourly.clone();
    long.drain(10..14);
    let (kept, report) = regularize(&long, HOUR);
    assert_eq!(kept.first().unwrap().0, T0 + 14 * HOUR);
    assert_eq!(kept.len(), 34);
    assert_eq!(report.gaps, vec![Gap { after: T0 + 9 * HOUR, before: T0 + 14 * HOUR, missing_steps: 4 }]);
    assert_eq!(report.dropped_samples, 10);
    let jittered = [(T0 + 10, 1.0), (T0 + 20, 2.0), (T0 + HOUR + 5, 3.0)];
    assert_eq!(regularize(&jittered, HOUR).0, vec![(T0, 2.0), (T0 + HOUR, 3.0)]);
}

#[test]
fn harvest_reads_window_and_normalizes_parking() {
    let e = env();
    let t = Target::new(PARK, "availableSpots", TargetKind::Parking);
    let h = harvest(e.broker.as_ref(), &t, 48 * HOUR - 1, HOUR, 48, e.clock.now()).unwrap();
    assert_eq!(h.series.len(), 48);
    assert!(h.series.values().all(|v| (0.0..=1.0).contains(&v)));
    assert_eq!(h.series.samples[0], (T0 + 24 * HOUR, 0.5));
    let err = harvest(e.broker.as_ref(), &t, 5 * HOUR - 1, HOUR, 48, e.clock.now()).unwrap_err();
    assert_eq!(err, EstimatorError::InsufficientData { have: 5, need: 48 });
    let missing = Target::new("urn:ngsi:ParkingSpotGroup:nope", "availableSpots", TargetKind::Parking);
    assert_eq!(harvest(e.broker.as_ref(), &missing, HOUR, HOUR, 1, e.clock.now()).unwrap_err(), EstimatorError::UnknownEntity(missing.entity_id.clone()));
}

#[test]
fn constant_series_is_a_fixed_point() {
    let p = fit_predict(&SeasonalRidge::default(), &series(&[0.5; 72]), 5 * HOUR, TargetKind::Parking, 0).unwrap();
    assert!((p.predicted_value - 0.5).abs() < 1e-9, "{}", p.predicted_value);
}

#[test]
fn daily_sinusoid_is_tracked() {
    let values: Vec<f64> = (0..14 * 24).map(|h| sinusoid(T0 + h * HOUR)).collect();
    let s = series(&values);
    let p = fit_predict(&SeasonalRidge::default(), &s, HOUR, TargetKind::Parking, 0).unwrap();
    let truth = sinusoid(s.last_epoch().unwrap() + HOUR);
    assert!((p.predicted_value - truth).abs() <= 0.05, "{} vs {truth}", p.predicted_value);
}

#[test]
fn parking_trend_is_clamped_to_one() {
    let values: Vec<f64> = (0..72).map(|h| 0.2 + 0.02 * h as f64).collect();
    let p = fit_predict(&SeasonalRidge::default(), &series(&values), 3 * HOUR, TargetKind::Parking, 0).unwrap();
    assert_eq!(p.predicted_value, 1.0);
}

#[test]
fn short_series_and_bad_horizons_are_rejected() {
    let model = SeasonalRidge::default();
    assert_eq!(model.fit(&series(&[0.1; 47])).err(), Some(EstimatorError::InsufficientData { have: 47, need: 48 }));
    let fitted = model.fit(&series(&[0.1; 48])).unwrap();
    assert!(matches!(fitted.predict(1800, TargetKind::Traffic), Err(EstimatorError::BadHorizon { .. })));
    assert!(matches!(fitted.predict(0, TargetKind::Traffic), Err(EstimatorError::BadHorizon { .. })));
}

#[test]
fn targets_parse_from_the_right() {
    let t: Target = "urn:ngsi:ParkingSpotGroup:P1:availableSpots:parking".parse().unwrap();
    assert_eq!(t, Target::new(PARK, "availableSpots", TargetKind::Parking));
    assert!("P1:availableSpots:bikes".parse::<Target>().is_err());
    assert!("availableSpots:parking".parse::<Target>().is_err());
}

#[test]
fn persisting_upserts_one_cache_entity_and_notifies() {
    let e = env();
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    e.broker
        .subscribe(Subscription::new(PREDICTION, NotifyTarget::Sink(NotificationSink::new(move |_| {
            h.fetch_add(1, Ordering::SeqCst);
        }))))
        .unwrap();
    let first = e.estimator.refresh(&e.estimator.config().targets[0]).unwrap();
    e.clock.advance(HOUR);
    park(&e.broker, 10, e.clock.now());
    let second = e.estimator.refresh(&e.estimator.config().targets[0]).unwrap();
    let cached = e.broker.query(&EntityQuery::by_type(PREDICTION)).unwrap();
    assert_eq!(cached.len(), 1);
    assert_eq!(cached[0].id, "urn:ngsi:Prediction:urn:ngsi:ParkingSpotGroup:P1:availableSpots");
    assert_eq!(Prediction::from_entity(&cached[0]).unwrap(), second);
    assert_ne!(first.issued_at, second.issued_at);
    assert!(e.broker.wait_idle(Duration::from_secs(5)));
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn serving_uses_cache_until_stale() {
    let e = env();
    let target = e.estimator.config().targets[0].clone();
    let persisted = e.estimator.refresh(&target).unwrap();
    let served = e.estimator.serve(PARK, "availableSpots").unwrap();
    assert_eq!((served.prediction.clone(), served.source), (persisted.clone(), ServeSource::Cache));
    let predicts = e.events().count(EventKind::Predict);
    e.clock.advance(2 * HOUR);
    let fresh = e.estimator.serve(PARK, "availableSpots").unwrap();
    assert_eq!(fresh.source, ServeSource::Recomputed);
    assert_eq!(fresh.prediction.issued_at, e.clock.now());
    assert_eq!(e.events().count(EventKind::Predict), predicts + 1);
    assert_eq!(e.estimator.history_of(PARK).unwrap().len(), 2);
    assert_eq!(e.estimator.serve("urn:ngsi:ParkingSpotGroup:P9", "availableSpots"), Err(ServeError::UnknownTarget("urn:ngsi:ParkingSpotGroup:P9:availableSpots".into())));
}

impl Env {
    fn events(&self) -> &EventLog {
        self.estimator.events()
    }
}

#[test]
fn broker_down_with_empty_cache_is_unavailable() {
    let e = env();
    e.broker.set_online(false);
    assert!(matches!(e.estimator.serve(PARK, "availableSpots"), Err(ServeError::Unavailable(_))));
    e.broker.set_online(true);
    let p = e.estimator.refresh(&e.estimator.config().targets[0]).unwrap();
    e.broker.set_online(false);
    e.clock.advance(5 * HOUR);
    let served = e.estimator.serve(PARK, "availableSpots").unwrap();
    assert_eq!(served.prediction, p);
}

#[test]
fn every_operation_logs_exactly_one_event() {
    let e = env();
    for _ in 0..3 {
        e.estimator.cycle();
        e.estimator.serve(PARK, "availableSpots").unwrap();
        e.clock.advance(HOUR);
    }
    let ev = e.events();
    assert_eq!(ev.count(EventKind::Harvest), 3);
    assert_eq!(ev.count(EventKind::Fit), 3);
    assert_eq!(ev.count(EventKind::Predict), 3);
    assert_eq!(ev.count(EventKind::Persist), 3);
    assert_eq!(ev.count(EventKind::Serve), 3);
    assert_eq!(ev.count(EventKind::Error), 0);
    let records = ev.records();
    for c in [Component::Harvester, Component::Engine, Component::Cache, Component::Api] {
        let epochs: Vec<Epoch> = records.iter().filter(|r| r.component == c).map(|r| r.epoch).collect();
        assert!(epochs.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn event_log_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let log = EventLog::with_file(&path).unwrap();
    log.append(EventRecord { epoch: 5, component: Component::Api, kind: EventKind::Serve, detail: "cache".into(), target: None, value: Some(0.25) });
    log.append(EventRecord { epoch: 3, component: Component::Api, kind: EventKind::Error, detail: "x".into(), target: Some("t".into()), value: None });
    let replayed = EventLog::replay(&path).unwrap();
    assert_eq!(replayed, log.records());
    assert_eq!(replayed[1].epoch, 5);
}

#[test]
fn traffic_target_and_rest_api() {
    let clock = ManualClock::new(T0);
    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    for h in 0..72 {
        road(&broker, 100.0 + (h % 24) as f64 * 10.0, T0 + h * HOUR);
    }
    clock.set(T0 + 71 * HOUR);
    let config = EstimatorConfig { targets: vec![Target::new(ROAD, "intensity", TargetKind::Traffic)], ..EstimatorConfig::default() };
    let est = Estimator::new(Arc::clone(&broker) as SharedBroker, Arc::new(clock.clone()), config, Arc::new(SeasonalRidge::default()), Arc::new(EventLog::new())).unwrap();
    let p = est.cycle().remove(0).unwrap();
    assert!((p.predicted_value - 100.0).abs() < 1.0, "{}", p.predicted_value);
    let server = HttpServer::bind("127.0.0.1:0", estimator_handler(Arc::clone(&est)), 2).unwrap();
    let base = server.base_url();
    let v = http::get(&format!("{base}/predictions?entityId={ROAD}&attr=intensity")).unwrap().json_body().unwrap();
    assert_eq!(v["predictedValue"].as_f64().unwrap(), p.predicted_value);
    assert_eq!(v["source"], "cache");
    let hist = http::get(&format!("{base}/predictions/{}/history", ROAD.replace(':', "%3A"))).unwrap().json_body().unwrap();
    assert_eq!(hist.as_array().unwrap().len(), 1);
    assert!(matches!(http::get(&format!("{base}/predictions?entityId=nope&attr=x")), Err(http::ClientError::Status { status: 404, .. })));
    assert!(matches!(http::get(&format!("{base}/predictions/nope/history")), Err(http::ClientError::Status { status: 404, .. })));
    broker.set_online(false);
    let cfg = EstimatorConfig { targets: vec![Target::new(ROAD, "intensity", TargetKind::Traffic)], ..EstimatorConfig::default() };
    let cold = Estimator::new(Arc::clone(&broker) as SharedBroker, Arc::new(clock.clone()), cfg, Arc::new(SeasonalRidge::default()), Arc::new(EventLog::new())).unwrap();
    let cold_server = HttpServer::bind("127.0.0.1:0", estimator_handler(cold), 1).unwrap();
    assert!(matches!(
        http::get(&format!("{}/predictions?entityId={ROAD}&attr=intensity", cold_server.base_url())),
        Err(http::ClientError::Status { status: 503, .. })
    ));
}

#[test]
fn fits_are_bit_identical() {
    let values: Vec<f64> = (0..14 * 24).map(|h| sinusoid(T0 + h * HOUR) + ((h * 7919) % 13) as f64 * 1e-3).collect();
    let a = fit_predict(&SeasonalRidge::default(), &series(&values), HOUR, TargetKind::Parking, 0).unwrap();
    let b = fit_predict(&SeasonalRidge::default(), &series(&values), HOUR, TargetKind::Parking, 0).unwrap();
    assert_eq!(a.predicted_value.to_bits(), b.predicted_value.to_bits());
}

proptest! {
    #[test]
    fn predictions_stay_in_range(values in prop::collection::vec(-5.0f64..5.0, 48..120), steps in 1i64..6) {
        let s = series(&values);
        let model = SeasonalRidge::default();
        let fitted = model.fit(&s).unwrap();
        let parking = fitted.predict(steps * HOUR, TargetKind::Parking).unwrap();
        prop_assert!((0.0..=1.0).contains(&parking));
        let traffic = fitted.predict(steps * HOUR, TargetKind::Traffic).unwrap();
        prop_assert!(traffic >= 0.0 && traffic.is_finite());
    }

    #[test]
    fn regularized_series_is_evenly_spaced(offsets in prop::collection::btree_set(0i64..400_000, 1..200)) {
        let raw: Vec<(Epoch, f64)> = offsets.iter().map(|o| (T0 + o, *o as f64)).collect();
        let (out, report) = regularize(&raw, HOUR);
        prop_assert!(!out.is_empty());
        prop_assert!(out.windows(2).all(|w| w[1].0 - w[0].0 == HOUR));
        prop_assert!(report.gaps.iter().all(|g| g.missing_steps > MAX_FILL_STEPS));
    }
}
