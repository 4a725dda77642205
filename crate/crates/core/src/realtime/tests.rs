use super::*;
use crate::broker::{Broker, ContextBroker, ContextEntity, Notification, SharedBroker};
use crate::clock::{ManualClock, SharedClock};
use crate::gtfs::{Agency, GtfsFeed, Route, Service, ServiceDate, Stop, StopTime, Trip};
use crate::http::{self, HttpServer};
use crate::model::{ArrivalEstimation, MobilityEntity, VehiclePosition};
use crate::GeoPoint;
use std::sync::Arc;
use std::time::Duration;

const DAY: &str = "20190617";

fn date() -> ServiceDate {
    DAY.parse().unwrap()
}

fn feed() -> GtfsFeed {
    GtfsFeed {
        agencies: vec![Agency { agency_id: "A".into(), name: "A".into(), url: "u".into(), timezone: "UTC".into() }],
        stops: vec![
            Stop { stop_id: "S1".into(), name: "one".into(), lat: 0.0, lon: 0.0 },
            Stop { stop_id: "S2".into(), name: "two".into(), lat: 0.01, lon: 0.0 },
        ],
        routes: vec![Route { route_id: "R1".into(), agency_id: "A".into(), short_name: "1".into(), route_type: 3 }],
        services: vec![
            Service { service_id: "ALL".into(), weekdays: [true; 7], start_date: "20190101".parse().unwrap(), end_date: "20191231".parse().unwrap() },
            Service { service_id: "SUN".into(), weekdays: [false, false, false, false, false, false, true], start_date: "20190101".parse().unwrap(), end_date: "20191231".parse().unwrap() },
        ],
        trips: vec![
            Trip { trip_id: "T1".into(), route_id: "R1".into(), service_id: "ALL".into(), headsign: "two".into() },
            Trip { trip_id: "T9".into(), route_id: "R1".into(), service_id: "SUN".into(), headsign: "two".into() },
        ],
        stop_times: vec![
            StopTime { trip_id: "T1".into(), stop_id: "S1".into(), stop_sequence: 1, arrival_time: 8 * 3600, departure_time: 8 * 3600 },
            StopTime { trip_id: "T1".into(), stop_id: "S2".into(), stop_sequence: 2, arrival_time: 9 * 3600, departure_time: 9 * 3600 },
            StopTime { trip_id: "T9".into(), stop_id: "S1".into(), stop_sequence: 1, arrival_time: 8 * 3600, departure_time: 8 * 3600 },
        ],
        feed_version: None,
    }
}

fn nine_oclock() -> i64 {
    date().midnight_epoch() + 9 * 3600
}

fn translator(clock: &ManualClock, config: BridgeConfig) -> Arc<Translator> {
    let schedule = Arc::new(ScheduleIndex::build(&feed(), date()).unwrap());
    Translator::new(schedule, config, Arc::new(clock.clone()) as SharedClock)
}

fn arrival(trip: &str, stop: &str, est: i64, observed: i64) -> ContextEntity {
    MobilityEntity::from(ArrivalEstimation { trip_id: trip.into(), stop_id: stop.into(), estimated_arrival: est, observed_at: observed })
        .to_context()
}

fn notify(t: &Translator, e: ContextEntity) {
    t.on_notification(&Notification { subscription_id: "s".into(), emitted_at: 0, data: vec![e] });
}

fn delays(t: &Translator) -> Vec<(String, String, i32)> {
    let msg = RtFeedMessage::decode(&t.snapshot().trip_updates_pb).unwrap();
    msg.trip_updates()
        .flat_map(|tu| tu.stop_time_updates.iter().map(move |u| (tu.trip_id.clone(), u.stop_id.clone().unwrap(), u.arrival_delay)))
        .collect()
}

#[test]
fn schedule_uses_running_trips_only() {
    let idx = ScheduleIndex::build(&feed(), date()).unwrap();
    assert_eq!(idx.lookup("T1", "S2"), Some(ScheduledStop { arrival: nine_oclock(), stop_sequence: 2 }));
    assert_eq!(idx.lookup("T9", "S1"), None, "Sunday-only trip on a Monday");
    assert_eq!(idx.route_of("T1"), Some("R1"));
    assert!(matches!(ScheduleIndex::build(&feed(), "20200101".parse().unwrap()), Err(ScheduleError::NotValidOnDate(_))));
}

#[test]
fn delay_is_estimate_minus_schedule_and_upserts() {
    let clock = ManualClock::new(nine_oclock() - 600);
    let t = translator(&clock, BridgeConfig::default());
    notify(&t, arrival("T1", "S2", nine_oclock() + 300, nine_oclock() - 600));
    assert_eq!(delays(&t), vec![("T1".into(), "S2".into(), 300)]);
    notify(&t, arrival("T1", "S2", nine_oclock() + 120, nine_oclock() - 550));
    assert_eq!(delays(&t), vec![("T1".into(), "S2".into(), 120)]);
    let m = t.metrics();
    assert_eq!((m.notifications_applied, m.skipped), (2, 0));
}

#[test]
fn unknown_trip_is_skipped() {
    let clock = ManualClock::new(nine_oclock());
    let t = translator(&clock, BridgeConfig::default());
    notify(&t, arrival("T1", "S1", nine_oclock() - 3600 + 60, nine_oclock()));
    let before = delays(&t);
    notify(&t, arrival("NOPE", "S1", nine_oclock(), nine_oclock()));
    notify(&t, ContextEntity::new("urn:ngsi:ArrivalEstimation:x", "ArrivalEstimation").with("tripRef", 3.0));
    assert_eq!(delays(&t), before);
    assert_eq!(t.metrics().skipped, 2);
    assert_eq!(t.metrics().notifications_applied, 3);
}

#[test]
fn vehicles_are_keyed_by_id() {
    let clock = ManualClock::new(nine_oclock());
    let t = translator(&clock, BridgeConfig::default());
    for (lat, at) in [(43.0, 10), (43.5, 20)] {
        let v = VehiclePosition { vehicle_id: "V1".into(), trip_id: Some("T1".into()), location: GeoPoint { lat, lon: -3.8 }, bearing: Some(90.0), observed_at: nine_oclock() + at };
        notify(&t, MobilityEntity::from(v).to_context());
    }
    let msg = RtFeedMessage::decode(&t.snapshot().vehicle_positions_pb).unwrap();
    let vs: Vec<_> = msg.vehicles().collect();
    assert_eq!(vs.len(), 1);
    assert_eq!(vs[0].latitude, 43.5);
    assert_eq!(vs[0].timestamp, Some(nine_oclock() as u64 + 20));
}

#[test]
fn stale_entries_are_evicted() {
    let clock = ManualClock::new(nine_oclock());
    let t = translator(&clock, BridgeConfig { horizon_seconds: 100, spool_dir: None });
    notify(&t, arrival("T1", "S2", nine_oclock() + 60, nine_oclock()));
    clock.advance(201);
    notify(&t, arrival("T1", "S1", nine_oclock() - 3600, nine_oclock() + 201));
    assert_eq!(delays(&t), vec![("T1".into(), "S1".into(), 0)]);
}

#[test]
fn spool_dir_receives_feeds() {
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(nine_oclock());
    let t = translator(&clock, BridgeConfig { horizon_seconds: 7200, spool_dir: Some(dir.path().to_path_buf()) });
    notify(&t, arrival("T1", "S2", nine_oclock() + 5, nine_oclock()));
    assert_eq!(std::fs::read(dir.path().join("trip-updates.pb")).unwrap(), t.snapshot().trip_updates_pb);
    assert!(dir.path().join("vehicle-positions.pb").exists());
}

#[test]
fn bridge_subscribes_and_follows_broker() {
    let clock = ManualClock::new(nine_oclock());
    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    let shared: SharedBroker = broker.clone();
    let t = translator(&clock, BridgeConfig::default());
    let handle = start_bridge(shared.clone(), Arc::clone(&t), Delivery::InProcess).unwrap();
    assert_eq!(broker.subscriptions().unwrap().len(), 2);
    let empty = RtFeedMessage::decode(&t.snapshot().trip_updates_pb).unwrap();
    assert!(empty.entities.is_empty());
    assert_eq!(empty.header.gtfs_realtime_version, "2.0");

    broker.upsert(arrival("T1", "S2", nine_oclock() + 300, nine_oclock())).unwrap();
    assert!(broker.wait_idle(Duration::from_secs(5)));
    assert_eq!(delays(&t), vec![("T1".into(), "S2".into(), 300)]);
    handle.stop();
    assert!(broker.subscriptions().unwrap().is_empty());
}

#[test]
fn offline_broker_leaves_no_subscription() {
    let broker = Arc::new(Broker::new());
    broker.set_online(false);
    let t = translator(&ManualClock::new(0), BridgeConfig::default());
    let err = start_bridge(broker.clone(), t, Delivery::InProcess).err().unwrap();
    assert!(matches!(err, BridgeError::BrokerUnavailable(_)));
    broker.set_online(true);
    assert!(broker.subscriptions().unwrap().is_empty());
}

#[test]
fn rest_endpoints_and_http_delivery() {
    let clock = ManualClock::new(nine_oclock());
    let t = translator(&clock, BridgeConfig::default());
    let server = HttpServer::bind("127.0.0.1:0", bridge_handler(Arc::clone(&t)), 2).unwrap();
    let base = server.base_url();

    let broker = Arc::new(Broker::with_clock(Arc::new(clock.clone())));
    let _handle = start_bridge(broker.clone(), Arc::clone(&t), Delivery::Http(format!("{base}/notify"))).unwrap();
    broker.upsert(arrival("T1", "S2", nine_oclock() + 42, nine_oclock())).unwrap();
    assert!(broker.wait_idle(Duration::from_secs(5)));

    let resp = http::get(&format!("{base}/gtfs-rt/trip-updates")).unwrap();
    assert_eq!(resp.content_type, http::PROTOBUF);
    let msg = RtFeedMessage::decode(&resp.body).unwrap();
    assert_eq!(msg.trip_updates().next().unwrap().stop_time_updates[0].arrival_delay, 42);

    let metrics = http::get(&format!("{base}/metrics")).unwrap().json_body().unwrap();
    assert_eq!(metrics["notificationsApplied"], 1);
    assert_eq!(metrics["lastRebuildEpoch"], nine_oclock());
    let debug = http::get(&format!("{base}/gtfs-rt/debug")).unwrap().json_body().unwrap();
    assert_eq!(debug["tripUpdates"]["entities"][0]["id"], "T1");
    assert!(http::get(&format!("{base}/gtfs-rt/vehicle-positions")).is_ok());
    assert!(matches!(http::post_json(&format!("{base}/notify"), &serde_json::json!({})), Err(http::ClientError::Status { status: 400, .. })));
}
