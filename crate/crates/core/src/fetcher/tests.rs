use super::*;
use crate::broker::Broker;
use crate::clock::ManualClock;
use crate::gtfs::{write_feed, Agency, Route, Service, Stop, StopTime, Trip};
use crate::http::{HttpServer, ZIP};
use tempfile::TempDir;

#[derive(Default)]
struct Recorder {
    calls: Mutex<Vec<(String, String, Vec<u8>)>>,
}

impl Recorder {
    fn versions(&self) -> Vec<String> {
        self.calls.lock().iter().map(|c| c.1.clone()).collect()
    }
}

impl RoutingEnginePlugin for Recorder {
    fn load_feed(&self, feed_id: &str, payload: &FeedPayload) -> Result<(), PluginError> {
        self.calls.lock().push((feed_id.to_string(), payload.version.clone(), payload.bytes.clone()));
        Ok(())
    }
}

fn d(s: &str) -> ServiceDate {
    s.parse().unwrap()
}

fn feed(headsign: &str, until: &str) -> GtfsFeed {
    GtfsFeed {
        agencies: vec![Agency { agency_id: "A".into(), name: "A".into(), url: "u".into(), timezone: "UTC".into() }],
        stops: vec![
            Stop { stop_id: "S1".into(), name: "one".into(), lat: 0.0, lon: 0.0 },
            Stop { stop_id: "S2".into(), name: "two".into(), lat: 0.01, lon: 0.0 },
        ],
        routes: vec![Route { route_id: "R".into(), agency_id: "A".into(), short_name: "R".into(), route_type: 3 }],
        services: vec![Service { service_id: "ALL".into(), weekdays: [true; 7], start_date: d("20190101"), end_date: d(until) }],
        trips: vec![Trip { trip_id: "T".into(), route_id: "R".into(), service_id: "ALL".into(), headsign: headsign.into() }],
        stop_times: vec![
            StopTime { trip_id: "T".into(), stop_id: "S1".into(), stop_sequence: 1, arrival_time: 100, departure_time: 100 },
            StopTime { trip_id: "T".into(), stop_id: "S2".into(), stop_sequence: 2, arrival_time: 200, departure_time: 200 },
        ],
        feed_version: None,
    }
}

struct Env {
    dir: TempDir,
    broker: Arc<Broker>,
    plugin: Arc<Recorder>,
    fetcher: Arc<Fetcher>,
}

fn env() -> Env {
    let plugin = Arc::new(Recorder::default());
    let clock: SharedClock = Arc::new(ManualClock::new(1_560_729_600));
    Env {
        dir: TempDir::new().unwrap(),
        broker: Arc::new(Broker::new()),
        fetcher: Fetcher::new(Arc::clone(&plugin) as Arc<dyn RoutingEnginePlugin>, clock),
        plugin,
    }
}

impl Env {
    fn publish(&self, feed_id: &str, version: &str, feed: &GtfsFeed, from: &str, until: &str) -> FeedPointer {
        let path = self.dir.path().join(format!("{feed_id}.zip"));
        std::fs::write(&path, write_feed(feed).unwrap()).unwrap();
        let pointer = FeedPointer {
            feed_id: feed_id.into(),
            source_url: url::Url::from_file_path(&path).unwrap().to_string(),
            version: version.into(),
            valid_from: d(from),
            valid_until: d(until),
        };
        self.broker.upsert(MobilityEntity::from(pointer.clone()).to_context()).unwrap();
        pointer
    }
}

#[test]
fn resolves_pointers_and_skips_bad_ones() {
    let e = env();
    assert_eq!(resolve_pointers(e.broker.as_ref()).unwrap(), ResolvedPointers::default());
    e.publish("b", "1", &feed("x", "20191231"), "20190101", "20191231");
    e.publish("a", "1", &feed("x", "20191231"), "20190101", "20191231");
    e.publish("bad", "1", &feed("x", "20191231"), "20190601", "20190101");
    let r = resolve_pointers(e.broker.as_ref()).unwrap();
    assert_eq!(r.pointers.iter().map(|p| p.feed_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].entity_id, "urn:ngsi:GtfsFeedPointer:bad");
}

#[test]
fn offline_broker_fails_resolution() {
    let e = env();
    e.broker.set_online(false);
    assert!(matches!(resolve_pointers(e.broker.as_ref()), Err(BrokerError::Unavailable(_))));
}

#[test]
fn valid_feed_loads_once_per_version_with_source_bytes() {
    let e = env();
    let p = e.publish("city", "v1", &feed("x", "20191231"), "20190101", "20191231");
    let s = e.fetcher.fetch_and_load(&p, d("20190617"));
    assert_eq!(s.status, FeedStatus::Fresh);
    assert_eq!(s.last_version.as_deref(), Some("v1"));
    assert_eq!(s.last_loaded_at, Some(1_560_729_600));
    e.fetcher.fetch_and_load(&p, d("20190617"));
    assert_eq!(e.plugin.versions(), vec!["v1"]);
    let source = std::fs::read(e.dir.path().join("city.zip")).unwrap();
    assert_eq!(e.plugin.calls.lock()[0].2, source);
    assert_eq!(read_feed(&e.plugin.calls.lock()[0].2).unwrap(), feed("x", "20191231").canonicalized());
}

#[test]
fn expired_pointer_never_reaches_plugin() {
    let e = env();
    let p = e.publish("city", "v1", &feed("x", "20191231"), "20180101", "20190101");
    let s = e.fetcher.fetch_and_load(&p, d("20190201"));
    assert_eq!(s.status, FeedStatus::Expired);
    assert_eq!(s.last_version, None);
    assert!(e.plugin.versions().is_empty());
}

#[test]
fn calendar_must_also_cover_today() {
    let e = env();
    let p = e.publish("city", "v1", &feed("x", "20190301"), "20190101", "20191231");
    assert_eq!(e.fetcher.fetch_and_load(&p, d("20190617")).status, FeedStatus::Expired);
    assert!(e.plugin.versions().is_empty());
}

#[test]
fn fetch_failure_keeps_previous_version() {
    let e = env();
    let p = e.publish("city", "v1", &feed("x", "20191231"), "20190101", "20191231");
    e.fetcher.fetch_and_load(&p, d("20190617"));
    let mut broken = p.clone();
    broken.version = "v2".into();
    std::fs::write(e.dir.path().join("city.zip"), b"not a zip").unwrap();
    let s = e.fetcher.fetch_and_load(&broken, d("20190617"));
    assert_eq!(s.status, FeedStatus::FetchFailed);
    assert_eq!(s.last_version.as_deref(), Some("v1"));
    assert!(s.detail.is_some());
    let mut missing = p.clone();
    missing.version = "v3".into();
    missing.source_url = "file:///nonexistent/feed.zip".into();
    assert_eq!(e.fetcher.fetch_and_load(&missing, d("20190617")).status, FeedStatus::FetchFailed);
    missing.source_url = "ftp://host/feed.zip".into();
    assert_eq!(e.fetcher.fetch_and_load(&missing, d("20190617")).status, FeedStatus::FetchFailed);
    assert_eq!(e.plugin.versions(), vec!["v1"]);
}

#[test]
fn http_sources_are_fetched() {
    let e = env();
    let zip = write_feed(&feed("x", "20191231")).unwrap();
    let body = zip.clone();
    let server = HttpServer::bind("127.0.0.1:0", Arc::new(move |_req: Request| Response::bytes(200, ZIP, body.clone())), 1).unwrap();
    let p = FeedPointer {
        feed_id: "web".into(),
        source_url: format!("{}/feed.zip", server.base_url()),
        version: "w1".into(),
        valid_from: d("20190101"),
        valid_until: d("20191231"),
    };
    assert_eq!(e.fetcher.fetch_and_load(&p, d("20190617")).status, FeedStatus::Fresh);
    assert_eq!(e.plugin.calls.lock()[0].2, zip);
}

#[test]
fn orchestrator_follows_version_changes_and_stops() {
    let e = env();
    e.publish("city", "v1", &feed("x", "20191231"), "20190101", "20191231");
    let config = FetcherConfig { poll_interval_seconds: 1, today_override: Some(d("20190617")) };
    let clock: SharedClock = Arc::new(ManualClock::new(0));
    let handle = run_orchestrator(
        Arc::clone(&e.broker) as SharedBroker,
        Arc::clone(&e.plugin) as Arc<dyn RoutingEnginePlugin>,
        config,
        clock,
    )
    .unwrap();
    assert_eq!(e.plugin.versions(), vec!["v1"]);
    e.publish("city", "v2", &feed("changed", "20191231"), "20190101", "20191231");
    let deadline = Instant::now() + Duration::from_secs(5);
    while handle.polls() < 3 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(e.plugin.versions(), vec!["v1", "v2"]);
    e.broker.set_online(false);
    let polls = handle.polls();
    std::thread::sleep(Duration::from_millis(1300));
    assert_eq!(handle.polls(), polls);
    assert_eq!(handle.states()[0].last_version.as_deref(), Some("v2"));
    e.broker.set_online(true);
    handle.stop();
    e.publish("city", "v3", &feed("again", "20191231"), "20190101", "20191231");
    std::thread::sleep(Duration::from_millis(1200));
    assert_eq!(e.plugin.versions(), vec!["v1", "v2"]);
}

#[test]
fn orchestrator_startup_needs_broker_and_sane_config() {
    let e = env();
    let clock: SharedClock = Arc::new(ManualClock::new(0));
    let plugin = Arc::clone(&e.plugin) as Arc<dyn RoutingEnginePlugin>;
    let bad = FetcherConfig { poll_interval_seconds: 0, today_override: None };
    assert!(matches!(
        run_orchestrator(Arc::clone(&e.broker) as SharedBroker, Arc::clone(&plugin), bad, Arc::clone(&clock)),
        Err(FetcherError::BadConfig(_))
    ));
    e.broker.set_online(false);
    assert!(matches!(
        run_orchestrator(Arc::clone(&e.broker) as SharedBroker, plugin, FetcherConfig::default(), clock),
        Err(FetcherError::BrokerUnavailable(_))
    ));
}

#[test]
fn http_plugin_speaks_the_wire_protocol() {
    let seen: Arc<Mutex<Vec<(String, Option<String>, usize)>>> = Arc::default();
    let log = Arc::clone(&seen);
    let server = HttpServer::bind(
        "127.0.0.1:0",
        Arc::new(move |req: Request| {
            log.lock().push((req.path.clone(), req.header("X-Feed-Version").map(str::to_string), req.body.len()));
            Response::empty(200)
        }),
        1,
    )
    .unwrap();
    let plugin = HttpPlugin::new(&server.base_url());
    let f = feed("x", "20191231");
    let bytes = write_feed(&f).unwrap();
    plugin.load_feed("my city", &FeedPayload { version: "v9".into(), bytes: bytes.clone(), feed: f }).unwrap();
    plugin.apply_realtime(&crate::realtime::RtFeedMessage::empty(5)).unwrap();
    let seen = seen.lock();
    assert_eq!(seen[0], ("/plugin/feeds/my+city".to_string(), Some("v9".to_string()), bytes.len()));
    assert_eq!(seen[1].0, "/plugin/realtime");
}
