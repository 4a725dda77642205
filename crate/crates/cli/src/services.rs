use crate::{BridgeArgs, BrokerArgs, ComposeArgs, EstimatorArgs, ExportArgs, FetcherArgs, RouterArgs};
use atomic_transit_core::broker::{serve_broker, Broker, HttpBroker, SharedBroker};
use atomic_transit_core::clock::SharedClock;
use atomic_transit_core::compose::{Pipeline, PipelineConfig};
use atomic_transit_core::estimator::{estimator_handler, Estimator, EstimatorConfig, EstimatorLoop, EventLog, SeasonalRidge, Target};
use atomic_transit_core::fetcher::{fetcher_handler, run_orchestrator, FetcherConfig, HttpPlugin};
use atomic_transit_core::gtfs::{read_feed, ServiceDate};
use atomic_transit_core::http::HttpServer;
use atomic_transit_core::ngsi2gtfs::{feed_version, register_pointer, run_export};
use atomic_transit_core::realtime::{bridge_handler, start_bridge, BridgeConfig, Delivery, ScheduleIndex, Translator};
use atomic_transit_core::router::{router_handler, RealtimePoller, TransitRouter};
use std::sync::Arc;
use std::time::Duration;

const WORKERS: usize = 4;

fn fail(context: &str, e: impl std::fmt::Display, code: i32) -> i32 {
    eprintln!("error: {context}: {e}");
    code
}

fn wait_for_interrupt() {
    let (tx, rx) = std::sync::mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        log::warn!("cannot install signal handler: {e}");
    }
    let _ = rx.recv();
    log::info!("shutting down");
}

fn serve(addr: &str, handler: Arc<dyn atomic_transit_core::http::Handler>, what: &str) -> Result<HttpServer, i32> {
    let server = HttpServer::bind(addr, handler, WORKERS).map_err(|e| fail(&format!("{what} cannot listen on {addr}"), e, 1))?;
    log::info!("{what} listening on {}", server.base_url());
    Ok(server)
}

pub fn broker(a: BrokerArgs, clock: SharedClock) -> i32 {
    let broker = match &a.journal {
        Some(path) => match Broker::with_journal(path, clock) {
            Ok(b) => b,
            Err(e) => return fail("journal", e, 1),
        },
        None => Broker::with_clock(clock),
    };
    let server = match serve_broker(Arc::new(broker), &a.listen) {
        Ok(s) => s,
        Err(e) => return fail(&format!("cannot listen on {}", a.listen), e, 1),
    };
    log::info!("broker listening on {}", server.base_url());
    wait_for_interrupt();
    server.shutdown();
    0
}

pub fn export(a: ExportArgs) -> i32 {
    let broker = HttpBroker::new(&a.broker);
    let summary = match run_export(&broker, &a.out) {
        Ok(s) => s,
        Err(e) => return fail("export", &e, e.exit_code()),
    };
    for s in &summary.skipped {
        eprintln!("skipped {}: {}", s.entity_id, s.reason);
    }
    let c = summary.row_counts;
    println!(
        "wrote {} (version {}): {} agencies, {} stops, {} routes, {} trips, {} stop times, {} services; {} skipped",
        summary.output.display(),
        summary.feed_version,
        c.agencies,
        c.stops,
        c.routes,
        c.trips,
        c.stop_times,
        c.services,
        summary.skip_count
    );
    if let Some(feed_id) = &a.register {
        match register_pointer(&broker, feed_id, &summary) {
            Ok(p) => println!("registered pointer {} -> {} ({}..{})", p.feed_id, p.source_url, p.valid_from, p.valid_until),
            Err(e) => return fail("register", &e, e.exit_code()),
        }
    }
    0
}

pub fn fetcher(a: FetcherArgs, clock: SharedClock) -> i32 {
    let broker: SharedBroker = Arc::new(HttpBroker::new(&a.broker));
    let plugin = Arc::new(HttpPlugin::new(&a.plugin_endpoint));
    let config = FetcherConfig { poll_interval_seconds: a.poll_seconds, today_override: a.today };
    let handle = match run_orchestrator(broker, plugin, config, clock) {
        Ok(h) => h,
        Err(e) => return fail("gtfs-fetcher", e, 1),
    };
    for s in handle.states() {
        log::info!("feed {}: {:?} version {:?}", s.feed_id, s.status, s.last_version);
    }
    let server = match &a.listen {
        Some(addr) => match serve(addr, fetcher_handler(Arc::clone(handle.fetcher())), "gtfs-fetcher") {
            Ok(s) => Some(s),
            Err(code) => return code,
        },
        None => None,
    };
    wait_for_interrupt();
    handle.stop();
    drop(server);
    0
}

pub fn bridge(a: BridgeArgs, clock: SharedClock) -> i32 {
    let bytes = match std::fs::read(&a.feed) {
        Ok(b) => b,
        Err(e) => return fail(&a.feed.display().to_string(), e, 1),
    };
    let schedule = match ScheduleIndex::from_zip(&bytes, a.date) {
        Ok(s) => s,
        Err(e) => return fail("schedule", e, 1),
    };
    let config = BridgeConfig { horizon_seconds: a.horizon_seconds, spool_dir: a.spool_dir };
    let translator = Translator::new(Arc::new(schedule), config, clock);
    let server = match serve(&a.listen, bridge_handler(Arc::clone(&translator)), "gtfs-rt-bridge") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let broker: SharedBroker = Arc::new(HttpBroker::new(&a.broker));
    let notify = format!("{}/notify", server.base_url());
    let handle = match start_bridge(broker, translator, Delivery::Http(notify)) {
        Ok(h) => h,
        Err(e) => return fail("gtfs-rt-bridge", e, 1),
    };
    log::info!("subscribed as {:?}", handle.subscription_ids());
    wait_for_interrupt();
    handle.stop();
    server.shutdown();
    0
}

pub fn estimator(a: EstimatorArgs, clock: SharedClock) -> i32 {
    let targets = match a.targets.iter().map(|t| t.parse::<Target>()).collect::<Result<Vec<_>, _>>() {
        Ok(t) => t,
        Err(e) => return fail("target", e, 2),
    };
    let log = match &a.log {
        Some(path) => match EventLog::with_file(path) {
            Ok(l) => l,
            Err(e) => return fail(&path.display().to_string(), e, 1),
        },
        None => EventLog::new(),
    };
    let config = EstimatorConfig { targets, step_seconds: a.step_seconds, horizon_seconds: a.horizon_seconds, window_seconds: a.window_seconds };
    let broker: SharedBroker = Arc::new(HttpBroker::new(&a.broker));
    let est = match Estimator::new(broker, clock, config, Arc::new(SeasonalRidge::default()), Arc::new(log)) {
        Ok(e) => e,
        Err(e) => return fail("estimator", e, 2),
    };
    for r in est.cycle() {
        if let Err(e) = r {
            log::warn!("initial estimate failed: {e}");
        }
    }
    let server = match serve(&a.listen, estimator_handler(Arc::clone(&est)), "estimator") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let worker = EstimatorLoop::start(Arc::clone(&est), Duration::from_secs(a.step_seconds.max(1) as u64));
    wait_for_interrupt();
    worker.stop();
    server.shutdown();
    0
}

pub fn router(a: RouterArgs, clock: SharedClock) -> i32 {
    let date = a.date.or_else(|| ServiceDate::from_epoch(clock.now()));
    let router = TransitRouter::new(date, clock);
    if let Some(path) = &a.feed {
        let loaded = std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| read_feed(&bytes).map(|f| (feed_version(&bytes), f)).map_err(|e| e.to_string()))
            .and_then(|(version, feed)| router.load("file", &version, &feed).map_err(|e| e.to_string()));
        if let Err(e) = loaded {
            return fail(&path.display().to_string(), e, 1);
        }
    }
    let server = match serve(&a.listen, router_handler(Arc::clone(&router)), "router") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let poller = a
        .realtime_url
        .map(|url| RealtimePoller::start(Arc::clone(&router), url, Duration::from_millis(a.realtime_poll_ms.max(10))));
    wait_for_interrupt();
    drop(poller);
    server.shutdown();
    0
}

pub fn compose(a: ComposeArgs) -> i32 {
    let config = match PipelineConfig::from_file(&a.config) {
        Ok(c) => c,
        Err(e) => return fail("compose", &e, e.exit_code()),
    };
    let program = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => return fail("compose", e, 1),
    };
    let pipeline = match Pipeline::start(&config, a.mode, &program) {
        Ok(p) => p,
        Err(e) => return fail("compose", &e, e.exit_code()),
    };
    for line in pipeline.status() {
        println!("{line}");
    }
    if !a.once {
        wait_for_interrupt();
    }
    pipeline.shutdown();
    0
}
