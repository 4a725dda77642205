//! Feed fetcher: resolves feed pointers published in the broker, downloads
//! the referenced GTFS archives, gates them on validity and hands fresh
//! ones to a routing engine plugin.

mod plugin;
#[cfg(test)]
mod tests;

pub use plugin::{FeedPayload, HttpPlugin, PluginError, RoutingEnginePlugin};

use crate::broker::{BrokerError, ContextBroker, EntityQuery, SharedBroker};
use crate::clock::{Epoch, SharedClock};
use crate::gtfs::{read_feed, GtfsFeed, ServiceDate};
use crate::http::{Handler, Request, Response};
use crate::model::{FeedPointer, MobilityEntity, GTFS_FEED_POINTER};
use parking_lot::Mutex;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PointerSkip {
    pub entity_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolvedPointers {
    pub pointers: Vec<FeedPointer>,
    pub skipped: Vec<PointerSkip>,
}

/// Every well-formed feed pointer in the broker, ordered by feed id.
pub fn resolve_pointers(broker: &dyn ContextBroker) -> Result<ResolvedPointers, BrokerError> {
    let mut out = ResolvedPointers::default();
    for e in broker.query(&EntityQuery::by_type(GTFS_FEED_POINTER))? {
        match MobilityEntity::from_context(&e) {
            Ok(MobilityEntity::FeedPointer(p)) if p.valid_from <= p.valid_until => out.pointers.push(p),
            Ok(MobilityEntity::FeedPointer(p)) => out.skipped.push(PointerSkip {
                entity_id: e.id.clone(),
                reason: format!("validFrom {} is after validUntil {}", p.valid_from, p.valid_until),
            }),
            Ok(other) => out.skipped.push(PointerSkip { entity_id: e.id.clone(), reason: format!("unexpected {}", other.type_name()) }),
            Err(err) => out.skipped.push(PointerSkip { entity_id: e.id.clone(), reason: err.to_string() }),
        }
    }
    for s in &out.skipped {
        log::warn!("skipping feed pointer {}: {}", s.entity_id, s.reason);
    }
    out.pointers.sort_by(|a, b| a.feed_id.cmp(&b.feed_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedStatus {
    Fresh,
    Expired,
    FetchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedState {
    pub feed_id: String,
    /// Set once the plugin has acknowledged at least one load.
    pub last_version: Option<String>,
    pub last_loaded_at: Option<Epoch>,
    pub status: FeedStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl FeedState {
    fn new(feed_id: &str) -> Self {
        FeedState { feed_id: feed_id.to_string(), last_version: None, last_loaded_at: None, status: FeedStatus::Expired, detail: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetchError {
    #[error("unsupported source URL {0:?}")]
    UnsupportedScheme(String),
    #[error("reading {0}: {1}")]
    Io(String, String),
    #[error("downloading {0}: {1}")]
    Http(String, String),
}

/// Raw bytes behind a `file://` or `http(s)://` source URL.
pub fn fetch_source(source_url: &str) -> Result<Vec<u8>, FetchError> {
    let parsed = url::Url::parse(source_url).map_err(|_| FetchError::UnsupportedScheme(source_url.to_string()))?;
    match parsed.scheme() {
        "file" => {
            let path = parsed.to_file_path().map_err(|_| FetchError::UnsupportedScheme(source_url.to_string()))?;
            std::fs::read(&path).map_err(|e| FetchError::Io(path.display().to_string(), e.to_string()))
        }
        "http" | "https" => crate::http::get(source_url)
            .map(|r| r.body)
            .map_err(|e| FetchError::Http(source_url.to_string(), e.to_string())),
        _ => Err(FetchError::UnsupportedScheme(source_url.to_string())),
    }
}

struct Loaded {
    version: String,
    feed: Arc<GtfsFeed>,
}

#[derive(Default)]
struct FeedSlot {
    state: Option<FeedState>,
    loaded: Option<Loaded>,
}

/// File fetcher plus plugin bookkeeping. Loads for the same feed id are
/// serialized; different feeds may load concurrently.
pub struct Fetcher {
    plugin: Arc<dyn RoutingEnginePlugin>,
    clock: SharedClock,
    slots: Mutex<HashMap<String, Arc<Mutex<FeedSlot>>>>,
}

impl Fetcher {
    pub fn new(plugin: Arc<dyn RoutingEnginePlugin>, clock: SharedClock) -> Arc<Self> {
        Arc::new(Fetcher { plugin, clock, slots: Mutex::new(HashMap::new()) })
    }

    fn slot(&self, feed_id: &str) -> Arc<Mutex<FeedSlot>> {
        Arc::clone(self.slots.lock().entry(feed_id.to_string()).or_default())
    }

    /// Loads `pointer` into the plugin if it is valid `today` and its version
    /// has not been loaded yet. All outcomes are reported in the state.
    pub fn fetch_and_load(&self, pointer: &FeedPointer, today: ServiceDate) -> FeedState {
        let slot = self.slot(&pointer.feed_id);
        let mut slot = slot.lock();
        let mut state = slot.state.clone().unwrap_or_else(|| FeedState::new(&pointer.feed_id));
        state.detail = None;
        let outcome = self.evaluate(&mut slot, pointer, today, &mut state);
        if let Err(detail) = outcome {
            log::warn!("feed {}: {detail}", pointer.feed_id);
            state.detail = Some(detail);
        }
        slot.state = Some(state.clone());
        state
    }

    fn evaluate(&self, slot: &mut FeedSlot, pointer: &FeedPointer, today: ServiceDate, state: &mut FeedState) -> Result<(), String> {
        if !pointer.covers(today) {
            state.status = FeedStatus::Expired;
            return Err(format!("pointer valid {}..{}, today is {today}", pointer.valid_from, pointer.valid_until));
        }
        if let Some(loaded) = slot.loaded.as_ref().filter(|l| l.version == pointer.version) {
            state.status = if loaded.feed.valid_on(today) { FeedStatus::Fresh } else { FeedStatus::Expired };
            return Ok(());
        }
        let bytes = fetch_source(&pointer.source_url).map_err(|e| {
            state.status = FeedStatus::FetchFailed;
            e.to_string()
        })?;
        let feed = read_feed(&bytes).map_err(|e| {
            state.status = FeedStatus::FetchFailed;
            format!("unreadable feed: {e}")
        })?;
        if !feed.valid_on(today) {
            state.status = FeedStatus::Expired;
            return Err(format!("calendar does not cover {today}"));
        }
        let payload = FeedPayload { version: pointer.version.clone(), bytes, feed };
        self.plugin.load_feed(&pointer.feed_id, &payload).map_err(|e| {
            state.status = FeedStatus::FetchFailed;
            format!("plugin refused version {}: {e}", pointer.version)
        })?;
        log::info!("feed {} version {} loaded", pointer.feed_id, pointer.version);
        state.status = FeedStatus::Fresh;
        state.last_version = Some(pointer.version.clone());
        state.last_loaded_at = Some(self.clock.now());
        slot.loaded = Some(Loaded { version: pointer.version.clone(), feed: Arc::new(payload.feed) });
        Ok(())
    }

    /// One orchestrator cycle: resolve pointers, then fetch each concurrently.
    pub fn poll_once(&self, broker: &dyn ContextBroker, today: ServiceDate) -> Result<PollReport, BrokerError> {
        let resolved = resolve_pointers(broker)?;
        let states = std::thread::scope(|s| {
            let jobs: Vec<_> = resolved.pointers.iter().map(|p| s.spawn(move || self.fetch_and_load(p, today))).collect();
            jobs.into_iter().map(|j| j.join().expect("fetch worker panicked")).collect()
        });
        Ok(PollReport { skipped: resolved.skipped, states })
    }

    /// Current state per feed id, ordered by id.
    pub fn states(&self) -> Vec<FeedState> {
        let slots: Vec<_> = self.slots.lock().values().cloned().collect();
        let mut out: Vec<FeedState> = slots.iter().filter_map(|s| s.lock().state.clone()).collect();
        out.sort_by(|a, b| a.feed_id.cmp(&b.feed_id));
        out
    }

    pub fn state(&self, feed_id: &str) -> Option<FeedState> {
        let slot = self.slots.lock().get(feed_id).cloned()?;
        let state = slot.lock().state.clone();
        state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollReport {
    pub skipped: Vec<PointerSkip>,
    pub states: Vec<FeedState>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetcherConfig {
    pub poll_interval_seconds: u64,
    /// Fixed service date instead of the clock's current day.
    pub today_override: Option<ServiceDate>,
}

impl Default for FetcherConfig {
    fn default() -> Self {
        FetcherConfig { poll_interval_seconds: 60, today_override: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FetcherError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("broker unavailable: {0}")]
    BrokerUnavailable(String),
}

/// Running orchestrator. `stop` lets an in-flight poll finish first.
pub struct OrchestratorHandle {
    fetcher: Arc<Fetcher>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    polls: Arc<Mutex<u64>>,
}

impl OrchestratorHandle {
    pub fn fetcher(&self) -> &Arc<Fetcher> {
        &self.fetcher
    }

    pub fn states(&self) -> Vec<FeedState> {
        self.fetcher.states()
    }

    /// Completed polls, including the initial one.
    pub fn polls(&self) -> u64 {
        *self.polls.lock()
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for OrchestratorHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Polls once synchronously (failing if the broker is unreachable), then
/// keeps polling every `poll_interval_seconds` on a background thread.
pub fn run_orchestrator(
    broker: SharedBroker,
    plugin: Arc<dyn RoutingEnginePlugin>,
    config: FetcherConfig,
    clock: SharedClock,
) -> Result<OrchestratorHandle, FetcherError> {
    if config.poll_interval_seconds < 1 {
        return Err(FetcherError::BadConfig("poll interval must be at least 1 second".into()));
    }
    let fetcher = Fetcher::new(plugin, Arc::clone(&clock));
    let today = {
        let clock = Arc::clone(&clock);
        move || config.today_override.unwrap_or_else(|| ServiceDate::from_epoch(clock.now()).unwrap_or_else(ServiceDate::today_utc))
    };
    fetcher.poll_once(broker.as_ref(), today()).map_err(|e| FetcherError::BrokerUnavailable(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let polls = Arc::new(Mutex::new(1));
    let thread = {
        let (fetcher, stop, polls) = (Arc::clone(&fetcher), Arc::clone(&stop), Arc::clone(&polls));
        let interval = Duration::from_secs(config.poll_interval_seconds);
        std::thread::Builder::new()
            .name("gtfs-fetcher".into())
            .spawn(move || {
                let mut next = Instant::now() + interval;
                loop {
                    while Instant::now() < next {
                        if stop.load(Ordering::SeqCst) {
                            return;
                        }
                        std::thread::sleep(Duration::from_millis(20).min(next - Instant::now()));
                    }
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    match fetcher.poll_once(broker.as_ref(), today()) {
                        Ok(_) => *polls.lock() += 1,
                        Err(e) => log::warn!("poll failed, keeping previous feed states: {e}"),
                    }
                    next += interval;
                }
            })
            .expect("spawn fetcher thread")
    };
    Ok(OrchestratorHandle { fetcher, stop, thread: Some(thread), polls })
}

/// `GET /feeds` (state table) and `GET /health`.
pub fn fetcher_handler(fetcher: Arc<Fetcher>) -> Arc<dyn Handler> {
    Arc::new(move |req: Request| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/feeds") => {
            let table: BTreeMap<String, FeedState> = fetcher.states().into_iter().map(|s| (s.feed_id.clone(), s)).collect();
            Response::json(200, &table)
        }
        ("GET", "/health") => Response::json(200, &serde_json::json!({ "status": "up", "feeds": fetcher.states().len(), "feedsLoaded": fetcher.states().iter().filter(|s| s.last_version.is_some()).count() })),
        _ => Response::not_found(),
    })
}
