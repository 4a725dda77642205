use super::graph::{build_graph, Journey, RouterError, TransitGraph};
use crate::clock::{parse_iso8601, to_iso8601, Epoch, SharedClock};
use crate::fetcher::{FeedPayload, PluginError, RoutingEnginePlugin};
use crate::gtfs::{read_feed, GtfsFeed, ServiceDate};
use crate::http::{Handler, Request, Response};
use crate::realtime::RtFeedMessage;
use parking_lot::{Mutex, RwLock};
use serde_json::json;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

struct Active {
    feed_id: String,
    version: String,
    base: TransitGraph,
}

/// Routing engine holding one active feed. Queries read an immutable graph
/// snapshot; loads and real-time updates swap in a new one.
pub struct TransitRouter {
    date: Option<ServiceDate>,
    clock: SharedClock,
    active: Mutex<Option<Active>>,
    last_realtime: Mutex<Option<RtFeedMessage>>,
    graph: RwLock<Option<Arc<TransitGraph>>>,
    loads: AtomicU64,
    realtime_applied: AtomicU64,
}

impl TransitRouter {
    /// Graphs are built for `date`, or for the clock's day when `None`.
    pub fn new(date: Option<ServiceDate>, clock: SharedClock) -> Arc<Self> {
        Arc::new(TransitRouter {
            date,
            clock,
            active: Mutex::new(None),
            last_realtime: Mutex::new(None),
            graph: RwLock::new(None),
            loads: AtomicU64::new(0),
            realtime_applied: AtomicU64::new(0),
        })
    }

    fn service_date(&self) -> ServiceDate {
        self.date.unwrap_or_else(|| ServiceDate::from_epoch(self.clock.now()).unwrap_or_else(ServiceDate::today_utc))
    }

    pub fn graph(&self) -> Option<Arc<TransitGraph>> {
        self.graph.read().clone()
    }

    pub fn active_feed(&self) -> Option<(String, String)> {
        self.active.lock().as_ref().map(|a| (a.feed_id.clone(), a.version.clone()))
    }

    /// Feed loads actually performed (repeat versions excluded).
    pub fn load_count(&self) -> u64 {
        self.loads.load(Ordering::SeqCst)
    }

    pub fn realtime_count(&self) -> u64 {
        self.realtime_applied.load(Ordering::SeqCst)
    }

    /// Replaces the active feed; the latest real-time message is re-applied.
    pub fn load(&self, feed_id: &str, version: &str, feed: &GtfsFeed) -> Result<bool, RouterError> {
        let mut active = self.active.lock();
        if active.as_ref().is_some_and(|a| a.feed_id == feed_id && a.version == version) {
            return Ok(false);
        }
        let base = build_graph(feed, self.service_date())?;
        let effective = match self.last_realtime.lock().as_ref() {
            Some(rt) => base.apply_realtime(rt),
            None => base.clone(),
        };
        *self.graph.write() = Some(Arc::new(effective));
        *active = Some(Active { feed_id: feed_id.to_string(), version: version.to_string(), base });
        self.loads.fetch_add(1, Ordering::SeqCst);
        log::info!("router loaded feed {feed_id} version {version}");
        Ok(true)
    }

    /// A message is a full dataset: its delays replace all earlier ones.
    pub fn realtime(&self, rt: &RtFeedMessage) {
        let active = self.active.lock();
        *self.last_realtime.lock() = Some(rt.clone());
        if let Some(a) = active.as_ref() {
            *self.graph.write() = Some(Arc::new(a.base.apply_realtime(rt)));
        }
        self.realtime_applied.fetch_add(1, Ordering::SeqCst);
    }

    pub fn route(&self, from: &str, to: &str, depart_after: Epoch) -> Result<Option<Journey>, RouterError> {
        let graph = self.graph().ok_or(RouterError::NoFeed)?;
        graph.earliest_arrival(from, to, depart_after)
    }
}

impl RoutingEnginePlugin for TransitRouter {
    fn load_feed(&self, feed_id: &str, payload: &FeedPayload) -> Result<(), PluginError> {
        self.load(feed_id, &payload.version, &payload.feed).map(|_| ()).map_err(|e| PluginError::Rejected(e.to_string()))
    }

    fn apply_realtime(&self, rt: &RtFeedMessage) -> Result<(), PluginError> {
        self.realtime(rt);
        Ok(())
    }
}

/// Plugin endpoints, `GET /route` and `GET /health`.
pub fn router_handler(router: Arc<TransitRouter>) -> Arc<dyn Handler> {
    Arc::new(move |req: Request| handle(&router, req))
}

fn journey_json(j: &Journey) -> serde_json::Value {
    let mut v = serde_json::to_value(j).unwrap_or_default();
    v["totalArrivalIso"] = json!(to_iso8601(j.total_arrival));
    v
}

fn handle(router: &TransitRouter, req: Request) -> Response {
    let segments = req.segments();
    let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
    match (req.method.as_str(), segs.as_slice()) {
        ("POST", ["plugin", "feeds", feed_id]) => {
            let feed = match read_feed(&req.body) {
                Ok(f) => f,
                Err(e) => return Response::error(400, &format!("unreadable feed: {e}")),
            };
            let version = req.header("X-Feed-Version").map(str::to_string).or(feed.feed_version.clone()).unwrap_or_default();
            match router.load(feed_id, &version, &feed) {
                Ok(loaded) => Response::json(200, &json!({ "status": if loaded { "loaded" } else { "unchanged" }, "version": version })),
                Err(e) => Response::error(422, &e.to_string()),
            }
        }
        ("POST", ["plugin", "realtime"]) => match RtFeedMessage::decode(&req.body) {
            Ok(rt) => {
                router.realtime(&rt);
                Response::json(200, &json!({ "status": "applied" }))
            }
            Err(e) => Response::error(400, &format!("undecodable GTFS-RT: {e}")),
        },
        ("GET", ["route"]) => {
            let (Some(from), Some(to)) = (req.param("from"), req.param("to")) else {
                return Response::error(400, "from and to are required");
            };
            let depart_after = match req.param("departAfter").map(parse_iso8601) {
                Some(Ok(t)) => t,
                Some(Err(e)) => return Response::error(400, &e.to_string()),
                None => router.clock.now(),
            };
            match router.route(from, to, depart_after) {
                Ok(Some(j)) => Response::json(200, &journey_json(&j)),
                Ok(None) => Response::json(200, &json!({ "noRoute": true })),
                Err(e @ RouterError::UnknownStop(_)) => Response::error(404, &e.to_string()),
                Err(e) => Response::error(503, &e.to_string()),
            }
        }
        ("GET", ["health"]) => {
            let graph = router.graph();
            let active = router.active_feed();
            Response::json(
                200,
                &json!({
                    "status": "up",
                    "feedId": active.as_ref().map(|a| a.0.clone()),
                    "feedVersion": active.map(|a| a.1),
                    "connections": graph.as_ref().map(|g| g.connections().len()).unwrap_or(0),
                    "realtimeApplied": router.realtime_count(),
                    "feedsLoaded": router.load_count(),
                }),
            )
        }
        _ => Response::not_found(),
    }
}

/// Background poller feeding a GTFS-RT trip-updates URL into a router.
pub struct RealtimePoller {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RealtimePoller {
    pub fn start(router: Arc<TransitRouter>, url: String, interval: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("router-rt-poll".into())
            .spawn(move || {
                let mut last: Option<Vec<u8>> = None;
                while !flag.load(Ordering::SeqCst) {
                    match crate::http::get(&url) {
                        Ok(resp) if last.as_deref() != Some(resp.body.as_slice()) => match RtFeedMessage::decode(&resp.body) {
                            Ok(rt) => {
                                router.realtime(&rt);
                                last = Some(resp.body);
                            }
                            Err(e) => log::warn!("undecodable GTFS-RT from {url}: {e}"),
                        },
                        Ok(_) => {}
                        Err(e) => log::debug!("GTFS-RT poll of {url} failed: {e}"),
                    }
                    let mut waited = Duration::ZERO;
                    while waited < interval && !flag.load(Ordering::SeqCst) {
                        std::thread::sleep(Duration::from_millis(20));
                        waited += Duration::from_millis(20);
                    }
                }
            })
            .expect("spawn realtime poller");
        RealtimePoller { stop, thread: Some(thread) }
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

impl Drop for RealtimePoller {
    fn drop(&mut self) {
        self.halt();
    }
}
