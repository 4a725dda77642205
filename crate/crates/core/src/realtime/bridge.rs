use super::feed::{RtEntity, RtFeedMessage, RtHeader, RtPayload, StopTimeUpdate, TripUpdate, VehicleUpdate};
use super::schedule::ScheduleIndex;
use crate::broker::{BrokerError, ContextBroker, ContextEntity, Notification, NotificationSink, NotifyTarget, SharedBroker, Subscription};
use crate::clock::{Epoch, SharedClock};
use crate::model::{MobilityEntity, ARRIVAL_ESTIMATION, VEHICLE_POSITION};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

pub const DEFAULT_HORIZON_SECONDS: i64 = 7200;

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    /// Entries not refreshed for twice this long are evicted at rebuild.
    pub horizon_seconds: i64,
    /// When set, every rebuild also writes `trip-updates.pb` and
    /// `vehicle-positions.pb` here.
    pub spool_dir: Option<PathBuf>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig { horizon_seconds: DEFAULT_HORIZON_SECONDS, spool_dir: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BridgeMetrics {
    pub notifications_applied: u64,
    pub skipped: u64,
    pub last_rebuild_epoch: Epoch,
}

/// Immutable view served to readers; replaced as a whole after each apply.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub trip_updates: RtFeedMessage,
    pub vehicle_positions: RtFeedMessage,
    pub trip_updates_pb: Vec<u8>,
    pub vehicle_positions_pb: Vec<u8>,
    pub metrics: BridgeMetrics,
}

impl Snapshot {
    fn empty() -> Self {
        let empty = RtFeedMessage::empty(0);
        let pb = empty.encode();
        Snapshot {
            trip_updates: empty.clone(),
            vehicle_positions: empty,
            trip_updates_pb: pb.clone(),
            vehicle_positions_pb: pb,
            metrics: BridgeMetrics::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct StopState {
    stop_id: String,
    delay: i32,
    observed_at: Epoch,
}

#[derive(Debug, Default)]
struct State {
    trips: BTreeMap<String, BTreeMap<u32, StopState>>,
    vehicles: BTreeMap<String, (VehicleUpdate, Epoch)>,
    metrics: BridgeMetrics,
}

type RebuildHook = Box<dyn Fn(&Snapshot) + Send + Sync>;

/// Folds ArrivalEstimation and VehiclePosition notifications into the
/// current GTFS-RT feeds.
pub struct Translator {
    schedule: Arc<ScheduleIndex>,
    config: BridgeConfig,
    clock: SharedClock,
    state: Mutex<State>,
    snapshot: RwLock<Arc<Snapshot>>,
    hooks: Mutex<Vec<RebuildHook>>,
}

impl Translator {
    pub fn new(schedule: Arc<ScheduleIndex>, config: BridgeConfig, clock: SharedClock) -> Arc<Self> {
        Arc::new(Translator {
            schedule,
            config,
            clock,
            state: Mutex::new(State::default()),
            snapshot: RwLock::new(Arc::new(Snapshot::empty())),
            hooks: Mutex::new(Vec::new()),
        })
    }

    pub fn schedule(&self) -> &ScheduleIndex {
        &self.schedule
    }

    /// Current feeds; never a mix of pre- and post-notification state.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.read())
    }

    pub fn metrics(&self) -> BridgeMetrics {
        self.snapshot().metrics
    }

    /// Runs `hook` after every rebuild, in rebuild order.
    pub fn on_rebuild(&self, hook: impl Fn(&Snapshot) + Send + Sync + 'static) {
        self.hooks.lock().push(Box::new(hook));
    }

    pub fn on_notification(&self, n: &Notification) {
        let mut st = self.state.lock();
        for e in &n.data {
            if !self.apply_entity(&mut st, e) {
                st.metrics.skipped += 1;
            }
        }
        st.metrics.notifications_applied += 1;
        self.rebuild(&mut st);
    }

    fn apply_entity(&self, st: &mut State, e: &ContextEntity) -> bool {
        match MobilityEntity::from_context(e) {
            Ok(MobilityEntity::ArrivalEstimation(a)) => {
                let Some(sched) = self.schedule.lookup(&a.trip_id, &a.stop_id) else {
                    log::debug!("no schedule for trip {} at stop {}", a.trip_id, a.stop_id);
                    return false;
                };
                let Ok(delay) = i32::try_from(a.estimated_arrival - sched.arrival) else {
                    log::warn!("delay for {} out of range", e.id);
                    return false;
                };
                st.trips
                    .entry(a.trip_id)
                    .or_default()
                    .insert(sched.stop_sequence, StopState { stop_id: a.stop_id, delay, observed_at: a.observed_at });
                true
            }
            Ok(MobilityEntity::VehiclePosition(v)) => {
                let update = VehicleUpdate {
                    vehicle_id: v.vehicle_id.clone(),
                    trip_id: v.trip_id,
                    latitude: v.location.lat as f32,
                    longitude: v.location.lon as f32,
                    bearing: v.bearing.map(|b| b as f32),
                    timestamp: u64::try_from(v.observed_at).ok(),
                };
                st.vehicles.insert(v.vehicle_id, (update, v.observed_at));
                true
            }
            Ok(other) => {
                log::warn!("ignoring {} entity {}", other.type_name(), e.id);
                false
            }
            Err(err) => {
                log::warn!("dropping malformed notification entity: {err}");
                false
            }
        }
    }

    fn rebuild(&self, st: &mut State) {
        let now = self.clock.now();
        let cutoff = now.saturating_sub(2 * self.config.horizon_seconds);
        for stops in st.trips.values_mut() {
            stops.retain(|_, s| s.observed_at >= cutoff);
        }
        st.trips.retain(|_, stops| !stops.is_empty());
        st.vehicles.retain(|_, (_, at)| *at >= cutoff);
        st.metrics.last_rebuild_epoch = now;

        let header = RtHeader::full_dataset(u64::try_from(now).unwrap_or(0));
        let trip_updates = RtFeedMessage {
            header: header.clone(),
            entities: st
                .trips
                .iter()
                .map(|(trip_id, stops)| RtEntity {
                    id: trip_id.clone(),
                    payload: RtPayload::TripUpdate(TripUpdate {
                        trip_id: trip_id.clone(),
                        route_id: self.schedule.route_of(trip_id).map(str::to_string),
                        stop_time_updates: stops
                            .iter()
                            .map(|(seq, s)| StopTimeUpdate {
                                stop_sequence: Some(*seq),
                                stop_id: Some(s.stop_id.clone()),
                                arrival_delay: s.delay,
                            })
                            .collect(),
                        timestamp: stops.values().map(|s| s.observed_at).max().and_then(|t| u64::try_from(t).ok()),
                    }),
                })
                .collect(),
        };
        let vehicle_positions = RtFeedMessage {
            header,
            entities: st
                .vehicles
                .iter()
                .map(|(id, (v, _))| RtEntity { id: id.clone(), payload: RtPayload::Vehicle(v.clone()) })
                .collect(),
        };
        let snap = Arc::new(Snapshot {
            trip_updates_pb: trip_updates.encode(),
            vehicle_positions_pb: vehicle_positions.encode(),
            trip_updates,
            vehicle_positions,
            metrics: st.metrics,
        });
        if let Some(dir) = &self.config.spool_dir {
            for (name, bytes) in [("trip-updates.pb", &snap.trip_updates_pb), ("vehicle-positions.pb", &snap.vehicle_positions_pb)] {
                if let Err(e) = crate::ngsi2gtfs::write_atomically(&dir.join(name), bytes) {
                    log::warn!("spooling {name} failed: {e}");
                }
            }
        }
        *self.snapshot.write() = Arc::clone(&snap);
        for hook in self.hooks.lock().iter() {
            hook(&snap);
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BridgeError {
    #[error("broker unavailable: {0}")]
    BrokerUnavailable(String),
    #[error("schedule index is empty")]
    EmptySchedule,
}

/// How the broker reaches the translator.
#[derive(Debug, Clone)]
pub enum Delivery {
    /// Same process: notifications call the translator directly.
    InProcess,
    /// The broker POSTs notifications to this URL (the bridge's `/notify`).
    Http(String),
}

/// Live subscriptions feeding a translator. Dropping it unsubscribes.
pub struct BridgeHandle {
    broker: SharedBroker,
    subscriptions: Vec<String>,
    translator: Arc<Translator>,
}

impl BridgeHandle {
    pub fn subscription_ids(&self) -> &[String] {
        &self.subscriptions
    }

    pub fn translator(&self) -> &Arc<Translator> {
        &self.translator
    }

    pub fn stop(mut self) {
        self.unsubscribe_all();
    }

    fn unsubscribe_all(&mut self) {
        for id in self.subscriptions.drain(..) {
            if let Err(e) = self.broker.unsubscribe(&id) {
                log::debug!("unsubscribe {id}: {e}");
            }
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.unsubscribe_all();
    }
}

/// Subscribes the translator to ArrivalEstimation and VehiclePosition.
/// On failure no subscription is left behind.
pub fn start_bridge(broker: SharedBroker, translator: Arc<Translator>, delivery: Delivery) -> Result<BridgeHandle, BridgeError> {
    if translator.schedule().is_empty() {
        return Err(BridgeError::EmptySchedule);
    }
    let mut handle = BridgeHandle { broker: Arc::clone(&broker), subscriptions: Vec::new(), translator: Arc::clone(&translator) };
    for ty in [ARRIVAL_ESTIMATION, VEHICLE_POSITION] {
        let target = match &delivery {
            Delivery::InProcess => {
                let t = Arc::clone(&translator);
                NotifyTarget::Sink(NotificationSink::new(move |n| t.on_notification(&n)))
            }
            Delivery::Http(url) => NotifyTarget::Http(url.clone()),
        };
        match broker.subscribe(Subscription::new(ty, target)) {
            Ok(id) => handle.subscriptions.push(id),
            Err(e) => {
                handle.unsubscribe_all();
                return Err(match e {
                    BrokerError::Unavailable(m) => BridgeError::BrokerUnavailable(m),
                    other => BridgeError::BrokerUnavailable(other.to_string()),
                });
            }
        }
    }
    Ok(handle)
}
