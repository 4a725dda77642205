use super::dispatch::{Dispatcher, DEFAULT_DRAIN};
use super::entity::{Attribute, ContextEntity};
use super::query::EntityQuery;
use super::subscription::{Notification, Subscription};
use super::{BrokerError, ContextBroker, HistoricalRecord, UpsertResult};
use crate::clock::{system_clock, Epoch, SharedClock};
use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

struct SubEntry {
    sub: Subscription,
    dispatcher: Dispatcher,
}

#[derive(Default)]
struct State {
    entities: BTreeMap<String, ContextEntity>,
    history: HashMap<(String, String), Vec<HistoricalRecord>>,
    subs: BTreeMap<String, SubEntry>,
}

/// In-memory context broker with optional append-only journal.
pub struct Broker {
    state: RwLock<State>,
    clock: SharedClock,
    online: AtomicBool,
    next_sub: AtomicU64,
    upserts: AtomicU64,
    journal: Option<Mutex<File>>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker::with_clock(system_clock())
    }

    pub fn with_clock(clock: SharedClock) -> Self {
        Broker {
            state: RwLock::new(State::default()),
            clock,
            online: AtomicBool::new(true),
            next_sub: AtomicU64::new(1),
            upserts: AtomicU64::new(0),
            journal: None,
        }
    }

    /// Replays `path` (if present) and appends every later write to it.
    pub fn with_journal(path: &Path, clock: SharedClock) -> Result<Self, BrokerError> {
        let mut broker = Broker::with_clock(clock);
        if path.exists() {
            let f = File::open(path).map_err(|e| BrokerError::Journal(e.to_string()))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| BrokerError::Journal(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(&line)
                    .map_err(|e| BrokerError::Journal(format!("line {}: {e}", n + 1)))?;
                let at = v.get("receivedAt").and_then(Value::as_i64).unwrap_or(0);
                let entity = ContextEntity::from_wire(v.get("entity").unwrap_or(&Value::Null))?;
                let mut st = broker.state.write();
                broker.apply(&mut st, entity, at, false)?;
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BrokerError::Journal(e.to_string()))?;
        broker.journal = Some(Mutex::new(f));
        Ok(broker)
    }

    /// Simulates an outage: while offline every call fails with `Unavailable`.
    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    pub fn is_online(&self) -> bool {
        self.online.load(Ordering::SeqCst)
    }

    pub fn entity_count(&self) -> usize {
        self.state.read().entities.len()
    }

    pub fn upsert_count(&self) -> u64 {
        self.upserts.load(Ordering::SeqCst)
    }

    /// (delivered, failed) counters per subscription id.
    pub fn delivery_stats(&self) -> BTreeMap<String, (u64, u64)> {
        self.state
            .read()
            .subs
            .iter()
            .map(|(id, s)| {
                let st = &s.dispatcher.stats;
                (id.clone(), (st.delivered.load(Ordering::SeqCst), st.failed.load(Ordering::SeqCst)))
            })
            .collect()
    }

    /// Waits until every queued notification has been handed to its target.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let handles: Vec<_> = self.state.read().subs.values().map(|s| s.dispatcher.drain_handle()).collect();
        handles.iter().all(|h| h.wait(deadline))
    }

    fn ensure_online(&self) -> Result<(), BrokerError> {
        if self.is_online() {
            Ok(())
        } else {
            Err(BrokerError::Unavailable("broker is offline".into()))
        }
    }

    fn apply(&self, st: &mut State, entity: ContextEntity, now: Epoch, notify: bool) -> Result<UpsertResult, BrokerError> {
        entity.validate()?;
        let (result, changed, snapshot) = {
            let existing = st.entities.get(&entity.id);
            if let Some(prev) = existing {
                if prev.entity_type != entity.entity_type {
                    return Err(BrokerError::IdTypeConflict {
                        id: entity.id.clone(),
                        existing: prev.entity_type.clone(),
                        requested: entity.entity_type.clone(),
                    });
                }
            }
            let changed: Vec<(String, Attribute)> = entity
                .attrs
                .iter()
                .filter(|(k, a)| existing.and_then(|p| p.attrs.get(*k)) != Some(*a))
                .map(|(k, a)| (k.clone(), a.clone()))
                .collect();
            let mut merged = existing.cloned().unwrap_or_else(|| ContextEntity::new(&entity.id, &entity.entity_type));
            merged.attrs.extend(entity.attrs);
            let result = if existing.is_some() { UpsertResult::Updated } else { UpsertResult::Created };
            (result, changed, merged)
        };
        for (name, attr) in &changed {
            let at = attr.observed_at.unwrap_or(now);
            let records = st.history.entry((snapshot.id.clone(), name.clone())).or_default();
            let pos = records.partition_point(|r| r.observed_at <= at);
            records.insert(
                pos,
                HistoricalRecord {
                    entity_id: snapshot.id.clone(),
                    attr_name: name.clone(),
                    value: attr.value.clone(),
                    observed_at: at,
                },
            );
        }
        if notify {
            for entry in st.subs.values() {
                if entry.sub.selects(&snapshot) && entry.sub.triggered_by(changed.iter().map(|(k, _)| k)) {
                    entry.dispatcher.enqueue(Notification {
                        subscription_id: entry.sub.id.clone(),
                        emitted_at: now,
                        data: vec![snapshot.clone()],
                    });
                }
            }
        }
        st.entities.insert(snapshot.id.clone(), snapshot);
        Ok(result)
    }

    fn journal(&self, entity: &ContextEntity, at: Epoch) -> Result<(), BrokerError> {
        if let Some(j) = &self.journal {
            let line = json!({ "receivedAt": at, "entity": entity.to_wire() });
            let mut f = j.lock();
            writeln!(f, "{line}").map_err(|e| BrokerError::Journal(e.to_string()))?;
        }
        Ok(())
    }

    fn write(&self, entity: ContextEntity) -> Result<UpsertResult, BrokerError> {
        self.ensure_online()?;
        let now = self.clock.now();
        let mut st = self.state.write();
        let journaled = self.journal.is_some().then(|| entity.clone());
        let result = self.apply(&mut st, entity, now, true)?;
        if let Some(e) = journaled {
            self.journal(&e, now)?;
        }
        self.upserts.fetch_add(1, Ordering::SeqCst);
        Ok(result)
    }
}

impl ContextBroker for Broker {
    fn upsert(&self, entity: ContextEntity) -> Result<UpsertResult, BrokerError> {
        self.write(entity)
    }

    fn update_attributes(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError> {
        self.ensure_online()?;
        let ty = self
            .state
            .read()
            .entities
            .get(id)
            .map(|e| e.entity_type.clone())
            .ok_or_else(|| BrokerError::UnknownEntity(id.to_string()))?;
        let mut e = ContextEntity::new(id, ty);
        e.attrs = attrs;
        self.write(e).map(|_| ())
    }

    fn get_entity(&self, id: &str) -> Result<Option<ContextEntity>, BrokerError> {
        self.ensure_online()?;
        Ok(self.state.read().entities.get(id).cloned())
    }

    fn query(&self, q: &EntityQuery) -> Result<Vec<ContextEntity>, BrokerError> {
        self.ensure_online()?;
        q.check()?;
        let st = self.state.read();
        let mut out = Vec::new();
        // BTreeMap iteration yields ascending ids
        for e in st.entities.values() {
            if q.matches(e)? {
                out.push(e.clone());
            }
        }
        Ok(out)
    }

    fn subscribe(&self, mut sub: Subscription) -> Result<String, BrokerError> {
        self.ensure_online()?;
        sub.check()?;
        let mut st = self.state.write();
        if sub.id.is_empty() || st.subs.contains_key(&sub.id) {
            loop {
                let n = self.next_sub.fetch_add(1, Ordering::SeqCst);
                let candidate = format!("sub-{n:06}");
                if !st.subs.contains_key(&candidate) {
                    sub.id = candidate;
                    break;
                }
            }
        }
        let id = sub.id.clone();
        let dispatcher = Dispatcher::spawn(&id, sub.target.clone());
        st.subs.insert(id.clone(), SubEntry { sub, dispatcher });
        Ok(id)
    }

    fn unsubscribe(&self, id: &str) -> Result<(), BrokerError> {
        self.ensure_online()?;
        let removed = self.state.write().subs.remove(id);
        // dispatcher is dropped (and drained) outside the lock
        match removed {
            Some(entry) => {
                drop(entry);
                Ok(())
            }
            None => Err(BrokerError::UnknownSubscription(id.to_string())),
        }
    }

    fn subscriptions(&self) -> Result<Vec<Subscription>, BrokerError> {
        self.ensure_online()?;
        Ok(self.state.read().subs.values().map(|s| s.sub.clone()).collect())
    }

    fn query_history(&self, entity_id: &str, attr: &str, from: Epoch, to: Epoch) -> Result<Vec<HistoricalRecord>, BrokerError> {
        self.ensure_online()?;
        if from > to {
            return Err(BrokerError::BadRange { from, to });
        }
        let st = self.state.read();
        if !st.entities.contains_key(entity_id) {
            return Err(BrokerError::UnknownEntity(entity_id.to_string()));
        }
        let Some(records) = st.history.get(&(entity_id.to_string(), attr.to_string())) else {
            return Ok(Vec::new());
        };
        let lo = records.partition_point(|r| r.observed_at < from);
        let hi = records.partition_point(|r| r.observed_at <= to);
        Ok(records[lo..hi.max(lo)].to_vec())
    }

    fn ping(&self) -> Result<(), BrokerError> {
        self.ensure_online()
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        let _ = self.wait_idle(DEFAULT_DRAIN);
    }
}
