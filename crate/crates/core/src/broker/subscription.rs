use super::entity::ContextEntity;
use super::query::{glob_matches, parse_georel};
use super::BrokerError;
use crate::clock::{parse_iso8601, to_iso8601, Epoch};
use crate::geo::GeoFilter;
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// In-process notification callback.
#[derive(Clone)]
pub struct NotificationSink(Arc<dyn Fn(Notification) + Send + Sync>);

impl NotificationSink {
    pub fn new(f: impl Fn(Notification) + Send + Sync + 'static) -> Self {
        NotificationSink(Arc::new(f))
    }

    /// Sink forwarding into a channel; handy in tests.
    pub fn channel() -> (Self, std::sync::mpsc::Receiver<Notification>) {
        let (tx, rx) = std::sync::mpsc::channel();
        let tx = parking_lot::Mutex::new(tx);
        (NotificationSink::new(move |n| {
            let _ = tx.lock().send(n);
        }), rx)
    }

    pub fn deliver(&self, n: Notification) {
        (self.0)(n)
    }
}

impl fmt::Debug for NotificationSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NotificationSink(..)")
    }
}

#[derive(Debug, Clone)]
pub enum NotifyTarget {
    Http(String),
    Sink(NotificationSink),
}

pub const SINK_URL: &str = "inproc://sink";

impl NotifyTarget {
    pub fn check(&self) -> Result<(), BrokerError> {
        match self {
            NotifyTarget::Sink(_) => Ok(()),
            NotifyTarget::Http(u) => {
                let parsed = url::Url::parse(u).map_err(|e| BrokerError::BadTarget(format!("{u}: {e}")))?;
                if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
                    return Err(BrokerError::BadTarget(format!("{u}: expected an http(s) URL")));
                }
                Ok(())
            }
        }
    }

    pub fn url(&self) -> &str {
        match self {
            NotifyTarget::Http(u) => u,
            NotifyTarget::Sink(_) => SINK_URL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subscription {
    /// Assigned by the broker when empty.
    pub id: String,
    pub entity_type: String,
    pub id_pattern: Option<String>,
    /// Empty means every upsert of a matching entity notifies.
    pub watched_attributes: BTreeSet<String>,
    pub geo: Option<GeoFilter>,
    pub target: NotifyTarget,
}

impl Subscription {
    pub fn new(entity_type: &str, target: NotifyTarget) -> Self {
        Subscription {
            id: String::new(),
            entity_type: entity_type.to_string(),
            id_pattern: None,
            watched_attributes: BTreeSet::new(),
            geo: None,
            target,
        }
    }

    pub fn watching<I, S>(mut self, attrs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.watched_attributes = attrs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_id_pattern(mut self, p: &str) -> Self {
        self.id_pattern = Some(p.to_string());
        self
    }

    pub fn within(mut self, geo: GeoFilter) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn check(&self) -> Result<(), BrokerError> {
        if self.entity_type.is_empty() {
            return Err(BrokerError::BadSubscription("entity type filter must be non-empty".into()));
        }
        if let Some(g) = &self.geo {
            if !(g.max_distance_meters > 0.0) {
                return Err(BrokerError::BadSubscription("maxDistance must be > 0".into()));
            }
            g.center.validate().map_err(|e| BrokerError::BadSubscription(e.to_string()))?;
        }
        self.target.check()
    }

    /// Entity-side filter (type, id glob, geo). Attribute triggering is
    /// decided separately from the changed-attribute set.
    pub fn selects(&self, e: &ContextEntity) -> bool {
        if e.entity_type != self.entity_type {
            return false;
        }
        if let Some(p) = &self.id_pattern {
            if !glob_matches(p, &e.id) {
                return false;
            }
        }
        match &self.geo {
            None => true,
            Some(g) => e.location().is_some_and(|loc| g.contains(&loc)),
        }
    }

    pub fn triggered_by<'a>(&self, mut changed: impl Iterator<Item = &'a String>) -> bool {
        self.watched_attributes.is_empty() || changed.any(|a| self.watched_attributes.contains(a))
    }

    pub fn to_wire(&self) -> Value {
        let mut entity = json!({ "type": self.entity_type });
        if let Some(p) = &self.id_pattern {
            entity["idPattern"] = json!(p);
        }
        let mut condition = json!({ "attrs": self.watched_attributes });
        if let Some(g) = &self.geo {
            condition["expression"] = json!({
                "georel": format!("near;maxDistance:{}", g.max_distance_meters),
                "geometry": "point",
                "coords": format!("{},{}", g.center.lat, g.center.lon),
            });
        }
        json!({
            "id": self.id,
            "subject": { "entities": [entity], "condition": condition },
            "notification": { "http": { "url": self.target.url() } },
        })
    }

    pub fn from_wire(v: &Value) -> Result<Self, BrokerError> {
        let bad = |m: &str| BrokerError::BadSubscription(m.to_string());
        let entity = v.pointer("/subject/entities/0").ok_or_else(|| bad("subject.entities[0] required"))?;
        let entity_type = entity.get("type").and_then(Value::as_str).ok_or_else(|| bad("entity type required"))?;
        let url = v
            .pointer("/notification/http/url")
            .and_then(Value::as_str)
            .ok_or_else(|| BrokerError::BadTarget("notification.http.url required".into()))?;
        if url == SINK_URL {
            return Err(BrokerError::BadTarget("in-process sinks cannot cross the wire".into()));
        }
        let mut sub = Subscription::new(entity_type, NotifyTarget::Http(url.to_string()));
        sub.id = v.get("id").and_then(Value::as_str).unwrap_or_default().to_string();
        sub.id_pattern = entity.get("idPattern").and_then(Value::as_str).map(str::to_string);
        if let Some(attrs) = v.pointer("/subject/condition/attrs").and_then(Value::as_array) {
            for a in attrs {
                sub.watched_attributes.insert(a.as_str().ok_or_else(|| bad("attrs must be strings"))?.to_string());
            }
        }
        if let Some(expr) = v.pointer("/subject/condition/expression") {
            let s = |k: &str| expr.get(k).and_then(Value::as_str);
            sub.geo = parse_georel(s("georel"), s("geometry"), s("coords"))
                .map_err(|e| BrokerError::BadSubscription(e.to_string()))?;
        }
        Ok(sub)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub subscription_id: String,
    pub emitted_at: Epoch,
    pub data: Vec<ContextEntity>,
}

impl Notification {
    pub fn to_wire(&self) -> Value {
        json!({
            "subscriptionId": self.subscription_id,
            "emittedAt": to_iso8601(self.emitted_at),
            "data": self.data.iter().map(ContextEntity::to_wire).collect::<Vec<_>>(),
        })
    }

    pub fn from_wire(v: &Value) -> Result<Self, BrokerError> {
        let bad = |m: &str| BrokerError::MalformedEntity(m.to_string());
        let subscription_id = v.get("subscriptionId").and_then(Value::as_str).ok_or_else(|| bad("subscriptionId required"))?;
        let emitted_at = match v.get("emittedAt").and_then(Value::as_str) {
            Some(s) => parse_iso8601(s).map_err(|e| bad(&e.to_string()))?,
            None => 0,
        };
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("data array required"))?
            .iter()
            .map(ContextEntity::from_wire)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Notification { subscription_id: subscription_id.to_string(), emitted_at, data })
    }
}
