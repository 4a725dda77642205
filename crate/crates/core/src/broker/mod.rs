//! NGSI-style context broker: entity store, filtered and geographic queries,
//! subscriptions with asynchronous notifications, and per-attribute history.
//!
//! Every atomic service talks to a broker through the [`ContextBroker`]
//! trait, so the same service code runs against the in-process [`Broker`]
//! or a remote one through [`HttpBroker`].

mod dispatch;
mod entity;
mod http;
mod query;
mod store;
mod subscription;

pub use entity::{AttrValue, Attribute, ContextEntity};
pub use http::{broker_handler, serve_broker, HttpBroker};
pub use query::{glob_matches, AttrPredicate, CompareOp, EntityQuery};
pub use store::Broker;
pub use subscription::{Notification, NotificationSink, NotifyTarget, Subscription, SINK_URL};

use crate::clock::Epoch;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertResult {
    Created,
    Updated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalRecord {
    pub entity_id: String,
    pub attr_name: String,
    pub value: AttrValue,
    pub observed_at: Epoch,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BrokerError {
    #[error("malformed entity: {0}")]
    MalformedEntity(String),
    #[error("entity {id} already exists with type {existing}, not {requested}")]
    IdTypeConflict { id: String, existing: String, requested: String },
    #[error("bad predicate: {0}")]
    BadPredicate(String),
    #[error("query needs at least one filter")]
    MissingFilter,
    #[error("bad subscription: {0}")]
    BadSubscription(String),
    #[error("unresolvable notification target: {0}")]
    BadTarget(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(String),
    #[error("bad time range: from {from} > to {to}")]
    BadRange { from: Epoch, to: Epoch },
    #[error("broker unavailable: {0}")]
    Unavailable(String),
    #[error("journal: {0}")]
    Journal(String),
}

impl BrokerError {
    pub fn kind(&self) -> &'static str {
        match self {
            BrokerError::MalformedEntity(_) => "MalformedEntity",
            BrokerError::IdTypeConflict { .. } => "IdTypeConflict",
            BrokerError::BadPredicate(_) => "BadPredicate",
            BrokerError::MissingFilter => "MissingFilter",
            BrokerError::BadSubscription(_) => "BadSubscription",
            BrokerError::BadTarget(_) => "BadTarget",
            BrokerError::UnknownEntity(_) => "UnknownEntity",
            BrokerError::UnknownSubscription(_) => "UnknownSubscription",
            BrokerError::BadRange { .. } => "BadRange",
            BrokerError::Unavailable(_) => "Unavailable",
            BrokerError::Journal(_) => "Journal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            BrokerError::UnknownEntity(_) | BrokerError::UnknownSubscription(_) => 404,
            BrokerError::IdTypeConflict { .. } => 409,
            BrokerError::Unavailable(_) => 503,
            BrokerError::Journal(_) => 500,
            _ => 400,
        }
    }
}

/// Operations every atomic service needs from the context layer.
pub trait ContextBroker: Send + Sync {
    fn upsert(&self, entity: ContextEntity) -> Result<UpsertResult, BrokerError>;

    /// Updates attributes of an existing entity (`UnknownEntity` otherwise).
    fn update_attributes(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError>;

    fn get_entity(&self, id: &str) -> Result<Option<ContextEntity>, BrokerError>;

    /// Entities satisfying every filter of `q`, ascending by id.
    fn query(&self, q: &EntityQuery) -> Result<Vec<ContextEntity>, BrokerError>;

    fn subscribe(&self, sub: Subscription) -> Result<String, BrokerError>;

    fn unsubscribe(&self, id: &str) -> Result<(), BrokerError>;

    fn subscriptions(&self) -> Result<Vec<Subscription>, BrokerError>;

    /// Records with `from <= observedAt <= to`, ascending.
    fn query_history(&self, entity_id: &str, attr: &str, from: Epoch, to: Epoch) -> Result<Vec<HistoricalRecord>, BrokerError>;

    fn ping(&self) -> Result<(), BrokerError>;
}

impl<B: ContextBroker + ?Sized> ContextBroker for std::sync::Arc<B> {
    fn upsert(&self, entity: ContextEntity) -> Result<UpsertResult, BrokerError> {
        (**self).upsert(entity)
    }
    fn update_attributes(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError> {
        (**self).update_attributes(id, attrs)
    }
    fn get_entity(&self, id: &str) -> Result<Option<ContextEntity>, BrokerError> {
        (**self).get_entity(id)
    }
    fn query(&self, q: &EntityQuery) -> Result<Vec<ContextEntity>, BrokerError> {
        (**self).query(q)
    }
    fn subscribe(&self, sub: Subscription) -> Result<String, BrokerError> {
        (**self).subscribe(sub)
    }
    fn unsubscribe(&self, id: &str) -> Result<(), BrokerError> {
        (**self).unsubscribe(id)
    }
    fn subscriptions(&self) -> Result<Vec<Subscription>, BrokerError> {
        (**self).subscriptions()
    }
    fn query_history(&self, entity_id: &str, attr: &str, from: Epoch, to: Epoch) -> Result<Vec<HistoricalRecord>, BrokerError> {
        (**self).query_history(entity_id, attr, from, to)
    }
    fn ping(&self) -> Result<(), BrokerError> {
        (**self).ping()
    }
}

pub type SharedBroker = std::sync::Arc<dyn ContextBroker>;
