//! Atomic services for composable urban-mobility city services.
//!
//! The crate bundles a lightweight NGSI-style context broker, the transit
//! atomic services built on top of it (NGSI to GTFS export, GTFS fetcher,
//! GTFS-RT bridge), a parking/traffic estimator and a reference routing
//! engine, plus the composer that wires them into a routing city service.

pub mod broker;
pub mod clock;
pub mod compose;
pub mod estimator;
pub mod geo;
pub mod gtfs;
pub mod http;
pub mod model;
pub mod fetcher;
pub mod ngsi2gtfs;
pub mod realtime;
pub mod router;

pub use broker::{AttrValue, Attribute, Broker, BrokerError, ContextBroker, ContextEntity, SharedBroker};
pub use clock::{Clock, Epoch, ManualClock, OffsetClock, SharedClock};
pub use geo::{GeoFilter, GeoPoint};
