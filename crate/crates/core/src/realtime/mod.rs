//! GTFS-realtime from NGSI: schedule index, translator, protobuf codec and
//! REST endpoints.

mod bridge;
mod feed;
mod http;
mod schedule;
pub mod wire;

pub use bridge::{start_bridge, BridgeConfig, BridgeError, BridgeHandle, BridgeMetrics, Delivery, Snapshot, Translator, DEFAULT_HORIZON_SECONDS};
pub use feed::{Incrementality, RtEntity, RtFeedMessage, RtHeader, RtPayload, StopTimeUpdate, TripUpdate, VehicleUpdate, GTFS_RT_VERSION};
pub use http::bridge_handler;
pub use schedule::{ScheduleError, ScheduleIndex, ScheduledStop};

#[cfg(test)]
mod tests;
