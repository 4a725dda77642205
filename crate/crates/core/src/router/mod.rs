//! Reference routing engine: earliest-arrival journeys over one service day
//! of a GTFS feed with GTFS-RT delays applied.

mod engine;
mod graph;

pub use engine::{router_handler, RealtimePoller, TransitRouter};
pub use graph::{build_graph, Connection, Journey, Leg, RouterError, StopNode, TransitGraph, TRANSFER_SLACK};
