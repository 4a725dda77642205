//! Typed urban-mobility entities and their NGSI representation.
//!
//! GTFS kinds reuse the [`crate::gtfs`] record structs so a feed row and its
//! entity are the same value. References are business ids in the typed form
//! and `urn:ngsi:{Type}:{id}` URNs on the broker.

mod consistency;
mod convert;
pub mod generate;

pub use consistency::{validate_consistency, validate_typed, ConsistencyReport, Finding, FindingKind};
pub use convert::{from_context, to_context, ModelError};

use crate::clock::Epoch;
use crate::geo::GeoPoint;
use crate::gtfs::{Agency, Route, Service, ServiceDate, Stop, StopTime, Trip};
use serde::{Deserialize, Serialize};

pub const GTFS_AGENCY: &str = "GtfsAgency";
pub const GTFS_STOP: &str = "GtfsStop";
pub const GTFS_ROUTE: &str = "GtfsRoute";
pub const GTFS_SERVICE: &str = "GtfsService";
pub const GTFS_TRIP: &str = "GtfsTrip";
pub const GTFS_STOP_TIME: &str = "GtfsStopTime";
pub const ARRIVAL_ESTIMATION: &str = "ArrivalEstimation";
pub const VEHICLE_POSITION: &str = "VehiclePosition";
pub const GTFS_FEED_POINTER: &str = "GtfsFeedPointer";
pub const PARKING_SPOT_GROUP: &str = "ParkingSpotGroup";
pub const TRAFFIC_FLOW_OBSERVED: &str = "TrafficFlowObserved";

/// The six static GTFS entity types, in dependency order.
pub const GTFS_TYPES: [&str; 6] = [GTFS_AGENCY, GTFS_STOP, GTFS_ROUTE, GTFS_SERVICE, GTFS_TRIP, GTFS_STOP_TIME];

pub const ALL_TYPES: [&str; 11] = [
    GTFS_AGENCY,
    GTFS_STOP,
    GTFS_ROUTE,
    GTFS_SERVICE,
    GTFS_TRIP,
    GTFS_STOP_TIME,
    ARRIVAL_ESTIMATION,
    VEHICLE_POSITION,
    GTFS_FEED_POINTER,
    PARKING_SPOT_GROUP,
    TRAFFIC_FLOW_OBSERVED,
];

/// `urn:ngsi:{entity_type}:{business_id}`.
pub fn urn(entity_type: &str, business_id: &str) -> String {
    format!("urn:ngsi:{entity_type}:{business_id}")
}

/// Inverse of [`urn`] for a known type.
pub fn business_id<'a>(entity_type: &str, urn: &'a str) -> Option<&'a str> {
    urn.strip_prefix("urn:ngsi:")?
        .strip_prefix(entity_type)?
        .strip_prefix(':')
        .filter(|rest| !rest.is_empty())
}

pub fn stop_time_urn(trip_id: &str, stop_sequence: u32) -> String {
    urn(GTFS_STOP_TIME, &format!("{trip_id}:{stop_sequence}"))
}

pub fn arrival_urn(trip_id: &str, stop_id: &str) -> String {
    urn(ARRIVAL_ESTIMATION, &format!("{trip_id}:{stop_id}"))
}

/// A sensed arrival at a stop, as an absolute epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArrivalEstimation {
    pub trip_id: String,
    pub stop_id: String,
    pub estimated_arrival: Epoch,
    pub observed_at: Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VehiclePosition {
    pub vehicle_id: String,
    pub trip_id: Option<String>,
    pub location: GeoPoint,
    /// Degrees in `[0, 360)`.
    pub bearing: Option<f64>,
    pub observed_at: Epoch,
}

/// Where a static feed lives and when it applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedPointer {
    pub feed_id: String,
    pub source_url: String,
    pub version: String,
    pub valid_from: ServiceDate,
    pub valid_until: ServiceDate,
}

impl FeedPointer {
    pub fn covers(&self, date: ServiceDate) -> bool {
        self.valid_from <= date && date <= self.valid_until
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParkingSpotGroup {
    pub group_id: String,
    pub location: GeoPoint,
    pub total_spots: u32,
    pub available_spots: u32,
    pub observed_at: Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrafficFlowObserved {
    pub segment_id: String,
    pub location: GeoPoint,
    /// Vehicles per hour.
    pub intensity: f64,
    pub observed_at: Epoch,
}

/// Any entity of the urban-mobility vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum MobilityEntity {
    Agency(Agency),
    Stop(Stop),
    Route(Route),
    Service(Service),
    Trip(Trip),
    StopTime(StopTime),
    ArrivalEstimation(ArrivalEstimation),
    VehiclePosition(VehiclePosition),
    FeedPointer(FeedPointer),
    ParkingSpotGroup(ParkingSpotGroup),
    TrafficFlowObserved(TrafficFlowObserved),
}

impl MobilityEntity {
    pub fn type_name(&self) -> &'static str {
        match self {
            MobilityEntity::Agency(_) => GTFS_AGENCY,
            MobilityEntity::Stop(_) => GTFS_STOP,
            MobilityEntity::Route(_) => GTFS_ROUTE,
            MobilityEntity::Service(_) => GTFS_SERVICE,
            MobilityEntity::Trip(_) => GTFS_TRIP,
            MobilityEntity::StopTime(_) => GTFS_STOP_TIME,
            MobilityEntity::ArrivalEstimation(_) => ARRIVAL_ESTIMATION,
            MobilityEntity::VehiclePosition(_) => VEHICLE_POSITION,
            MobilityEntity::FeedPointer(_) => GTFS_FEED_POINTER,
            MobilityEntity::ParkingSpotGroup(_) => PARKING_SPOT_GROUP,
            MobilityEntity::TrafficFlowObserved(_) => TRAFFIC_FLOW_OBSERVED,
        }
    }

    /// Identifier unique within the entity's type.
    pub fn business_id(&self) -> String {
        match self {
            MobilityEntity::Agency(a) => a.agency_id.clone(),
            MobilityEntity::Stop(s) => s.stop_id.clone(),
            MobilityEntity::Route(r) => r.route_id.clone(),
            MobilityEntity::Service(s) => s.service_id.clone(),
            MobilityEntity::Trip(t) => t.trip_id.clone(),
            MobilityEntity::StopTime(st) => format!("{}:{}", st.trip_id, st.stop_sequence),
            MobilityEntity::ArrivalEstimation(a) => format!("{}:{}", a.trip_id, a.stop_id),
            MobilityEntity::VehiclePosition(v) => v.vehicle_id.clone(),
            MobilityEntity::FeedPointer(p) => p.feed_id.clone(),
            MobilityEntity::ParkingSpotGroup(p) => p.group_id.clone(),
            MobilityEntity::TrafficFlowObserved(t) => t.segment_id.clone(),
        }
    }

    pub fn entity_id(&self) -> String {
        urn(self.type_name(), &self.business_id())
    }
}

macro_rules! from_variant {
    ($($ty:ident => $variant:ident),* $(,)?) => {
        $(impl From<$ty> for MobilityEntity {
            fn from(v: $ty) -> Self {
                MobilityEntity::$variant(v)
            }
        })*
    };
}

from_variant!(
    Agency => Agency,
    Stop => Stop,
    Route => Route,
    Service => Service,
    Trip => Trip,
    StopTime => StopTime,
    ArrivalEstimation => ArrivalEstimation,
    VehiclePosition => VehiclePosition,
    FeedPointer => FeedPointer,
    ParkingSpotGroup => ParkingSpotGroup,
    TrafficFlowObserved => TrafficFlowObserved,
);
