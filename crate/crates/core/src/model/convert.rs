use super::*;
use crate::broker::{AttrValue, Attribute, ContextEntity};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown entity type {0:?}")]
    UnknownEntityType(String),
    #[error("{entity}: missing mandatory field {field}")]
    MissingMandatoryField { entity: String, field: String },
    #[error("{entity}: invalid field {field}: {detail}")]
    InvalidField { entity: String, field: String, detail: String },
}

impl MobilityEntity {
    pub fn to_context(&self) -> ContextEntity {
        let e = ContextEntity::new(self.entity_id(), self.type_name());
        match self {
            MobilityEntity::Agency(a) => e
                .with("agencyId", a.agency_id.as_str())
                .with("name", a.name.as_str())
                .with("url", a.url.as_str())
                .with("timezone", a.timezone.as_str()),
            MobilityEntity::Stop(s) => e
                .with("stopId", s.stop_id.as_str())
                .with("name", s.name.as_str())
                .with("location", AttrValue::Geo(GeoPoint { lat: s.lat, lon: s.lon })),
            MobilityEntity::Route(r) => e
                .with("routeId", r.route_id.as_str())
                .with("agencyRef", urn(GTFS_AGENCY, &r.agency_id))
                .with("shortName", r.short_name.as_str())
                .with("routeType", r.route_type as i64),
            MobilityEntity::Service(s) => e
                .with("serviceId", s.service_id.as_str())
                .with("weekdayFlags", AttrValue::Structured(serde_json::json!(s.weekdays)))
                .with("startDate", s.start_date.to_string())
                .with("endDate", s.end_date.to_string()),
            MobilityEntity::Trip(t) => e
                .with("tripId", t.trip_id.as_str())
                .with("routeRef", urn(GTFS_ROUTE, &t.route_id))
                .with("serviceRef", urn(GTFS_SERVICE, &t.service_id))
                .with("headsign", t.headsign.as_str()),
            MobilityEntity::StopTime(st) => e
                .with("tripRef", urn(GTFS_TRIP, &st.trip_id))
                .with("stopRef", urn(GTFS_STOP, &st.stop_id))
                .with("stopSequence", st.stop_sequence as i64)
                .with("arrivalTime", st.arrival_time as i64)
                .with("departureTime", st.departure_time as i64),
            MobilityEntity::ArrivalEstimation(a) => e
                .with_observed("tripRef", urn(GTFS_TRIP, &a.trip_id), a.observed_at)
                .with_observed("stopRef", urn(GTFS_STOP, &a.stop_id), a.observed_at)
                .with_observed("estimatedArrivalTime", AttrValue::DateTime(a.estimated_arrival), a.observed_at),
            MobilityEntity::VehiclePosition(v) => {
                let mut e = e
                    .with_observed("vehicleId", v.vehicle_id.as_str(), v.observed_at)
                    .with_observed("location", v.location, v.observed_at);
                if let Some(t) = &v.trip_id {
                    e = e.with_observed("tripRef", urn(GTFS_TRIP, t), v.observed_at);
                }
                if let Some(b) = v.bearing {
                    e = e.with_observed("bearing", b, v.observed_at);
                }
                e
            }
            MobilityEntity::FeedPointer(p) => e
                .with("feedId", p.feed_id.as_str())
                .with("sourceUrl", p.source_url.as_str())
                .with("version", p.version.as_str())
                .with("validFrom", p.valid_from.to_string())
                .with("validUntil", p.valid_until.to_string()),
            MobilityEntity::ParkingSpotGroup(p) => e
                .with_observed("groupId", p.group_id.as_str(), p.observed_at)
                .with_observed("location", p.location, p.observed_at)
                .with_observed("totalSpots", p.total_spots as i64, p.observed_at)
                .with_observed("availableSpots", p.available_spots as i64, p.observed_at),
            MobilityEntity::TrafficFlowObserved(t) => e
                .with_observed("segmentId", t.segment_id.as_str(), t.observed_at)
                .with_observed("location", t.location, t.observed_at)
                .with_observed("intensity", t.intensity, t.observed_at),
        }
    }

    pub fn from_context(entity: &ContextEntity) -> Result<Self, ModelError> {
        let r = Reader(entity);
        let parsed = match entity.entity_type.as_str() {
            GTFS_AGENCY => MobilityEntity::Agency(Agency {
                agency_id: r.text("agencyId")?,
                name: r.text("name")?,
                url: r.text("url")?,
                timezone: r.text("timezone")?,
            }),
            GTFS_STOP => {
                let loc = r.geo("location")?;
                MobilityEntity::Stop(Stop { stop_id: r.text("stopId")?, name: r.text("name")?, lat: loc.lat, lon: loc.lon })
            }
            GTFS_ROUTE => MobilityEntity::Route(Route {
                route_id: r.text("routeId")?,
                agency_id: r.reference("agencyRef", GTFS_AGENCY)?,
                short_name: r.text("shortName")?,
                route_type: r.integer("routeType", i32::MIN as i64, i32::MAX as i64)? as i32,
            }),
            GTFS_SERVICE => MobilityEntity::Service(Service {
                service_id: r.text("serviceId")?,
                weekdays: r.weekdays("weekdayFlags")?,
                start_date: r.date("startDate")?,
                end_date: r.date("endDate")?,
            }),
            GTFS_TRIP => MobilityEntity::Trip(Trip {
                trip_id: r.text("tripId")?,
                route_id: r.reference("routeRef", GTFS_ROUTE)?,
                service_id: r.reference("serviceRef", GTFS_SERVICE)?,
                headsign: r.text("headsign")?,
            }),
            GTFS_STOP_TIME => MobilityEntity::StopTime(StopTime {
                trip_id: r.reference("tripRef", GTFS_TRIP)?,
                stop_id: r.reference("stopRef", GTFS_STOP)?,
                stop_sequence: r.integer("stopSequence", 0, u32::MAX as i64)? as u32,
                arrival_time: r.integer("arrivalTime", 0, u32::MAX as i64)? as u32,
                departure_time: r.integer("departureTime", 0, u32::MAX as i64)? as u32,
            }),
            ARRIVAL_ESTIMATION => MobilityEntity::ArrivalEstimation(ArrivalEstimation {
                trip_id: r.reference("tripRef", GTFS_TRIP)?,
                stop_id: r.reference("stopRef", GTFS_STOP)?,
                estimated_arrival: r.epoch("estimatedArrivalTime")?,
                observed_at: r.observed_at("estimatedArrivalTime")?,
            }),
            VEHICLE_POSITION => MobilityEntity::VehiclePosition(VehiclePosition {
                vehicle_id: r.text("vehicleId")?,
                trip_id: r.optional("tripRef", |r| r.reference("tripRef", GTFS_TRIP))?,
                location: r.geo("location")?,
                bearing: r.optional("bearing", |r| r.number("bearing"))?,
                observed_at: r.observed_at("location")?,
            }),
            GTFS_FEED_POINTER => MobilityEntity::FeedPointer(FeedPointer {
                feed_id: r.text("feedId")?,
                source_url: r.text("sourceUrl")?,
                version: r.text("version")?,
                valid_from: r.date("validFrom")?,
                valid_until: r.date("validUntil")?,
            }),
            PARKING_SPOT_GROUP => MobilityEntity::ParkingSpotGroup(ParkingSpotGroup {
                group_id: r.text("groupId")?,
                location: r.geo("location")?,
                total_spots: r.integer("totalSpots", 0, u32::MAX as i64)? as u32,
                available_spots: r.integer("availableSpots", 0, u32::MAX as i64)? as u32,
                observed_at: r.observed_at("availableSpots")?,
            }),
            TRAFFIC_FLOW_OBSERVED => MobilityEntity::TrafficFlowObserved(TrafficFlowObserved {
                segment_id: r.text("segmentId")?,
                location: r.geo("location")?,
                intensity: r.number("intensity")?,
                observed_at: r.observed_at("intensity")?,
            }),
            other => return Err(ModelError::UnknownEntityType(other.to_string())),
        };
        if parsed.entity_id() != entity.id {
            return Err(r.invalid("id", format!("expected {}", parsed.entity_id())));
        }
        Ok(parsed)
    }
}

struct Reader<'a>(&'a ContextEntity);

impl Reader<'_> {
    fn attr(&self, field: &str) -> Result<&Attribute, ModelError> {
        self.0.attrs.get(field).ok_or_else(|| ModelError::MissingMandatoryField {
            entity: self.0.id.clone(),
            field: field.to_string(),
        })
    }

    fn invalid(&self, field: &str, detail: impl Into<String>) -> ModelError {
        ModelError::InvalidField { entity: self.0.id.clone(), field: field.to_string(), detail: detail.into() }
    }

    fn optional<T>(&self, field: &str, read: impl FnOnce(&Self) -> Result<T, ModelError>) -> Result<Option<T>, ModelError> {
        if self.0.attrs.contains_key(field) {
            read(self).map(Some)
        } else {
            Ok(None)
        }
    }

    fn text(&self, field: &str) -> Result<String, ModelError> {
        match &self.attr(field)?.value {
            AttrValue::Text(s) => Ok(s.clone()),
            other => Err(self.invalid(field, format!("expected Text, got {}", other.wire_type()))),
        }
    }

    fn number(&self, field: &str) -> Result<f64, ModelError> {
        match &self.attr(field)?.value {
            AttrValue::Number(n) => Ok(*n),
            other => Err(self.invalid(field, format!("expected Number, got {}", other.wire_type()))),
        }
    }

    fn integer(&self, field: &str, min: i64, max: i64) -> Result<i64, ModelError> {
        let n = self.number(field)?;
        if n.fract() != 0.0 || n < min as f64 || n > max as f64 {
            return Err(self.invalid(field, format!("{n} is not an integer in [{min}, {max}]")));
        }
        Ok(n as i64)
    }

    fn geo(&self, field: &str) -> Result<GeoPoint, ModelError> {
        match &self.attr(field)?.value {
            AttrValue::Geo(p) => Ok(*p),
            AttrValue::Text(s) => GeoPoint::parse(s).map_err(|e| self.invalid(field, e.to_string())),
            other => Err(self.invalid(field, format!("expected geo:point, got {}", other.wire_type()))),
        }
    }

    fn epoch(&self, field: &str) -> Result<Epoch, ModelError> {
        match &self.attr(field)?.value {
            AttrValue::DateTime(t) => Ok(*t),
            AttrValue::Number(n) if n.fract() == 0.0 => Ok(*n as Epoch),
            other => Err(self.invalid(field, format!("expected DateTime, got {}", other.wire_type()))),
        }
    }

    fn date(&self, field: &str) -> Result<ServiceDate, ModelError> {
        self.text(field)?.parse().map_err(|e: crate::gtfs::GtfsError| self.invalid(field, e.to_string()))
    }

    fn reference(&self, field: &str, target_type: &str) -> Result<String, ModelError> {
        let s = self.text(field)?;
        business_id(target_type, &s)
            .map(str::to_string)
            .ok_or_else(|| self.invalid(field, format!("{s:?} is not a {target_type} reference")))
    }

    fn weekdays(&self, field: &str) -> Result<[bool; 7], ModelError> {
        let bad = || self.invalid(field, "expected an array of 7 booleans");
        match &self.attr(field)?.value {
            AttrValue::Structured(Value::Array(items)) if items.len() == 7 => {
                let mut out = [false; 7];
                for (slot, v) in out.iter_mut().zip(items) {
                    *slot = v.as_bool().ok_or_else(bad)?;
                }
                Ok(out)
            }
            _ => Err(bad()),
        }
    }

    fn observed_at(&self, field: &str) -> Result<Epoch, ModelError> {
        self.attr(field)?.observed_at.ok_or_else(|| ModelError::MissingMandatoryField {
            entity: self.0.id.clone(),
            field: format!("{field}.observedAt"),
        })
    }
}

/// Free-function form of [`MobilityEntity::to_context`].
pub fn to_context(entity: &MobilityEntity) -> ContextEntity {
    entity.to_context()
}

/// Free-function form of [`MobilityEntity::from_context`].
pub fn from_context(entity: &ContextEntity) -> Result<MobilityEntity, ModelError> {
    MobilityEntity::from_context(entity)
}
