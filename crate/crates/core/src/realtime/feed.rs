//! GTFS-realtime message subset and its protobuf encoding.
//!
//! Field numbers follow the published `gtfs-realtime.proto`. Fields are
//! written in ascending field-number order; required fields of the proto2
//! schema are always present.

use super::wire::{Reader, WireError, Writer};
use serde::{Deserialize, Serialize};

pub const GTFS_RT_VERSION: &str = "2.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Incrementality {
    #[default]
    FullDataset = 0,
    Differential = 1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RtHeader {
    pub gtfs_realtime_version: String,
    pub incrementality: Incrementality,
    pub timestamp: u64,
}

impl RtHeader {
    pub fn full_dataset(timestamp: u64) -> Self {
        RtHeader { gtfs_realtime_version: GTFS_RT_VERSION.into(), incrementality: Incrementality::FullDataset, timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StopTimeUpdate {
    pub stop_sequence: Option<u32>,
    pub stop_id: Option<String>,
    pub arrival_delay: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TripUpdate {
    pub trip_id: String,
    pub route_id: Option<String>,
    /// Sorted by stop sequence.
    pub stop_time_updates: Vec<StopTimeUpdate>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VehicleUpdate {
    pub vehicle_id: String,
    pub trip_id: Option<String>,
    pub latitude: f32,
    pub longitude: f32,
    pub bearing: Option<f32>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum RtPayload {
    TripUpdate(TripUpdate),
    Vehicle(VehicleUpdate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RtEntity {
    pub id: String,
    pub payload: RtPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RtFeedMessage {
    pub header: RtHeader,
    pub entities: Vec<RtEntity>,
}

impl RtFeedMessage {
    pub fn empty(timestamp: u64) -> Self {
        RtFeedMessage { header: RtHeader::full_dataset(timestamp), entities: Vec::new() }
    }

    pub fn trip_updates(&self) -> impl Iterator<Item = &TripUpdate> {
        self.entities.iter().filter_map(|e| match &e.payload {
            RtPayload::TripUpdate(t) => Some(t),
            RtPayload::Vehicle(_) => None,
        })
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleUpdate> {
        self.entities.iter().filter_map(|e| match &e.payload {
            RtPayload::Vehicle(v) => Some(v),
            RtPayload::TripUpdate(_) => None,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.message(1, |h| {
            h.string(1, &self.header.gtfs_realtime_version);
            h.uint(2, self.header.incrementality as u64);
            h.uint(3, self.header.timestamp);
        });
        for e in &self.entities {
            w.message(2, |m| encode_entity(m, e));
        }
        w.into_bytes()
    }

    /// Decodes a feed, skipping fields outside the supported subset.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut header = None;
        let mut entities = Vec::new();
        let mut r = Reader::new(bytes);
        while let Some((field, v)) = r.next_field()? {
            match field {
                1 => header = Some(decode_header(v.as_bytes(field)?)?),
                2 => {
                    if let Some(e) = decode_entity(v.as_bytes(field)?)? {
                        entities.push(e);
                    }
                }
                _ => {}
            }
        }
        Ok(RtFeedMessage { header: header.ok_or(WireError::MissingRequired("FeedMessage.header"))?, entities })
    }
}

fn encode_trip_descriptor(w: &mut Writer, trip_id: &str, route_id: Option<&str>) {
    w.string(1, trip_id);
    if let Some(r) = route_id {
        w.string(5, r);
    }
}

fn encode_entity(w: &mut Writer, e: &RtEntity) {
    w.string(1, &e.id);
    match &e.payload {
        RtPayload::TripUpdate(t) => w.message(3, |m| {
            m.message(1, |d| encode_trip_descriptor(d, &t.trip_id, t.route_id.as_deref()));
            for u in &t.stop_time_updates {
                m.message(2, |s| {
                    if let Some(seq) = u.stop_sequence {
                        s.uint(1, seq as u64);
                    }
                    s.message(2, |ev| ev.int(1, u.arrival_delay as i64));
                    if let Some(stop) = &u.stop_id {
                        s.string(4, stop);
                    }
                });
            }
            if let Some(ts) = t.timestamp {
                m.uint(4, ts);
            }
        }),
        RtPayload::Vehicle(v) => w.message(4, |m| {
            if let Some(trip) = &v.trip_id {
                m.message(1, |d| encode_trip_descriptor(d, trip, None));
            }
            m.message(2, |p| {
                p.float(1, v.latitude);
                p.float(2, v.longitude);
                if let Some(b) = v.bearing {
                    p.float(3, b);
                }
            });
            if let Some(ts) = v.timestamp {
                m.uint(5, ts);
            }
            m.message(8, |d| d.string(1, &v.vehicle_id));
        }),
    }
}

fn decode_header(bytes: &[u8]) -> Result<RtHeader, WireError> {
    let mut version = None;
    let mut incrementality = Incrementality::FullDataset;
    let mut timestamp = 0;
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => version = Some(v.as_str(field)?.to_string()),
            2 => {
                incrementality = match v.as_u64(field)? {
                    1 => Incrementality::Differential,
                    _ => Incrementality::FullDataset,
                }
            }
            3 => timestamp = v.as_u64(field)?,
            _ => {}
        }
    }
    Ok(RtHeader {
        gtfs_realtime_version: version.ok_or(WireError::MissingRequired("FeedHeader.gtfs_realtime_version"))?,
        incrementality,
        timestamp,
    })
}

fn decode_trip_descriptor(bytes: &[u8]) -> Result<(Option<String>, Option<String>), WireError> {
    let (mut trip, mut route) = (None, None);
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => trip = Some(v.as_str(field)?.to_string()),
            5 => route = Some(v.as_str(field)?.to_string()),
            _ => {}
        }
    }
    Ok((trip, route))
}

fn decode_entity(bytes: &[u8]) -> Result<Option<RtEntity>, WireError> {
    let mut id = None;
    let mut payload = None;
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => id = Some(v.as_str(field)?.to_string()),
            3 => payload = decode_trip_update(v.as_bytes(field)?)?.map(RtPayload::TripUpdate),
            4 => payload = decode_vehicle(v.as_bytes(field)?)?.map(RtPayload::Vehicle),
            _ => {}
        }
    }
    let id = id.ok_or(WireError::MissingRequired("FeedEntity.id"))?;
    Ok(payload.map(|payload| RtEntity { id, payload }))
}

/// Trip updates without a trip id cannot be matched and are dropped.
fn decode_trip_update(bytes: &[u8]) -> Result<Option<TripUpdate>, WireError> {
    let mut descriptor = None;
    let mut updates = Vec::new();
    let mut timestamp = None;
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => descriptor = Some(decode_trip_descriptor(v.as_bytes(field)?)?),
            2 => {
                if let Some(u) = decode_stop_time_update(v.as_bytes(field)?)? {
                    updates.push(u);
                }
            }
            4 => timestamp = Some(v.as_u64(field)?),
            _ => {}
        }
    }
    let (trip, route_id) = descriptor.ok_or(WireError::MissingRequired("TripUpdate.trip"))?;
    Ok(trip.map(|trip_id| TripUpdate { trip_id, route_id, stop_time_updates: updates, timestamp }))
}

/// Updates carrying no arrival delay are dropped.
fn decode_stop_time_update(bytes: &[u8]) -> Result<Option<StopTimeUpdate>, WireError> {
    let (mut seq, mut stop, mut delay) = (None, None, None);
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => seq = Some(v.as_u32(field)?),
            2 => {
                let mut ev = Reader::new(v.as_bytes(field)?);
                while let Some((f, x)) = ev.next_field()? {
                    if f == 1 {
                        delay = Some(x.as_i32(f)?);
                    }
                }
            }
            4 => stop = Some(v.as_str(field)?.to_string()),
            _ => {}
        }
    }
    Ok(delay.map(|arrival_delay| StopTimeUpdate { stop_sequence: seq, stop_id: stop, arrival_delay }))
}

fn decode_vehicle(bytes: &[u8]) -> Result<Option<VehicleUpdate>, WireError> {
    let mut trip_id = None;
    let mut position = None;
    let mut timestamp = None;
    let mut vehicle_id = None;
    let mut r = Reader::new(bytes);
    while let Some((field, v)) = r.next_field()? {
        match field {
            1 => trip_id = decode_trip_descriptor(v.as_bytes(field)?)?.0,
            2 => {
                let (mut lat, mut lon, mut bearing) = (None, None, None);
                let mut p = Reader::new(v.as_bytes(field)?);
                while let Some((f, x)) = p.next_field()? {
                    match f {
                        1 => lat = Some(x.as_f32(f)?),
                        2 => lon = Some(x.as_f32(f)?),
                        3 => bearing = Some(x.as_f32(f)?),
                        _ => {}
                    }
                }
                position = Some((
                    lat.ok_or(WireError::MissingRequired("Position.latitude"))?,
                    lon.ok_or(WireError::MissingRequired("Position.longitude"))?,
                    bearing,
                ));
            }
            5 => timestamp = Some(v.as_u64(field)?),
            8 => {
                let mut d = Reader::new(v.as_bytes(field)?);
                while let Some((f, x)) = d.next_field()? {
                    if f == 1 {
                        vehicle_id = Some(x.as_str(f)?.to_string());
                    }
                }
            }
            _ => {}
        }
    }
    Ok(match (vehicle_id, position) {
        (Some(vehicle_id), Some((latitude, longitude, bearing))) => {
            Some(VehicleUpdate { vehicle_id, trip_id, latitude, longitude, bearing, timestamp })
        }
        _ => None,
    })
}
