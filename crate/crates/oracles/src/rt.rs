//! GTFS-realtime decoding through the generated protobuf bindings.

use gtfs_realtime::FeedMessage;
use prost::Message;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decoded {
    pub version: String,
    pub full_dataset: bool,
    pub timestamp: Option<u64>,
    /// trip id -> stop sequence -> (stop id, arrival delay)
    pub delays: BTreeMap<String, BTreeMap<u32, (String, i32)>>,
    /// vehicle id -> (trip id, lat, lon)
    pub vehicles: BTreeMap<String, (Option<String>, f32, f32)>,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded, prost::DecodeError> {
    let msg = FeedMessage::decode(bytes)?;
    let mut out = Decoded {
        version: msg.header.gtfs_realtime_version.clone(),
        full_dataset: msg.header.incrementality.unwrap_or(0) == 0,
        timestamp: msg.header.timestamp,
        ..Decoded::default()
    };
    for e in &msg.entity {
        if let Some(tu) = &e.trip_update {
            let trip = tu.trip.trip_id.clone().unwrap_or_default();
            let stops = out.delays.entry(trip).or_default();
            for u in &tu.stop_time_update {
                let delay = u.arrival.as_ref().and_then(|a| a.delay).unwrap_or(0);
                stops.insert(u.stop_sequence.unwrap_or(0), (u.stop_id.clone().unwrap_or_default(), delay));
            }
        }
        if let Some(v) = &e.vehicle {
            let id = v.vehicle.as_ref().and_then(|d| d.id.clone()).unwrap_or_else(|| e.id.clone());
            let trip = v.trip.as_ref().and_then(|t| t.trip_id.clone());
            let (lat, lon) = v.position.as_ref().map_or((f32::NAN, f32::NAN), |p| (p.latitude, p.longitude));
            out.vehicles.insert(id, (trip, lat, lon));
        }
    }
    Ok(out)
}
