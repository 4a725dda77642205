use super::bridge::Translator;
use crate::broker::Notification;
use crate::http::{Handler, Request, Response, PROTOBUF};
use serde_json::json;
use std::sync::Arc;

/// REST front of a translator, plus the `/notify` callback the broker posts to.
pub fn bridge_handler(translator: Arc<Translator>) -> Arc<dyn Handler> {
    Arc::new(move |req: Request| route(&translator, req))
}

fn route(t: &Translator, req: Request) -> Response {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/gtfs-rt/trip-updates") => Response::bytes(200, PROTOBUF, t.snapshot().trip_updates_pb.clone()),
        ("GET", "/gtfs-rt/vehicle-positions") => Response::bytes(200, PROTOBUF, t.snapshot().vehicle_positions_pb.clone()),
        ("GET", "/gtfs-rt/debug") => {
            let s = t.snapshot();
            Response::json(
                200,
                &json!({ "tripUpdates": s.trip_updates, "vehiclePositions": s.vehicle_positions, "metrics": s.metrics }),
            )
        }
        ("GET", "/metrics") => Response::json(200, &t.metrics()),
        ("GET", "/health") => Response::json(200, &json!({ "status": "up", "scheduledStops": t.schedule().len() })),
        ("POST", "/notify") => {
            let parsed = serde_json::from_slice(&req.body)
                .map_err(|e| e.to_string())
                .and_then(|v| Notification::from_wire(&v).map_err(|e| e.to_string()));
            match parsed {
                Ok(n) => {
                    t.on_notification(&n);
                    Response::empty(204)
                }
                Err(e) => Response::error(400, &e),
            }
        }
        _ => Response::not_found(),
    }
}
