//! NGSIv2-flavoured HTTP binding of the broker, server and client side.

use super::entity::{attrs_from_wire, AttrValue, Attribute, ContextEntity};
use super::query::EntityQuery;
use super::subscription::{NotifyTarget, Subscription};
use super::{Broker, BrokerError, ContextBroker, HistoricalRecord, UpsertResult};
use crate::clock::{parse_iso8601, to_iso8601, Epoch};
use crate::http::{self as h, ClientError, Handler, HttpServer, Request, Response};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Arc;

fn error_response(e: &BrokerError) -> Response {
    let mut body = json!({ "error": e.kind(), "description": e.to_string() });
    match e {
        BrokerError::IdTypeConflict { id, existing, requested } => {
            body["id"] = json!(id);
            body["existing"] = json!(existing);
            body["requested"] = json!(requested);
        }
        BrokerError::BadRange { from, to } => {
            body["from"] = json!(from);
            body["to"] = json!(to);
        }
        _ => {}
    }
    Response::json(e.http_status(), &body)
}

fn decode_error(status: u16, body: &str) -> BrokerError {
    let v: Value = serde_json::from_str(body).unwrap_or(Value::Null);
    let desc = v.get("description").and_then(Value::as_str).unwrap_or(body).to_string();
    let s = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    match v.get("error").and_then(Value::as_str) {
        Some("MalformedEntity") => BrokerError::MalformedEntity(desc),
        Some("IdTypeConflict") => BrokerError::IdTypeConflict { id: s("id"), existing: s("existing"), requested: s("requested") },
        Some("BadPredicate") => BrokerError::BadPredicate(desc),
        Some("MissingFilter") => BrokerError::MissingFilter,
        Some("BadSubscription") => BrokerError::BadSubscription(desc),
        Some("BadTarget") => BrokerError::BadTarget(desc),
        Some("UnknownEntity") => BrokerError::UnknownEntity(desc),
        Some("UnknownSubscription") => BrokerError::UnknownSubscription(desc),
        Some("BadRange") => BrokerError::BadRange {
            from: v.get("from").and_then(Value::as_i64).unwrap_or_default(),
            to: v.get("to").and_then(Value::as_i64).unwrap_or_default(),
        },
        Some("Journal") => BrokerError::Journal(desc),
        _ if status == 404 => BrokerError::UnknownEntity(desc),
        _ => BrokerError::Unavailable(format!("HTTP {status}: {desc}")),
    }
}

fn history_to_wire(r: &HistoricalRecord) -> Value {
    json!({
        "entityId": r.entity_id,
        "attrName": r.attr_name,
        "value": r.value.to_wire(),
        "observedAt": to_iso8601(r.observed_at),
    })
}

fn history_from_wire(v: &Value) -> Result<HistoricalRecord, String> {
    Ok(HistoricalRecord {
        entity_id: v.get("entityId").and_then(Value::as_str).ok_or("entityId")?.to_string(),
        attr_name: v.get("attrName").and_then(Value::as_str).ok_or("attrName")?.to_string(),
        value: AttrValue::from_wire(v.get("value").ok_or("value")?)?,
        observed_at: parse_iso8601(v.get("observedAt").and_then(Value::as_str).ok_or("observedAt")?)
            .map_err(|e| e.to_string())?,
    })
}

fn parse_body(req: &Request) -> Result<Value, Response> {
    serde_json::from_slice(&req.body).map_err(|e| Response::error(400, &format!("invalid JSON: {e}")))
}

fn time_param(req: &Request, name: &str, default: Epoch) -> Result<Epoch, Response> {
    match req.param(name) {
        None => Ok(default),
        Some(s) => parse_iso8601(s).map_err(|e| Response::error(400, &e.to_string())),
    }
}

/// Request handler exposing `broker` under `/v2`.
pub fn broker_handler(broker: Arc<Broker>) -> Arc<dyn Handler> {
    Arc::new(move |req: Request| route(&broker, req).unwrap_or_else(|r| r))
}

pub fn serve_broker(broker: Arc<Broker>, addr: &str) -> std::io::Result<HttpServer> {
    HttpServer::bind(addr, broker_handler(broker), 8)
}

fn route(b: &Broker, req: Request) -> Result<Response, Response> {
    let segs = req.segments();
    let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
    let err = |e: BrokerError| error_response(&e);
    match (req.method.as_str(), segs.as_slice()) {
        ("GET", ["health"]) | ("GET", ["version"]) => Ok(if b.is_online() {
            Response::json(200, &json!({ "status": "up", "entities": b.entity_count(), "upserts": b.upsert_count() }))
        } else {
            Response::json(503, &json!({ "status": "down" }))
        }),
        ("GET", ["v2", "entities"]) => {
            let q = EntityQuery::from_params(|k| req.param(k)).map_err(err)?;
            let found = b.query(&q).map_err(err)?;
            Ok(Response::json(200, &found.iter().map(ContextEntity::to_wire).collect::<Vec<_>>()))
        }
        ("GET", ["v2", "entities", id]) => match b.get_entity(id).map_err(err)? {
            Some(e) => Ok(Response::json(200, &e.to_wire())),
            None => Err(err(BrokerError::UnknownEntity(id.to_string()))),
        },
        ("POST", ["v2", "entities"]) => {
            let e = ContextEntity::from_wire(&parse_body(&req)?).map_err(err)?;
            let location = format!("/v2/entities/{}", e.id);
            let status = match b.upsert(e).map_err(err)? {
                UpsertResult::Created => 201,
                UpsertResult::Updated => 204,
            };
            Ok(Response::empty(status).with_header("Location", &location))
        }
        ("PATCH", ["v2", "entities", id, "attrs"]) | ("POST", ["v2", "entities", id, "attrs"]) => {
            let body = parse_body(&req)?;
            let obj = body.as_object().ok_or_else(|| Response::error(400, "attrs must be an object"))?;
            let attrs = attrs_from_wire(obj.iter()).map_err(|e| err(BrokerError::MalformedEntity(e)))?;
            b.update_attributes(id, attrs).map_err(err)?;
            Ok(Response::empty(204))
        }
        ("POST", ["v2", "subscriptions"]) => {
            let sub = Subscription::from_wire(&parse_body(&req)?).map_err(err)?;
            let id = b.subscribe(sub).map_err(err)?;
            Ok(Response::json(201, &json!({ "id": id })).with_header("Location", &format!("/v2/subscriptions/{id}")))
        }
        ("GET", ["v2", "subscriptions"]) => {
            let subs = b.subscriptions().map_err(err)?;
            Ok(Response::json(200, &subs.iter().map(Subscription::to_wire).collect::<Vec<_>>()))
        }
        ("DELETE", ["v2", "subscriptions", id]) => {
            b.unsubscribe(id).map_err(err)?;
            Ok(Response::empty(204))
        }
        ("GET", ["v2", "history"]) => {
            let entity = req.param("entityId").ok_or_else(|| Response::error(400, "entityId required"))?;
            let attr = req.param("attr").ok_or_else(|| Response::error(400, "attr required"))?;
            let from = time_param(&req, "from", Epoch::MIN)?;
            let to = time_param(&req, "to", Epoch::MAX)?;
            let records = b.query_history(entity, attr, from, to).map_err(err)?;
            Ok(Response::json(200, &records.iter().map(history_to_wire).collect::<Vec<_>>()))
        }
        _ => Ok(Response::not_found()),
    }
}

/// Client for a remote broker speaking the `/v2` binding above.
#[derive(Debug, Clone)]
pub struct HttpBroker {
    base: String,
}

impl HttpBroker {
    pub fn new(base_url: &str) -> Self {
        HttpBroker { base: base_url.trim_end_matches('/').to_string() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str, params: &[(String, String)]) -> String {
        let mut u = format!("{}{}", self.base, path);
        if !params.is_empty() {
            let q: String = url::form_urlencoded::Serializer::new(String::new()).extend_pairs(params).finish();
            u.push('?');
            u.push_str(&q);
        }
        u
    }

    fn send(&self, method: &str, url: &str, body: Option<&Value>) -> Result<Response, BrokerError> {
        let bytes = body.map(|b| b.to_string().into_bytes());
        let body = bytes.as_deref().map(|b| (h::JSON, b));
        h::call(method, url, &[], body).map_err(|e| match e {
            ClientError::Transport(t) => BrokerError::Unavailable(t),
            ClientError::Status { status, body } => decode_error(status, &body),
        })
    }

    fn json(&self, resp: Response) -> Result<Value, BrokerError> {
        resp.json_body().map_err(|e| BrokerError::Unavailable(format!("bad response body: {e}")))
    }
}

fn path_segment(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

impl ContextBroker for HttpBroker {
    fn upsert(&self, entity: ContextEntity) -> Result<UpsertResult, BrokerError> {
        entity.validate()?;
        let resp = self.send("POST", &self.url("/v2/entities", &[]), Some(&entity.to_wire()))?;
        Ok(if resp.status == 201 { UpsertResult::Created } else { UpsertResult::Updated })
    }

    fn update_attributes(&self, id: &str, attrs: BTreeMap<String, Attribute>) -> Result<(), BrokerError> {
        let body: serde_json::Map<String, Value> = attrs.iter().map(|(k, a)| (k.clone(), a.to_wire())).collect();
        let url = self.url(&format!("/v2/entities/{}/attrs", path_segment(id)), &[]);
        self.send("PATCH", &url, Some(&Value::Object(body))).map(|_| ())
    }

    fn get_entity(&self, id: &str) -> Result<Option<ContextEntity>, BrokerError> {
        match self.send("GET", &self.url(&format!("/v2/entities/{}", path_segment(id)), &[]), None) {
            Ok(resp) => ContextEntity::from_wire(&self.json(resp)?).map(Some),
            Err(BrokerError::UnknownEntity(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn query(&self, q: &EntityQuery) -> Result<Vec<ContextEntity>, BrokerError> {
        q.check()?;
        let resp = self.send("GET", &self.url("/v2/entities", &q.to_params()), None)?;
        match self.json(resp)? {
            Value::Array(items) => items.iter().map(ContextEntity::from_wire).collect(),
            _ => Err(BrokerError::Unavailable("expected an entity array".into())),
        }
    }

    fn subscribe(&self, sub: Subscription) -> Result<String, BrokerError> {
        if matches!(sub.target, NotifyTarget::Sink(_)) {
            return Err(BrokerError::BadTarget("in-process sink needs a local broker".into()));
        }
        sub.check()?;
        let resp = self.send("POST", &self.url("/v2/subscriptions", &[]), Some(&sub.to_wire()))?;
        let v = self.json(resp)?;
        v.get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BrokerError::Unavailable("subscription id missing in response".into()))
    }

    fn unsubscribe(&self, id: &str) -> Result<(), BrokerError> {
        let url = self.url(&format!("/v2/subscriptions/{}", path_segment(id)), &[]);
        match self.send("DELETE", &url, None) {
            Err(BrokerError::UnknownEntity(d)) => Err(BrokerError::UnknownSubscription(d)),
            other => other.map(|_| ()),
        }
    }

    fn subscriptions(&self) -> Result<Vec<Subscription>, BrokerError> {
        let resp = self.send("GET", &self.url("/v2/subscriptions", &[]), None)?;
        match self.json(resp)? {
            Value::Array(items) => items
                .iter()
                .map(|v| {
                    Subscription::from_wire(v).or_else(|_| {
                        // sink-backed subscriptions of the remote broker
                        let mut sub = v.clone();
                        sub["notification"]["http"]["url"] = json!("http://inproc.invalid/");
                        Subscription::from_wire(&sub)
                    })
                })
                .collect(),
            _ => Err(BrokerError::Unavailable("expected a subscription array".into())),
        }
    }

    fn query_history(&self, entity_id: &str, attr: &str, from: Epoch, to: Epoch) -> Result<Vec<HistoricalRecord>, BrokerError> {
        if from > to {
            return Err(BrokerError::BadRange { from, to });
        }
        let params = vec![
            ("entityId".to_string(), entity_id.to_string()),
            ("attr".to_string(), attr.to_string()),
            ("from".to_string(), to_iso8601(from)),
            ("to".to_string(), to_iso8601(to)),
        ];
        let resp = self.send("GET", &self.url("/v2/history", &params), None)?;
        match self.json(resp)? {
            Value::Array(items) => items
                .iter()
                .map(|v| history_from_wire(v).map_err(|e| BrokerError::Unavailable(format!("bad history record: {e}"))))
                .collect(),
            _ => Err(BrokerError::Unavailable("expected a history array".into())),
        }
    }

    fn ping(&self) -> Result<(), BrokerError> {
        self.send("GET", &self.url("/version", &[]), None).map(|_| ())
    }
}
