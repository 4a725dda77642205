use crate::clock::{parse_iso8601, to_iso8601, Epoch};
use crate::geo::GeoPoint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;

use super::BrokerError;

/// Attribute payload. The variant decides the NGSI attribute `type` on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Number(f64),
    Bool(bool),
    Text(String),
    Geo(GeoPoint),
    DateTime(Epoch),
    Structured(Value),
}

impl AttrValue {
    pub fn wire_type(&self) -> &'static str {
        match self {
            AttrValue::Number(_) => "Number",
            AttrValue::Bool(_) => "Boolean",
            AttrValue::Text(_) => "Text",
            AttrValue::Geo(_) => "geo:point",
            AttrValue::DateTime(_) => "DateTime",
            AttrValue::Structured(_) => "StructuredValue",
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_geo(&self) -> Option<GeoPoint> {
        match self {
            AttrValue::Geo(p) => Some(*p),
            _ => None,
        }
    }

    pub fn as_epoch(&self) -> Option<Epoch> {
        match self {
            AttrValue::DateTime(t) => Some(*t),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            AttrValue::Number(n) if !n.is_finite() => Err(format!("non-finite number {n}")),
            AttrValue::Geo(p) => p.validate().map_err(|e| e.to_string()),
            _ => Ok(()),
        }
    }

    /// `{"type": ..., "value": ...}` form.
    pub fn to_wire(&self) -> Value {
        let value = match self {
            AttrValue::Number(n) => json!(n),
            AttrValue::Bool(b) => json!(b),
            AttrValue::Text(s) => json!(s),
            AttrValue::Geo(p) => json!(p.to_string()),
            AttrValue::DateTime(t) => json!(to_iso8601(*t)),
            AttrValue::Structured(v) => v.clone(),
        };
        json!({ "type": self.wire_type(), "value": value })
    }

    pub fn from_wire(v: &Value) -> Result<Self, String> {
        let value = v.get("value").ok_or("attribute without value")?;
        let declared = v.get("type").and_then(Value::as_str);
        let parsed = match declared {
            Some("Number") | Some("Integer") | Some("Float") => {
                AttrValue::Number(value.as_f64().ok_or("Number attribute must hold a number")?)
            }
            Some("Boolean") => AttrValue::Bool(value.as_bool().ok_or("Boolean attribute must hold a bool")?),
            Some("Text") | Some("String") => {
                AttrValue::Text(value.as_str().ok_or("Text attribute must hold a string")?.to_string())
            }
            Some("geo:point") => {
                let s = value.as_str().ok_or("geo:point must be a \"lat, lon\" string")?;
                AttrValue::Geo(GeoPoint::parse(s).map_err(|e| e.to_string())?)
            }
            Some("DateTime") => {
                let s = value.as_str().ok_or("DateTime must be an ISO-8601 string")?;
                AttrValue::DateTime(parse_iso8601(s).map_err(|e| e.to_string())?)
            }
            Some("StructuredValue") => AttrValue::Structured(value.clone()),
            Some(other) => return Err(format!("unsupported attribute type {other:?}")),
            None => match value {
                Value::Number(n) => AttrValue::Number(n.as_f64().ok_or("bad number")?),
                Value::Bool(b) => AttrValue::Bool(*b),
                Value::String(s) => AttrValue::Text(s.clone()),
                other => AttrValue::Structured(other.clone()),
            },
        };
        parsed.check()?;
        Ok(parsed)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Number(v)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Number(v as f64)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Text(v.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(v: String) -> Self {
        AttrValue::Text(v)
    }
}

impl From<bool> for AttrValue {
    fn from(v: bool) -> Self {
        AttrValue::Bool(v)
    }
}

impl From<GeoPoint> for AttrValue {
    fn from(v: GeoPoint) -> Self {
        AttrValue::Geo(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub value: AttrValue,
    pub observed_at: Option<Epoch>,
}

impl Attribute {
    pub fn new(value: impl Into<AttrValue>) -> Self {
        Attribute { value: value.into(), observed_at: None }
    }

    pub fn observed(value: impl Into<AttrValue>, at: Epoch) -> Self {
        Attribute { value: value.into(), observed_at: Some(at) }
    }

    pub fn to_wire(&self) -> Value {
        let mut v = self.value.to_wire();
        if let Some(t) = self.observed_at {
            v["metadata"] = json!({ "observedAt": { "type": "DateTime", "value": to_iso8601(t) } });
        }
        v
    }

    pub fn from_wire(v: &Value) -> Result<Self, String> {
        let value = AttrValue::from_wire(v)?;
        let observed_at = match v.pointer("/metadata/observedAt/value") {
            Some(Value::String(s)) => Some(parse_iso8601(s).map_err(|e| e.to_string())?),
            Some(Value::Number(n)) => Some(n.as_i64().ok_or("observedAt must be integral")?),
            Some(_) => return Err("observedAt must be a timestamp".into()),
            None => None,
        };
        Ok(Attribute { value, observed_at })
    }
}

/// NGSI context entity: the unit of data every atomic service exchanges.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntity {
    pub id: String,
    pub entity_type: String,
    pub attrs: BTreeMap<String, Attribute>,
}

impl ContextEntity {
    pub fn new(id: impl Into<String>, entity_type: impl Into<String>) -> Self {
        ContextEntity { id: id.into(), entity_type: entity_type.into(), attrs: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(name.to_string(), Attribute::new(value));
        self
    }

    pub fn with_observed(mut self, name: &str, value: impl Into<AttrValue>, at: Epoch) -> Self {
        self.attrs.insert(name.to_string(), Attribute::observed(value, at));
        self
    }

    pub fn set(&mut self, name: &str, attr: Attribute) {
        self.attrs.insert(name.to_string(), attr);
    }

    pub fn value(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name).map(|a| &a.value)
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.value(name).and_then(AttrValue::as_number)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.value(name).and_then(AttrValue::as_text)
    }

    pub fn geo(&self, name: &str) -> Option<GeoPoint> {
        self.value(name).and_then(AttrValue::as_geo)
    }

    /// Point used for geographic filtering.
    pub fn location(&self) -> Option<GeoPoint> {
        self.geo("location")
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        check_name("id", &self.id)?;
        check_name("type", &self.entity_type)?;
        for (name, attr) in &self.attrs {
            if name.is_empty() || name == "id" || name == "type" {
                return Err(BrokerError::MalformedEntity(format!("{}: illegal attribute name {name:?}", self.id)));
            }
            attr.value
                .check()
                .map_err(|e| BrokerError::MalformedEntity(format!("{}.{name}: {e}", self.id)))?;
        }
        Ok(())
    }

    pub fn to_wire(&self) -> Value {
        let mut m = Map::new();
        m.insert("id".into(), json!(self.id));
        m.insert("type".into(), json!(self.entity_type));
        for (k, a) in &self.attrs {
            m.insert(k.clone(), a.to_wire());
        }
        Value::Object(m)
    }

    pub fn from_wire(v: &Value) -> Result<Self, BrokerError> {
        let obj = v
            .as_object()
            .ok_or_else(|| BrokerError::MalformedEntity("entity must be a JSON object".into()))?;
        let id = obj.get("id").and_then(Value::as_str).unwrap_or_default();
        let ty = obj.get("type").and_then(Value::as_str).unwrap_or_default();
        let mut e = ContextEntity::new(id, ty);
        e.attrs = attrs_from_wire(obj.iter().filter(|(k, _)| *k != "id" && *k != "type"))
            .map_err(|err| BrokerError::MalformedEntity(format!("{id}: {err}")))?;
        e.validate()?;
        Ok(e)
    }
}

pub(crate) fn attrs_from_wire<'a>(
    items: impl Iterator<Item = (&'a String, &'a Value)>,
) -> Result<BTreeMap<String, Attribute>, String> {
    items
        .map(|(k, v)| Attribute::from_wire(v).map(|a| (k.clone(), a)).map_err(|e| format!("{k}: {e}")))
        .collect()
}

fn check_name(what: &str, s: &str) -> Result<(), BrokerError> {
    if s.is_empty() {
        return Err(BrokerError::MalformedEntity(format!("entity {what} must be non-empty")));
    }
    if s.chars().any(|c| c.is_control() || c.is_whitespace()) {
        return Err(BrokerError::MalformedEntity(format!("entity {what} {s:?} contains whitespace")));
    }
    Ok(())
}

impl Serialize for ContextEntity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContextEntity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        ContextEntity::from_wire(&v).map_err(serde::de::Error::custom)
    }
}
