use super::entity::{AttrValue, ContextEntity};
use super::BrokerError;
use crate::clock::parse_iso8601;
use crate::geo::{GeoFilter, GeoPoint};
use std::cmp::Ordering;
use std::fmt;
use wildmatch::WildMatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Lt,
    Gt,
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareOp::Eq => "==",
            CompareOp::Lt => "<",
            CompareOp::Gt => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrPredicate {
    pub attr: String,
    pub op: CompareOp,
    pub value: AttrValue,
}

impl AttrPredicate {
    pub fn new(attr: &str, op: CompareOp, value: impl Into<AttrValue>) -> Self {
        AttrPredicate { attr: attr.to_string(), op, value: value.into() }
    }

    /// Parses one `attr==v`, `attr<v` or `attr>v` term.
    pub fn parse(term: &str) -> Result<Self, BrokerError> {
        let bad = || BrokerError::BadPredicate(format!("cannot parse {term:?}"));
        let (attr, op, raw) = if let Some((a, v)) = term.split_once("==") {
            (a, CompareOp::Eq, v)
        } else if let Some((a, v)) = term.split_once('<') {
            (a, CompareOp::Lt, v)
        } else if let Some((a, v)) = term.split_once('>') {
            (a, CompareOp::Gt, v)
        } else {
            return Err(bad());
        };
        let attr = attr.trim();
        if attr.is_empty() {
            return Err(bad());
        }
        Ok(AttrPredicate { attr: attr.to_string(), op, value: parse_literal(raw.trim()) })
    }

    /// `Ok(false)` when the attribute is absent or of a different kind;
    /// `Err` when the operator cannot apply to the stored value at all.
    pub fn matches(&self, entity: &ContextEntity) -> Result<bool, BrokerError> {
        let Some(stored) = entity.value(&self.attr) else {
            return Ok(false);
        };
        let non_comparable = || {
            BrokerError::BadPredicate(format!(
                "{} {} cannot compare {} value of {}",
                self.attr,
                self.op,
                stored.wire_type(),
                entity.id
            ))
        };
        let ordering = match (stored, &self.value) {
            (AttrValue::Geo(_) | AttrValue::Structured(_), _) => return Err(non_comparable()),
            (AttrValue::Number(a), AttrValue::Number(b)) => a.partial_cmp(b),
            (AttrValue::DateTime(a), AttrValue::DateTime(b)) => Some(a.cmp(b)),
            (AttrValue::DateTime(a), AttrValue::Number(b)) => (*a as f64).partial_cmp(b),
            (AttrValue::DateTime(a), AttrValue::Text(b)) => match parse_iso8601(b) {
                Ok(b) => Some(a.cmp(&b)),
                Err(_) => None,
            },
            (AttrValue::Text(_) | AttrValue::Bool(_), _) if self.op != CompareOp::Eq => {
                return Err(non_comparable())
            }
            (AttrValue::Text(a), AttrValue::Text(b)) => Some(a.cmp(b)),
            (AttrValue::Bool(a), AttrValue::Bool(b)) => Some(a.cmp(b)),
            _ => None,
        };
        Ok(match (ordering, self.op) {
            (Some(Ordering::Equal), CompareOp::Eq) => true,
            (Some(Ordering::Less), CompareOp::Lt) => true,
            (Some(Ordering::Greater), CompareOp::Gt) => true,
            _ => false,
        })
    }
}

impl fmt::Display for AttrPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match &self.value {
            AttrValue::Number(n) => n.to_string(),
            AttrValue::Bool(b) => b.to_string(),
            AttrValue::Text(s) => format!("'{s}'"),
            AttrValue::DateTime(t) => crate::clock::to_iso8601(*t),
            other => other.to_wire()["value"].to_string(),
        };
        write!(f, "{}{}{}", self.attr, self.op, v)
    }
}

fn parse_literal(raw: &str) -> AttrValue {
    if raw.len() >= 2 && raw.starts_with('\'') && raw.ends_with('\'') {
        return AttrValue::Text(raw[1..raw.len() - 1].to_string());
    }
    match raw {
        "true" => return AttrValue::Bool(true),
        "false" => return AttrValue::Bool(false),
        _ => {}
    }
    match raw.parse::<f64>() {
        Ok(n) if n.is_finite() => AttrValue::Number(n),
        _ => AttrValue::Text(raw.to_string()),
    }
}

/// `*` and `?` glob over entity ids.
pub fn glob_matches(pattern: &str, id: &str) -> bool {
    WildMatch::new(pattern).matches(id)
}

/// Conjunctive filter over broker entities. At least one criterion is
/// required by [`EntityQuery::check`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityQuery {
    pub entity_type: Option<String>,
    pub id_pattern: Option<String>,
    pub predicates: Vec<AttrPredicate>,
    pub geo: Option<GeoFilter>,
}

impl EntityQuery {
    pub fn by_type(t: &str) -> Self {
        EntityQuery { entity_type: Some(t.to_string()), ..Default::default() }
    }

    pub fn id_pattern(mut self, p: &str) -> Self {
        self.id_pattern = Some(p.to_string());
        self
    }

    pub fn predicate(mut self, p: AttrPredicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn near(mut self, center: GeoPoint, max_distance_meters: f64) -> Self {
        self.geo = Some(GeoFilter { center, max_distance_meters });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entity_type.is_none() && self.id_pattern.is_none() && self.predicates.is_empty() && self.geo.is_none()
    }

    pub fn check(&self) -> Result<(), BrokerError> {
        if self.is_empty() {
            return Err(BrokerError::MissingFilter);
        }
        if let Some(g) = &self.geo {
            if !(g.max_distance_meters > 0.0) {
                return Err(BrokerError::BadPredicate(format!("maxDistance {} must be > 0", g.max_distance_meters)));
            }
            g.center.validate().map_err(|e| BrokerError::BadPredicate(e.to_string()))?;
        }
        for p in &self.predicates {
            if matches!(p.value, AttrValue::Geo(_) | AttrValue::Structured(_)) {
                return Err(BrokerError::BadPredicate(format!("{p}: literal is not comparable")));
            }
        }
        Ok(())
    }

    pub fn matches(&self, e: &ContextEntity) -> Result<bool, BrokerError> {
        if let Some(t) = &self.entity_type {
            if &e.entity_type != t {
                return Ok(false);
            }
        }
        if let Some(p) = &self.id_pattern {
            if !glob_matches(p, &e.id) {
                return Ok(false);
            }
        }
        if let Some(g) = &self.geo {
            match e.location() {
                Some(loc) if g.contains(&loc) => {}
                _ => return Ok(false),
            }
        }
        for p in &self.predicates {
            if !p.matches(e)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Encodes the query as `/v2/entities` query parameters.
    pub fn to_params(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(t) = &self.entity_type {
            out.push(("type".into(), t.clone()));
        }
        if let Some(p) = &self.id_pattern {
            out.push(("idPattern".into(), p.clone()));
        }
        if !self.predicates.is_empty() {
            let q: Vec<String> = self.predicates.iter().map(|p| p.to_string()).collect();
            out.push(("q".into(), q.join(";")));
        }
        if let Some(g) = &self.geo {
            out.push(("georel".into(), format!("near;maxDistance:{}", g.max_distance_meters)));
            out.push(("geometry".into(), "point".into()));
            out.push(("coords".into(), format!("{},{}", g.center.lat, g.center.lon)));
        }
        out
    }

    pub fn from_params<'a>(params: impl Fn(&str) -> Option<&'a str>) -> Result<Self, BrokerError> {
        let mut q = EntityQuery {
            entity_type: params("type").map(str::to_string),
            id_pattern: params("idPattern").map(str::to_string),
            ..Default::default()
        };
        if let Some(terms) = params("q") {
            for term in terms.split(';').filter(|t| !t.trim().is_empty()) {
                q.predicates.push(AttrPredicate::parse(term)?);
            }
        }
        q.geo = parse_georel(params("georel"), params("geometry"), params("coords"))?;
        Ok(q)
    }
}

/// Parses the NGSIv2 `georel=near;maxDistance:N&geometry=point&coords=lat,lon` triple.
pub fn parse_georel(georel: Option<&str>, geometry: Option<&str>, coords: Option<&str>) -> Result<Option<GeoFilter>, BrokerError> {
    let Some(georel) = georel else {
        return Ok(None);
    };
    let bad = |m: &str| BrokerError::BadPredicate(m.to_string());
    let mut parts = georel.split(';');
    if parts.next() != Some("near") {
        return Err(bad("only georel=near is supported"));
    }
    let mut max = None;
    for p in parts {
        if let Some(v) = p.strip_prefix("maxDistance:") {
            max = Some(v.parse::<f64>().map_err(|_| bad("maxDistance must be a number"))?);
        }
    }
    let max = max.ok_or_else(|| bad("georel=near needs maxDistance"))?;
    if geometry.unwrap_or("point") != "point" {
        return Err(bad("only geometry=point is supported"));
    }
    let coords = coords.ok_or_else(|| bad("coords required with georel"))?;
    let center = GeoPoint::parse(coords).map_err(|e| bad(&e.to_string()))?;
    Ok(Some(GeoFilter { center, max_distance_meters: max }))
}
