//! Parking/traffic estimator: harvests attribute history from the broker,
//! forecasts it with a pluggable model, persists predictions back as cache
//! entities and serves them over REST.

mod events;
mod model;
mod series;
#[cfg(test)]
mod tests;

pub use events::{Component, EventKind, EventLog, EventRecord};
pub use model::{FittedModel, PredictionModel, RidgeFit, SeasonalRidge, DEFAULT_LAMBDA};
pub use series::{harvest, regularize, Gap, GapReport, Harvest, TimeSeries, MAX_FILL_STEPS};

use crate::broker::{Attribute, BrokerError, ContextBroker, ContextEntity, SharedBroker};
use crate::clock::{to_iso8601, Epoch, SharedClock};
use crate::http::{Handler, Request, Response};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

pub const PREDICTION: &str = "Prediction";
pub const DEFAULT_STEP_SECONDS: i64 = 3600;
pub const DEFAULT_HORIZON_SECONDS: i64 = 3600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("insufficient data: {have} samples, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("horizon {horizon_seconds}s is not a positive multiple of step {step_seconds}s")]
    BadHorizon { horizon_seconds: i64, step_seconds: i64 },
    #[error("window {window_seconds}s and step {step_seconds}s must be positive")]
    BadWindow { window_seconds: i64, step_seconds: i64 },
    #[error("not numeric: {0}")]
    NotNumeric(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bad target {0:?}, expected entityId:attr:parking|traffic")]
    BadTarget(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Availability ratio, kept in `[0, 1]`.
    Parking,
    /// Flow intensity, kept non-negative.
    Traffic,
}

impl TargetKind {
    pub fn clamp(self, v: f64) -> f64 {
        match self {
            TargetKind::Parking => v.clamp(0.0, 1.0),
            TargetKind::Traffic => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Target {
    pub entity_id: String,
    pub attr: String,
    pub kind: TargetKind,
}

impl Target {
    pub fn new(entity_id: &str, attr: &str, kind: TargetKind) -> Self {
        Target { entity_id: entity_id.to_string(), attr: attr.to_string(), kind }
    }

    pub fn key(&self) -> String {
        format!("{}:{}", self.entity_id, self.attr)
    }
}

/// `entityId:attr:kind`; the entity id may itself contain colons.
impl FromStr for Target {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.rsplitn(3, ':');
        let (Some(kind), Some(attr), Some(entity)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(EstimatorError::BadTarget(s.to_string()));
        };
        let kind = match kind {
            "parking" => TargetKind::Parking,
            "traffic" => TargetKind::Traffic,
            _ => return Err(EstimatorError::BadTarget(s.to_string())),
        };
        if entity.is_empty() || attr.is_empty() {
            return Err(EstimatorError::BadTarget(s.to_string()));
        }
        Ok(Target::new(entity, attr, kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Prediction {
    pub entity_id: String,
    pub target_attr: String,
    pub horizon_seconds: i64,
    pub predicted_value: f64,
    pub issued_at: Epoch,
    pub model_id: String,
}

pub fn prediction_urn(entity_id: &str, attr: &str) -> String {
    format!("urn:ngsi:{PREDICTION}:{entity_id}:{attr}")
}

impl Prediction {
    pub fn entity_urn(&self) -> String {
        prediction_urn(&self.entity_id, &self.target_attr)
    }

    pub fn to_entity(&self) -> ContextEntity {
        let mut e = ContextEntity::new(self.entity_urn(), PREDICTION)
            .with("refEntity", self.entity_id.as_str())
            .with("targetAttr", self.target_attr.as_str())
            .with("horizonSeconds", self.horizon_seconds as f64)
            .with("issuedAt", crate::broker::AttrValue::DateTime(self.issued_at))
            .with("modelId", self.model_id.as_str());
        e.set("predictedValue", Attribute::observed(self.predicted_value, self.issued_at));
        e
    }

    pub fn from_entity(e: &ContextEntity) -> Option<Prediction> {
        Some(Prediction {
            entity_id: e.text("refEntity")?.to_string(),
            target_attr: e.text("targetAttr")?.to_string(),
            horizon_seconds: e.number("horizonSeconds")? as i64,
            predicted_value: e.number("predictedValue")?,
            issued_at: e.value("issuedAt")?.as_epoch()?,
            model_id: e.text("modelId")?.to_string(),
        })
    }
}

/// Writes `p` as the cache entity of its target (an upsert).
pub fn persist_prediction(broker: &dyn ContextBroker, p: &Prediction) -> Result<String, BrokerError> {
    broker.upsert(p.to_entity())?;
    Ok(p.entity_urn())
}

/// Fits `model` to `series` and forecasts `horizon_seconds` ahead.
pub fn fit_predict(
    model: &dyn PredictionModel,
    series: &TimeSeries,
    horizon_seconds: i64,
    kind: TargetKind,
    issued_at: Epoch,
) -> Result<Prediction, EstimatorError> {
    let fitted = model.fit(series)?;
    Ok(Prediction {
        entity_id: series.entity_id.clone(),
        target_attr: series.attr_name.clone(),
        horizon_seconds,
        predicted_value: fitted.predict(horizon_seconds, kind)?,
        issued_at,
        model_id: model.model_id(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub targets: Vec<Target>,
    pub step_seconds: i64,
    pub horizon_seconds: i64,
    pub window_seconds: i64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            targets: Vec::new(),
            step_seconds: DEFAULT_STEP_SECONDS,
            horizon_seconds: DEFAULT_HORIZON_SECONDS,
            window_seconds: 14 * 86_400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ServeSource {
    Cache,
    Recomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Served {
    #[serde(flatten)]
    pub prediction: Prediction,
    pub source: ServeSource,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServeError {
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("no prediction available: {0}")]
    Unavailable(String),
}

/// The estimator service: one cycle estimates and persists every target.
pub struct Estimator {
    broker: SharedBroker,
    clock: SharedClock,
    config: EstimatorConfig,
    model: Arc<dyn PredictionModel>,
    events: Arc<EventLog>,
    /// Last prediction persisted per target key.
    latest: RwLock<HashMap<String, Prediction>>,
    history: Mutex<HashMap<String, Vec<Prediction>>>,
}

impl Estimator {
    pub fn new(
        broker: SharedBroker,
        clock: SharedClock,
        config: EstimatorConfig,
        model: Arc<dyn PredictionModel>,
        events: Arc<EventLog>,
    ) -> Result<Arc<Self>, EstimatorError> {
        let (h, s) = (config.horizon_seconds, config.step_seconds);
        if s <= 0 || config.window_seconds <= 0 {
            return Err(EstimatorError::BadWindow { window_seconds: config.window_seconds, step_seconds: s });
        }
        if h <= 0 || h % s != 0 {
            return Err(EstimatorError::BadHorizon { horizon_seconds: h, step_seconds: s });
        }
        Ok(Arc::new(Estimator {
            broker,
            clock,
            config,
            model,
            events,
            latest: RwLock::new(HashMap::new()),
            history: Mutex::new(HashMap::new()),
        }))
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn events(&self) -> &Arc<EventLog> {
        &self.events
    }

    pub fn persisted_count(&self) -> usize {
        self.history.lock().values().map(Vec::len).sum()
    }

    fn event(&self, component: Component, kind: EventKind, target: &Target, detail: String, value: Option<f64>) {
        self.events.append(EventRecord { epoch: self.clock.now(), component, kind, detail, target: Some(target.key()), value });
    }

    fn fail<T>(&self, component: Component, target: &Target, e: EstimatorError) -> Result<T, EstimatorError> {
        self.event(component, EventKind::Error, target, e.to_string(), None);
        Err(e)
    }

    /// Harvest, fit and predict one target (no persistence).
    pub fn estimate(&self, target: &Target) -> Result<Prediction, EstimatorError> {
        let now = self.clock.now();
        let min = self.model.min_samples(self.config.step_seconds);
        let h = match harvest(self.broker.as_ref(), target, self.config.window_seconds, self.config.step_seconds, min, now) {
            Ok(h) => h,
            Err(e) => return self.fail(Component::Harvester, target, e),
        };
        let gap_note = if h.gaps.is_empty() { String::new() } else { format!(", {} gap(s) split off", h.gaps.gaps.len()) };
        self.event(Component::Harvester, EventKind::Harvest, target, format!("{} samples{gap_note}", h.series.len()), None);
        let fitted = match self.model.fit(&h.series) {
            Ok(f) => f,
            Err(e) => return self.fail(Component::Engine, target, e),
        };
        self.event(Component::Engine, EventKind::Fit, target, self.model.model_id(), None);
        let value = match fitted.predict(self.config.horizon_seconds, target.kind) {
            Ok(v) => v,
            Err(e) => return self.fail(Component::Engine, target, e),
        };
        self.event(Component::Engine, EventKind::Predict, target, format!("+{}s", self.config.horizon_seconds), Some(value));
        Ok(Prediction {
            entity_id: target.entity_id.clone(),
            target_attr: target.attr.clone(),
            horizon_seconds: self.config.horizon_seconds,
            predicted_value: value,
            issued_at: now,
            model_id: self.model.model_id(),
        })
    }

    fn persist(&self, target: &Target, p: Prediction) -> Result<Prediction, EstimatorError> {
        if let Err(e) = persist_prediction(self.broker.as_ref(), &p) {
            return self.fail(Component::Cache, target, e.into());
        }
        self.event(Component::Cache, EventKind::Persist, target, p.entity_urn(), Some(p.predicted_value));
        self.latest.write().insert(target.key(), p.clone());
        self.history.lock().entry(target.key()).or_default().push(p.clone());
        Ok(p)
    }

    /// Estimate and persist one target.
    pub fn refresh(&self, target: &Target) -> Result<Prediction, EstimatorError> {
        let p = self.estimate(target)?;
        self.persist(target, p)
    }

    /// One estimation cycle over all targets; failures are logged and skipped.
    pub fn cycle(&self) -> Vec<Result<Prediction, EstimatorError>> {
        self.config.targets.iter().map(|t| self.refresh(t)).collect()
    }

    fn target(&self, entity_id: &str, attr: &str) -> Option<&Target> {
        self.config.targets.iter().find(|t| t.entity_id == entity_id && t.attr == attr)
    }

    /// The cache entity if it is at most one step old, otherwise a fresh
    /// estimate (persisted first); a stale cache is served only when
    /// recomputation fails.
    pub fn serve(&self, entity_id: &str, attr: &str) -> Result<Served, ServeError> {
        let target = self.target(entity_id, attr).ok_or_else(|| ServeError::UnknownTarget(format!("{entity_id}:{attr}")))?.clone();
        let now = self.clock.now();
        let cached = match self.broker.get_entity(&prediction_urn(entity_id, attr)) {
            Ok(e) => e.as_ref().and_then(Prediction::from_entity),
            Err(_) => self.latest.read().get(&target.key()).cloned(),
        };
        let served = match cached {
            Some(p) if now - p.issued_at <= self.config.step_seconds => Served { prediction: p, source: ServeSource::Cache },
            stale => match self.refresh(&target) {
                Ok(p) => Served { prediction: p, source: ServeSource::Recomputed },
                Err(EstimatorError::UnknownEntity(id)) if stale.is_none() => return Err(ServeError::UnknownTarget(id)),
                Err(e) => match stale {
                    Some(p) => Served { prediction: p, source: ServeSource::Cache },
                    None => return Err(ServeError::Unavailable(e.to_string())),
                },
            },
        };
        let source = match served.source {
            ServeSource::Cache => "cache",
            ServeSource::Recomputed => "recomputed",
        };
        self.event(Component::Api, EventKind::Serve, &target, source.to_string(), Some(served.prediction.predicted_value));
        Ok(served)
    }

    /// Predictions persisted so far for every target of `entity_id`.
    pub fn history_of(&self, entity_id: &str) -> Option<Vec<Prediction>> {
        let keys: Vec<String> = self.config.targets.iter().filter(|t| t.entity_id == entity_id).map(Target::key).collect();
        if keys.is_empty() {
            return None;
        }
        let history = self.history.lock();
        let mut out: Vec<Prediction> = keys.iter().flat_map(|k| history.get(k).cloned().unwrap_or_default()).collect();
        out.sort_by(|a, b| (a.issued_at, &a.target_attr).cmp(&(b.issued_at, &b.target_attr)));
        Some(out)
    }
}

/// `GET /predictions?entityId&attr`, `GET /predictions/{entityId}/history`,
/// `GET /events` and `GET /health`.
pub fn estimator_handler(estimator: Arc<Estimator>) -> Arc<dyn Handler> {
    Arc::new(move |req: Request| {
        let segments = req.segments();
        let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
        match (req.method.as_str(), segs.as_slice()) {
            ("GET", ["predictions"]) => {
                let (Some(id), Some(attr)) = (req.param("entityId"), req.param("attr")) else {
                    return Response::error(400, "entityId and attr are required");
                };
                match estimator.serve(id, attr) {
                    Ok(s) => {
                        let mut v = serde_json::to_value(&s).unwrap_or_default();
                        v["issuedAtIso"] = serde_json::json!(to_iso8601(s.prediction.issued_at));
                        Response::json(200, &v)
                    }
                    Err(e @ ServeError::UnknownTarget(_)) => Response::error(404, &e.to_string()),
                    Err(e) => Response::error(503, &e.to_string()),
                }
            }
            ("GET", ["predictions", id, "history"]) => match estimator.history_of(id) {
                Some(h) => Response::json(200, &h),
                None => Response::error(404, &format!("unknown entity {id}")),
            },
            ("GET", ["events"]) => Response::json(200, &estimator.events().records()),
            ("GET", ["health"]) => Response::json(
                200,
                &serde_json::json!({
                    "status": "up",
                    "targets": estimator.config().targets.len(),
                    "predictionsPersisted": estimator.persisted_count(),
                }),
            ),
            _ => Response::not_found(),
        }
    })
}

/// Runs [`Estimator::cycle`] immediately and then every `interval`.
pub struct EstimatorLoop {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EstimatorLoop {
    pub fn start(estimator: Arc<Estimator>, interval: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("estimator".into())
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    for r in estimator.cycle() {
                        if let Err(e) = r {
                            log::warn!("estimation failed: {e}");
                        }
                    }
                    let mut waited = Duration::ZERO;
                    while waited < interval && !flag.load(Ordering::SeqCst) {
                        std::thread::sleep(Duration::from_millis(20));
                        waited += Duration::from_millis(20);
                    }
                }
            })
            .expect("spawn estimator loop");
        EstimatorLoop { stop, thread: Some(thread) }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EstimatorLoop {
    fn drop(&mut self) {
        self.halt();
    }
}
