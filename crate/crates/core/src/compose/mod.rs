//! Composition of the atomic services into the routing city service (and
//! the estimator slice), either inside one process or as child processes
//! wired over HTTP.

mod fixture;
mod inproc;
mod multiproc;
#[cfg(test)]
mod tests;

pub use fixture::{gen_fixture, service_date, Fixture, FixtureError, FixtureSize, Manifest, Probe, SampleStop, SampleTrip};
pub use fixture::{ENTITIES_FILE, MANIFEST_FILE, OBSERVATIONS_FILE};
pub use inproc::InprocPipeline;
pub use multiproc::MultiprocPipeline;

use crate::broker::SharedBroker;
use crate::clock::{parse_iso8601, Epoch};
use crate::gtfs::ServiceDate;
use crate::model::{ArrivalEstimation, MobilityEntity};
use crate::router::Journey;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Broker,
    Fixture,
    Export,
    Pointer,
    Router,
    Fetcher,
    Bridge,
    Estimator,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Broker => "broker",
            Stage::Fixture => "fixture",
            Stage::Export => "ngsi2gtfs",
            Stage::Pointer => "pointer",
            Stage::Router => "router",
            Stage::Fetcher => "gtfs-fetcher",
            Stage::Bridge => "gtfs-rt-bridge",
            Stage::Estimator => "estimator",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComposeError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("stage {stage} failed: {detail}")]
    Stage { stage: Stage, detail: String },
}

impl ComposeError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ComposeError::BadConfig(_) => 2,
            ComposeError::Stage { .. } => 1,
        }
    }

    pub(crate) fn stage(stage: Stage, detail: impl fmt::Display) -> Self {
        ComposeError::Stage { stage, detail: detail.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inproc,
    Multiproc,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Mode::Inproc),
            "multiproc" => Ok(Mode::Multiproc),
            other => Err(format!("unknown mode {other:?} (inproc|multiproc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FixtureConfig {
    pub seed: u64,
    pub size: FixtureSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub bridge: bool,
    #[serde(default = "yes")]
    pub estimator: bool,
}

fn yes() -> bool {
    true
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { bridge: true, estimator: true }
    }
}

fn default_feed_id() -> String {
    "city".into()
}

fn default_poll() -> u64 {
    1
}

fn default_rt_poll_ms() -> u64 {
    250
}

/// Pipeline description read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub fixture: FixtureConfig,
    #[serde(default = "default_feed_id")]
    pub feed_id: String,
    /// Defaults to the fixture's service date.
    #[serde(default)]
    pub service_date: Option<ServiceDate>,
    /// ISO-8601 start of the pipeline clock; defaults to the fixture's.
    #[serde(default)]
    pub clock_start: Option<String>,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default = "default_poll")]
    pub poll_seconds: u64,
    /// How often a separately running router polls the bridge.
    #[serde(default = "default_rt_poll_ms")]
    pub realtime_poll_ms: u64,
    /// Scratch directory for the exported feed and logs; a temporary one if unset.
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(seed: u64, size: FixtureSize) -> Self {
        PipelineConfig {
            fixture: FixtureConfig { seed, size },
            feed_id: default_feed_id(),
            service_date: None,
            clock_start: None,
            stages: StageToggles::default(),
            poll_seconds: default_poll(),
            realtime_poll_ms: default_rt_poll_ms(),
            work_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ComposeError> {
        let c: PipelineConfig = serde_json::from_str(text).map_err(|e| ComposeError::BadConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, ComposeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ComposeError::BadConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ComposeError> {
        if self.poll_seconds < 1 {
            return Err(ComposeError::BadConfig("pollSeconds must be at least 1".into()));
        }
        if self.feed_id.is_empty() || self.feed_id.chars().any(char::is_whitespace) {
            return Err(ComposeError::BadConfig(format!("bad feedId {:?}", self.feed_id)));
        }
        self.clock_start_epoch(0)?;
        Ok(())
    }

    pub(crate) fn clock_start_epoch(&self, fallback: Epoch) -> Result<Epoch, ComposeError> {
        match &self.clock_start {
            Some(s) => parse_iso8601(s).map_err(|e| ComposeError::BadConfig(e.to_string())),
            None => Ok(fallback),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Up,
    Degraded,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StageStatus {
    pub stage: Stage,
    pub health: Health,
    pub counters: BTreeMap<String, i64>,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let health = match self.health {
            Health::Up => "up",
            Health::Degraded => "degraded",
            Health::Down => "down",
        };
        write!(f, "{:<15} {health:<8}", self.stage.name())?;
        for (k, v) in &self.counters {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

pub(crate) fn status_of(stage: Stage, health: Health, counters: &[(&str, i64)]) -> StageStatus {
    StageStatus { stage, health, counters: counters.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

/// A running pipeline in either mode.
pub enum Pipeline {
    Inproc(InprocPipeline),
    Multiproc(MultiprocPipeline),
}

impl Pipeline {
    /// `program` is the `atomic-transit` executable used in multiproc mode.
    pub fn start(config: &PipelineConfig, mode: Mode, program: &Path) -> Result<Pipeline, ComposeError> {
        config.validate()?;
        Ok(match mode {
            Mode::Inproc => Pipeline::Inproc(InprocPipeline::start(config, None)?),
            Mode::Multiproc => Pipeline::Multiproc(MultiprocPipeline::start(config, program)?),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        match self {
            Pipeline::Inproc(p) => p.manifest(),
            Pipeline::Multiproc(p) => p.manifest(),
        }
    }

    pub fn broker(&self) -> SharedBroker {
        match self {
            Pipeline::Inproc(p) => p.broker(),
            Pipeline::Multiproc(p) => p.broker(),
        }
    }

    pub fn now(&self) -> Epoch {
        match self {
            Pipeline::Inproc(p) => p.now(),
            Pipeline::Multiproc(p) => p.now(),
        }
    }

    pub fn route(&self, from: &str, to: &str, depart_after: Epoch) -> Result<Option<Journey>, String> {
        match self {
            Pipeline::Inproc(p) => p.route(from, to, depart_after),
            Pipeline::Multiproc(p) => p.route(from, to, depart_after),
        }
    }

    pub fn status(&self) -> Vec<StageStatus> {
        match self {
            Pipeline::Inproc(p) => p.status(),
            Pipeline::Multiproc(p) => p.status(),
        }
    }

    /// Stops one long-running stage, leaving the others alone.
    pub fn stop_stage(&mut self, stage: Stage) {
        match self {
            Pipeline::Inproc(p) => p.stop_stage(stage),
            Pipeline::Multiproc(p) => p.stop_stage(stage),
        }
    }

    /// Publishes an arrival estimate `delay` seconds behind schedule for
    /// `trip_id` at `stop_id` whose scheduled arrival is `scheduled`.
    pub fn inject_delay(&self, trip_id: &str, stop_id: &str, scheduled: Epoch, delay: i64) -> Result<(), String> {
        let est = ArrivalEstimation {
            trip_id: trip_id.into(),
            stop_id: stop_id.into(),
            estimated_arrival: scheduled + delay,
            observed_at: self.now(),
        };
        self.broker().upsert(MobilityEntity::from(est).to_context()).map(|_| ()).map_err(|e| e.to_string())
    }

    /// Polls the route until `accept` holds or `timeout` passes; returns the last answer.
    pub fn route_until(
        &self,
        from: &str,
        to: &str,
        depart_after: Epoch,
        timeout: Duration,
        accept: impl Fn(&Option<Journey>) -> bool,
    ) -> Result<Option<Journey>, String> {
        let deadline = Instant::now() + timeout;
        loop {
            let answer = self.route(from, to, depart_after)?;
            if accept(&answer) || Instant::now() >= deadline {
                return Ok(answer);
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    /// Stops every stage in reverse start order.
    pub fn shutdown(self) {
        match self {
            Pipeline::Inproc(p) => p.shutdown(),
            Pipeline::Multiproc(p) => p.shutdown(),
        }
    }
}

pub(crate) fn work_dir(config: &PipelineConfig) -> Result<(PathBuf, Option<tempfile::TempDir>), ComposeError> {
    match &config.work_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| ComposeError::BadConfig(format!("{}: {e}", d.display())))?;
            Ok((d.clone(), None))
        }
        None => {
            let t = tempfile::Builder::new().prefix("atomic-transit-").tempdir().map_err(|e| ComposeError::stage(Stage::Export, e))?;
            Ok((t.path().to_path_buf(), Some(t)))
        }
    }
}
