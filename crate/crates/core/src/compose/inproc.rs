use super::{gen_fixture, status_of, work_dir, ComposeError, Health, Manifest, PipelineConfig, Stage, StageStatus};
use crate::broker::{Broker, SharedBroker};
use crate::clock::{Epoch, OffsetClock, SharedClock};
use crate::estimator::{Estimator, EstimatorConfig, EstimatorLoop, EventLog, SeasonalRidge, Target};
use crate::fetcher::{run_orchestrator, FetcherConfig, OrchestratorHandle, RoutingEnginePlugin};
use crate::ngsi2gtfs::{register_pointer, run_export};
use crate::realtime::{start_bridge, BridgeConfig, BridgeHandle, Delivery, RtFeedMessage, ScheduleIndex, Translator};
use crate::router::{Journey, TransitRouter};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

/// Every service in this process, wired by direct calls.
pub struct InprocPipeline {
    manifest: Manifest,
    clock: SharedClock,
    broker: Arc<Broker>,
    router: Arc<TransitRouter>,
    fetcher: Option<OrchestratorHandle>,
    translator: Option<Arc<Translator>>,
    bridge: Option<BridgeHandle>,
    estimator: Option<Arc<Estimator>>,
    estimator_loop: Option<EstimatorLoop>,
    work_dir: PathBuf,
    _scratch: Option<tempfile::TempDir>,
}

impl InprocPipeline {
    /// Starts all stages in order; `clock` defaults to wall time shifted to
    /// the configured clock start.
    pub fn start(config: &PipelineConfig, clock: Option<SharedClock>) -> Result<Self, ComposeError> {
        config.validate()?;
        let fixture = gen_fixture(config.fixture.seed, config.fixture.size);
        let manifest = fixture.manifest.clone();
        let date = config.service_date.unwrap_or(manifest.service_date);
        let clock = match clock {
            Some(c) => c,
            None => Arc::new(OffsetClock::starting_at(config.clock_start_epoch(manifest.clock_start)?)),
        };
        let (work_dir, scratch) = work_dir(config)?;

        let broker = Arc::new(Broker::with_clock(Arc::clone(&clock)));
        let shared: SharedBroker = Arc::clone(&broker) as SharedBroker;
        fixture.load_into(broker.as_ref()).map_err(|e| ComposeError::stage(Stage::Fixture, e))?;
        let export = run_export(broker.as_ref(), &work_dir.join("feed.zip")).map_err(|e| ComposeError::stage(Stage::Export, e))?;
        register_pointer(broker.as_ref(), &config.feed_id, &export).map_err(|e| ComposeError::stage(Stage::Pointer, e))?;

        let router = TransitRouter::new(Some(date), Arc::clone(&clock));
        let fetcher = run_orchestrator(
            Arc::clone(&shared),
            Arc::clone(&router) as Arc<dyn RoutingEnginePlugin>,
            FetcherConfig { poll_interval_seconds: config.poll_seconds, today_override: Some(date) },
            Arc::clone(&clock),
        )
        .map_err(|e| ComposeError::stage(Stage::Fetcher, e))?;
        if router.active_feed().is_none() {
            let states: Vec<String> = fetcher.states().iter().map(|s| format!("{}: {:?} {:?}", s.feed_id, s.status, s.detail)).collect();
            return Err(ComposeError::stage(Stage::Fetcher, format!("no feed reached the router ({})", states.join("; "))));
        }

        let mut pipeline = InprocPipeline {
            manifest,
            clock: Arc::clone(&clock),
            broker,
            router,
            fetcher: Some(fetcher),
            translator: None,
            bridge: None,
            estimator: None,
            estimator_loop: None,
            work_dir,
            _scratch: scratch,
        };

        if config.stages.bridge {
            let schedule = ScheduleIndex::build(&export.feed, date).map_err(|e| ComposeError::stage(Stage::Bridge, e))?;
            let translator = Translator::new(Arc::new(schedule), BridgeConfig::default(), Arc::clone(&clock));
            let router = Arc::clone(&pipeline.router);
            translator.on_rebuild(move |snap| router.realtime(&snap.trip_updates));
            let handle = start_bridge(Arc::clone(&shared), Arc::clone(&translator), Delivery::InProcess)
                .map_err(|e| ComposeError::stage(Stage::Bridge, e))?;
            RtFeedMessage::decode(&translator.snapshot().trip_updates_pb).map_err(|e| ComposeError::stage(Stage::Bridge, e))?;
            pipeline.translator = Some(translator);
            pipeline.bridge = Some(handle);
        }

        if config.stages.estimator {
            let targets = pipeline
                .manifest
                .estimator_targets
                .iter()
                .map(|t| t.parse::<Target>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ComposeError::stage(Stage::Estimator, e))?;
            let log = EventLog::with_file(&pipeline.work_dir.join("events.jsonl")).map_err(|e| ComposeError::stage(Stage::Estimator, e))?;
            let est = Estimator::new(
                Arc::clone(&shared),
                Arc::clone(&clock),
                EstimatorConfig { targets, ..EstimatorConfig::default() },
                Arc::new(SeasonalRidge::default()),
                Arc::new(log),
            )
            .map_err(|e| ComposeError::stage(Stage::Estimator, e))?;
            for r in est.cycle() {
                r.map_err(|e| ComposeError::stage(Stage::Estimator, e))?;
            }
            let interval = Duration::from_secs(est.config().step_seconds as u64);
            pipeline.estimator_loop = Some(EstimatorLoop::start(Arc::clone(&est), interval));
            pipeline.estimator = Some(est);
        }

        let probe = pipeline.manifest.sample_trips.first().and_then(|t| Some((t.stops.first()?.clone(), t.stops.last()?.clone())));
        if let Some((from, to)) = probe {
            pipeline.route(&from.stop_id, &to.stop_id, from.arrival - 60).map_err(|e| ComposeError::stage(Stage::Router, e))?;
        }
        Ok(pipeline)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn broker(&self) -> SharedBroker {
        Arc::clone(&self.broker) as SharedBroker
    }

    pub fn in_process_broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn router(&self) -> &Arc<TransitRouter> {
        &self.router
    }

    pub fn translator(&self) -> Option<&Arc<Translator>> {
        self.translator.as_ref()
    }

    pub fn estimator(&self) -> Option<&Arc<Estimator>> {
        self.estimator.as_ref()
    }

    pub fn work_dir(&self) -> &std::path::Path {
        &self.work_dir
    }

    pub fn now(&self) -> Epoch {
        self.clock.now()
    }

    /// Routes after pending broker notifications have been delivered.
    pub fn route(&self, from: &str, to: &str, depart_after: Epoch) -> Result<Option<Journey>, String> {
        self.broker.wait_idle(Duration::from_secs(5));
        self.router.route(from, to, depart_after).map_err(|e| e.to_string())
    }

    pub fn status(&self) -> Vec<StageStatus> {
        let broker_up = self.broker.is_online();
        let dependent = |running: bool| match (running, broker_up) {
            (false, _) => Health::Down,
            (true, false) => Health::Degraded,
            (true, true) => Health::Up,
        };
        let mut out = vec![status_of(
            Stage::Broker,
            if broker_up { Health::Up } else { Health::Down },
            &[("entities", self.broker.entity_count() as i64), ("upserts", self.broker.upsert_count() as i64)],
        )];
        out.push(status_of(
            Stage::Router,
            if self.router.graph().is_some() { Health::Up } else { Health::Degraded },
            &[("feedsLoaded", self.router.load_count() as i64), ("realtimeApplied", self.router.realtime_count() as i64)],
        ));
        let loaded = self.fetcher.as_ref().map_or(0, |f| f.states().iter().filter(|s| s.last_version.is_some()).count());
        out.push(status_of(Stage::Fetcher, dependent(self.fetcher.is_some()), &[("feedsLoaded", loaded as i64)]));
        if self.bridge.is_some() || self.translator.is_some() {
            let applied = self.translator.as_ref().map_or(0, |t| t.metrics().notifications_applied);
            out.push(status_of(Stage::Bridge, dependent(self.bridge.is_some()), &[("notificationsApplied", applied as i64)]));
        }
        if let Some(est) = &self.estimator {
            out.push(status_of(
                Stage::Estimator,
                dependent(self.estimator_loop.is_some()),
                &[("predictionsPersisted", est.persisted_count() as i64)],
            ));
        }
        out
    }

    pub fn stop_stage(&mut self, stage: Stage) {
        match stage {
            Stage::Broker => self.broker.set_online(false),
            Stage::Fetcher => drop(self.fetcher.take()),
            Stage::Bridge => drop(self.bridge.take()),
            Stage::Estimator => drop(self.estimator_loop.take()),
            Stage::Router | Stage::Fixture | Stage::Export | Stage::Pointer => {}
        }
    }

    pub fn shutdown(mut self) {
        self.estimator_loop.take();
        self.bridge.take();
        self.fetcher.take();
        self.broker.wait_idle(Duration::from_secs(5));
    }
}
