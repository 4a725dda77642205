use super::{gen_fixture, status_of, work_dir, ComposeError, Health, Manifest, PipelineConfig, Stage, StageStatus};
use crate::broker::{HttpBroker, SharedBroker};
use crate::clock::{to_iso8601, Clock, Epoch, OffsetClock};
use crate::http;
use crate::realtime::RtFeedMessage;
use crate::router::Journey;
use std::fs::File;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

const HEALTH_TIMEOUT: Duration = Duration::from_secs(20);

struct Service {
    stage: Stage,
    child: Child,
    url: String,
}

/// Each long-running service as an `atomic-transit` child process, wired
/// over HTTP on pre-allocated local ports.
pub struct MultiprocPipeline {
    manifest: Manifest,
    clock: OffsetClock,
    services: Vec<Service>,
    broker_url: String,
    router_url: String,
    work_dir: PathBuf,
    _scratch: Option<tempfile::TempDir>,
}

fn free_port() -> Result<u16, ComposeError> {
    let l = TcpListener::bind("127.0.0.1:0").map_err(|e| ComposeError::stage(Stage::Broker, e))?;
    Ok(l.local_addr().map_err(|e| ComposeError::stage(Stage::Broker, e))?.port())
}

fn log_tail(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(5)..].join(" | ")
}

impl MultiprocPipeline {
    pub fn start(config: &PipelineConfig, program: &Path) -> Result<Self, ComposeError> {
        config.validate()?;
        let fixture = gen_fixture(config.fixture.seed, config.fixture.size);
        let manifest = fixture.manifest.clone();
        let date = config.service_date.unwrap_or(manifest.service_date);
        let clock = OffsetClock::starting_at(config.clock_start_epoch(manifest.clock_start)?);
        let (work_dir, scratch) = work_dir(config)?;
        let ports: Vec<u16> = (0..5).map(|_| free_port()).collect::<Result<_, _>>()?;
        let url = |p: u16| format!("http://127.0.0.1:{p}");
        let (broker_url, router_url, fetcher_url, bridge_url, estimator_url) = (url(ports[0]), url(ports[1]), url(ports[2]), url(ports[3]), url(ports[4]));
        let mut p = MultiprocPipeline {
            manifest,
            clock,
            services: Vec::new(),
            broker_url: broker_url.clone(),
            router_url: router_url.clone(),
            work_dir,
            _scratch: scratch,
        };

        p.spawn(program, Stage::Broker, &broker_url, &["broker", "--listen", &addr(&broker_url)])?;
        let broker = p.broker();
        fixture.load_into(broker.as_ref()).map_err(|e| ComposeError::stage(Stage::Fixture, e))?;

        let feed = p.work_dir.join("feed.zip");
        let feed_arg = feed.display().to_string();
        p.run_once(program, Stage::Export, &["ngsi2gtfs", "--broker", &broker_url, "--out", &feed_arg, "--register", &config.feed_id])?;

        let date_arg = date.to_string();
        let rt_url = format!("{bridge_url}/gtfs-rt/trip-updates");
        let rt_poll = config.realtime_poll_ms.to_string();
        let router_listen = addr(&router_url);
        let mut router_args = vec!["router", "--listen", &router_listen, "--date", &date_arg];
        if config.stages.bridge {
            router_args.extend(["--realtime-url", &rt_url, "--realtime-poll-ms", &rt_poll]);
        }
        p.spawn(program, Stage::Router, &router_url, &router_args)?;

        let poll = config.poll_seconds.to_string();
        let fetcher_listen = addr(&fetcher_url);
        p.spawn(
            program,
            Stage::Fetcher,
            &fetcher_url,
            &[
                "gtfs-fetcher", "--broker", &broker_url, "--poll-seconds", &poll, "--plugin-endpoint", &router_url, "--today", &date_arg,
                "--listen", &fetcher_listen,
            ],
        )?;
        p.wait_for(Stage::Fetcher, || {
            http::get(&format!("{router_url}/health")).ok().and_then(|r| r.json_body().ok()).is_some_and(|v| !v["feedVersion"].is_null())
        })?;

        if config.stages.bridge {
            let listen = addr(&bridge_url);
            p.spawn(program, Stage::Bridge, &bridge_url, &["gtfs-rt-bridge", "--broker", &broker_url, "--feed", &feed_arg, "--date", &date_arg, "--listen", &listen])?;
            let body = http::get(&rt_url).map_err(|e| ComposeError::stage(Stage::Bridge, e))?.body;
            RtFeedMessage::decode(&body).map_err(|e| ComposeError::stage(Stage::Bridge, e))?;
        }

        if config.stages.estimator {
            let listen = addr(&estimator_url);
            let log = p.work_dir.join("events.jsonl").display().to_string();
            let mut args: Vec<String> = ["estimator", "--broker", &broker_url, "--listen", &listen, "--log", &log, "--step-seconds", "3600", "--horizon-seconds", "3600"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            for t in &p.manifest.estimator_targets {
                args.extend(["--target".to_string(), t.clone()]);
            }
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            p.spawn(program, Stage::Estimator, &estimator_url, &args)?;
        }

        let probe = p.manifest.sample_trips.first().and_then(|t| Some((t.stops.first()?.clone(), t.stops.last()?.clone())));
        if let Some((from, to)) = probe {
            p.route(&from.stop_id, &to.stop_id, from.arrival - 60).map_err(|e| ComposeError::stage(Stage::Router, e))?;
        }
        Ok(p)
    }

    fn spawn(&mut self, program: &Path, stage: Stage, url: &str, args: &[&str]) -> Result<(), ComposeError> {
        let log_path = self.work_dir.join(format!("{}.log", stage.name()));
        let log = File::create(&log_path).map_err(|e| ComposeError::stage(stage, e))?;
        let err = log.try_clone().map_err(|e| ComposeError::stage(stage, e))?;
        let clock_start = self.clock.now().to_string();
        let child = Command::new(program)
            .args(args)
            .args(["--clock-start", &clock_start])
            .env("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "info".into()))
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(err)
            .spawn()
            .map_err(|e| ComposeError::stage(stage, format!("{}: {e}", program.display())))?;
        self.services.push(Service { stage, child, url: url.to_string() });
        let health = format!("{url}/health");
        self.wait_for(stage, || http::get(&health).is_ok())
    }

    fn wait_for(&mut self, stage: Stage, ready: impl Fn() -> bool) -> Result<(), ComposeError> {
        let deadline = Instant::now() + HEALTH_TIMEOUT;
        loop {
            if ready() {
                return Ok(());
            }
            for s in &mut self.services {
                if let Ok(Some(code)) = s.child.try_wait() {
                    let log = log_tail(&self.work_dir.join(format!("{}.log", s.stage.name())));
                    return Err(ComposeError::stage(s.stage, format!("exited with {code}: {log}")));
                }
            }
            if Instant::now() >= deadline {
                return Err(ComposeError::stage(stage, "not healthy in time"));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    fn run_once(&mut self, program: &Path, stage: Stage, args: &[&str]) -> Result<(), ComposeError> {
        let out = Command::new(program).args(args).stdin(Stdio::null()).output().map_err(|e| ComposeError::stage(stage, e))?;
        std::fs::write(self.work_dir.join(format!("{}.log", stage.name())), [&out.stdout[..], &out.stderr[..]].concat())
            .map_err(|e| ComposeError::stage(stage, e))?;
        if !out.status.success() {
            return Err(ComposeError::stage(stage, format!("exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim())));
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn broker(&self) -> SharedBroker {
        Arc::new(HttpBroker::new(&self.broker_url))
    }

    pub fn broker_url(&self) -> &str {
        &self.broker_url
    }

    pub fn url_of(&self, stage: Stage) -> Option<&str> {
        self.services.iter().find(|s| s.stage == stage).map(|s| s.url.as_str())
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn now(&self) -> Epoch {
        self.clock.now()
    }

    pub fn route(&self, from: &str, to: &str, depart_after: Epoch) -> Result<Option<Journey>, String> {
        let enc = |s: &str| url::form_urlencoded::byte_serialize(s.as_bytes()).collect::<String>();
        let url = format!("{}/route?from={}&to={}&departAfter={}", self.router_url, enc(from), enc(to), enc(&to_iso8601(depart_after)));
        let v = http::get(&url).map_err(|e| e.to_string())?.json_body().map_err(|e| e.to_string())?;
        if v["noRoute"] == true {
            return Ok(None);
        }
        serde_json::from_value(v).map(Some).map_err(|e| e.to_string())
    }

    pub fn status(&self) -> Vec<StageStatus> {
        let health = |s: &Service, path: &str| http::get(&format!("{}{path}", s.url)).ok().and_then(|r| r.json_body().ok());
        let broker_up = self.services.iter().any(|s| s.stage == Stage::Broker && health(s, "/health").is_some());
        self.services
            .iter()
            .map(|s| {
                let body = health(s, "/health");
                let counter = |v: &Option<serde_json::Value>, key: &str| v.as_ref().and_then(|v| v[key].as_i64()).unwrap_or(0);
                let h = match (&body, s.stage) {
                    (None, _) => Health::Down,
                    (Some(_), Stage::Broker) => Health::Up,
                    (Some(v), Stage::Router) if v["feedVersion"].is_null() => Health::Degraded,
                    (Some(_), Stage::Router) => Health::Up,
                    (Some(_), _) if !broker_up => Health::Degraded,
                    (Some(_), _) => Health::Up,
                };
                match s.stage {
                    Stage::Router => status_of(s.stage, h, &[("feedsLoaded", counter(&body, "feedsLoaded")), ("realtimeApplied", counter(&body, "realtimeApplied"))]),
                    Stage::Fetcher => status_of(s.stage, h, &[("feedsLoaded", counter(&body, "feedsLoaded"))]),
                    Stage::Bridge => {
                        let metrics = health(s, "/metrics");
                        status_of(s.stage, h, &[("notificationsApplied", counter(&metrics, "notificationsApplied"))])
                    }
                    Stage::Estimator => status_of(s.stage, h, &[("predictionsPersisted", counter(&body, "predictionsPersisted"))]),
                    _ => status_of(s.stage, h, &[]),
                }
            })
            .collect()
    }

    pub fn stop_stage(&mut self, stage: Stage) {
        for s in self.services.iter_mut().filter(|s| s.stage == stage) {
            let _ = s.child.kill();
            let _ = s.child.wait();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        while let Some(mut s) = self.services.pop() {
            let _ = s.child.kill();
            let _ = s.child.wait();
        }
    }
}

impl Drop for MultiprocPipeline {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn addr(url: &str) -> String {
    url.trim_start_matches("http://").to_string()
}
