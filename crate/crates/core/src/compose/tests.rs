use super::*;
use crate::clock::ManualClock;
use crate::model::validate_consistency;
use std::sync::Arc;

fn tiny() -> PipelineConfig {
    PipelineConfig::new(7, FixtureSize::Tiny)
}

#[test]
fn fixture_is_deterministic_per_seed() {
    let a = gen_fixture(42, FixtureSize::Small);
    let b = gen_fixture(42, FixtureSize::Small);
    assert_eq!(a.entities_json(), b.entities_json());
    assert_eq!(a.observations_json(), b.observations_json());
    assert_eq!(a.manifest_json(), b.manifest_json());
    assert_ne!(gen_fixture(43, FixtureSize::Small).entities_json(), a.entities_json());
}

#[test]
fn tiny_manifest_counts() {
    let f = gen_fixture(1, FixtureSize::Tiny);
    let m = &f.manifest;
    assert_eq!(m.counts["GtfsStopTime"], 8);
    assert_eq!(m.counts["GtfsTrip"], 3);
    assert_eq!(m.counts["GtfsStop"], 4);
    assert_eq!(m.observation_count, 144);
    let p = m.probe.as_ref().expect("tiny has a probe");
    assert!(p.depart_after < p.delay_stop_arrival && p.delay_stop_arrival < p.expected_arrival);
    assert_eq!(m.service_date, service_date());
}

#[test]
fn small_fixture_is_consistent() {
    for seed in 0..5 {
        let f = gen_fixture(seed, FixtureSize::Small);
        let report = validate_consistency(&f.entities);
        assert!(report.is_empty(), "seed {seed}: {:?}", report.findings);
        assert_eq!(f.manifest.counts["GtfsTrip"], 30);
    }
}

#[test]
fn fixture_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = gen_fixture(3, FixtureSize::Tiny);
    f.write_to(dir.path()).unwrap();
    assert_eq!(Fixture::read_from(dir.path()).unwrap(), f);
}

#[test]
fn config_errors_exit_with_two() {
    for bad in [
        "{",
        r#"{"fixture":{"seed":1,"size":"huge"}}"#,
        r#"{"fixture":{"seed":1,"size":"tiny"},"typo":1}"#,
        r#"{"fixture":{"seed":1,"size":"tiny"},"pollSeconds":0}"#,
        r#"{"fixture":{"seed":1,"size":"tiny"},"clockStart":"yesterday"}"#,
    ] {
        let err = PipelineConfig::from_json(bad).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}: {err}");
    }
    let ok = PipelineConfig::from_json(r#"{"fixture":{"seed":1,"size":"tiny"},"stages":{"estimator":false}}"#).unwrap();
    assert!(ok.stages.bridge && !ok.stages.estimator);
    assert_eq!(ok.feed_id, "city");
    assert!("threads".parse::<Mode>().is_err());
}

#[test]
fn stage_failure_exits_with_one() {
    let mut config = tiny();
    config.service_date = Some(crate::gtfs::ServiceDate::from_ymd(2035, 1, 1).unwrap());
    let err = InprocPipeline::start(&config, None).err().expect("feed not valid on that date");
    assert_eq!(err.exit_code(), 1);
    assert!(matches!(err, ComposeError::Stage { stage: Stage::Fetcher, .. }), "{err}");
}

#[test]
fn inproc_delay_shifts_probe_arrival() {
    let config = tiny();
    let p = Pipeline::start(&config, Mode::Inproc, Path::new("unused")).unwrap();
    let probe = p.manifest().probe.clone().unwrap();
    let base = p.route(&probe.from, &probe.to, probe.depart_after).unwrap().unwrap();
    assert_eq!(base.total_arrival, probe.expected_arrival);
    assert_eq!(base.trip_ids(), vec![probe.trip_id.clone()]);

    p.inject_delay(&probe.trip_id, &probe.delay_stop, probe.delay_stop_arrival, 300).unwrap();
    let delayed = p
        .route_until(&probe.from, &probe.to, probe.depart_after, Duration::from_secs(5), |j| {
            j.as_ref().is_some_and(|j| j.total_arrival != probe.expected_arrival)
        })
        .unwrap()
        .unwrap();
    assert_eq!(delayed.total_arrival, probe.expected_arrival + 300);
    p.shutdown();
}

#[test]
fn router_keeps_answering_without_the_bridge() {
    let mut p = Pipeline::start(&tiny(), Mode::Inproc, Path::new("unused")).unwrap();
    let probe = p.manifest().probe.clone().unwrap();
    p.stop_stage(Stage::Bridge);
    let j = p.route(&probe.from, &probe.to, probe.depart_after).unwrap().unwrap();
    assert_eq!(j.total_arrival, probe.expected_arrival);
    let bridge = p.status().into_iter().find(|s| s.stage == Stage::Bridge).unwrap();
    assert_eq!(bridge.health, Health::Down);
}

#[test]
fn status_reports_counters_and_broker_outage() {
    let clock = Arc::new(ManualClock::new(gen_fixture(7, FixtureSize::Tiny).manifest.clock_start));
    let mut p = InprocPipeline::start(&tiny(), Some(clock)).unwrap();
    let status = p.status();
    let get = |s: &[StageStatus], stage: Stage| s.iter().find(|x| x.stage == stage).unwrap().clone();
    assert!(status.iter().all(|s| s.health == Health::Up), "{status:?}");
    assert_eq!(get(&status, Stage::Router).counters["feedsLoaded"], 1);
    assert_eq!(get(&status, Stage::Fetcher).counters["feedsLoaded"], 1);
    assert_eq!(get(&status, Stage::Estimator).counters["predictionsPersisted"], 2);
    assert!(get(&status, Stage::Broker).counters["entities"] > 0);
    assert!(get(&status, Stage::Broker).to_string().starts_with("broker"));

    p.stop_stage(Stage::Broker);
    let status = p.status();
    assert_eq!(get(&status, Stage::Broker).health, Health::Down);
    assert_eq!(get(&status, Stage::Fetcher).health, Health::Degraded);
    assert_eq!(get(&status, Stage::Router).health, Health::Up);
    p.shutdown();
}

#[test]
fn optional_stages_can_be_disabled() {
    let mut config = tiny();
    config.stages = StageToggles { bridge: false, estimator: false };
    let p = InprocPipeline::start(&config, None).unwrap();
    assert!(p.translator().is_none() && p.estimator().is_none());
    let stages: Vec<Stage> = p.status().iter().map(|s| s.stage).collect();
    assert_eq!(stages, vec![Stage::Broker, Stage::Router, Stage::Fetcher]);
    assert!(p.work_dir().join("feed.zip").exists());
}
