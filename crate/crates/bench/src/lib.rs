//! Shared inputs for the benchmarks.

use atomic_transit_core::compose::{gen_fixture, FixtureSize};
use atomic_transit_core::gtfs::GtfsFeed;
use atomic_transit_core::model::MobilityEntity;
use atomic_transit_core::ngsi2gtfs::build_feed;

/// The small generated city as a static feed.
pub fn small_feed(seed: u64) -> GtfsFeed {
    let fixture = gen_fixture(seed, FixtureSize::Small);
    let typed: Vec<MobilityEntity> = fixture.entities.iter().map(|e| MobilityEntity::from_context(e).expect("typed entity")).collect();
    build_feed(&typed).expect("consistent fixture")
}
