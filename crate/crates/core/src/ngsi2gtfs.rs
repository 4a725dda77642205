//! Export of broker-held urban-mobility entities as a GTFS static feed.

use crate::broker::{BrokerError, ContextBroker, EntityQuery};
use crate::gtfs::{write_feed, GtfsFeed, RowCounts};
use crate::model::{validate_typed, ConsistencyReport, FeedPointer, FindingKind, MobilityEntity, GTFS_TYPES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExportError {
    #[error("broker unavailable: {0}")]
    BrokerUnavailable(String),
    #[error("inconsistent input:\n{0}")]
    InconsistentInput(ConsistencyReport),
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

impl ExportError {
    /// Process exit code of the `ngsi2gtfs` command.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExportError::InconsistentInput(_) => 2,
            ExportError::BrokerUnavailable(_) => 3,
            ExportError::IoFailure(_) => 1,
        }
    }
}

impl From<BrokerError> for ExportError {
    fn from(e: BrokerError) -> Self {
        ExportError::BrokerUnavailable(e.to_string())
    }
}

/// An entity that could not be converted and was left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Skip {
    pub entity_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    pub entities: Vec<MobilityEntity>,
    pub skipped: Vec<Skip>,
}

/// Reads every entity of the six static GTFS types, converting each.
pub fn discover(broker: &dyn ContextBroker) -> Result<Discovery, ExportError> {
    let mut d = Discovery::default();
    for ty in GTFS_TYPES {
        for e in broker.query(&EntityQuery::by_type(ty))? {
            match MobilityEntity::from_context(&e) {
                Ok(m) => d.entities.push(m),
                Err(err) => d.skipped.push(Skip { entity_id: e.id.clone(), reason: err.to_string() }),
            }
        }
    }
    Ok(d)
}

/// Maps GTFS-typed entities one-to-one onto feed rows. Other kinds are ignored.
pub fn build_feed(entities: &[MobilityEntity]) -> Result<GtfsFeed, ExportError> {
    let gtfs: Vec<MobilityEntity> = entities.iter().filter(|e| GTFS_TYPES.contains(&e.type_name())).cloned().collect();
    let mut report = validate_typed(&gtfs);
    if !gtfs.iter().any(|e| matches!(e, MobilityEntity::Agency(_))) {
        report.push("-", FindingKind::NoAgency, "a feed needs at least one agency");
    }
    if !report.is_empty() {
        return Err(ExportError::InconsistentInput(report));
    }
    let mut feed = GtfsFeed::default();
    for e in gtfs {
        match e {
            MobilityEntity::Agency(a) => feed.agencies.push(a),
            MobilityEntity::Stop(s) => feed.stops.push(s),
            MobilityEntity::Route(r) => feed.routes.push(r),
            MobilityEntity::Service(s) => feed.services.push(s),
            MobilityEntity::Trip(t) => feed.trips.push(t),
            MobilityEntity::StopTime(st) => feed.stop_times.push(st),
            _ => unreachable!("filtered to GTFS kinds"),
        }
    }
    Ok(feed.canonicalized())
}

/// Inverse of [`build_feed`]: one entity per feed row.
pub fn feed_entities(feed: &GtfsFeed) -> Vec<MobilityEntity> {
    let mut out: Vec<MobilityEntity> = Vec::new();
    out.extend(feed.agencies.iter().cloned().map(Into::into));
    out.extend(feed.stops.iter().cloned().map(Into::into));
    out.extend(feed.routes.iter().cloned().map(Into::into));
    out.extend(feed.services.iter().cloned().map(Into::into));
    out.extend(feed.trips.iter().cloned().map(Into::into));
    out.extend(feed.stop_times.iter().cloned().map(Into::into));
    out
}

/// Lowercase hex SHA-256 of the archive bytes.
pub fn feed_version(zip_bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(zip_bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExportSummary {
    pub row_counts: RowCounts,
    pub skip_count: usize,
    pub feed_version: String,
    pub output: PathBuf,
    #[serde(skip)]
    pub skipped: Vec<Skip>,
    #[serde(skip)]
    pub feed: GtfsFeed,
}

/// Discovers, builds and writes the feed to `out`. The archive is written to
/// a sibling temporary file and renamed, so a failure leaves nothing behind.
pub fn run_export(broker: &dyn ContextBroker, out: &Path) -> Result<ExportSummary, ExportError> {
    let discovery = discover(broker)?;
    let mut feed = build_feed(&discovery.entities)?;
    let bytes = write_feed(&feed).map_err(|e| ExportError::IoFailure(e.to_string()))?;
    let version = feed_version(&bytes);
    write_atomically(out, &bytes).map_err(|e| ExportError::IoFailure(format!("{}: {e}", out.display())))?;
    feed.feed_version = Some(version.clone());
    Ok(ExportSummary {
        row_counts: feed.row_counts(),
        skip_count: discovery.skipped.len(),
        feed_version: version,
        output: out.to_path_buf(),
        skipped: discovery.skipped,
        feed,
    })
}

pub(crate) fn write_atomically(out: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(out).map_err(|e| e.error)?;
    Ok(())
}

/// Publishes the exported feed as a `GtfsFeedPointer` entity whose validity
/// spans the union of the feed's service ranges.
pub fn register_pointer(broker: &dyn ContextBroker, feed_id: &str, summary: &ExportSummary) -> Result<FeedPointer, ExportError> {
    let (valid_from, valid_until) = summary
        .feed
        .validity_range()
        .ok_or_else(|| ExportError::IoFailure("feed has no service dates to register".into()))?;
    let path = summary.output.canonicalize().unwrap_or_else(|_| summary.output.clone());
    let pointer = FeedPointer {
        feed_id: feed_id.to_string(),
        source_url: url::Url::from_file_path(&path).map(String::from).unwrap_or_else(|_| format!("file://{}", path.display())),
        version: summary.feed_version.clone(),
        valid_from,
        valid_until,
    };
    broker.upsert(MobilityEntity::from(pointer.clone()).to_context())?;
    Ok(pointer)
}
