use crate::clock::Epoch;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Harvester,
    Engine,
    Cache,
    Api,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Harvest,
    Fit,
    Predict,
    Persist,
    Serve,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub epoch: Epoch,
    pub component: Component,
    pub kind: EventKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Default)]
struct Inner {
    records: Vec<EventRecord>,
    last: HashMap<Component, Epoch>,
    sink: Option<File>,
}

/// Append-only event log, optionally mirrored to a JSON-lines file.
/// Epochs never decrease within a component.
#[derive(Default)]
pub struct EventLog {
    inner: Mutex<Inner>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { inner: Mutex::new(Inner { sink: Some(file), ..Inner::default() }) })
    }

    pub fn append(&self, mut record: EventRecord) {
        let mut inner = self.inner.lock();
        let floor = inner.last.get(&record.component).copied().unwrap_or(Epoch::MIN);
        record.epoch = record.epoch.max(floor);
        inner.last.insert(record.component, record.epoch);
        if let Some(f) = inner.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("event records serialize");
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                log::warn!("event log write failed: {e}");
            }
        }
        inner.records.push(record);
    }

    pub fn records(&self) -> Vec<EventRecord> {
        self.inner.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.inner.lock().records.iter().filter(|r| r.kind == kind).count()
    }

    /// Records from a JSON-lines file written by [`EventLog::with_file`].
    pub fn replay(path: &Path) -> std::io::Result<Vec<EventRecord>> {
        BufReader::new(File::open(path)?)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| l.and_then(|l| serde_json::from_str(&l).map_err(std::io::Error::other)))
            .collect()
    }
}
