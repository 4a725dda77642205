use super::{EstimatorError, Target, TargetKind};
use crate::broker::{BrokerError, ContextBroker};
use crate::clock::Epoch;
use serde::Serialize;

/// Gaps of at most this many missing steps are forward-filled.
pub const MAX_FILL_STEPS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TimeSeries {
    pub entity_id: String,
    pub attr_name: String,
    /// Strictly increasing, evenly spaced by `step_seconds`.
    pub samples: Vec<(Epoch, f64)>,
    pub step_seconds: i64,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn last_epoch(&self) -> Option<Epoch> {
        self.samples.last().map(|s| s.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Gap {
    /// Last grid point before the gap.
    pub after: Epoch,
    /// First grid point after the gap.
    pub before: Epoch,
    pub missing_steps: i64,
}

/// Gaps too long to fill; only the segment after the last one is kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GapReport {
    pub gaps: Vec<Gap>,
    pub dropped_samples: usize,
}

impl GapReport {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }
}

/// Snaps `raw` (sorted by time) to a `step` grid: the last sample in each
/// step wins, short gaps are forward-filled, long gaps split the series.
pub fn regularize(raw: &[(Epoch, f64)], step: i64) -> (Vec<(Epoch, f64)>, GapReport) {
    let mut out: Vec<(Epoch, f64)> = Vec::new();
    let mut report = GapReport::default();
    for &(t, v) in raw {
        let slot = t.div_euclid(step) * step;
        match out.last().copied() {
            Some((last, _)) if last == slot => {
                out.last_mut().expect("non-empty").1 = v;
            }
            Some((last, prev)) => {
                let missing = (slot - last) / step - 1;
                if missing > MAX_FILL_STEPS {
                    report.gaps.push(Gap { after: last, before: slot, missing_steps: missing });
                    report.dropped_samples += out.len();
                    out.clear();
                } else {
                    out.extend((1..=missing).map(|k| (last + k * step, prev)));
                }
                out.push((slot, v));
            }
            None => out.push((slot, v)),
        }
    }
    (out, report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub series: TimeSeries,
    pub gaps: GapReport,
}

/// Target history over `[now - window, now]` as a regular series. Parking
/// counts are turned into availability ratios by the group's total spots.
pub fn harvest(
    broker: &dyn ContextBroker,
    target: &Target,
    window_seconds: i64,
    step_seconds: i64,
    min_samples: usize,
    now: Epoch,
) -> Result<Harvest, EstimatorError> {
    if window_seconds <= 0 || step_seconds <= 0 {
        return Err(EstimatorError::BadWindow { window_seconds, step_seconds });
    }
    let entity = broker.get_entity(&target.entity_id)?.ok_or_else(|| EstimatorError::UnknownEntity(target.entity_id.clone()))?;
    let scale = match target.kind {
        TargetKind::Parking => match entity.number("totalSpots") {
            Some(total) if total > 0.0 => total,
            _ => return Err(EstimatorError::NotNumeric(format!("{} has no positive totalSpots", target.entity_id))),
        },
        TargetKind::Traffic => 1.0,
    };
    let records = broker.query_history(&target.entity_id, &target.attr, now - window_seconds, now).map_err(|e| match e {
        BrokerError::UnknownEntity(id) => EstimatorError::UnknownEntity(id),
        other => EstimatorError::Broker(other),
    })?;
    let raw: Vec<(Epoch, f64)> =
        records.iter().filter_map(|r| r.value.as_number().filter(|v| v.is_finite()).map(|v| (r.observed_at, v / scale))).collect();
    let (samples, gaps) = regularize(&raw, step_seconds);
    if samples.len() < min_samples {
        return Err(EstimatorError::InsufficientData { have: samples.len(), need: min_samples });
    }
    Ok(Harvest {
        series: TimeSeries { entity_id: target.entity_id.clone(), attr_name: target.attr.clone(), samples, step_seconds },
        gaps,
    })
}
