use super::series::TimeSeries;
use super::{EstimatorError, TargetKind};
use crate::clock::Epoch;
use nalgebra::{DMatrix, DVector};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
const HOURS: usize = 24;
const FEATURES: usize = 3 + HOURS;

/// A forecaster: `fit` must be deterministic, `predict` pure.
pub trait PredictionModel: Send + Sync {
    fn model_id(&self) -> String;
    fn min_samples(&self, step_seconds: i64) -> usize;
    fn fit(&self, series: &TimeSeries) -> Result<Box<dyn FittedModel>, EstimatorError>;
}

pub trait FittedModel: Send + Sync {
    /// Value `horizon_seconds` after the last sample, kept in `kind`'s range.
    fn predict(&self, horizon_seconds: i64, kind: TargetKind) -> Result<f64, EstimatorError>;
}

/// Ridge autoregression on `[1, y(t-1), y(t-season), hour-of-day one-hot]`.
/// The intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalRidge {
    pub lambda: f64,
    pub season_seconds: i64,
}

impl Default for SeasonalRidge {
    fn default() -> Self {
        SeasonalRidge { lambda: DEFAULT_LAMBDA, season_seconds: 86_400 }
    }
}

impl SeasonalRidge {
    fn season_steps(&self, step: i64) -> usize {
        (self.season_seconds / step).max(1) as usize
    }
}

fn hour_of_day(t: Epoch) -> usize {
    (t.rem_euclid(86_400) / 3600) as usize
}

fn features(prev: f64, seasonal: f64, t: Epoch) -> [f64; FEATURES] {
    let mut x = [0.0; FEATURES];
    x[0] = 1.0;
    x[1] = prev;
    x[2] = seasonal;
    x[3 + hour_of_day(t)] = 1.0;
    x
}

impl PredictionModel for SeasonalRidge {
    fn model_id(&self) -> String {
        format!("seasonal-ridge(lambda={},season={}s)", self.lambda, self.season_seconds)
    }

    fn min_samples(&self, step_seconds: i64) -> usize {
        2 * self.season_steps(step_seconds)
    }

    fn fit(&self, series: &TimeSeries) -> Result<Box<dyn FittedModel>, EstimatorError> {
        let step = series.step_seconds;
        let season = self.season_steps(step);
        let need = self.min_samples(step);
        if series.len() < need {
            return Err(EstimatorError::InsufficientData { have: series.len(), need });
        }
        let y: Vec<f64> = series.values().collect();
        let mut gram = DMatrix::<f64>::zeros(FEATURES, FEATURES);
        let mut rhs = DVector::<f64>::zeros(FEATURES);
        for i in season..y.len() {
            let x = DVector::from_row_slice(&features(y[i - 1], y[i - season], series.samples[i].0));
            gram += &x * x.transpose();
            rhs += &x * y[i];
        }
        for j in 1..FEATURES {
            gram[(j, j)] += self.lambda;
        }
        let beta = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs))
            .ok_or_else(|| EstimatorError::Numerical("normal equations are singular".into()))?;
        Ok(Box::new(RidgeFit {
            beta: beta.iter().copied().collect(),
            history: y,
            last_epoch: series.last_epoch().expect("non-empty"),
            step,
            season,
        }))
    }
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    beta: Vec<f64>,
    history: Vec<f64>,
    last_epoch: Epoch,
    step: i64,
    season: usize,
}

impl RidgeFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.beta
    }
}

impl FittedModel for RidgeFit {
    fn predict(&self, horizon_seconds: i64, kind: TargetKind) -> Result<f64, EstimatorError> {
        if horizon_seconds <= 0 || horizon_seconds % self.step != 0 {
            return Err(EstimatorError::BadHorizon { horizon_seconds, step_seconds: self.step });
        }
        let mut y = self.history.clone();
        let mut t = self.last_epoch;
        for _ in 0..horizon_seconds / self.step {
            t += self.step;
            let x = features(y[y.len() - 1], y[y.len() - self.season], t);
            let raw: f64 = x.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
            y.push(kind.clamp(raw));
        }
        Ok(*y.last().expect("at least one step"))
    }
}
