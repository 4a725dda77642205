use serde::{Deserialize, Serialize};
use std::fmt;

/// Mean Earth radius used for every distance computation in the crate.
pub const EARTH_RADIUS_METERS: f64 = 6_371_000.0;

/// WGS84 point in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("malformed point {0:?}, expected \"lat, lon\"")]
    Malformed(String),
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::Latitude(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::Longitude(self.lon));
        }
        Ok(())
    }

    /// Great-circle distance in meters (haversine).
    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dphi = (other.lat - self.lat).to_radians();
        let dlambda = (other.lon - self.lon).to_radians();
        let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_METERS * a.sqrt().min(1.0).asin()
    }

    /// Parses the NGSIv2 `geo:point` text form `"lat, lon"`.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let (lat, lon) = text
            .split_once(',')
            .ok_or_else(|| GeoError::Malformed(text.to_string()))?;
        let lat: f64 = lat.trim().parse().map_err(|_| GeoError::Malformed(text.to_string()))?;
        let lon: f64 = lon.trim().parse().map_err(|_| GeoError::Malformed(text.to_string()))?;
        GeoPoint::new(lat, lon)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.lat, self.lon)
    }
}

/// Circular area around a point; used by queries and subscriptions alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFilter {
    pub center: GeoPoint,
    pub max_distance_meters: f64,
}

impl GeoFilter {
    pub fn contains(&self, point: &GeoPoint) -> bool {
        self.center.distance_to(point) <= self.max_distance_meters
    }
}
