/// Seconds in a day.
pub const DAY: i64 = 86_400;

/// A noiseless daily sinusoid `mean + amplitude * sin(2π t / day + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct DailySine {
    pub mean: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl DailySine {
    pub fn at(&self, epoch: i64) -> f64 {
        let frac = epoch.rem_euclid(DAY) as f64 / DAY as f64;
        self.mean + self.amplitude * (std::f64::consts::TAU * frac + self.phase).sin()
    }
}

/// Mean absolute error between two equally long slices.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}
