//! Empirical CDF over block stability figures, plus the knee heuristic that
//! suggests where "ordinary jitter" ends and "something happened on the
//! device" begins.

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Right-continuous step function: at each distinct observed value x the
/// function equals the fraction of observations <= x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    points: Vec<(f64, f64)>,
}

/// Builds the empirical CDF of `values`.
pub fn empirical_cdf(values: &[f64]) -> Result<Ecdf, StatsError> {
    if values.is_empty() {
        return Err(StatsError::NotEnoughData { need: 1, got: 0 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput(
            "cdf input contains a non-finite value".into(),
        ));
    }
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match points.last_mut() {
            // Duplicate values collapse into one step carrying the highest
            // fraction, which keeps the function right-continuous.
            Some(last) if last.0 == x => last.1 = f,
            _ => points.push((x, f)),
        }
    }
    Ok(Ecdf { points })
}

impl Ecdf {
    /// The step points, sorted by x; the final fraction is always 1.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Fraction of observations <= x.
    pub fn eval(&self, x: f64) -> f64 {
        let mut f = 0.0;
        for &(px, pf) in &self.points {
            if px <= x {
                f = pf;
            } else {
                break;
            }
        }
        f
    }
}

/// Suggests a stability threshold as the knee of the CDF: the step point
/// farthest (perpendicularly) from the chord between the first and last
/// step. Ties break toward the smaller x, and fewer than three distinct
/// values leave no geometry to find a knee in.
pub fn knee_point(ecdf: &Ecdf) -> Result<f64, StatsError> {
    let pts = ecdf.points();
    if pts.len() < 3 {
        return Err(StatsError::NoKnee(pts.len()));
    }
    let (x1, y1) = pts[0];
    let (x2, y2) = *pts.last().unwrap();
    let dx = x2 - x1;
    let dy = y2 - y1;
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (f64::NEG_INFINITY, x1);
    for &(x, y) in pts {
        let dist = (dy * x - dx * y + x2 * y1 - y2 * x1).abs() / len;
        if dist > best.0 {
            best = (dist, x);
        }
    }
    Ok(best.1)
}
