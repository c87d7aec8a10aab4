//! Picks the reduction threshold `t_d` from a rerun experiment.
//!
//! Parameters flagged at `t_d = 0` get measured a second time. Flags that
//! survive the rerun are treated as real ("persistent"); flags that vanish
//! were fluctuation artifacts. The calibration then walks a grid of
//! thresholds and keeps the smallest one that, applied to the first-pass
//! measurements, rejects every artifact while retaining every persistent
//! flag.

use serde::{Deserialize, Serialize};

use super::ttest::decide;
use super::StatsError;

/// First-pass and rerun samples for one parameter value that was flagged at
/// `t_d = 0`. Each pair is (variant runs, baseline runs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TdCase {
    pub id: String,
    pub first_pass: (Vec<f64>, Vec<f64>),
    pub rerun: (Vec<f64>, Vec<f64>),
}

/// Threshold sweep grid. The step matches how finely operators tune the
/// threshold in practice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TdGrid {
    pub step: f64,
    pub max: f64,
}

impl Default for TdGrid {
    fn default() -> Self {
        TdGrid {
            step: 0.005,
            max: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TdCalibration {
    pub t_d: f64,
    pub artifacts: Vec<String>,
    pub persistent: Vec<String>,
    /// Set when no grid point separates artifacts from persistent flags; the
    /// returned threshold is then the best trade-off, not a clean cut.
    pub conflict: bool,
    pub note: Option<String>,
}

/// Calibrates `t_d` from rerun evidence. `cases` must be exactly the
/// parameters that were significant at `t_d = 0` on the first pass.
pub fn calibrate_t_d(
    cases: &[TdCase],
    alpha: f64,
    grid: TdGrid,
) -> Result<TdCalibration, StatsError> {
    if !(grid.step > 0.0 && grid.max >= 0.0) {
        return Err(StatsError::InvalidInput(format!(
            "bad sweep grid: step {} max {}",
            grid.step, grid.max
        )));
    }
    if cases.is_empty() {
        return Ok(TdCalibration {
            t_d: 0.0,
            artifacts: vec![],
            persistent: vec![],
            conflict: false,
            note: Some("no first-pass positives; nothing to calibrate against".into()),
        });
    }

    let mut artifacts = Vec::new();
    let mut persistent = Vec::new();
    for case in cases {
        let first = decide(&case.first_pass.0, &case.first_pass.1, 0.0, alpha)?;
        if !first.test.significant {
            return Err(StatsError::InvalidInput(format!(
                "case {} was not significant at t_d = 0; only first-pass positives belong here",
                case.id
            )));
        }
        let rerun = decide(&case.rerun.0, &case.rerun.1, 0.0, alpha)?;
        if rerun.test.significant {
            persistent.push(case);
        } else {
            artifacts.push(case);
        }
    }

    // Walk the grid from 0 upward; score each threshold by how it treats the
    // first-pass measurements.
    let steps = (grid.max / grid.step).round() as usize;
    let mut best: Option<(i64, f64)> = None; // (score, t_d), first max wins
    for i in 0..=steps {
        let t_d = (i as f64 * grid.step).min(grid.max);
        let rejected = count_not_significant(&artifacts, t_d, alpha)?;
        let retained = persistent.len() as i64 - count_not_significant(&persistent, t_d, alpha)?;
        if rejected == artifacts.len() as i64 && retained == persistent.len() as i64 {
            return Ok(TdCalibration {
                t_d,
                artifacts: ids(&artifacts),
                persistent: ids(&persistent),
                conflict: false,
                note: None,
            });
        }
        let score = rejected + retained;
        if best.map_or(true, |(s, _)| score > s) {
            best = Some((score, t_d));
        }
    }

    let (_, t_d) = best.unwrap();
    Ok(TdCalibration {
        t_d,
        artifacts: ids(&artifacts),
        persistent: ids(&persistent),
        conflict: true,
        note: Some(
            "no threshold on the grid rejects every artifact while keeping every persistent flag"
                .into(),
        ),
    })
}

fn count_not_significant(cases: &[&TdCase], t_d: f64, alpha: f64) -> Result<i64, StatsError> {
    let mut n = 0;
    for case in cases {
        let d = decide(&case.first_pass.0, &case.first_pass.1, t_d, alpha)?;
        if !d.test.significant {
            n += 1;
        }
    }
    Ok(n)
}

fn ids(cases: &[&TdCase]) -> Vec<String> {
    cases.iter().map(|c| c.id.clone()).collect()
}
