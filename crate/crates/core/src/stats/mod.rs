//! Decision mathematics: sample summaries, thresholded one-sided t-tests,
//! empirical CDFs with knee detection, and threshold calibration.

mod calibrate;
mod ecdf;
mod special;
mod ttest;

pub use calibrate::{calibrate_t_d, TdCalibration, TdCase, TdGrid};
pub use ecdf::{empirical_cdf, knee_point, Ecdf};
pub use special::{ln_gamma, reg_inc_beta, student_t_cdf};
pub use ttest::{
    apply_threshold, decide, student_t_test, welch_t_test, Decision, SampleStats, TTestResult,
    Verdict,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} observations, got {got}")]
    NotEnoughData { need: usize, got: usize },
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least 3 distinct values to locate a knee, got {0}")]
    NoKnee(usize),
}
