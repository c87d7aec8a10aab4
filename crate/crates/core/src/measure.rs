//! One energy figure per run. Two probes implement the same narrow
//! interface: a command wrapper around an external meter that reports
//! through a reading file, and a simulator whose noise is shaped like the
//! meters the pipeline was built against (slow multiplicative drift, small
//! quiet noise, rare large spikes).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeded;

/// What program a run measured: the unmodified app or one planned value of
/// one parameter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    Parameter { site: String, value_index: usize },
}

impl Variant {
    /// Stable string form, used to key simulator effects: empty for the
    /// baseline, `site#index` for a mutated value.
    pub fn key(&self) -> String {
        match self {
            Variant::Baseline => String::new(),
            Variant::Parameter { site, value_index } => format!("{site}#{value_index}"),
        }
    }
}

/// One measured run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeasurement {
    /// Per-device run sequence number; the simulator's run index.
    pub run_id: u64,
    pub variant: Variant,
    /// Joules, non-negative and finite.
    pub energy: f64,
    /// Seconds the measurement took end to end.
    pub wall_time: f64,
    /// Seconds on the device's clock; strictly increasing per device.
    pub timestamp: f64,
}

/// Everything that identifies one run.
#[derive(Clone, Copy, Debug)]
pub struct RunContext<'a> {
    pub device: &'a str,
    /// Working tree the run executes against (already mutated and built).
    pub tree: &'a Path,
    /// Position in the device's measurement history; drives drift.
    pub run_index: u64,
    /// Variant key, empty for the unmodified program.
    pub variant: &'a str,
}

pub trait EnergyProbe: Send + Sync {
    fn measure(&self, ctx: &RunContext) -> Result<f64, MeasureError>;
}

/// Drives an external meter through a shell command. The contract:
///
/// * the command template may use `{tree}`, `{device}` and `{reading}`;
/// * any stale reading file is deleted before the run, so a value can only
///   come from this run;
/// * a nonzero exit is a run failure;
/// * afterwards the reading file must hold one decimal number, the joules
///   for the run; a missing file or a non-numeric, NaN or negative value is
///   an error;
/// * the reading is consumed (the file is deleted once parsed).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileMeasurer {
    pub command: String,
    /// Where the meter writes the figure; `{device}` is substituted so
    /// concurrent devices cannot clobber each other.
    pub reading_path: String,
}

impl FileMeasurer {
    fn reading_file(&self, device: &str) -> PathBuf {
        PathBuf::from(self.reading_path.replace("{device}", device))
    }
}

impl EnergyProbe for FileMeasurer {
    fn measure(&self, ctx: &RunContext) -> Result<f64, MeasureError> {
        let reading = self.reading_file(ctx.device);
        match fs::remove_file(&reading) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(MeasureError::Io(e.to_string())),
        }

        let cmd = self
            .command
            .replace("{tree}", &ctx.tree.display().to_string())
            .replace("{device}", ctx.device)
            .replace("{reading}", &reading.display().to_string());
        let output = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .current_dir(ctx.tree)
            .output()
            .map_err(|e| MeasureError::Io(e.to_string()))?;
        if !output.status.success() {
            return Err(MeasureError::RunFailed {
                device: ctx.device.to_string(),
                code: output.status.code(),
                stderr: String::from_utf8_lossy(&output.stderr)
                    .chars()
                    .take(400)
                    .collect(),
            });
        }

        let text = fs::read_to_string(&reading).map_err(|_| MeasureError::MissingReading {
            path: reading.display().to_string(),
        })?;
        let _ = fs::remove_file(&reading);
        let trimmed = text.trim();
        let joules: f64 = trimmed.parse().map_err(|_| MeasureError::BadReading {
            text: trimmed.chars().take(80).collect(),
            why: "not a decimal number".into(),
        })?;
        if joules.is_nan() {
            return Err(MeasureError::BadReading {
                text: trimmed.into(),
                why: "NaN".into(),
            });
        }
        if !joules.is_finite() {
            return Err(MeasureError::BadReading {
                text: trimmed.into(),
                why: "not finite".into(),
            });
        }
        if joules < 0.0 {
            return Err(MeasureError::BadReading {
                text: trimmed.into(),
                why: "negative energy".into(),
            });
        }
        Ok(joules)
    }
}

/// Noise shape for the simulated meter.
///
/// A run's energy is `base * drift * effect * (1 + eps)`:
///
/// * `drift` follows a bounded multiplicative random walk per device, so
///   any two runs of one device differ by at most a factor of
///   `1 + drift_bounds`. This is what back-to-back measurement exists to
///   cancel.
/// * on quiet runs `eps` is centered Gaussian with sd `noise_sigma`;
/// * with probability `spike_prob` a run spikes: `eps` gets magnitude
///   `spike_sigma * exp(0.2 z)` (z standard normal) and a random sign. The
///   mild lognormal keeps spike sizes near `spike_sigma` instead of letting
///   them fade into the quiet noise, which is how interference looks on the
///   bench: either absent or plainly visible.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftNoiseModel {
    pub base_joules: f64,
    /// Per-run sd of the walk step, in log space.
    pub drift_step: f64,
    /// Cap on drift spread: max/min ratio over a device's history.
    pub drift_bounds: f64,
    pub noise_sigma: f64,
    pub spike_prob: f64,
    pub spike_sigma: f64,
    /// Energy factor per variant key (see [`Variant::key`]); absent keys
    /// and the baseline run at factor 1.
    #[serde(default)]
    pub effects: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for DriftNoiseModel {
    fn default() -> Self {
        DriftNoiseModel {
            base_joules: 100.0,
            drift_step: 0.004,
            drift_bounds: 0.14,
            noise_sigma: 0.01,
            spike_prob: 0.02,
            spike_sigma: 0.16,
            effects: BTreeMap::new(),
            seed: 1,
        }
    }
}

/// Deterministic simulated meter. Energy is a pure function of (seed,
/// device, run index, variant), so interrupted campaigns resume onto the
/// exact same numbers.
pub struct Simulator {
    model: DriftNoiseModel,
    drift_cache: Mutex<HashMap<String, DriftWalk>>,
}

struct DriftWalk {
    rng: rand_chacha::ChaCha8Rng,
    log_levels: Vec<f64>,
}

impl Simulator {
    pub fn new(model: DriftNoiseModel) -> Self {
        Simulator {
            model,
            drift_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &DriftNoiseModel {
        &self.model
    }

    /// Declares that `variant` consumes `factor` times the baseline energy.
    /// Unknown variants (and the empty baseline key) run at factor 1.
    pub fn with_effect(mut self, variant: &str, factor: f64) -> Self {
        self.set_effect(variant, factor);
        self
    }

    pub fn set_effect(&mut self, variant: &str, factor: f64) {
        self.model.effects.insert(variant.to_string(), factor);
    }

    pub fn effect(&self, variant: &str) -> f64 {
        self.model.effects.get(variant).copied().unwrap_or(1.0)
    }

    /// The drift multiplier for a device at a run index. Log-space walk,
    /// clamped so max/min over any history stays within `1 + drift_bounds`.
    pub fn drift(&self, device: &str, run_index: u64) -> f64 {
        let half_span = 0.5 * (1.0 + self.model.drift_bounds).ln();
        let mut cache = self.drift_cache.lock().unwrap();
        let walk = cache.entry(device.to_string()).or_insert_with(|| DriftWalk {
            rng: seeded::rng(self.model.seed, &[b"drift", device.as_bytes()]),
            log_levels: vec![0.0],
        });
        while (run_index as usize) >= walk.log_levels.len() {
            let z: f64 = walk.rng.sample(StandardNormal);
            let next = (walk.log_levels.last().unwrap() + z * self.model.drift_step)
                .clamp(-half_span, half_span);
            walk.log_levels.push(next);
        }
        walk.log_levels[run_index as usize].exp()
    }

    /// Whether this run carries an interference spike.
    pub fn is_spike(&self, device: &str, run_index: u64) -> bool {
        self.disturbance(device, run_index).0
    }

    /// (spiked, eps) for a run.
    fn disturbance(&self, device: &str, run_index: u64) -> (bool, f64) {
        let mut rng = seeded::rng(
            self.model.seed,
            &[b"noise", device.as_bytes(), &run_index.to_le_bytes()],
        );
        let u: f64 = rng.gen();
        if u < self.model.spike_prob {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let z: f64 = rng.sample(StandardNormal);
            let eps = sign * self.model.spike_sigma * (0.2 * z).exp();
            (true, eps.max(-0.9))
        } else {
            let z: f64 = rng.sample(StandardNormal);
            (false, (self.model.noise_sigma * z).max(-0.9))
        }
    }

    pub fn energy(&self, device: &str, run_index: u64, variant: &str) -> f64 {
        let (_, eps) = self.disturbance(device, run_index);
        self.model.base_joules * self.drift(device, run_index) * self.effect(variant) * (1.0 + eps)
    }
}

impl EnergyProbe for Simulator {
    fn measure(&self, ctx: &RunContext) -> Result<f64, MeasureError> {
        Ok(self.energy(ctx.device, ctx.run_index, ctx.variant))
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("measurement command failed on {device} (exit {code:?}): {stderr}")]
    RunFailed {
        device: String,
        code: Option<i32>,
        stderr: String,
    },
    #[error("no energy reading at {path} after the run")]
    MissingReading { path: String },
    #[error("unusable energy reading {text:?}: {why}")]
    BadReading { text: String, why: String },
    #[error("io: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulator {
        Simulator::new(DriftNoiseModel::default())
    }

    #[test]
    fn energy_is_a_pure_function_of_seed_device_run_and_variant() {
        let a = sim();
        let b = sim();
        for run in [0u64, 1, 7, 1000] {
            assert_eq!(a.energy("dev0", run, ""), b.energy("dev0", run, ""));
        }
        // Cache order must not matter.
        let c = sim();
        let late = c.energy("dev0", 500, "");
        let early = c.energy("dev0", 3, "");
        assert_eq!(early, a.energy("dev0", 3, ""));
        assert_eq!(late, a.energy("dev0", 500, ""));
        assert_ne!(a.energy("dev0", 5, ""), a.energy("dev1", 5, ""));
    }

    #[test]
    fn drift_spread_stays_within_the_bound() {
        let s = sim();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for run in 0..10_000u64 {
            let d = s.drift("dev0", run);
            assert!(d > 0.0);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let bound = 1.0 + s.model().drift_bounds;
        assert!(
            hi / lo <= bound + 1e-9,
            "drift ratio {} exceeds {}",
            hi / lo,
            bound
        );
        // The walk actually moves; it is not a constant.
        assert!(hi / lo > 1.01);
    }

    #[test]
    fn effects_scale_energy_exactly() {
        let s = sim().with_effect("v", 0.9);
        for run in 0..50u64 {
            let base = s.energy("dev0", run, "");
            let with = s.energy("dev0", run, "v");
            assert!((with / base - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn spikes_happen_at_roughly_the_configured_rate() {
        let s = sim();
        let n = 10_000u64;
        let spikes = (0..n).filter(|r| s.is_spike("dev0", *r)).count();
        // Binomial(10000, 0.02): mean 200, sd ~14.
        assert!(
            (180..=320).contains(&spikes),
            "{spikes} spikes out of {n}"
        );
    }

    #[test]
    fn spike_magnitudes_sit_near_the_scale_and_quiet_noise_near_sigma() {
        let s = sim();
        let mut spike_mags = Vec::new();
        let mut quiet = Vec::new();
        for run in 0..20_000u64 {
            let e = s.energy("dev0", run, "");
            let eps = e / (s.model().base_joules * s.drift("dev0", run)) - 1.0;
            if s.is_spike("dev0", run) {
                spike_mags.push(eps.abs());
            } else {
                quiet.push(eps);
            }
        }
        spike_mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = spike_mags[spike_mags.len() / 2];
        let scale = s.model().spike_sigma;
        assert!(
            (0.8 * scale..=1.25 * scale).contains(&median),
            "median spike {median}"
        );
        // Almost every spike is far outside the quiet band.
        let visible = spike_mags
            .iter()
            .filter(|m| **m > 4.0 * s.model().noise_sigma)
            .count();
        assert!(visible as f64 >= 0.99 * spike_mags.len() as f64);

        let n = quiet.len() as f64;
        let mean = quiet.iter().sum::<f64>() / n;
        let sd = (quiet.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sigma = s.model().noise_sigma;
        assert!((0.9 * sigma..=1.1 * sigma).contains(&sd), "quiet sd {sd}");
    }

    #[test]
    fn effects_load_from_the_model_and_key_by_variant() {
        let json = r#"{
            "base_joules": 50.0, "drift_step": 0.0, "drift_bounds": 0.0,
            "noise_sigma": 0.0, "spike_prob": 0.0, "spike_sigma": 0.0,
            "effects": {"a.java@3-5#1": 0.9}, "seed": 7
        }"#;
        let model: DriftNoiseModel = serde_json::from_str(json).unwrap();
        let s = Simulator::new(model);
        let v = Variant::Parameter {
            site: "a.java@3-5".into(),
            value_index: 1,
        };
        assert_eq!(v.key(), "a.java@3-5#1");
        assert_eq!(Variant::Baseline.key(), "");
        assert_eq!(s.energy("d", 0, &v.key()), 45.0);
        assert_eq!(s.energy("d", 0, ""), 50.0);
    }

    #[test]
    fn measured_energy_is_always_positive() {
        let s = sim();
        for run in 0..5_000u64 {
            assert!(s.energy("dev0", run, "") > 0.0);
        }
    }

    fn ctx<'a>(tree: &'a Path, device: &'a str) -> RunContext<'a> {
        RunContext {
            device,
            tree,
            run_index: 0,
            variant: "",
        }
    }

    #[test]
    fn file_measurer_reads_and_consumes_the_reading() {
        let dir = tempfile::tempdir().unwrap();
        let reading = dir.path().join("joules-{device}.txt");
        let m = FileMeasurer {
            command: "printf '12.5' > {reading}".into(),
            reading_path: reading.display().to_string(),
        };
        let got = m.measure(&ctx(dir.path(), "devA")).unwrap();
        assert_eq!(got, 12.5);
        assert!(!dir.path().join("joules-devA.txt").exists());
    }

    #[test]
    fn stale_readings_are_cleared_before_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let reading = dir.path().join("joules.txt");
        fs::write(&reading, "999.0").unwrap();
        let m = FileMeasurer {
            command: "true".into(),
            reading_path: reading.display().to_string(),
        };
        // The command writes nothing, so the stale 999.0 must not be read.
        let err = m.measure(&ctx(dir.path(), "devA")).unwrap_err();
        assert!(matches!(err, MeasureError::MissingReading { .. }));
    }

    #[test]
    fn command_templating_substitutes_tree_and_device() {
        let dir = tempfile::tempdir().unwrap();
        let reading = dir.path().join("r.txt");
        let m = FileMeasurer {
            command: "test -d {tree} && test {device} = devB && printf '3.25' > {reading}".into(),
            reading_path: reading.display().to_string(),
        };
        assert_eq!(m.measure(&ctx(dir.path(), "devB")).unwrap(), 3.25);
    }

    #[test]
    fn failures_and_bad_readings_are_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let reading = dir.path().join("r.txt");
        let mk = |cmd: &str| FileMeasurer {
            command: cmd.into(),
            reading_path: reading.display().to_string(),
        };
        let c = ctx(dir.path(), "devA");

        assert!(matches!(
            mk("exit 3").measure(&c).unwrap_err(),
            MeasureError::RunFailed { code: Some(3), .. }
        ));
        assert!(matches!(
            mk("true").measure(&c).unwrap_err(),
            MeasureError::MissingReading { .. }
        ));
        assert!(matches!(
            mk("printf 'watts' > {reading}").measure(&c).unwrap_err(),
            MeasureError::BadReading { .. }
        ));
        assert!(matches!(
            mk("printf -- '-4.0' > {reading}").measure(&c).unwrap_err(),
            MeasureError::BadReading { .. }
        ));
        assert!(matches!(
            mk("printf 'NaN' > {reading}").measure(&c).unwrap_err(),
            MeasureError::BadReading { .. }
        ));
    }
}
