//! Campaign configuration. One JSON file fully specifies a run, from the
//! corpus location to the measurement backend, so a campaign can be
//! reproduced from the file alone. Relative paths are resolved against
//! the directory holding the config, which lets a config travel with its
//! corpus.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepwatt_core::experiment::ExperimentConfig;
use deepwatt_core::measure::DriftNoiseModel;
use deepwatt_core::mutate::MutationPolicy;
use deepwatt_core::source::AdapterConfig;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Source tree to scan and measure.
    pub corpus: PathBuf,
    #[serde(default)]
    pub adapter: AdapterConfig,
    /// Optional coverage file (lcov or file:line list) for the execution
    /// filter. Without it, every scanned site passes that stage.
    #[serde(default)]
    pub coverage: Option<PathBuf>,
    /// Optional manual-review exclusions.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub policy: MutationPolicy,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub measurer: MeasurerConfig,
    /// Artifact directory. Every subcommand reads and writes here.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasurerConfig {
    /// An external meter: the experiment's test command must leave a
    /// single decimal joule figure at `reading_path` inside the tree.
    File { reading_path: String },
    /// The synthetic meter; its model lives in a separate JSON file so
    /// injected effects stay out of the campaign config proper.
    Simulator { model: PathBuf },
}

/// A loaded config with paths resolved, companions parsed and the basic
/// invariants checked. Construction fails rather than letting a half
/// valid config reach the pipeline.
pub struct Campaign {
    pub cfg: RunConfig,
    /// Present iff the measurer is the simulator.
    pub model: Option<DriftNoiseModel>,
}

impl Campaign {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.corpus = resolve(base, &cfg.corpus);
        cfg.coverage = cfg.coverage.map(|p| resolve(base, &p));
        cfg.annotations = cfg.annotations.map(|p| resolve(base, &p));
        cfg.out = resolve(base, &cfg.out);

        let model = match &mut cfg.measurer {
            MeasurerConfig::File { .. } => None,
            MeasurerConfig::Simulator { model } => {
                *model = resolve(base, model);
                let text = fs::read_to_string(&*model)
                    .with_context(|| format!("reading simulator model {}", model.display()))?;
                let parsed: DriftNoiseModel = serde_json::from_str(&text)
                    .with_context(|| format!("parsing simulator model {}", model.display()))?;
                Some(parsed)
            }
        };

        let campaign = Campaign { cfg, model };
        campaign.validate()?;
        Ok(campaign)
    }

    /// Applies command-line overrides on top of the file, then re-checks
    /// the invariants the overrides can break.
    pub fn apply_overrides(
        &mut self,
        out: Option<PathBuf>,
        seed: Option<u64>,
        devices: &[String],
    ) -> Result<()> {
        if let Some(out) = out {
            self.cfg.out = out;
        }
        if let Some(seed) = seed {
            // One flag reseeds every seeded component: campaign provenance,
            // the enum-variant draw and the simulator stream.
            self.cfg.experiment.seed = seed;
            self.cfg.policy.seed = seed;
            if let Some(model) = &mut self.model {
                model.seed = seed;
            }
        }
        if !devices.is_empty() {
            self.cfg.experiment.devices = devices.to_vec();
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        let cfg = &self.cfg;
        if !cfg.corpus.is_dir() {
            bail!("corpus {} is not a directory", cfg.corpus.display());
        }
        for (what, path) in [("coverage", &cfg.coverage), ("annotations", &cfg.annotations)] {
            if let Some(path) = path {
                if !path.is_file() {
                    bail!("{what} file {} does not exist", path.display());
                }
            }
        }
        cfg.experiment.validate().context("experiment settings")?;
        if cfg.policy.factor < 2 {
            bail!("policy.factor must be at least 2");
        }
        if cfg.policy.enum_alternatives == 0 {
            bail!("policy.enum_alternatives must be at least 1");
        }
        if let MeasurerConfig::File { reading_path } = &cfg.measurer {
            if reading_path.trim().is_empty() {
                bail!("measurer.reading_path must not be empty");
            }
            if cfg.experiment.test_cmd.trim().is_empty() {
                bail!("a file measurer needs experiment.test_cmd to produce readings");
            }
        }
        if let Some(model) = &self.model {
            if !(model.base_joules > 0.0) {
                bail!("model base_joules must be positive");
            }
            for (name, v) in [
                ("drift_step", model.drift_step),
                ("drift_bounds", model.drift_bounds),
                ("noise_sigma", model.noise_sigma),
                ("spike_sigma", model.spike_sigma),
            ] {
                if !(v >= 0.0) {
                    bail!("model {name} must be non-negative");
                }
            }
            if !(0.0..=1.0).contains(&model.spike_prob) {
                bail!("model spike_prob must be within [0, 1]");
            }
            for (key, factor) in &model.effects {
                if !(*factor > 0.0) {
                    bail!("model effect {key} must be a positive factor");
                }
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
