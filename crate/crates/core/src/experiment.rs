//! Runs the measurement campaign. For every candidate parameter the
//! protocol is: re-measure the unmodified program (the baseline block),
//! then measure each planned value, back to back on the same device, and
//! compare only those adjacent blocks. Slow drift cancels out because the
//! two sides of every comparison are neighbors in time.
//!
//! Blocks are gated on their normalized standard deviation before any
//! comparison happens: a block that is noisier than `t_s` is thrown away
//! and measured again, a few times, before the parameter is given up on.
//!
//! Builds overlap measurement. A small builder pool prepares the next
//! parameter's mutated trees while the current one is on the meter, and
//! each device runs its own strictly serial measurement loop. Completed
//! parameters go to an append-only journal, which is also the resume
//! point: a restarted session skips journaled parameters and continues
//! each device's run sequence where it left off.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{EnergyProbe, MeasureError, RunContext, RunMeasurement, Variant};
use crate::mutate::{apply_mutation, PlannedMutation};
use crate::source::{ConstantSite, SiteKind};
use crate::stats::{decide, Decision, SampleStats, StatsError};

/// Campaign-level knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Runs per block.
    pub repeats: usize,
    pub alpha: f64,
    /// Stability threshold: highest accepted block sigma/mu.
    pub t_s: f64,
    /// Difference threshold: smallest relative reduction worth reporting.
    pub t_d: f64,
    /// How many times an unstable block is re-measured before giving up.
    pub max_block_retries: usize,
    /// Shell template run once per mutated tree; `{tree}` is substituted.
    pub build_cmd: String,
    /// Shell template run per tree per device; `{tree}` and `{device}`.
    pub install_cmd: String,
    /// Shell template the file measurer runs per measurement; `{tree}`,
    /// `{device}` and `{reading}` are substituted.
    pub test_cmd: String,
    pub devices: Vec<String>,
    /// Campaign seed, recorded for provenance; seeded components (mutation
    /// planning, the simulator) carry their own.
    pub seed: u64,
    /// Builder pool size.
    pub builders: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            repeats: 5,
            alpha: 0.05,
            t_s: 0.03,
            t_d: 0.03,
            max_block_retries: 3,
            build_cmd: String::new(),
            install_cmd: String::new(),
            test_cmd: String::new(),
            devices: vec!["device0".into()],
            seed: 42,
            builders: 2,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.repeats < 2 {
            return fail("repeats must be at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.t_s) || !(0.0..1.0).contains(&self.t_d) {
            return fail("t_s and t_d must lie in [0, 1)");
        }
        if self.devices.is_empty() {
            return fail("at least one device is required");
        }
        let distinct: BTreeSet<_> = self.devices.iter().collect();
        if distinct.len() != self.devices.len() {
            return fail("device names must be distinct");
        }
        if self.builders == 0 {
            return fail("builder pool size must be at least 1");
        }
        Ok(())
    }
}

/// One block: `repeats` consecutive runs of one variant on one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBlock {
    pub variant: Variant,
    pub device: String,
    pub runs: Vec<RunMeasurement>,
    pub mean: f64,
    pub sample_sd: f64,
    /// sigma/mu, the quantity the stability gate looks at.
    pub norm_sd: f64,
}

impl ExperimentBlock {
    pub fn from_runs(
        variant: Variant,
        device: &str,
        runs: Vec<RunMeasurement>,
    ) -> Result<Self, ExperimentError> {
        let energies: Vec<f64> = runs.iter().map(|r| r.energy).collect();
        let stats = SampleStats::from_sample(&energies).map_err(ExperimentError::Stats)?;
        let norm_sd = stats.norm_sd().ok_or_else(|| {
            ExperimentError::Config("block mean is not positive; cannot normalize".into())
        })?;
        Ok(ExperimentBlock {
            variant,
            device: device.to_string(),
            runs,
            mean: stats.mean,
            sample_sd: stats.sd(),
            norm_sd,
        })
    }

    pub fn energies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.energy).collect()
    }

    /// Recomputes the stored statistics from the raw runs. Used by audits
    /// on loaded journals.
    pub fn consistent(&self) -> bool {
        match SampleStats::from_sample(&self.energies()) {
            Ok(s) => {
                (s.mean - self.mean).abs() <= 1e-9 * self.mean.abs().max(1.0)
                    && (s.sd() - self.sample_sd).abs() <= 1e-9
                    && s.norm_sd()
                        .is_some_and(|n| (n - self.norm_sd).abs() <= 1e-12)
            }
            Err(_) => false,
        }
    }
}

/// Accept a block iff its normalized standard deviation is within `t_s`.
/// The boundary itself passes.
pub fn stability_gate(block: &ExperimentBlock, t_s: f64) -> bool {
    block.norm_sd <= t_s
}

/// What happened to one planned value of a parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ValueOutcome {
    Decided { decision: Decision },
    BuildFailed { message: String },
    RunFailed { message: String },
    /// Stability retries exhausted for this value's block.
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub value_index: usize,
    pub replacement: String,
    /// The accepted block, present when the outcome is a decision.
    pub block: Option<ExperimentBlock>,
    pub outcome: ValueOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterStatus {
    Completed,
    BuildFailed,
    RunFailed,
    /// The baseline never stabilized, so nothing could be compared.
    DiscardedUnstable,
}

/// Everything the campaign learned about one parameter, as journaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterResult {
    pub site: String,
    pub file: String,
    pub line: u32,
    pub kind: SiteKind,
    pub original: String,
    pub device: String,
    pub status: ParameterStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub baseline: Option<ExperimentBlock>,
    pub values: Vec<ValueResult>,
    /// Blocks the stability gate rejected, kept for auditing.
    pub discarded: Vec<ExperimentBlock>,
    /// The device's run counter after this parameter; resume starts here.
    pub device_runs_after: u64,
}

impl ParameterResult {
    fn max_timestamp(&self) -> f64 {
        self.baseline
            .iter()
            .chain(self.values.iter().filter_map(|v| v.block.as_ref()))
            .chain(self.discarded.iter())
            .flat_map(|b| b.runs.iter())
            .map(|r| r.timestamp)
            .fold(0.0, f64::max)
    }
}

/// One candidate parameter with its planned replacement values.
#[derive(Clone, Debug)]
pub struct ParameterPlan {
    pub site: ConstantSite,
    pub values: Vec<PlannedMutation>,
}

/// Joins a candidate list with a mutation plan, one entry per site that
/// has at least one planned value, sorted by site id.
pub fn group_plans(
    sites: &[ConstantSite],
    mutations: &[PlannedMutation],
) -> Result<Vec<ParameterPlan>, ExperimentError> {
    let by_id: HashMap<&str, &ConstantSite> =
        sites.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut grouped: BTreeMap<&str, Vec<&PlannedMutation>> = BTreeMap::new();
    for m in mutations {
        if !by_id.contains_key(m.site.as_str()) {
            return Err(ExperimentError::Plan(format!(
                "plan refers to unknown site {}",
                m.site
            )));
        }
        grouped.entry(m.site.as_str()).or_default().push(m);
    }
    Ok(grouped
        .into_iter()
        .map(|(id, mut ms)| {
            ms.sort_by_key(|m| m.ordinal);
            ParameterPlan {
                site: by_id[id].clone(),
                values: ms.into_iter().cloned().collect(),
            }
        })
        .collect())
}

/// Whether variant trees are materialized on disk. The simulator needs no
/// tree, so campaigns against it run in place on the unmodified corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreePolicy {
    InPlace,
    /// Copy the corpus per value, apply the mutation, run the build
    /// command, and measure against the resulting tree.
    PerVariant,
}

#[derive(Clone, Debug)]
pub struct SessionOptions {
    pub corpus_root: PathBuf,
    pub journal_path: PathBuf,
    pub tree_policy: TreePolicy,
    /// Scratch space for mutated trees; required for `PerVariant`.
    pub work_dir: Option<PathBuf>,
}

pub struct Session<'a> {
    cfg: &'a ExperimentConfig,
    probe: &'a dyn EnergyProbe,
    opts: SessionOptions,
}

#[derive(Debug)]
pub struct SessionReport {
    /// Results produced by this session, in completion order.
    pub completed: Vec<ParameterResult>,
    /// Parameters skipped because the journal already had them.
    pub previously_completed: usize,
    /// Site ids left untested, populated when devices were lost.
    pub pending: Vec<String>,
    pub lost_devices: Vec<String>,
    /// Human-readable diagnostics for lost devices.
    pub notes: Vec<String>,
}

/// Shared work pool for the device workers. A device that loses its
/// channel hands unfinished parameters back through `abandon`, so an
/// idle worker may not exit while any other worker still holds work:
/// it waits on the condvar until either something lands in the
/// overflow queue or every held item has been finished for good.
struct Scheduler {
    state: Mutex<SchedState>,
    wake: Condvar,
}

struct SchedState {
    overflow: VecDeque<usize>,
    held: usize,
}

impl Scheduler {
    fn new() -> Self {
        Scheduler {
            state: Mutex::new(SchedState {
                overflow: VecDeque::new(),
                held: 0,
            }),
            wake: Condvar::new(),
        }
    }

    /// Claims the next parameter if one is immediately available,
    /// preferring the worker's own queue. Used for the build lookahead,
    /// which must never block the measurement in hand.
    fn try_take(&self, own: &mut VecDeque<usize>) -> Option<usize> {
        let mut st = self.state.lock().unwrap();
        let idx = own.pop_front().or_else(|| st.overflow.pop_front())?;
        st.held += 1;
        Some(idx)
    }

    /// Claims the next parameter, blocking while other workers still
    /// hold claims (their work may be handed back). Only valid for a
    /// worker holding no claims of its own; returns None when no work
    /// exists anywhere and none can reappear.
    fn take(&self, own: &mut VecDeque<usize>) -> Option<usize> {
        let mut st = self.state.lock().unwrap();
        if let Some(idx) = own.pop_front() {
            st.held += 1;
            return Some(idx);
        }
        loop {
            if let Some(idx) = st.overflow.pop_front() {
                st.held += 1;
                return Some(idx);
            }
            if st.held == 0 {
                return None;
            }
            st = self.wake.wait(st).unwrap();
        }
    }

    /// Marks one claimed parameter as done (journaled or abandoned to
    /// the session report); the last `finish` releases idle waiters.
    fn finish(&self) {
        let mut st = self.state.lock().unwrap();
        st.held -= 1;
        self.wake.notify_all();
    }

    /// Returns claimed parameters (`held_items`) plus a never-claimed
    /// remainder to the shared pool.
    fn abandon(&self, held_items: Vec<usize>, rest: impl IntoIterator<Item = usize>) {
        let mut st = self.state.lock().unwrap();
        st.held -= held_items.len();
        st.overflow.extend(held_items);
        st.overflow.extend(rest);
        self.wake.notify_all();
    }

    fn leftovers(self) -> VecDeque<usize> {
        self.state.into_inner().unwrap().overflow
    }
}

/// Per-device measurement state: the serial run counter, the clock, and
/// the probe handle.
struct DeviceState<'a> {
    name: String,
    probe: &'a dyn EnergyProbe,
    run_counter: u64,
    last_timestamp: f64,
    timestamp_base: f64,
    epoch: Instant,
}

impl<'a> DeviceState<'a> {
    fn new(name: &str, probe: &'a dyn EnergyProbe, resume_runs: u64, resume_ts: f64) -> Self {
        DeviceState {
            name: name.to_string(),
            probe,
            run_counter: resume_runs,
            last_timestamp: resume_ts,
            timestamp_base: resume_ts,
            epoch: Instant::now(),
        }
    }

    fn measure_once(
        &mut self,
        tree: &Path,
        variant: &Variant,
    ) -> Result<RunMeasurement, MeasureError> {
        let started = Instant::now();
        let key = variant.key();
        let energy = self.probe.measure(&RunContext {
            device: &self.name,
            tree,
            run_index: self.run_counter,
            variant: &key,
        })?;
        let candidate = self.timestamp_base + self.epoch.elapsed().as_secs_f64();
        let timestamp = if candidate > self.last_timestamp {
            candidate
        } else {
            self.last_timestamp + 1e-9
        };
        self.last_timestamp = timestamp;
        let m = RunMeasurement {
            run_id: self.run_counter,
            variant: variant.clone(),
            energy,
            wall_time: started.elapsed().as_secs_f64(),
            timestamp,
        };
        self.run_counter += 1;
        Ok(m)
    }

    fn run_block(
        &mut self,
        tree: &Path,
        variant: &Variant,
        repeats: usize,
    ) -> Result<ExperimentBlock, BlockFailure> {
        let mut runs = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            runs.push(
                self.measure_once(tree, variant)
                    .map_err(BlockFailure::Run)?,
            );
        }
        ExperimentBlock::from_runs(variant.clone(), &self.name, runs)
            .map_err(|e| BlockFailure::Degenerate(e.to_string()))
    }

    /// Measures until the stability gate passes or retries run out. Gated
    /// rejects land in `discarded`.
    fn stable_block(
        &mut self,
        tree: &Path,
        variant: &Variant,
        cfg: &ExperimentConfig,
        discarded: &mut Vec<ExperimentBlock>,
    ) -> Result<Option<ExperimentBlock>, BlockFailure> {
        for _ in 0..=cfg.max_block_retries {
            let block = self.run_block(tree, variant, cfg.repeats)?;
            if stability_gate(&block, cfg.t_s) {
                return Ok(Some(block));
            }
            discarded.push(block);
        }
        Ok(None)
    }
}

enum BlockFailure {
    Run(MeasureError),
    Degenerate(String),
}

impl BlockFailure {
    /// An I/O level failure means the channel to the device broke, not
    /// that the measured program misbehaved; such parameters are re-queued
    /// rather than recorded as failed.
    fn channel_lost(&self) -> bool {
        matches!(self, BlockFailure::Run(MeasureError::Io(_)))
    }

    fn message(&self) -> String {
        match self {
            BlockFailure::Run(e) => e.to_string(),
            BlockFailure::Degenerate(m) => m.clone(),
        }
    }
}

/// Built trees for one parameter: value index to tree root or build error.
struct BuiltParameter {
    values: Vec<(usize, Result<PathBuf, String>)>,
    /// Scratch directory to remove once measured; None when in place.
    scratch: Option<PathBuf>,
}

enum Prepared {
    Ready(BuiltParameter),
    Pending(mpsc::Receiver<BuiltParameter>),
}

impl Prepared {
    fn wait(self) -> BuiltParameter {
        match self {
            Prepared::Ready(b) => b,
            Prepared::Pending(rx) => rx.recv().expect("builder pool stopped unexpectedly"),
        }
    }
}

struct BuildJob {
    plan_index: usize,
    scratch: PathBuf,
    reply: mpsc::Sender<BuiltParameter>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a ExperimentConfig, probe: &'a dyn EnergyProbe, opts: SessionOptions) -> Self {
        Session { cfg, probe, opts }
    }

    pub fn run(&self, plans: &[ParameterPlan]) -> Result<SessionReport, ExperimentError> {
        self.cfg.validate()?;
        let mut ids = BTreeSet::new();
        for p in plans {
            if !ids.insert(p.site.id.as_str()) {
                return Err(ExperimentError::Plan(format!(
                    "duplicate parameter {}",
                    p.site.id
                )));
            }
        }

        let previous = if self.opts.journal_path.exists() {
            let previous = load_journal(&self.opts.journal_path)?;
            trim_torn_tail(&self.opts.journal_path)?;
            previous
        } else {
            Vec::new()
        };
        let done: BTreeSet<&str> = previous.iter().map(|r| r.site.as_str()).collect();
        let mut resume: HashMap<&str, (u64, f64)> = HashMap::new();
        for r in &previous {
            let e = resume.entry(r.device.as_str()).or_insert((0, 0.0));
            e.0 = e.0.max(r.device_runs_after);
            e.1 = e.1.max(r.max_timestamp());
        }

        // Deterministic static partition: parameters sorted by site id,
        // dealt round-robin. Resume recomputes the identical partition and
        // then drops what the journal already holds, so a parameter stays
        // on its original device across restarts.
        let mut order: Vec<usize> = (0..plans.len()).collect();
        order.sort_by(|&a, &b| plans[a].site.id.cmp(&plans[b].site.id));
        let ndev = self.cfg.devices.len();
        let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); ndev];
        for (pos, &idx) in order.iter().enumerate() {
            queues[pos % ndev].push_back(idx);
        }
        let previously_completed = plans
            .iter()
            .filter(|p| done.contains(p.site.id.as_str()))
            .count();
        for q in &mut queues {
            q.retain(|&idx| !done.contains(plans[idx].site.id.as_str()));
        }

        let materialize = self.opts.tree_policy == TreePolicy::PerVariant;
        let work_root = if materialize {
            let base = self.opts.work_dir.clone().ok_or_else(|| {
                ExperimentError::Config("per-variant trees need a work directory".into())
            })?;
            let root = base.join("trees");
            fs::create_dir_all(&root).map_err(|e| ExperimentError::Io {
                path: root.display().to_string(),
                message: e.to_string(),
            })?;
            Some(root)
        } else {
            None
        };

        // The baseline is built once; every parameter re-measures it but
        // nothing ever mutates it.
        let baseline_tree = match &work_root {
            Some(root) => {
                let tree = root.join("baseline");
                copy_tree(&self.opts.corpus_root, &tree)?;
                run_cmd(&self.cfg.build_cmd, &tree, "")
                    .map_err(ExperimentError::BaselineBuild)?;
                tree
            }
            None => self.opts.corpus_root.clone(),
        };

        let journal = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.opts.journal_path)
            .map_err(|e| ExperimentError::Io {
                path: self.opts.journal_path.display().to_string(),
                message: e.to_string(),
            })?;
        let journal = Mutex::new(journal);
        let completed: Mutex<Vec<ParameterResult>> = Mutex::new(Vec::new());
        let lost: Mutex<Vec<String>> = Mutex::new(Vec::new());
        let notes: Mutex<Vec<String>> = Mutex::new(Vec::new());
        let sched = Scheduler::new();
        let job_counter = AtomicUsize::new(0);

        let (job_tx, job_rx) = mpsc::channel::<BuildJob>();
        let job_rx = Mutex::new(job_rx);

        std::thread::scope(|s| {
            if materialize {
                for _ in 0..self.cfg.builders {
                    s.spawn(|| loop {
                        let job = { job_rx.lock().unwrap().recv() };
                        match job {
                            Ok(job) => self.build_parameter(&plans[job.plan_index], job),
                            Err(_) => break,
                        }
                    });
                }
            }

            for (dev_idx, device) in self.cfg.devices.iter().enumerate() {
                let mut queue = std::mem::take(&mut queues[dev_idx]);
                let (runs0, ts0) = resume.get(device.as_str()).copied().unwrap_or((0, 0.0));
                let job_tx = job_tx.clone();
                let journal = &journal;
                let completed = &completed;
                let lost = &lost;
                let notes = &notes;
                let sched = &sched;
                let job_counter = &job_counter;
                let work_root = work_root.as_deref();
                let baseline_tree = baseline_tree.as_path();
                s.spawn(move || {
                    let mut dev = DeviceState::new(device, self.probe, runs0, ts0);
                    let mut baseline_installed = false;

                    let prepare = |idx: usize| -> Prepared {
                        match work_root {
                            None => Prepared::Ready(BuiltParameter {
                                values: plans[idx]
                                    .values
                                    .iter()
                                    .map(|m| (m.ordinal, Ok(self.opts.corpus_root.clone())))
                                    .collect(),
                                scratch: None,
                            }),
                            Some(root) => {
                                let n = job_counter.fetch_add(1, Ordering::Relaxed);
                                let scratch = root.join(format!("job-{n}"));
                                let (tx, rx) = mpsc::channel();
                                job_tx
                                    .send(BuildJob {
                                        plan_index: idx,
                                        scratch,
                                        reply: tx,
                                    })
                                    .expect("builder pool stopped unexpectedly");
                                Prepared::Pending(rx)
                            }
                        }
                    };

                    let dev_name = dev.name.clone();
                    let die = move |held: Vec<usize>, queue: &mut VecDeque<usize>, why: String| {
                        sched.abandon(held, queue.drain(..));
                        lost.lock().unwrap().push(dev_name.clone());
                        notes.lock().unwrap().push(format!("{dev_name}: {why}"));
                    };

                    let mut inflight: Option<(usize, Prepared)> = None;
                    loop {
                        let (idx, prepared) = match inflight.take() {
                            Some(x) => x,
                            None => match sched.take(&mut queue) {
                                Some(idx) => (idx, prepare(idx)),
                                None => return,
                            },
                        };
                        // Start the next parameter's builds before this
                        // one occupies the meter.
                        if let Some(next) = sched.try_take(&mut queue) {
                            inflight = Some((next, prepare(next)));
                        }
                        let built = prepared.wait();
                        if !baseline_installed {
                            if let Err(m) =
                                run_cmd(&self.cfg.install_cmd, baseline_tree, &dev.name)
                            {
                                // An uninstallable baseline makes every
                                // parameter untestable here; hand the work
                                // back like a lost channel.
                                cleanup(&built);
                                let mut held = vec![idx];
                                if let Some((n, _)) = inflight.take() {
                                    held.push(n);
                                }
                                die(held, &mut queue, format!("baseline install failed: {m}"));
                                return;
                            }
                            baseline_installed = true;
                        }
                        match test_parameter(
                            &mut dev,
                            self.cfg,
                            &plans[idx],
                            baseline_tree,
                            &built,
                        ) {
                            Ok(result) => {
                                let line = serde_json::to_string(&result)
                                    .expect("result serializes");
                                {
                                    let mut j = journal.lock().unwrap();
                                    j.write_all(line.as_bytes()).expect("journal write");
                                    j.write_all(b"\n").expect("journal write");
                                    j.flush().expect("journal flush");
                                }
                                completed.lock().unwrap().push(result);
                                cleanup(&built);
                                sched.finish();
                            }
                            Err(e) => {
                                // Channel gone: nothing journaled, hand
                                // everything back and stop this device.
                                cleanup(&built);
                                let mut held = vec![idx];
                                if let Some((n, _)) = inflight.take() {
                                    held.push(n);
                                }
                                die(held, &mut queue, e.to_string());
                                return;
                            }
                        }
                    }
                });
            }
            drop(job_tx);
        });

        let mut pending: Vec<String> = sched
            .leftovers()
            .into_iter()
            .map(|idx| plans[idx].site.id.to_string())
            .collect();
        pending.sort();
        pending.dedup();

        if let Some(root) = &work_root {
            let _ = fs::remove_dir_all(root);
        }

        Ok(SessionReport {
            completed: completed.into_inner().unwrap(),
            previously_completed,
            pending,
            lost_devices: lost.into_inner().unwrap(),
            notes: notes.into_inner().unwrap(),
        })
    }

    /// Builder-side work: one tree per planned value.
    fn build_parameter(&self, plan: &ParameterPlan, job: BuildJob) {
        let mut values = Vec::with_capacity(plan.values.len());
        for m in &plan.values {
            let tree = job.scratch.join(format!("v{}", m.ordinal));
            let outcome = copy_tree(&self.opts.corpus_root, &tree)
                .map_err(|e| e.to_string())
                .and_then(|()| {
                    apply_mutation(&tree, m)
                        .map(|_| ())
                        .map_err(|e| format!("mutation not applicable: {e}"))
                })
                .and_then(|()| run_cmd(&self.cfg.build_cmd, &tree, ""));
            values.push((m.ordinal, outcome.map(|()| tree)));
        }
        // The receiver disappears when its device is lost; the scratch
        // trees are swept with the work root at session end.
        let _ = job.reply.send(BuiltParameter {
            values,
            scratch: Some(job.scratch),
        });
    }
}

fn cleanup(built: &BuiltParameter) {
    if let Some(dir) = &built.scratch {
        let _ = fs::remove_dir_all(dir);
    }
}

/// The back-to-back protocol for one parameter: a fresh baseline block,
/// then one block per planned value, all adjacent on one device. Returns
/// Err only when the device channel is lost, so the caller can re-queue.
fn test_parameter(
    dev: &mut DeviceState,
    cfg: &ExperimentConfig,
    plan: &ParameterPlan,
    baseline_tree: &Path,
    built: &BuiltParameter,
) -> Result<ParameterResult, MeasureError> {
    let mut result = ParameterResult {
        site: plan.site.id.to_string(),
        file: plan.site.file.clone(),
        line: plan.site.line,
        kind: plan.site.kind,
        original: plan.site.raw_text.clone(),
        device: dev.name.clone(),
        status: ParameterStatus::Completed,
        note: None,
        baseline: None,
        values: Vec::new(),
        discarded: Vec::new(),
    device_runs_after: 0,
    };

    let baseline = match dev.stable_block(
        baseline_tree,
        &Variant::Baseline,
        cfg,
        &mut result.discarded,
    ) {
        Ok(Some(block)) => block,
        Ok(None) => {
            result.status = ParameterStatus::DiscardedUnstable;
            result.note = Some("baseline never stabilized".into());
            result.device_runs_after = dev.run_counter;
            return Ok(result);
        }
        Err(f) if f.channel_lost() => {
            return Err(match f {
                BlockFailure::Run(e) => e,
                BlockFailure::Degenerate(m) => MeasureError::Io(m),
            })
        }
        Err(f) => {
            result.status = ParameterStatus::RunFailed;
            result.note = Some(f.message());
            result.device_runs_after = dev.run_counter;
            return Ok(result);
        }
    };
    let baseline_energies = baseline.energies();
    result.baseline = Some(baseline);

    for (value_index, tree) in &built.values {
        let planned = plan
            .values
            .iter()
            .find(|m| m.ordinal == *value_index)
            .expect("built values mirror the plan");
        let variant = Variant::Parameter {
            site: plan.site.id.to_string(),
            value_index: *value_index,
        };
        let tree = match tree {
            Ok(t) => t,
            Err(message) => {
                result.values.push(ValueResult {
                    value_index: *value_index,
                    replacement: planned.replacement.clone(),
                    block: None,
                    outcome: ValueOutcome::BuildFailed {
                        message: message.clone(),
                    },
                });
                continue;
            }
        };
        if let Err(m) = run_cmd(&cfg.install_cmd, tree, &dev.name) {
            result.values.push(ValueResult {
                value_index: *value_index,
                replacement: planned.replacement.clone(),
                block: None,
                outcome: ValueOutcome::RunFailed {
                    message: format!("install failed: {m}"),
                },
            });
            continue;
        }
        let outcome = match dev.stable_block(tree, &variant, cfg, &mut result.discarded) {
            Ok(Some(block)) => {
                let decision = decide(
                    &block.energies(),
                    &baseline_energies,
                    cfg.t_d,
                    cfg.alpha,
                );
                match decision {
                    Ok(decision) => ValueResult {
                        value_index: *value_index,
                        replacement: planned.replacement.clone(),
                        block: Some(block),
                        outcome: ValueOutcome::Decided { decision },
                    },
                    Err(e) => ValueResult {
                        value_index: *value_index,
                        replacement: planned.replacement.clone(),
                        block: Some(block),
                        outcome: ValueOutcome::RunFailed {
                            message: format!("comparison impossible: {e}"),
                        },
                    },
                }
            }
            Ok(None) => ValueResult {
                value_index: *value_index,
                replacement: planned.replacement.clone(),
                block: None,
                outcome: ValueOutcome::Unstable,
            },
            Err(f) if f.channel_lost() => {
                return Err(match f {
                    BlockFailure::Run(e) => e,
                    BlockFailure::Degenerate(m) => MeasureError::Io(m),
                })
            }
            Err(f) => ValueResult {
                value_index: *value_index,
                replacement: planned.replacement.clone(),
                block: None,
                outcome: ValueOutcome::RunFailed {
                    message: f.message(),
                },
            },
        };
        result.values.push(outcome);
    }

    result.device_runs_after = dev.run_counter;
    Ok(result)
}

/// Substitutes `{tree}` and `{device}` and runs the template through the
/// shell. Empty templates are a no-op, which is how simulator campaigns
/// skip building entirely.
fn run_cmd(template: &str, tree: &Path, device: &str) -> Result<(), String> {
    if template.trim().is_empty() {
        return Ok(());
    }
    let cmd = template
        .replace("{tree}", &tree.display().to_string())
        .replace("{device}", device);
    let output = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| format!("could not run `{cmd}`: {e}"))?;
    if output.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{cmd}` exited with {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
                .chars()
                .take(400)
                .collect::<String>()
        ))
    }
}

fn copy_tree(src: &Path, dst: &Path) -> Result<(), ExperimentError> {
    let io_err = |p: &Path, e: std::io::Error| ExperimentError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(|e| ExperimentError::Io {
            path: src.display().to_string(),
            message: e.to_string(),
        })?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .expect("walk stays under src");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(|e| io_err(&target, e))?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::copy(entry.path(), &target).map_err(|e| io_err(&target, e))?;
        }
    }
    Ok(())
}

/// Reads a journal back. Order is preserved; every line must parse.
pub fn load_journal(path: &Path) -> Result<Vec<ParameterResult>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut results = Vec::new();
    let mut rest = text.as_str();
    let mut line_no = 0usize;
    while !rest.is_empty() {
        line_no += 1;
        let (line, terminated) = match rest.find('\n') {
            Some(pos) => {
                let line = &rest[..pos];
                rest = &rest[pos + 1..];
                (line, true)
            }
            None => {
                let line = rest;
                rest = "";
                (line, false)
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ParameterResult>(line) {
            Ok(result) => results.push(result),
            // A record is committed by its newline. An unterminated
            // final line is the torn tail of a write cut short by a
            // crash; that parameter simply gets re-measured. A record
            // that was terminated but does not parse is real
            // corruption and must not be papered over.
            Err(_) if !terminated => break,
            Err(e) => {
                return Err(ExperimentError::Journal {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(results)
}

/// Cuts an unterminated final line off a journal before new records are
/// appended to it, so a torn tail left by a crash cannot splice into the
/// next write.
fn trim_torn_tail(path: &Path) -> Result<(), ExperimentError> {
    let io = |e: std::io::Error| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let bytes = fs::read(path).map_err(&io)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        let file = fs::OpenOptions::new().write(true).open(path).map_err(&io)?;
        file.set_len(keep as u64).map_err(&io)?;
    }
    Ok(())
}

/// Timing assumptions for schedule planning, in seconds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimingModel {
    pub build_secs: f64,
    pub block_secs: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            build_secs: 60.0,
            block_secs: 110.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MakespanReport {
    /// Builds overlapped with measurement, as the session actually runs.
    pub pipelined_secs: f64,
    /// Everything strictly sequential per device, for comparison.
    pub serial_secs: f64,
    pub parameters: usize,
    pub devices: usize,
    pub builders: usize,
}

/// Dry-run scheduler: predicts the campaign makespan with and without the
/// build/measure overlap, without touching a device. `value_counts` holds
/// the number of planned values per parameter, in scheduling order.
pub fn simulate_schedule(
    value_counts: &[usize],
    devices: usize,
    builders: usize,
    timing: &TimingModel,
) -> MakespanReport {
    assert!(devices > 0 && builders > 0, "need devices and builders");
    let us = |secs: f64| (secs * 1e6).round() as u64;
    let build_us = us(timing.build_secs);
    let block_us = us(timing.block_secs);

    // Same deal as the live session: round-robin partition, per-device
    // serial measurement, FCFS builder pool, and the next parameter's
    // build requested the moment the previous one starts measuring.
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); devices];
    for (pos, &v) in value_counts.iter().enumerate() {
        queues[pos % devices].push(v);
    }

    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut builder_free: BinaryHeap<Reverse<u64>> = (0..builders).map(|_| Reverse(0)).collect();
    let mut build_done: Vec<Vec<Option<u64>>> =
        queues.iter().map(|q| vec![None; q.len()]).collect();
    let mut meas_free = vec![0u64; devices];
    let mut cursor = vec![0usize; devices];

    // Events are (time, sequence, device); sequence keeps ordering total
    // and deterministic.
    let mut events: BinaryHeap<Reverse<(u64, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let request_build =
        |dev: usize,
         pos: usize,
         now: u64,
         queues: &[Vec<usize>],
         build_done: &mut [Vec<Option<u64>>],
         builder_free: &mut BinaryHeap<Reverse<u64>>,
         events: &mut BinaryHeap<Reverse<(u64, u64, usize)>>,
         seq: &mut u64| {
            let Reverse(free) = builder_free.pop().expect("pool never empties");
            let start = free.max(now);
            let done = start + queues[dev][pos] as u64 * build_us;
            builder_free.push(Reverse(done));
            build_done[dev][pos] = Some(done);
            *seq += 1;
            events.push(Reverse((done, *seq, dev)));
        };

    for dev in 0..devices {
        if !queues[dev].is_empty() {
            request_build(
                dev,
                0,
                0,
                &queues,
                &mut build_done,
                &mut builder_free,
                &mut events,
                &mut seq,
            );
        }
    }

    let mut makespan = 0u64;
    while let Some(Reverse((now, _, dev))) = events.pop() {
        let pos = cursor[dev];
        if pos >= queues[dev].len() {
            continue;
        }
        let ready = build_done[dev][pos].is_some_and(|t| t <= now) && meas_free[dev] <= now;
        if !ready {
            continue;
        }
        cursor[dev] += 1;
        if cursor[dev] < queues[dev].len() {
            request_build(
                dev,
                cursor[dev],
                now,
                &queues,
                &mut build_done,
                &mut builder_free,
                &mut events,
                &mut seq,
            );
        }
        let blocks = 1 + queues[dev][pos] as u64;
        let end = now + blocks * block_us;
        meas_free[dev] = end;
        makespan = makespan.max(end);
        seq += 1;
        events.push(Reverse((end, seq, dev)));
    }

    let serial = queues
        .iter()
        .map(|q| {
            q.iter()
                .map(|&v| v as u64 * build_us + (1 + v as u64) * block_us)
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0);

    MakespanReport {
        pipelined_secs: makespan as f64 / 1e6,
        serial_secs: serial as f64 / 1e6,
        parameters: value_counts.len(),
        devices,
        builders,
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
    #[error("baseline build failed: {0}")]
    BaselineBuild(String),
    #[error("plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Stats(StatsError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{DriftNoiseModel, Simulator};
    use crate::mutate::{plan_mutations, MutationPolicy};
    use crate::source::{SiteId, SiteValue, SyntaxContext};
    use std::sync::atomic::AtomicU64;

    fn site(id: &str, value: i64) -> ConstantSite {
        ConstantSite {
            id: SiteId(id.to_string()),
            file: id.split('@').next().unwrap().to_string(),
            span: (0, 1),
            line: 1,
            kind: SiteKind::Int,
            raw_text: value.to_string(),
            value: SiteValue::Int(value),
            radix: None,
            enum_type: None,
            enum_domain: None,
            contexts: [SyntaxContext::VariableInitializer].into_iter().collect(),
            enclosure: None,
        }
    }

    fn quiet_model(seed: u64) -> DriftNoiseModel {
        DriftNoiseModel {
            base_joules: 100.0,
            drift_step: 0.001,
            drift_bounds: 0.05,
            noise_sigma: 0.008,
            spike_prob: 0.0,
            spike_sigma: 0.16,
            effects: BTreeMap::new(),
            seed,
        }
    }

    fn plans_for(sites: &[ConstantSite]) -> Vec<ParameterPlan> {
        let plan = plan_mutations(sites, &MutationPolicy::default());
        group_plans(sites, &plan.mutations).unwrap()
    }

    fn quick_cfg(devices: &[&str]) -> ExperimentConfig {
        ExperimentConfig {
            devices: devices.iter().map(|d| d.to_string()).collect(),
            t_s: 0.03,
            t_d: 0.02,
            ..ExperimentConfig::default()
        }
    }

    fn session_opts(dir: &Path) -> SessionOptions {
        SessionOptions {
            corpus_root: dir.join("corpus"),
            journal_path: dir.join("journal.jsonl"),
            tree_policy: TreePolicy::InPlace,
            work_dir: None,
        }
    }

    #[test]
    fn block_statistics_match_the_hand_computation() {
        let energies = [10.0, 10.2, 9.8, 10.1, 9.9];
        let runs: Vec<RunMeasurement> = energies
            .iter()
            .enumerate()
            .map(|(i, &e)| RunMeasurement {
                run_id: i as u64,
                variant: Variant::Baseline,
                energy: e,
                wall_time: 0.0,
                timestamp: i as f64,
            })
            .collect();
        let block = ExperimentBlock::from_runs(Variant::Baseline, "d", runs).unwrap();
        assert_eq!(block.mean, 10.0);
        assert!((block.sample_sd - 0.15811388300841897).abs() < 1e-12);
        assert!((block.norm_sd - 0.015811388300841897).abs() < 1e-12);
        assert!(block.consistent());
    }

    #[test]
    fn gate_accepts_the_boundary_and_rejects_above() {
        let mk = |norm: f64| ExperimentBlock {
            variant: Variant::Baseline,
            device: "d".into(),
            runs: Vec::new(),
            mean: 1.0,
            sample_sd: norm,
            norm_sd: norm,
        };
        assert!(stability_gate(&mk(0.02), 0.03));
        assert!(stability_gate(&mk(0.03), 0.03));
        assert!(!stability_gate(&mk(0.0300001), 0.03));
        assert!(!stability_gate(&mk(0.16), 0.03));
    }

    #[test]
    fn zero_noise_blocks_have_zero_spread() {
        let model = DriftNoiseModel {
            drift_step: 0.0,
            noise_sigma: 0.0,
            spike_prob: 0.0,
            base_joules: 10.0,
            ..quiet_model(3)
        };
        let sim = Simulator::new(model);
        let mut dev = DeviceState::new("d", &sim, 0, 0.0);
        let block = dev
            .run_block(Path::new("."), &Variant::Baseline, 5)
            .map_err(|e| e.message())
            .unwrap();
        assert_eq!(block.mean, 10.0);
        assert_eq!(block.norm_sd, 0.0);
    }

    #[test]
    fn injected_effect_is_flagged_and_null_values_are_not() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40), site("B.java@20-22", 6)];
        let plans = plans_for(&sites);
        let sim = Simulator::new(quiet_model(11)).with_effect("A.java@10-12#0", 0.85);
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(report.completed.len(), 2);
        assert!(report.pending.is_empty());

        let by_site: HashMap<&str, &ParameterResult> = report
            .completed
            .iter()
            .map(|r| (r.site.as_str(), r))
            .collect();
        let a = by_site["A.java@10-12"];
        assert_eq!(a.status, ParameterStatus::Completed);
        let flagged: Vec<usize> = a
            .values
            .iter()
            .filter(|v| match &v.outcome {
                ValueOutcome::Decided { decision } => {
                    decision.verdict == crate::stats::Verdict::EnergyReducingCandidate
                }
                _ => false,
            })
            .map(|v| v.value_index)
            .collect();
        assert_eq!(flagged, vec![0]);

        let b = by_site["B.java@20-22"];
        for v in &b.values {
            match &v.outcome {
                ValueOutcome::Decided { decision } => {
                    assert_eq!(decision.verdict, crate::stats::Verdict::NotSignificant)
                }
                other => panic!("unexpected outcome {other:?}"),
            }
        }
    }

    #[test]
    fn baseline_that_never_stabilizes_discards_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40)];
        let plans = plans_for(&sites);
        let model = DriftNoiseModel {
            spike_prob: 1.0,
            ..quiet_model(5)
        };
        let sim = Simulator::new(model);
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        let r = &report.completed[0];
        assert_eq!(r.status, ParameterStatus::DiscardedUnstable);
        assert!(r.values.is_empty());
        assert!(r.baseline.is_none());
        assert_eq!(r.discarded.len(), 1 + cfg.max_block_retries);
        for d in &r.discarded {
            assert!(d.norm_sd > cfg.t_s);
        }
    }

    /// Probe wrapper that fails a specific run with a given error.
    struct FailingProbe<F: Fn(u64) -> Option<MeasureError> + Send + Sync> {
        inner: Simulator,
        fail: F,
        calls: AtomicU64,
    }

    impl<F: Fn(u64) -> Option<MeasureError> + Send + Sync> EnergyProbe for FailingProbe<F> {
        fn measure(&self, ctx: &RunContext) -> Result<f64, MeasureError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if let Some(e) = (self.fail)(call) {
                return Err(e);
            }
            self.inner.measure(ctx)
        }
    }

    #[test]
    fn app_failure_on_a_value_is_recorded_and_the_rest_continue() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40)];
        let plans = plans_for(&sites);
        // Baseline takes calls 0..5; the first value block starts at call
        // 5 and its third run (call 7) crashes.
        let probe = FailingProbe {
            inner: Simulator::new(quiet_model(9)),
            fail: |call| {
                (call == 7).then(|| MeasureError::RunFailed {
                    device: "dev0".into(),
                    code: Some(9),
                    stderr: "segfault".into(),
                })
            },
            calls: AtomicU64::new(0),
        };
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &probe, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        let r = &report.completed[0];
        assert_eq!(r.status, ParameterStatus::Completed);
        assert!(matches!(
            r.values[0].outcome,
            ValueOutcome::RunFailed { .. }
        ));
        assert!(matches!(r.values[1].outcome, ValueOutcome::Decided { .. }));
    }

    #[test]
    fn baseline_app_failure_fails_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40)];
        let plans = plans_for(&sites);
        let probe = FailingProbe {
            inner: Simulator::new(quiet_model(9)),
            fail: |call| {
                (call == 2).then(|| MeasureError::RunFailed {
                    device: "dev0".into(),
                    code: Some(1),
                    stderr: String::new(),
                })
            },
            calls: AtomicU64::new(0),
        };
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &probe, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        let r = &report.completed[0];
        assert_eq!(r.status, ParameterStatus::RunFailed);
        assert!(r.values.is_empty());
    }

    #[test]
    fn runs_within_a_parameter_are_adjacent_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40), site("B.java@20-22", 6)];
        let plans = plans_for(&sites);
        let sim = Simulator::new(quiet_model(21));
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();

        let mut last_id = None;
        let mut last_ts = f64::NEG_INFINITY;
        for r in &report.completed {
            let baseline = r.baseline.as_ref().unwrap();
            let value_blocks: Vec<&ExperimentBlock> =
                r.values.iter().filter_map(|v| v.block.as_ref()).collect();
            let b_max = baseline.runs.iter().map(|m| m.run_id).max().unwrap();
            for vb in &value_blocks {
                assert!(vb.runs.iter().all(|m| m.run_id > b_max));
            }
            for block in std::iter::once(baseline).chain(value_blocks) {
                for run in &block.runs {
                    if let Some(prev) = last_id {
                        assert!(run.run_id > prev, "run ids must increase");
                    }
                    assert!(run.timestamp > last_ts, "timestamps must increase");
                    last_id = Some(run.run_id);
                    last_ts = run.timestamp;
                }
            }
        }
    }

    #[test]
    fn partition_is_disjoint_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites: Vec<ConstantSite> = (0..10)
            .map(|i| site(&format!("F{i}.java@{}-{}", 10 + i, 12 + i), 40 + i as i64))
            .collect();
        let plans = plans_for(&sites);
        let sim = Simulator::new(quiet_model(31));
        let cfg = quick_cfg(&["dev0", "dev1"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(report.completed.len(), 10);

        let mut by_device: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in &report.completed {
            by_device
                .entry(r.device.as_str())
                .or_default()
                .insert(r.site.as_str());
        }
        assert_eq!(by_device.len(), 2);
        let devs: Vec<_> = by_device.values().collect();
        assert!(devs[0].is_disjoint(devs[1]));
        assert_eq!(devs[0].len() + devs[1].len(), 10);

        // Same inputs, fresh journal: identical assignment.
        let dir2 = tempfile::tempdir().unwrap();
        fs::create_dir(dir2.path().join("corpus")).unwrap();
        let report2 = Session::new(&cfg, &sim, session_opts(dir2.path()))
            .run(&plans)
            .unwrap();
        let assign = |rep: &SessionReport| -> BTreeMap<String, String> {
            rep.completed
                .iter()
                .map(|r| (r.site.clone(), r.device.clone()))
                .collect()
        };
        assert_eq!(assign(&report), assign(&report2));
    }

    #[test]
    fn interrupted_session_resumes_to_identical_decisions() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites: Vec<ConstantSite> = (0..6)
            .map(|i| site(&format!("F{i}.java@{}-{}", 10 + i, 12 + i), 40 + i as i64))
            .collect();
        let plans = plans_for(&sites);
        let cfg = quick_cfg(&["dev0"]);

        // The uninterrupted reference campaign.
        let ref_dir = tempfile::tempdir().unwrap();
        fs::create_dir(ref_dir.path().join("corpus")).unwrap();
        let sim = Simulator::new(quiet_model(17));
        let reference = Session::new(&cfg, &sim, session_opts(ref_dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(reference.completed.len(), 6);

        // Same campaign, but the device dies mid-way through.
        let dying = FailingProbe {
            inner: Simulator::new(quiet_model(17)),
            fail: |call| (call >= 40).then(|| MeasureError::Io("channel reset".into())),
            calls: AtomicU64::new(0),
        };
        let first = Session::new(&cfg, &dying, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert!(!first.pending.is_empty());
        assert_eq!(first.lost_devices, vec!["dev0".to_string()]);
        let journaled = first.completed.len();
        assert!(journaled >= 1 && journaled < 6);

        // Restart with a healthy probe; only the remainder runs.
        let sim2 = Simulator::new(quiet_model(17));
        let second = Session::new(&cfg, &sim2, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(second.previously_completed, journaled);
        assert_eq!(second.completed.len(), 6 - journaled);
        assert!(second.pending.is_empty());

        // The union must match the uninterrupted run exactly: same sites,
        // same run ids, same energies, same decisions.
        let full = load_journal(&dir.path().join("journal.jsonl")).unwrap();
        assert_eq!(full.len(), 6);
        let mut seen = BTreeSet::new();
        for r in &full {
            assert!(seen.insert(r.site.clone()), "site journaled twice");
        }
        let key = |r: &ParameterResult| {
            (
                r.site.clone(),
                r.baseline.as_ref().map(|b| b.energies()),
                r.values
                    .iter()
                    .map(|v| (v.value_index, v.block.as_ref().map(|b| b.energies())))
                    .collect::<Vec<_>>(),
            )
        };
        let mut got: Vec<_> = full.iter().map(key).collect();
        let mut want: Vec<_> = reference.completed.iter().map(key).collect();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        want.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got, want);
    }

    #[test]
    fn lost_device_hands_its_queue_to_the_survivor() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites: Vec<ConstantSite> = (0..8)
            .map(|i| site(&format!("F{i}.java@{}-{}", 10 + i, 12 + i), 40 + i as i64))
            .collect();
        let plans = plans_for(&sites);

        struct OneDeadDevice {
            inner: Simulator,
        }
        impl EnergyProbe for OneDeadDevice {
            fn measure(&self, ctx: &RunContext) -> Result<f64, MeasureError> {
                if ctx.device == "dev1" && ctx.run_index >= 5 {
                    return Err(MeasureError::Io("usb gone".into()));
                }
                self.inner.measure(ctx)
            }
        }
        let probe = OneDeadDevice {
            inner: Simulator::new(quiet_model(13)),
        };
        let cfg = quick_cfg(&["dev0", "dev1"]);
        let report = Session::new(&cfg, &probe, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(report.lost_devices, vec!["dev1".to_string()]);
        assert!(report.pending.is_empty());
        assert_eq!(report.completed.len(), 8);
        // Everything dev1 could not finish ran on dev0 instead.
        let on_dev0 = report
            .completed
            .iter()
            .filter(|r| r.device == "dev0")
            .count();
        assert!(on_dev0 > 4, "survivor took over re-queued parameters");
    }

    #[test]
    fn group_plans_orders_values_and_rejects_unknown_sites() {
        let sites = vec![site("B.java@5-7", 6), site("A.java@1-3", 40)];
        let plan = plan_mutations(&sites, &MutationPolicy::default());
        let grouped = group_plans(&sites, &plan.mutations).unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].site.id.as_str(), "A.java@1-3");
        assert_eq!(grouped[1].site.id.as_str(), "B.java@5-7");
        for g in &grouped {
            let ords: Vec<usize> = g.values.iter().map(|m| m.ordinal).collect();
            assert_eq!(ords, vec![0, 1]);
        }

        let mut rogue = plan.mutations.clone();
        rogue[0].site = SiteId("Z.java@9-9".to_string());
        assert!(matches!(
            group_plans(&sites, &rogue),
            Err(ExperimentError::Plan(_))
        ));
    }

    #[test]
    fn accepted_baselines_always_pass_the_gate() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites: Vec<ConstantSite> = (0..5)
            .map(|i| site(&format!("F{i}.java@{}-{}", 10 + i, 12 + i), 40 + i as i64))
            .collect();
        let plans = plans_for(&sites);
        let model = DriftNoiseModel {
            spike_prob: 0.3,
            ..quiet_model(23)
        };
        let sim = Simulator::new(model);
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        let mut discarded_seen = 0;
        for r in &report.completed {
            if let Some(b) = &r.baseline {
                assert!(b.norm_sd <= cfg.t_s);
            }
            for v in &r.values {
                if let Some(b) = &v.block {
                    assert!(b.norm_sd <= cfg.t_s);
                }
            }
            discarded_seen += r.discarded.len();
            for d in &r.discarded {
                assert!(d.norm_sd > cfg.t_s);
            }
        }
        assert!(discarded_seen > 0, "spiky model should trip the gate");
    }

    #[test]
    fn pipelined_schedule_beats_the_serial_one() {
        let counts: Vec<usize> = vec![2; 10];
        let timing = TimingModel {
            build_secs: 60.0,
            block_secs: 110.0,
        };
        let m = simulate_schedule(&counts, 1, 2, &timing);
        assert!(m.pipelined_secs < m.serial_secs);
        // Serial: 10 * (2*60 + 3*110) = 4500. Pipelined hides all but the
        // first build: 120 + 10 * 330 = 3420.
        assert_eq!(m.serial_secs, 4500.0);
        assert_eq!(m.pipelined_secs, 3420.0);
    }

    #[test]
    fn pipelining_never_loses_when_the_pool_keeps_up() {
        // With one builder per device no build ever waits on another
        // device's work, so overlap can only help. An undersized pool can
        // lose to the serial plan through contention, which is exactly
        // what the dry run exists to reveal.
        for devices in 1..=3usize {
            for extra in 0..=2usize {
                let builders = devices + extra;
                for n in 0..=7usize {
                    let counts: Vec<usize> = (0..n).map(|i| 1 + i % 3).collect();
                    let m = simulate_schedule(&counts, devices, builders, &TimingModel::default());
                    assert!(
                        m.pipelined_secs <= m.serial_secs + 1e-9,
                        "devices {devices} builders {builders} n {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn an_undersized_pool_can_lose_and_the_dry_run_shows_it() {
        // Two devices share one builder; the second device's long build
        // queues behind the first one's.
        let m = simulate_schedule(&[1, 2], 2, 1, &TimingModel::default());
        assert!(m.pipelined_secs > m.serial_secs);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.repeats = 1));
        assert!(bad(|c| c.alpha = 0.0));
        assert!(bad(|c| c.alpha = 1.0));
        assert!(bad(|c| c.t_s = 1.0));
        assert!(bad(|c| c.t_d = -0.1));
        assert!(bad(|c| c.devices.clear()));
        assert!(bad(|c| c.devices = vec!["a".into(), "a".into()]));
        assert!(bad(|c| c.builders = 0));
    }

    #[test]
    fn journal_round_trips_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40)];
        let plans = plans_for(&sites);
        let sim = Simulator::new(quiet_model(7));
        let cfg = quick_cfg(&["dev0"]);
        let report = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        let loaded = load_journal(&dir.path().join("journal.jsonl")).unwrap();
        assert_eq!(loaded, report.completed);
        for b in loaded[0].baseline.iter().chain(&loaded[0].discarded) {
            assert!(b.consistent());
        }

        // A crash can cut the last record short of its newline; the
        // loader drops that tail so the parameter is measured again.
        let journal_path = dir.path().join("journal.jsonl");
        let full = fs::read_to_string(&journal_path).unwrap();
        let torn = &full[..full.len() - 20];
        assert!(!torn.ends_with('\n'));
        fs::write(&journal_path, torn).unwrap();
        assert_eq!(load_journal(&journal_path).unwrap(), Vec::new());

        let bad = dir.path().join("bad.jsonl");
        fs::write(&bad, "{\"site\": 12}\n").unwrap();
        assert!(matches!(
            load_journal(&bad),
            Err(ExperimentError::Journal { line: 1, .. })
        ));
    }

    #[test]
    fn resume_trims_a_torn_tail_before_appending() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let sites = vec![site("A.java@10-12", 40), site("B.java@20-22", 6)];
        let plans = plans_for(&sites);
        let cfg = quick_cfg(&["dev0"]);

        let sim = Simulator::new(quiet_model(23));
        let first = Session::new(&cfg, &sim, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(first.completed.len(), 2);

        // Cut the second record short of its newline, as a crash would.
        let journal_path = dir.path().join("journal.jsonl");
        let full = fs::read_to_string(&journal_path).unwrap();
        let cut = full[..full.len() - 1].rfind('\n').unwrap() + 1;
        fs::write(&journal_path, &full[..full.len() - 30]).unwrap();

        // The restarted session must splice nothing onto the fragment: it
        // re-measures the torn parameter and the journal stays parseable.
        let sim2 = Simulator::new(quiet_model(23));
        let second = Session::new(&cfg, &sim2, session_opts(dir.path()))
            .run(&plans)
            .unwrap();
        assert_eq!(second.previously_completed, 1);
        assert_eq!(second.completed.len(), 1);
        let merged = load_journal(&journal_path).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(fs::read_to_string(&journal_path).unwrap()[..cut], full[..cut]);
    }
}
