//! Command-line front end for the energy-parameter toolchain. Each
//! subcommand corresponds to one pipeline stage and exchanges data with
//! its neighbours through files in the campaign's artifact directory, so
//! stages can be rerun, inspected and resumed independently.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use deepwatt_core::experiment::{
    group_plans, simulate_schedule, ExperimentBlock, ParameterResult, Session, SessionOptions,
    TimingModel, TreePolicy,
};
use deepwatt_core::filter::{filter_sites, CoverageMap, ManualReview};
use deepwatt_core::measure::{EnergyProbe, FileMeasurer, RunMeasurement, Simulator, Variant};
use deepwatt_core::mutate::{dump_plan, load_plan, plan_mutations};
use deepwatt_core::report::{
    candidate_rows, candidates_csv, candidates_json, read_journal_lenient, read_validations,
    render_summary, summarize, summary_json, ValidationSet,
};
use deepwatt_core::source::{dump_sites, load_sites, scan_corpus, JavaLikeAdapter};
use deepwatt_core::stats::{calibrate_t_d, decide, empirical_cdf, knee_point, TdCase, TdGrid};
use serde::Serialize;

use config::{Campaign, MeasurerConfig};

const SITES_FILE: &str = "sites.jsonl";
const CANDIDATES_FILE: &str = "candidates.jsonl";
const DROPPED_FILE: &str = "dropped.jsonl";
const PLAN_FILE: &str = "plan.jsonl";
const JOURNAL_FILE: &str = "journal.jsonl";
const ANALYSIS_FILE: &str = "analysis.jsonl";
const SIMULATION_FILE: &str = "simulation.jsonl";
const WORKLIST_CSV: &str = "candidates.csv";
const WORKLIST_JSON: &str = "candidates.json";
const SUMMARY_FILE: &str = "summary.json";

/// Exit status of `run` when device loss left parameters untested. The
/// journal is still valid; rerunning the command picks the leftovers up.
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "deepwatt", version, about = "Find energy-reducing constant mutations")]
struct Cli {
    /// Campaign config file (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Artifact directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Reseed every seeded component (planner, simulator, provenance).
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Measurement device, repeatable; overrides the config list.
    #[arg(long = "device", global = true, value_name = "NAME")]
    devices: Vec<String>,
    /// For `run`: print the schedule estimate instead of measuring.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inventory every constant site in the corpus.
    Scan,
    /// Narrow scanned sites to candidates via coverage, heuristics and
    /// manual annotations.
    Filter,
    /// Plan replacement values for every candidate.
    Plan,
    /// Measure planned values against fresh baselines, journaling as it
    /// goes; safe to interrupt and rerun.
    Run,
    /// Re-derive accept/reject decisions from the journal with the
    /// currently configured thresholds.
    Analyze,
    /// Suggest a stability threshold from the journaled block spreads.
    CalibrateTs,
    /// Suggest a difference threshold from first-pass/re-run case data.
    CalibrateTd {
        /// JSON file holding the calibration cases.
        #[arg(long, value_name = "FILE")]
        cases: PathBuf,
    },
    /// Sample simulator blocks and summarize their spread.
    Simulate {
        /// How many blocks to sample.
        #[arg(long, default_value_t = 200)]
        blocks: usize,
    },
    /// Render the candidate worklist (CSV/JSON) and the per-type summary.
    Report {
        /// Worklist CSV carrying human-edited validation verdicts;
        /// defaults to the one in the artifact directory.
        #[arg(long, value_name = "FILE")]
        validations: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let config_path = cli.config.as_deref().context("--config <FILE> is required")?;
    let mut campaign = Campaign::load(config_path)?;
    campaign.apply_overrides(cli.out.clone(), cli.seed, &cli.devices)?;
    fs::create_dir_all(&campaign.cfg.out)
        .with_context(|| format!("creating {}", campaign.cfg.out.display()))?;
    match &cli.command {
        Command::Scan => cmd_scan(&campaign),
        Command::Filter => cmd_filter(&campaign),
        Command::Plan => cmd_plan(&campaign),
        Command::Run => cmd_run(&campaign, cli.dry_run),
        Command::Analyze => cmd_analyze(&campaign),
        Command::CalibrateTs => cmd_calibrate_ts(&campaign),
        Command::CalibrateTd { cases } => cmd_calibrate_td(&campaign, cases),
        Command::Simulate { blocks } => cmd_simulate(&campaign, *blocks),
        Command::Report { validations } => cmd_report(&campaign, validations.as_deref()),
    }
}

fn cmd_scan(c: &Campaign) -> Result<ExitCode> {
    let adapter = JavaLikeAdapter::new(c.cfg.adapter.clone());
    let outcome = scan_corpus(&c.cfg.corpus, &adapter)?;
    for issue in &outcome.issues {
        eprintln!("warning: {}:{}: {}", issue.file, issue.line, issue.message);
    }
    let path = c.cfg.out.join(SITES_FILE);
    let mut w = BufWriter::new(create(&path)?);
    dump_sites(&mut w, &outcome.sites).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    println!(
        "{} sites in {} files -> {}",
        outcome.sites.len(),
        outcome.files_scanned,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_filter(c: &Campaign) -> Result<ExitCode> {
    let sites = load_stage(&c.cfg.out.join(SITES_FILE), "scan")?;
    let coverage = match &c.cfg.coverage {
        Some(p) => {
            Some(CoverageMap::load(p).with_context(|| format!("coverage {}", p.display()))?)
        }
        None => None,
    };
    let review = match &c.cfg.annotations {
        Some(p) => {
            Some(ManualReview::load(p).with_context(|| format!("annotations {}", p.display()))?)
        }
        None => None,
    };
    let outcome = filter_sites(&sites, coverage.as_ref(), review.as_ref());

    let path = c.cfg.out.join(CANDIDATES_FILE);
    let mut w = BufWriter::new(create(&path)?);
    dump_sites(&mut w, &outcome.candidates)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    write_jsonl(&c.cfg.out.join(DROPPED_FILE), &outcome.dropped)?;

    let s = outcome.stats;
    println!(
        "{} sites -> {} covered -> {} past heuristics -> {} candidates -> {}",
        s.input,
        s.after_coverage,
        s.after_heuristics,
        s.after_manual,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_plan(c: &Campaign) -> Result<ExitCode> {
    let candidates = load_stage(&c.cfg.out.join(CANDIDATES_FILE), "filter")?;
    let plan = plan_mutations(&candidates, &c.cfg.policy);
    for d in &plan.diagnostics {
        eprintln!("note: {}: {}", d.site, d.message);
    }
    let path = c.cfg.out.join(PLAN_FILE);
    let mut w = BufWriter::new(create(&path)?);
    dump_plan(&mut w, &plan).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    let parameters: BTreeSet<&str> = plan.mutations.iter().map(|m| m.site.as_str()).collect();
    println!(
        "{} replacement values across {} parameters -> {}",
        plan.mutations.len(),
        parameters.len(),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(c: &Campaign, dry_run: bool) -> Result<ExitCode> {
    let candidates = load_stage(&c.cfg.out.join(CANDIDATES_FILE), "filter")?;
    let plan_path = c.cfg.out.join(PLAN_FILE);
    let plan_file = File::open(&plan_path)
        .with_context(|| format!("opening {}; run `plan` first", plan_path.display()))?;
    let plan =
        load_plan(BufReader::new(plan_file)).with_context(|| format!("{}", plan_path.display()))?;
    let plans = group_plans(&candidates, &plan.mutations)?;
    if plans.is_empty() {
        bail!("nothing to measure: the plan is empty");
    }

    if dry_run {
        let counts: Vec<usize> = plans.iter().map(|p| p.values.len()).collect();
        let est = simulate_schedule(
            &counts,
            c.cfg.experiment.devices.len(),
            c.cfg.experiment.builders,
            &TimingModel::default(),
        );
        println!(
            "{} parameters over {} devices with {} builders",
            est.parameters, est.devices, est.builders
        );
        println!(
            "pipelined makespan {:.0} s, serial {:.0} s",
            est.pipelined_secs, est.serial_secs
        );
        return Ok(ExitCode::SUCCESS);
    }

    let (probe, tree_policy, work_dir): (Box<dyn EnergyProbe>, TreePolicy, Option<PathBuf>) =
        match (&c.cfg.measurer, &c.model) {
            (MeasurerConfig::Simulator { .. }, Some(model)) => {
                // The simulator prices variants by key; no tree is built
                // or modified, so the corpus is used in place.
                (
                    Box::new(Simulator::new(model.clone())),
                    TreePolicy::InPlace,
                    None,
                )
            }
            (MeasurerConfig::File { reading_path }, _) => (
                Box::new(FileMeasurer {
                    command: c.cfg.experiment.test_cmd.clone(),
                    reading_path: reading_path.clone(),
                }),
                TreePolicy::PerVariant,
                Some(c.cfg.out.join("work")),
            ),
            (MeasurerConfig::Simulator { .. }, None) => unreachable!("checked at load"),
        };

    let journal = c.cfg.out.join(JOURNAL_FILE);
    let opts = SessionOptions {
        corpus_root: c.cfg.corpus.clone(),
        journal_path: journal.clone(),
        tree_policy,
        work_dir,
    };
    let report = Session::new(&c.cfg.experiment, probe.as_ref(), opts).run(&plans)?;

    for note in &report.notes {
        eprintln!("note: {note}");
    }
    println!(
        "{} parameters measured, {} already journaled -> {}",
        report.completed.len(),
        report.previously_completed,
        journal.display()
    );
    if !report.pending.is_empty() {
        eprintln!(
            "{} parameters left pending after losing {}: rerun to finish",
            report.pending.len(),
            report.lost_devices.join(", ")
        );
        return Ok(ExitCode::from(EXIT_INCOMPLETE));
    }
    Ok(ExitCode::SUCCESS)
}

/// A decision recomputed from journaled blocks, tagged with where the
/// blocks came from.
#[derive(Serialize)]
struct AnalysisRow<'a> {
    site: &'a str,
    value_index: usize,
    replacement: &'a str,
    device: &'a str,
    decision: deepwatt_core::stats::Decision,
}

fn cmd_analyze(c: &Campaign) -> Result<ExitCode> {
    let results = load_journal(c)?;
    let cfg = &c.cfg.experiment;
    let mut rows = Vec::new();
    let mut flagged = 0usize;
    for param in latest_per_site(&results) {
        let Some(baseline) = &param.baseline else {
            continue;
        };
        let base = baseline.energies();
        for value in &param.values {
            let Some(block) = &value.block else { continue };
            let decision = decide(&block.energies(), &base, cfg.t_d, cfg.alpha)
                .with_context(|| format!("re-deciding {}#{}", param.site, value.value_index))?;
            if decision.verdict == deepwatt_core::stats::Verdict::EnergyReducingCandidate {
                flagged += 1;
            }
            rows.push(AnalysisRow {
                site: &param.site,
                value_index: value.value_index,
                replacement: &value.replacement,
                device: &param.device,
                decision,
            });
        }
    }
    let path = c.cfg.out.join(ANALYSIS_FILE);
    let n = write_jsonl(&path, &rows)?;
    println!(
        "{} decisions re-derived at t_d {} alpha {}, {} flagged -> {}",
        n,
        cfg.t_d,
        cfg.alpha,
        flagged,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate_ts(c: &Campaign) -> Result<ExitCode> {
    let results = load_journal(c)?;
    let mut spreads = Vec::new();
    for param in &results {
        let blocks = param
            .baseline
            .iter()
            .chain(param.values.iter().filter_map(|v| v.block.as_ref()))
            .chain(param.discarded.iter());
        spreads.extend(blocks.map(|b| b.norm_sd));
    }
    if spreads.is_empty() {
        bail!("the journal holds no measured blocks");
    }
    let ecdf = empirical_cdf(&spreads)?;
    let t_s = knee_point(&ecdf).context("no knee in the spread distribution")?;

    #[derive(Serialize)]
    struct TsSuggestion {
        t_s: f64,
        blocks: usize,
        share_within: f64,
    }
    let suggestion = TsSuggestion {
        t_s,
        blocks: spreads.len(),
        share_within: ecdf.eval(t_s),
    };
    let path = c.cfg.out.join("calibration-ts.json");
    write_json(&path, &suggestion)?;
    println!(
        "suggested t_s {:.4} keeps {:.0}% of {} blocks -> {}",
        suggestion.t_s,
        suggestion.share_within * 100.0,
        suggestion.blocks,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate_td(c: &Campaign, cases_path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(cases_path)
        .with_context(|| format!("reading cases {}", cases_path.display()))?;
    let cases: Vec<TdCase> = serde_json::from_str(&text)
        .with_context(|| format!("parsing cases {}", cases_path.display()))?;
    let calibration = calibrate_t_d(&cases, c.cfg.experiment.alpha, TdGrid::default())?;
    if calibration.conflict {
        eprintln!("warning: no threshold cleanly separates artifacts from persistent flags");
    }
    if let Some(note) = &calibration.note {
        eprintln!("note: {note}");
    }
    let path = c.cfg.out.join("calibration-td.json");
    write_json(&path, &calibration)?;
    println!(
        "suggested t_d {:.3} rejects {} artifacts, retains {} persistent -> {}",
        calibration.t_d,
        calibration.artifacts.len(),
        calibration.persistent.len(),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(c: &Campaign, blocks: usize) -> Result<ExitCode> {
    let Some(model) = &c.model else {
        bail!("simulate needs a simulator measurer in the config");
    };
    if blocks < 3 {
        bail!("--blocks must be at least 3");
    }
    let sim = Simulator::new(model.clone());
    let device = c.cfg.experiment.devices[0].as_str();
    let repeats = c.cfg.experiment.repeats;

    #[derive(Serialize)]
    struct SimBlock {
        block: usize,
        mean: f64,
        norm_sd: f64,
        spiked: bool,
    }
    let mut rows = Vec::with_capacity(blocks);
    let mut spreads = Vec::with_capacity(blocks);
    let mut run_index = 0u64;
    for b in 0..blocks {
        let mut runs = Vec::with_capacity(repeats);
        let mut spiked = false;
        for _ in 0..repeats {
            spiked |= sim.is_spike(device, run_index);
            runs.push(RunMeasurement {
                run_id: run_index,
                variant: Variant::Baseline,
                energy: sim.energy(device, run_index, ""),
                wall_time: 0.0,
                timestamp: run_index as f64,
            });
            run_index += 1;
        }
        let block = ExperimentBlock::from_runs(Variant::Baseline, device, runs)?;
        spreads.push(block.norm_sd);
        rows.push(SimBlock {
            block: b,
            mean: block.mean,
            norm_sd: block.norm_sd,
            spiked,
        });
    }
    let path = c.cfg.out.join(SIMULATION_FILE);
    write_jsonl(&path, &rows)?;

    let ecdf = empirical_cdf(&spreads)?;
    let within = ecdf.eval(c.cfg.experiment.t_s);
    match knee_point(&ecdf) {
        Ok(knee) => println!(
            "{} blocks of {} runs: {:.0}% within t_s {}, spread knee at {:.4} -> {}",
            blocks,
            repeats,
            within * 100.0,
            c.cfg.experiment.t_s,
            knee,
            path.display()
        ),
        Err(_) => println!(
            "{} blocks of {} runs: {:.0}% within t_s {} -> {}",
            blocks,
            repeats,
            within * 100.0,
            c.cfg.experiment.t_s,
            path.display()
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(c: &Campaign, validations: Option<&Path>) -> Result<ExitCode> {
    let results = load_journal(c)?;
    let csv_path = c.cfg.out.join(WORKLIST_CSV);

    // Verdicts are human edits to the worklist CSV; they are read back
    // before the file is rewritten so they survive reruns. Nothing here
    // ever promotes a verdict on its own.
    let validations = match validations {
        Some(p) => read_verdicts(p)?,
        None if csv_path.exists() => read_verdicts(&csv_path)?,
        None => ValidationSet::empty(),
    };

    let rows = candidate_rows(&results, &validations);
    let summary = summarize(&results, &validations);
    fs::write(&csv_path, candidates_csv(&rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let json_path = c.cfg.out.join(WORKLIST_JSON);
    fs::write(&json_path, candidates_json(&rows))
        .with_context(|| format!("writing {}", json_path.display()))?;
    let summary_path = c.cfg.out.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_json(&summary))
        .with_context(|| format!("writing {}", summary_path.display()))?;

    print!("{}", render_summary(&summary));
    println!(
        "{} candidate rows -> {} and {}",
        rows.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn load_stage(
    path: &Path,
    produced_by: &str,
) -> Result<Vec<deepwatt_core::source::ConstantSite>> {
    let file = File::open(path)
        .with_context(|| format!("opening {}; run `{produced_by}` first", path.display()))?;
    let sites =
        load_sites(BufReader::new(file)).with_context(|| format!("{}", path.display()))?;
    Ok(sites)
}

fn load_journal(c: &Campaign) -> Result<Vec<ParameterResult>> {
    let path = c.cfg.out.join(JOURNAL_FILE);
    let (results, skipped) = read_journal_lenient(&path)
        .with_context(|| format!("reading {}; run `run` first", path.display()))?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} corrupt journal records");
    }
    Ok(results)
}

/// A resumed campaign may journal a parameter twice (the second record
/// supersedes the first). Reports already collapse these; analysis does
/// the same.
fn latest_per_site(results: &[ParameterResult]) -> Vec<&ParameterResult> {
    let mut index: BTreeMap<&str, &ParameterResult> = BTreeMap::new();
    for r in results {
        index.insert(r.site.as_str(), r);
    }
    index.into_values().collect()
}

fn read_verdicts(path: &Path) -> Result<ValidationSet> {
    let file =
        File::open(path).with_context(|| format!("opening validations {}", path.display()))?;
    let set = read_validations(BufReader::new(file))
        .with_context(|| format!("parsing validations {}", path.display()))?;
    Ok(set)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<usize> {
    let mut w = BufWriter::new(create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)
            .with_context(|| format!("writing {}", path.display()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(items.len())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
