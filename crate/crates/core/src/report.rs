//! Campaign reporting: the candidate worklist handed to a human for
//! validation, and the per-type summary table.
//!
//! Both reports are derived from the measurement journal alone, so they
//! can be regenerated at any time and are byte-identical across runs.
//! Validation is a human-edited column; `read_validations` ingests the
//! edited worklist and the verdicts flow into the summary's V column.
//! The tool never promotes a flagged candidate to validated on its own.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::{ParameterResult, ParameterStatus, ValueOutcome};
use crate::source::SiteKind;
use crate::stats::Verdict;

/// One flagged (parameter, value) pair. CSV columns appear in field
/// order and the JSON report carries the same objects:
/// site, location, kind, original, replacement, value_index,
/// baseline_mean_j, variant_mean_j, relative_delta, p_value, validation.
///
/// `relative_delta` is a fraction of the baseline mean, negative for a
/// reduction (a 12.1% saving reads -0.121). `validation` starts out as
/// "pending" and is the one column meant to be edited by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub site: String,
    pub location: String,
    pub kind: SiteKind,
    pub original: String,
    pub replacement: String,
    pub value_index: usize,
    pub baseline_mean_j: f64,
    pub variant_mean_j: f64,
    pub relative_delta: f64,
    pub p_value: f64,
    pub validation: String,
}

/// Human verdicts keyed by (site, value index).
#[derive(Clone, Debug, Default)]
pub struct ValidationSet {
    entries: BTreeMap<(String, usize), String>,
}

impl ValidationSet {
    pub fn empty() -> Self {
        ValidationSet::default()
    }

    pub fn set(&mut self, site: &str, value_index: usize, verdict: &str) {
        self.entries
            .insert((site.to_string(), value_index), verdict.to_string());
    }

    pub fn get(&self, site: &str, value_index: usize) -> Option<&str> {
        self.entries
            .get(&(site.to_string(), value_index))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Accepted spellings for a positive human verdict.
pub fn is_validated(verdict: &str) -> bool {
    let v = verdict.trim();
    v.eq_ignore_ascii_case("validated") || v.eq_ignore_ascii_case("yes")
}

/// Reads a journal leniently for reporting: records that do not parse
/// are skipped and counted instead of aborting the report.
pub fn read_journal_lenient(path: &Path) -> io::Result<(Vec<ParameterResult>, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut results = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ParameterResult>(line) {
            Ok(r) => results.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((results, skipped))
}

/// Keeps the newest record per site, in site order. A journal normally
/// holds one record per parameter, but if a site was ever re-measured
/// the later record supersedes the earlier one.
fn latest_by_site(results: &[ParameterResult]) -> Vec<&ParameterResult> {
    let mut index: BTreeMap<&str, &ParameterResult> = BTreeMap::new();
    for r in results {
        index.insert(r.site.as_str(), r);
    }
    index.into_values().collect()
}

/// Builds the candidate worklist: one row per value the test flagged as
/// energy reducing, sorted by site then value index. Verdicts found in
/// `validations` are carried over; everything else reads "pending".
pub fn candidate_rows(
    results: &[ParameterResult],
    validations: &ValidationSet,
) -> Vec<CandidateRow> {
    let mut rows = Vec::new();
    for param in latest_by_site(results) {
        for value in &param.values {
            let decision = match &value.outcome {
                ValueOutcome::Decided { decision } => decision,
                _ => continue,
            };
            if decision.verdict != Verdict::EnergyReducingCandidate {
                continue;
            }
            let validation = validations
                .get(&param.site, value.value_index)
                .unwrap_or("pending")
                .to_string();
            rows.push(CandidateRow {
                site: param.site.clone(),
                location: format!("{}:{}", param.file, param.line),
                kind: param.kind,
                original: param.original.clone(),
                replacement: value.replacement.clone(),
                value_index: value.value_index,
                baseline_mean_j: decision.baseline_mean,
                variant_mean_j: decision.variant_mean,
                relative_delta: decision.relative_delta,
                p_value: decision.test.p,
                validation,
            });
        }
    }
    rows.sort_by(|a, b| a.site.cmp(&b.site).then(a.value_index.cmp(&b.value_index)));
    rows
}

const CANDIDATE_COLUMNS: [&str; 11] = [
    "site",
    "location",
    "kind",
    "original",
    "replacement",
    "value_index",
    "baseline_mean_j",
    "variant_mean_j",
    "relative_delta",
    "p_value",
    "validation",
];

pub fn candidates_csv(rows: &[CandidateRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CANDIDATE_COLUMNS).expect("csv header");
    for row in rows {
        w.serialize(row).expect("csv serialization");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
}

pub fn candidates_json(rows: &[CandidateRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("json serialization");
    s.push('\n');
    s
}

/// Reads verdicts back out of an edited worklist CSV. Only the site,
/// value_index and validation columns matter; column order and any
/// extra columns are ignored. "pending" entries are not verdicts and
/// are dropped.
pub fn read_validations<R: io::Read>(reader: R) -> Result<ValidationSet, csv::Error> {
    #[derive(Deserialize)]
    struct Edited {
        site: String,
        value_index: usize,
        validation: String,
    }
    let mut set = ValidationSet::empty();
    for record in csv::Reader::from_reader(reader).deserialize::<Edited>() {
        let rec = record?;
        if rec.validation.trim().eq_ignore_ascii_case("pending") {
            continue;
        }
        set.set(&rec.site, rec.value_index, rec.validation.trim());
    }
    Ok(set)
}

/// One line of the per-type summary. P counts parameters tested to
/// completion, R those with at least one flagged value, V those whose
/// flag a human confirmed. V <= R <= P within every row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter_type: String,
    pub p: usize,
    pub r: usize,
    pub v: usize,
}

fn type_label(kind: SiteKind) -> &'static str {
    match kind {
        SiteKind::Int | SiteKind::Float => "numeric",
        SiteKind::Bool => "boolean",
        SiteKind::EnumRef => "enum",
    }
}

/// Tallies P/R/V per parameter type plus a totals row. Types that never
/// occur are omitted; an empty journal yields no rows at all.
pub fn summarize(results: &[ParameterResult], validations: &ValidationSet) -> Vec<SummaryRow> {
    let mut tally: BTreeMap<&'static str, (usize, usize, usize)> = BTreeMap::new();
    for param in latest_by_site(results) {
        if param.status != ParameterStatus::Completed {
            continue;
        }
        let slot = tally.entry(type_label(param.kind)).or_default();
        slot.0 += 1;
        let mut flagged = false;
        let mut confirmed = false;
        for value in &param.values {
            if let ValueOutcome::Decided { decision } = &value.outcome {
                if decision.verdict == Verdict::EnergyReducingCandidate {
                    flagged = true;
                    if let Some(v) = validations.get(&param.site, value.value_index) {
                        confirmed |= is_validated(v);
                    }
                }
            }
        }
        if flagged {
            slot.1 += 1;
        }
        if confirmed {
            slot.2 += 1;
        }
    }
    let mut rows = Vec::new();
    let mut total = (0usize, 0usize, 0usize);
    for label in ["numeric", "boolean", "enum"] {
        if let Some(&(p, r, v)) = tally.get(label) {
            rows.push(SummaryRow {
                parameter_type: label.to_string(),
                p,
                r,
                v,
            });
            total.0 += p;
            total.1 += r;
            total.2 += v;
        }
    }
    if !rows.is_empty() {
        rows.push(SummaryRow {
            parameter_type: "total".to_string(),
            p: total.0,
            r: total.1,
            v: total.2,
        });
    }
    rows
}

pub fn summary_json(rows: &[SummaryRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("json serialization");
    s.push('\n');
    s
}

/// Plain-text rendering of the summary, one aligned row per type.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let width = rows
        .iter()
        .map(|r| r.parameter_type.len())
        .chain(["type".len()].into_iter())
        .max()
        .unwrap_or(4);
    out.push_str(&format!("{:width$}  {:>6}  {:>6}  {:>6}\n", "type", "P", "R", "V"));
    for row in rows {
        out.push_str(&format!(
            "{:width$}  {:>6}  {:>6}  {:>6}\n",
            row.parameter_type, row.p, row.r, row.v
        ));
    }
    out
}
