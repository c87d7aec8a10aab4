//! Candidate selection. Scanned sites pass through three narrowing stages
//! in a fixed order:
//!
//! 1. coverage: only literals on lines the workload actually executes stay;
//! 2. context heuristics: syntactic shapes that almost never mark a tunable
//!    parameter (indexes, off-by-one arithmetic, loop counters, ...) drop
//!    the site, and the first matching rule is recorded as the reason;
//! 3. manual review: an explicit exclusion list from a human pass.
//!
//! Every site ends up either in the candidate list or in the dropped list
//! with its stage and reason, so the narrowing is fully auditable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{ConstantSite, SiteId, SyntaxContext};

/// Context shapes that disqualify a site, in precedence order. The first
/// one present on a site becomes the recorded drop reason.
pub const DROP_RULES: [SyntaxContext; 11] = [
    SyntaxContext::ArrayIndex,
    SyntaxContext::ComparisonWithZeroOrOne,
    SyntaxContext::PlusMinusSmall,
    SyntaxContext::ForLoopInit,
    SyntaxContext::IgnoredMethodArg,
    SyntaxContext::OneArgBoolCall,
    SyntaxContext::TimeUnitArg,
    SyntaxContext::LocaleArg,
    SyntaxContext::Condition,
    SyntaxContext::ReturnValue,
    SyntaxContext::MultiWriteInit,
];

/// First drop rule matching the site, if any. Context sets iterate in
/// declaration order, which is exactly the precedence order above.
pub fn heuristic_reason(site: &ConstantSite) -> Option<SyntaxContext> {
    site.contexts
        .iter()
        .copied()
        .find(|c| DROP_RULES.contains(c))
}

/// Executed lines per corpus-relative file, from instrumentation output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    lines: BTreeMap<String, BTreeSet<u32>>,
}

impl CoverageMap {
    /// Parses the line-coverage subset of the LCOV tracefile format:
    /// `SF:<path>` opens a file record, `DA:<line>,<count>` marks a line as
    /// executed when the count is positive, `end_of_record` closes it.
    /// Other record types are ignored.
    pub fn parse_lcov(text: &str) -> Result<Self, FilterError> {
        let mut map = CoverageMap::default();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(path) = line.strip_prefix("SF:") {
                let path = path.trim().replace('\\', "/");
                map.lines.entry(path.clone()).or_default();
                current = Some(path);
            } else if let Some(rest) = line.strip_prefix("DA:") {
                let file = current.as_ref().ok_or_else(|| FilterError::Parse {
                    line: n + 1,
                    message: "DA record outside SF record".into(),
                })?;
                let mut parts = rest.splitn(3, ',');
                let lineno: u32 = parts
                    .next()
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| FilterError::Parse {
                        line: n + 1,
                        message: format!("bad DA line number in {rest:?}"),
                    })?;
                let count: u64 = parts
                    .next()
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| FilterError::Parse {
                        line: n + 1,
                        message: format!("bad DA hit count in {rest:?}"),
                    })?;
                if count > 0 {
                    map.lines.get_mut(file).unwrap().insert(lineno);
                }
            } else if line == "end_of_record" {
                current = None;
            }
        }
        Ok(map)
    }

    /// Parses the plain `path:line` form, one executed line per row.
    pub fn parse_lines(text: &str) -> Result<Self, FilterError> {
        let mut map = CoverageMap::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, lineno) = line.rsplit_once(':').ok_or_else(|| FilterError::Parse {
                line: n + 1,
                message: format!("expected path:line, got {line:?}"),
            })?;
            let lineno: u32 = lineno.trim().parse().map_err(|_| FilterError::Parse {
                line: n + 1,
                message: format!("bad line number in {line:?}"),
            })?;
            map.lines
                .entry(path.trim().replace('\\', "/"))
                .or_default()
                .insert(lineno);
        }
        Ok(map)
    }

    /// Reads a coverage file, sniffing the format from its content.
    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text = fs::read_to_string(path)?;
        if text
            .lines()
            .map(str::trim)
            .any(|l| l.starts_with("SF:") || l == "end_of_record")
        {
            Self::parse_lcov(&text)
        } else {
            Self::parse_lines(&text)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Does the map mention this file at all? Coverage paths may carry a
    /// build-tree prefix, so a path-component suffix match counts too.
    pub fn has_file(&self, file: &str) -> bool {
        self.file_key(file).is_some()
    }

    pub fn is_executed(&self, file: &str, line: u32) -> bool {
        self.file_key(file)
            .map_or(false, |k| self.lines[k].contains(&line))
    }

    fn file_key(&self, file: &str) -> Option<&String> {
        if let Some((k, _)) = self.lines.get_key_value(file) {
            return Some(k);
        }
        self.lines
            .keys()
            .find(|k| k.ends_with(&format!("/{file}")) || file.ends_with(&format!("/{k}")))
    }
}

/// Human exclusions. Each mark names a site either by full id
/// (`file@start-end`) or by `file:line`, which hits every site on the line.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ManualReview {
    pub drop: Vec<ManualMark>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManualMark {
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ManualReview {
    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| FilterError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn matches(&self, site: &ConstantSite) -> Option<&ManualMark> {
        let by_line = format!("{}:{}", site.file, site.line);
        self.drop
            .iter()
            .find(|m| m.site == site.id.as_str() || m.site == by_line)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    Coverage,
    Heuristic,
    Manual,
}

/// One site removed from the candidate set, with the audit trail entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedSite {
    pub id: SiteId,
    pub stage: FilterStage,
    pub reason: String,
}

/// Survivor counts after each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub after_coverage: usize,
    pub after_heuristics: usize,
    pub after_manual: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    pub candidates: Vec<ConstantSite>,
    pub dropped: Vec<DroppedSite>,
    pub stats: FilterStats,
}

/// Runs the three stages. Without a coverage map the first stage passes
/// everything through; without a review file the last one does.
pub fn filter_sites(
    sites: &[ConstantSite],
    coverage: Option<&CoverageMap>,
    manual: Option<&ManualReview>,
) -> FilterOutcome {
    let mut out = FilterOutcome {
        stats: FilterStats {
            input: sites.len(),
            ..FilterStats::default()
        },
        ..FilterOutcome::default()
    };

    let mut alive: Vec<&ConstantSite> = Vec::with_capacity(sites.len());
    for site in sites {
        match coverage {
            Some(cov) => {
                if !cov.has_file(&site.file) {
                    out.dropped.push(DroppedSite {
                        id: site.id.clone(),
                        stage: FilterStage::Coverage,
                        reason: "file-not-covered".into(),
                    });
                } else if !cov.is_executed(&site.file, site.line) {
                    out.dropped.push(DroppedSite {
                        id: site.id.clone(),
                        stage: FilterStage::Coverage,
                        reason: "line-not-executed".into(),
                    });
                } else {
                    alive.push(site);
                }
            }
            None => alive.push(site),
        }
    }
    out.stats.after_coverage = alive.len();

    let mut survivors = Vec::with_capacity(alive.len());
    for site in alive {
        match heuristic_reason(site) {
            Some(rule) => out.dropped.push(DroppedSite {
                id: site.id.clone(),
                stage: FilterStage::Heuristic,
                reason: context_slug(rule),
            }),
            None => survivors.push(site),
        }
    }
    out.stats.after_heuristics = survivors.len();

    for site in survivors {
        match manual.and_then(|m| m.matches(site)) {
            Some(mark) => out.dropped.push(DroppedSite {
                id: site.id.clone(),
                stage: FilterStage::Manual,
                reason: mark.note.clone().unwrap_or_else(|| "manual".into()),
            }),
            None => out.candidates.push(site.clone()),
        }
    }
    out.stats.after_manual = out.candidates.len();
    out
}

/// The kebab-case name a context serializes to, reused for drop reasons.
pub fn context_slug(c: SyntaxContext) -> String {
    let s = serde_json::to_string(&c).expect("context serializes");
    s.trim_matches('"').to_string()
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
