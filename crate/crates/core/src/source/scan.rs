//! Corpus traversal. Files are scanned in parallel but reported in path
//! order, so two scans of the same tree produce identical site lists.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use super::{detect_multi_write, ConstantSite, SourceError, SyntaxAdapter, SyntaxContext};

/// Everything a corpus scan yields: the sites, plus per-file trouble that
/// did not stop the scan.
#[derive(Clone, Debug, Default)]
pub struct ScanOutcome {
    /// All extracted sites, ordered by file path and then span start.
    pub sites: Vec<ConstantSite>,
    pub files_scanned: usize,
    /// Files skipped because they could not be read or tokenized.
    pub issues: Vec<FileIssue>,
}

/// A file the scanner had to give up on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileIssue {
    pub file: String,
    pub line: u32,
    pub message: String,
}

/// Walks `root`, runs the adapter over every file it claims, and applies
/// multi-write marking per file. Unreadable or unparseable files become
/// issues rather than failures; a missing root is an error.
pub fn scan_corpus(root: &Path, adapter: &dyn SyntaxAdapter) -> Result<ScanOutcome, SourceError> {
    if !root.is_dir() {
        return Err(SourceError::CorpusMissing(root.display().to_string()));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            SourceError::Io(e.into_io_error().unwrap_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::Other, "walk failed")
            }))
        })?;
        if entry.file_type().is_file() && adapter.handles(entry.path()) {
            let rel = entry
                .path()
                .strip_prefix(root)
                .unwrap_or(entry.path())
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            files.push((rel, entry.path().to_path_buf()));
        }
    }
    files.sort();

    let per_file: Vec<(Vec<ConstantSite>, Option<FileIssue>)> = files
        .par_iter()
        .map(|(rel, abs)| {
            let bytes = match fs::read(abs) {
                Ok(b) => b,
                Err(e) => {
                    return (
                        Vec::new(),
                        Some(FileIssue {
                            file: rel.clone(),
                            line: 0,
                            message: format!("unreadable: {e}"),
                        }),
                    )
                }
            };
            match adapter.scan_file(rel, &bytes) {
                Ok(mut fs) => {
                    let multi = detect_multi_write(&fs.writes);
                    let mut sites = Vec::with_capacity(fs.sites.len());
                    for scanned in fs.sites.drain(..) {
                        let mut site = scanned.site;
                        if scanned
                            .writes_to
                            .as_deref()
                            .map_or(false, |id| multi.contains(id))
                        {
                            site.contexts.insert(SyntaxContext::MultiWriteInit);
                            site.contexts.remove(&SyntaxContext::Other);
                        }
                        sites.push(site);
                    }
                    (sites, None)
                }
                Err(e) => (
                    Vec::new(),
                    Some(FileIssue {
                        file: rel.clone(),
                        line: e.line,
                        message: e.message,
                    }),
                ),
            }
        })
        .collect();

    let mut out = ScanOutcome {
        files_scanned: files.len(),
        ..ScanOutcome::default()
    };
    for (sites, issue) in per_file {
        out.sites.extend(sites);
        out.issues.extend(issue);
    }
    out.sites.sort_by(|a, b| {
        a.file
            .cmp(&b.file)
            .then(a.span.0.cmp(&b.span.0))
            .then(a.span.1.cmp(&b.span.1))
    });
    debug_assert!(distinct_ids(&out.sites));
    Ok(out)
}

fn distinct_ids(sites: &[ConstantSite]) -> bool {
    let ids: BTreeSet<_> = sites.iter().map(|s| &s.id).collect();
    ids.len() == sites.len()
}

/// Writes sites as one JSON object per line.
pub fn dump_sites<W: Write>(mut w: W, sites: &[ConstantSite]) -> std::io::Result<()> {
    for s in sites {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads sites back from the line-per-object form, checking id uniqueness.
pub fn load_sites<R: std::io::Read>(r: R) -> Result<Vec<ConstantSite>, ScanLoadError> {
    let mut sites = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let site: ConstantSite =
            serde_json::from_str(&line).map_err(|e| ScanLoadError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        sites.push(site);
    }
    if !distinct_ids(&sites) {
        return Err(ScanLoadError::DuplicateIds);
    }
    Ok(sites)
}

#[derive(Debug, Error)]
pub enum ScanLoadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("site list contains duplicate ids")]
    DuplicateIds,
}
