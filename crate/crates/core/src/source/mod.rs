//! Constant extraction: scanning a source corpus and describing every
//! constant literal it contains, together with enough syntactic context for
//! the downstream filters.
//!
//! Parsing goes through a narrow adapter interface so other grammars can be
//! plugged in; the built-in adapter understands a Java-like surface syntax,
//! which covers what the context heuristics need (literals, operators,
//! call and argument structure, assignment targets, loop, condition and
//! return boundaries).

mod lexer;
mod scan;
mod walk;

pub use scan::{dump_sites, load_sites, scan_corpus, FileIssue, ScanLoadError, ScanOutcome};
pub use walk::JavaLikeAdapter;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable identifier of one constant occurrence: `<file>@<start>-<end>`.
/// Rescanning unchanged bytes reproduces the same id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId(pub String);

impl SiteId {
    pub fn new(file: &str, span: (usize, usize)) -> Self {
        SiteId(format!("{}@{}-{}", file, span.0, span.1))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    Int,
    Float,
    Bool,
    EnumRef,
}

impl SiteKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, SiteKind::Int | SiteKind::Float)
    }
}

/// Integer literal notation, preserved so mutations can be written back in
/// the same base.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Radix {
    Dec,
    Hex,
    Oct,
    Bin,
}

/// Parsed literal value. Integers are exact; floats are the literal's
/// binary64 value; enum references carry the variant name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Enum(String),
}

/// Syntactic situations a literal can sit in. The first eleven are the
/// filterable contexts, in the order the filter reports them; the rest are
/// informational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntaxContext {
    ArrayIndex,
    ComparisonWithZeroOrOne,
    PlusMinusSmall,
    ForLoopInit,
    IgnoredMethodArg,
    OneArgBoolCall,
    TimeUnitArg,
    LocaleArg,
    Condition,
    ReturnValue,
    MultiWriteInit,
    VariableInitializer,
    CallArgument,
    FieldAssignment,
    Other,
}

/// What syntactically receives the literal, when anything does.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Enclosure {
    /// The literal flows into a named variable or field.
    Assigned { name: String },
    /// The literal is the `index`-th argument of a call to `method`.
    Argument { method: String, index: usize },
}

/// One constant occurrence in the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantSite {
    pub id: SiteId,
    /// Corpus-relative path with forward slashes.
    pub file: String,
    /// Half-open byte range of the literal text.
    pub span: (usize, usize),
    /// 1-based line of the span start.
    pub line: u32,
    pub kind: SiteKind,
    /// Exact source bytes of the literal.
    pub raw_text: String,
    pub value: SiteValue,
    /// Set for integer literals only.
    pub radix: Option<Radix>,
    /// The type an enum reference resolved to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_type: Option<String>,
    /// All variants of that type, in declaration order; replacement values
    /// are drawn from here so a stored site list is self-contained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_domain: Option<Vec<String>>,
    pub contexts: BTreeSet<SyntaxContext>,
    pub enclosure: Option<Enclosure>,
}

/// Known enum types and their variants, in declaration order. Used both to
/// recognize enum references during scanning and to pick replacement
/// variants during mutation planning.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnumDomain {
    types: BTreeMap<String, Vec<String>>,
}

impl EnumDomain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ty: &str, variants: &[&str]) {
        self.types
            .insert(ty.to_string(), variants.iter().map(|s| s.to_string()).collect());
    }

    pub fn variants(&self, ty: &str) -> Option<&[String]> {
        self.types.get(ty).map(|v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Finds the enum type a variant belongs to. A qualifier (the `TimeUnit`
    /// in `TimeUnit.DAYS`) must match the type name exactly; unqualified
    /// references resolve to the first type (by name) declaring the variant.
    pub fn resolve(&self, variant: &str, qualifier: Option<&str>) -> Option<&str> {
        match qualifier {
            Some(q) => self
                .types
                .get(q)
                .filter(|vs| vs.iter().any(|v| v == variant))
                .map(|_| self.types.get_key_value(q).unwrap().0.as_str()),
            None => self
                .types
                .iter()
                .find(|(_, vs)| vs.iter().any(|v| v == variant))
                .map(|(ty, _)| ty.as_str()),
        }
    }
}

/// Settings for the built-in Java-like adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// File extensions (without dots) the adapter claims.
    pub extensions: Vec<String>,
    /// Methods whose literal arguments are index/offset plumbing rather than
    /// tunable parameters.
    pub ignored_methods: BTreeSet<String>,
    /// Enum types that denote time units.
    pub time_unit_types: BTreeSet<String>,
    /// Enum types that denote locales.
    pub locale_types: BTreeSet<String>,
    /// Enum variants recognizable in this corpus.
    pub enums: EnumDomain,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        AdapterConfig {
            extensions: vec!["java".into()],
            ignored_methods: set(&["substring", "charAt", "indexOf", "split"]),
            time_unit_types: set(&["TimeUnit", "ChronoUnit"]),
            locale_types: set(&["Locale"]),
            enums: EnumDomain::new(),
        }
    }
}

/// Per-file scan result produced by an adapter: the sites plus the raw
/// write events multi-write detection runs on.
#[derive(Clone, Debug, Default)]
pub struct FileScan {
    pub sites: Vec<ScannedSite>,
    pub writes: Vec<WriteEvent>,
}

/// A site plus the variable identity it directly initializes or assigns,
/// if any. The link is what lets the scanner mark initializers of
/// multiply-written variables.
#[derive(Clone, Debug)]
pub struct ScannedSite {
    pub site: ConstantSite,
    pub writes_to: Option<String>,
}

/// One assignment target occurrence: which variable identity was written,
/// and in which statement of the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteEvent {
    pub identity: String,
    pub statement: usize,
}

/// Variable identities written by two or more distinct statements of one
/// file. Purely name-based; there is no alias or dataflow analysis behind
/// it.
pub fn detect_multi_write(writes: &[WriteEvent]) -> BTreeSet<String> {
    let mut stmts: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for w in writes {
        stmts.entry(&w.identity).or_default().insert(w.statement);
    }
    stmts
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// A pluggable file parser: path filter plus per-file extraction.
/// Implementations must emit sites in file order and never overlap spans.
pub trait SyntaxAdapter: Sync {
    fn name(&self) -> &str;
    fn handles(&self, path: &Path) -> bool;
    fn scan_file(&self, file: &str, bytes: &[u8]) -> Result<FileScan, AdapterError>;
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct AdapterError {
    pub line: u32,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("corpus root {0} does not exist or is not a directory")]
    CorpusMissing(String),
    #[error("io error under corpus root: {0}")]
    Io(#[from] std::io::Error),
}
