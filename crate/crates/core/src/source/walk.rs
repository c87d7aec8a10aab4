//! Single-pass context analysis over the token stream. A small frame stack
//! tracks parens, brackets and braces; a statement matcher spots
//! declarations and assignments so literals can be linked to the variables
//! they feed and writes can be counted for multi-write detection.
//!
//! This is deliberately name-based and local: no symbol resolution, no type
//! checking. It only has to be right about the shapes the context filter
//! keys on (indexes, comparisons, loop headers, call arguments, conditions,
//! returns, initializers).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use super::lexer::{lex, text, TokKind, Token};
use super::{
    AdapterConfig, AdapterError, ConstantSite, Enclosure, FileScan, Radix, ScannedSite, SiteId,
    SiteKind, SiteValue, SyntaxAdapter, SyntaxContext, WriteEvent,
};

const MODIFIERS: [&str; 13] = [
    "public",
    "private",
    "protected",
    "static",
    "final",
    "volatile",
    "transient",
    "synchronized",
    "native",
    "abstract",
    "strictfp",
    "sealed",
    "default",
];

const BAIL_KEYWORDS: [&str; 17] = [
    "return", "if", "for", "while", "do", "switch", "case", "break", "continue", "throw", "try",
    "else", "new", "assert", "super", "this", "yield",
];

const KEYWORDS: [&str; 31] = [
    "abstract",
    "assert",
    "break",
    "case",
    "catch",
    "class",
    "continue",
    "default",
    "do",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "for",
    "if",
    "implements",
    "import",
    "instanceof",
    "interface",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "static",
    "switch",
    "throw",
    "throws",
    "while",
];

const COMPARISONS: [&str; 6] = ["==", "!=", "<", ">", "<=", ">="];
const COMPOUND_ASSIGN: [&str; 11] = [
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
];

/// The built-in adapter for Java-like source.
pub struct JavaLikeAdapter {
    cfg: AdapterConfig,
}

impl JavaLikeAdapter {
    pub fn new(cfg: AdapterConfig) -> Self {
        JavaLikeAdapter { cfg }
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }
}

impl SyntaxAdapter for JavaLikeAdapter {
    fn name(&self) -> &str {
        "java-like"
    }

    fn handles(&self, path: &Path) -> bool {
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| self.cfg.extensions.iter().any(|x| x == e))
            .unwrap_or(false)
    }

    fn scan_file(&self, file: &str, bytes: &[u8]) -> Result<FileScan, AdapterError> {
        let line_starts = line_starts(bytes);
        let line_of = |off: usize| -> u32 { (line_starts.partition_point(|&s| s <= off)) as u32 };
        let toks = lex(bytes).map_err(|e| AdapterError {
            line: line_of(e.offset),
            message: e.message,
        })?;
        let mut w = Walker {
            src: bytes,
            toks: &toks,
            cfg: &self.cfg,
            file,
            line_starts: &line_starts,
            frames: Vec::new(),
            classes: Vec::new(),
            methods: Vec::new(),
            scopes: Vec::new(),
            region: None,
            pending_regions: BTreeMap::new(),
            suppressed: HashSet::new(),
            closed_parens: HashMap::new(),
            last_bracket: BracketKind::Type,
            stmt_counter: 0,
            return_depth: None,
            suppress_semi: false,
            pending_class: None,
            expect_stmt: true,
            out: FileScan::default(),
        };
        w.run();
        Ok(w.out)
    }
}

fn line_starts(src: &[u8]) -> Vec<usize> {
    let mut v = vec![0];
    for (i, &b) in src.iter().enumerate() {
        if b == b'\n' {
            v.push(i + 1);
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BracketKind {
    Index,
    Alloc,
    Type,
}

#[derive(Debug)]
enum Frame {
    Call(CallFrame),
    Cond,
    ForCtl { clause: usize },
    Group,
    Bracket(BracketKind),
    ClassBody,
    MethodBody,
    Body,
    ArrayInit,
}

impl Frame {
    /// Frames that do not change what a literal "belongs to".
    fn transparent(&self) -> bool {
        matches!(
            self,
            Frame::Group | Frame::ArrayInit | Frame::Bracket(BracketKind::Type)
        )
    }
}

#[derive(Debug)]
struct CallFrame {
    method: String,
    ignored: bool,
    arg_index: usize,
    tokens_in_arg: usize,
    /// Bool-literal site that opened the current argument, if nothing else
    /// has shown up in that argument yet.
    bool_candidate: Option<(usize, usize)>,
    /// Candidate validated when its argument closed with exactly one token.
    sole_bool: Option<(usize, usize)>,
    saw_any_token: bool,
}

impl CallFrame {
    fn finish_arg(&mut self) {
        if let Some((site, arg)) = self.bool_candidate.take() {
            if arg == self.arg_index && self.tokens_in_arg == 1 {
                self.sole_bool = Some((site, arg));
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Region {
    identity: String,
    target: String,
    is_decl: bool,
    field_target: bool,
    frame_base: usize,
}

struct ClassCtx {
    name: String,
    fields: BTreeSet<String>,
}

struct Walker<'a> {
    src: &'a [u8],
    toks: &'a [Token],
    cfg: &'a AdapterConfig,
    file: &'a str,
    line_starts: &'a [usize],
    frames: Vec<Frame>,
    classes: Vec<ClassCtx>,
    methods: Vec<String>,
    scopes: Vec<BTreeSet<String>>,
    region: Option<Region>,
    pending_regions: BTreeMap<usize, Region>,
    suppressed: HashSet<usize>,
    closed_parens: HashMap<usize, (bool, String)>,
    last_bracket: BracketKind,
    stmt_counter: usize,
    return_depth: Option<usize>,
    suppress_semi: bool,
    pending_class: Option<String>,
    expect_stmt: bool,
    out: FileScan,
}

impl<'a> Walker<'a> {
    fn txt(&self, i: usize) -> &'a str {
        text(self.src, &self.toks[i])
    }

    fn is_ident(&self, i: usize) -> bool {
        i < self.toks.len() && matches!(self.toks[i].kind, TokKind::Ident)
    }

    fn is_sym(&self, i: usize, s: &str) -> bool {
        i < self.toks.len() && matches!(self.toks[i].kind, TokKind::Sym) && self.txt(i) == s
    }

    fn line_of(&self, off: usize) -> u32 {
        self.line_starts.partition_point(|&s| s <= off) as u32
    }

    fn run(&mut self) {
        let n = self.toks.len();
        let mut i = 0;
        while i < n {
            if let Some(r) = self.pending_regions.remove(&i) {
                self.region = Some(r);
            }
            if self.expect_stmt
                && (self.is_ident(i) || self.is_sym(i, "@") || self.is_sym(i, "++")
                    || self.is_sym(i, "--"))
            {
                self.expect_stmt = false;
                self.match_statement(i);
            }
            self.count_arg_token(i);
            match &self.toks[i].kind {
                TokKind::Ident => self.on_ident(i),
                TokKind::Int { value, radix } => {
                    let (value, radix) = (*value, *radix);
                    self.add_number(i, SiteKind::Int, SiteValue::Int(value), Some(radix));
                }
                TokKind::Float { value } => {
                    let value = *value;
                    self.add_number(i, SiteKind::Float, SiteValue::Float(value), None);
                }
                TokKind::Sym => self.on_sym(i),
                TokKind::Str | TokKind::Char => {}
            }
            i += 1;
        }
    }

    /// Argument token bookkeeping for the innermost call frame.
    fn count_arg_token(&mut self, i: usize) {
        let closes = self.is_sym(i, ")");
        let separates = self.is_sym(i, ",");
        if let Some(Frame::Call(c)) = self.frames.last_mut() {
            if !closes && !separates {
                c.tokens_in_arg += 1;
                c.saw_any_token = true;
                if c.tokens_in_arg > 1 {
                    c.bool_candidate = None;
                }
            }
        }
    }

    fn on_ident(&mut self, i: usize) {
        let t = self.txt(i);
        match t {
            "true" | "false" => {
                self.add_site(
                    i,
                    SiteKind::Bool,
                    SiteValue::Bool(t == "true"),
                    None,
                    None,
                    (self.toks[i].start, self.toks[i].end),
                );
                return;
            }
            "return" => {
                self.return_depth = Some(self.frames.len());
                return;
            }
            "class" | "interface" | "enum" => {
                if self.is_ident(i + 1) {
                    self.pending_class = Some(self.txt(i + 1).to_string());
                }
                return;
            }
            _ => {}
        }
        if self.suppress_semi
            || self.suppressed.contains(&i)
            || KEYWORDS.contains(&t)
            || MODIFIERS.contains(&t)
        {
            return;
        }
        // Enum reference: a known variant name that is not a call, not a
        // qualifier, and if qualified, qualified by its own type name.
        if self.is_sym(i + 1, "(") || self.is_sym(i + 1, ".") {
            return;
        }
        let qualifier = if i >= 2 && self.is_sym(i - 1, ".") && self.is_ident(i - 2) {
            Some(self.txt(i - 2))
        } else if i >= 1 && self.is_sym(i - 1, ".") {
            return; // qualified by something unnameable
        } else {
            None
        };
        if let Some(ty) = self.cfg.enums.resolve(t, qualifier) {
            self.add_site(
                i,
                SiteKind::EnumRef,
                SiteValue::Enum(t.to_string()),
                None,
                Some(ty.to_string()),
                (self.toks[i].start, self.toks[i].end),
            );
        }
    }

    fn add_number(&mut self, i: usize, kind: SiteKind, value: SiteValue, radix: Option<Radix>) {
        // Fold a directly attached unary minus into the literal.
        let tok_start = self.toks[i].start;
        let folded = i >= 1
            && self.is_sym(i - 1, "-")
            && self.toks[i - 1].end == tok_start
            && !self.prev_ends_expression(i - 1);
        let (span, value) = if folded {
            let v = match value {
                SiteValue::Int(x) => SiteValue::Int(-x),
                SiteValue::Float(x) => SiteValue::Float(-x),
                other => other,
            };
            ((self.toks[i - 1].start, self.toks[i].end), v)
        } else {
            ((tok_start, self.toks[i].end), value)
        };
        self.add_site(i, kind, value, radix, None, span);
    }

    /// Whether the token at `j` sits after a complete expression, making a
    /// following +/- binary.
    fn prev_ends_expression(&self, j: usize) -> bool {
        if j == 0 {
            return false;
        }
        match &self.toks[j - 1].kind {
            TokKind::Int { .. } | TokKind::Float { .. } | TokKind::Str | TokKind::Char => true,
            TokKind::Ident => !KEYWORDS.contains(&self.txt(j - 1)),
            TokKind::Sym => matches!(self.txt(j - 1), ")" | "]" | "++" | "--"),
        }
    }

    fn add_site(
        &mut self,
        i: usize,
        kind: SiteKind,
        value: SiteValue,
        radix: Option<Radix>,
        enum_type: Option<String>,
        span: (usize, usize),
    ) {
        let mut contexts = BTreeSet::new();
        let mut enclosure = None;
        let mut arg_of_call = false;

        // Structural tags from the frame stack.
        for f in self.frames.iter().rev() {
            match f {
                Frame::Cond => {
                    contexts.insert(SyntaxContext::Condition);
                }
                Frame::ForCtl { clause: 0 } => {
                    contexts.insert(SyntaxContext::ForLoopInit);
                }
                Frame::Call(c) if c.ignored => {
                    contexts.insert(SyntaxContext::IgnoredMethodArg);
                }
                _ => {}
            }
        }
        if let Some(f) = self.frames.iter().rev().find(|f| !f.transparent()) {
            match f {
                Frame::Bracket(BracketKind::Index) => {
                    contexts.insert(SyntaxContext::ArrayIndex);
                }
                Frame::Bracket(BracketKind::Alloc) => {
                    contexts.insert(SyntaxContext::CallArgument);
                }
                Frame::Call(c) => {
                    contexts.insert(SyntaxContext::CallArgument);
                    enclosure = Some(Enclosure::Argument {
                        method: c.method.clone(),
                        index: c.arg_index,
                    });
                    arg_of_call = true;
                }
                _ => {}
            }
        }
        if self.return_depth.is_some() {
            contexts.insert(SyntaxContext::ReturnValue);
        }

        // Comparison and small-offset adjacency.
        if matches!(kind, SiteKind::Int | SiteKind::Float) {
            let own_small = match value {
                SiteValue::Int(x) => x == 0 || x == 1,
                SiteValue::Float(x) => x == 0.0 || x == 1.0,
                _ => false,
            };
            let prev = if i >= 1 && self.is_sym(i - 1, "-") && span.0 == self.toks[i - 1].start {
                i.checked_sub(2)
            } else {
                i.checked_sub(1)
            };
            let next = i + 1;
            let neighbor_cmp = |j: Option<usize>, other: Option<usize>| -> bool {
                let Some(j) = j else { return false };
                if j >= self.toks.len()
                    || !matches!(self.toks[j].kind, TokKind::Sym)
                    || !COMPARISONS.contains(&self.txt(j))
                {
                    return false;
                }
                own_small || other.map_or(false, |o| self.is_small_literal(o))
            };
            if neighbor_cmp(prev, prev.and_then(|p| p.checked_sub(1)))
                || neighbor_cmp(Some(next), Some(next + 1))
            {
                contexts.insert(SyntaxContext::ComparisonWithZeroOrOne);
            }
            if kind == SiteKind::Int {
                if let Some(p) = prev {
                    if matches!(self.toks[p].kind, TokKind::Sym) && self.prev_ends_expression(p) {
                        let op = self.txt(p);
                        let v = match value {
                            SiteValue::Int(x) => x,
                            _ => 0,
                        };
                        if (op == "+" && (v == 1 || v == 2)) || (op == "-" && v == 1) {
                            contexts.insert(SyntaxContext::PlusMinusSmall);
                        }
                    }
                }
            }
        }

        // Initializer and assignment regions.
        let mut writes_to = None;
        if let Some(r) = &self.region {
            if r.is_decl {
                contexts.insert(SyntaxContext::VariableInitializer);
            }
            if r.field_target {
                contexts.insert(SyntaxContext::FieldAssignment);
            }
            if enclosure.is_none() {
                enclosure = Some(Enclosure::Assigned {
                    name: r.target.clone(),
                });
            }
            let above = self.frames.get(r.frame_base..).unwrap_or(&[]);
            if above.iter().all(Frame::transparent) {
                writes_to = Some(r.identity.clone());
            }
        }

        // Enum argument typing.
        if kind == SiteKind::EnumRef && arg_of_call {
            if let Some(ty) = enum_type.as_deref() {
                if self.cfg.time_unit_types.contains(ty) {
                    contexts.insert(SyntaxContext::TimeUnitArg);
                }
                if self.cfg.locale_types.contains(ty) {
                    contexts.insert(SyntaxContext::LocaleArg);
                }
            }
        }

        if contexts.is_empty() {
            contexts.insert(SyntaxContext::Other);
        }

        let raw_text = String::from_utf8_lossy(&self.src[span.0..span.1]).into_owned();
        let enum_domain = enum_type
            .as_deref()
            .and_then(|ty| self.cfg.enums.variants(ty))
            .map(<[String]>::to_vec);
        let site = ConstantSite {
            id: SiteId::new(self.file, span),
            file: self.file.to_string(),
            span,
            line: self.line_of(span.0),
            kind,
            raw_text,
            value,
            radix,
            enum_type,
            enum_domain,
            contexts,
            enclosure,
        };
        let site_idx = self.out.sites.len();
        self.out.sites.push(ScannedSite { site, writes_to });

        // Register a bool literal that might be the sole argument of a
        // one-argument call.
        if kind == SiteKind::Bool {
            if let Some(Frame::Call(c)) = self.frames.last_mut() {
                if c.tokens_in_arg == 1 {
                    c.bool_candidate = Some((site_idx, c.arg_index));
                }
            }
        }
    }

    fn is_small_literal(&self, j: usize) -> bool {
        j < self.toks.len()
            && match self.toks[j].kind {
                TokKind::Int { value, .. } => value == 0 || value == 1,
                TokKind::Float { value } => value == 0.0 || value == 1.0,
                _ => false,
            }
    }

    fn on_sym(&mut self, i: usize) {
        match self.txt(i) {
            "(" => self.open_paren(i),
            ")" => self.close_paren(i),
            "[" => self.open_bracket(i),
            "]" => {
                if matches!(self.frames.last(), Some(Frame::Bracket(_))) {
                    if let Some(Frame::Bracket(k)) = self.frames.pop() {
                        self.last_bracket = k;
                    }
                }
            }
            "{" => self.open_brace(i),
            "}" => self.close_brace(),
            ";" => self.on_semicolon(),
            "," => self.on_comma(),
            _ => {}
        }
    }

    fn open_paren(&mut self, i: usize) {
        let frame = if i > 0 && self.is_ident(i - 1) {
            match self.txt(i - 1) {
                "if" | "while" => Frame::Cond,
                "for" => {
                    self.scopes.push(BTreeSet::new());
                    self.expect_stmt = true;
                    Frame::ForCtl { clause: 0 }
                }
                "switch" | "catch" | "synchronized" | "return" | "assert" => Frame::Group,
                name if KEYWORDS.contains(&name) => Frame::Group,
                name => Frame::Call(CallFrame {
                    method: name.to_string(),
                    ignored: self.cfg.ignored_methods.contains(name),
                    arg_index: 0,
                    tokens_in_arg: 0,
                    bool_candidate: None,
                    sole_bool: None,
                    saw_any_token: false,
                }),
            }
        } else {
            Frame::Group
        };
        self.frames.push(frame);
    }

    fn close_paren(&mut self, i: usize) {
        if !matches!(
            self.frames.last(),
            Some(Frame::Call(_) | Frame::Cond | Frame::ForCtl { .. } | Frame::Group)
        ) {
            return;
        }
        match self.frames.pop().unwrap() {
            Frame::Call(mut c) => {
                c.finish_arg();
                let single_arg = c.arg_index == 0 && c.saw_any_token;
                if single_arg {
                    if let Some((site_idx, 0)) = c.sole_bool {
                        self.out.sites[site_idx]
                            .site
                            .contexts
                            .insert(SyntaxContext::OneArgBoolCall);
                    }
                }
                self.closed_parens.insert(i, (true, c.method));
            }
            Frame::Cond => {
                self.expect_stmt = true;
                self.closed_parens.insert(i, (false, String::new()));
            }
            Frame::ForCtl { .. } => {
                self.scopes.pop();
                self.close_region_below(self.frames.len() + 1);
                self.expect_stmt = true;
                self.closed_parens.insert(i, (false, String::new()));
            }
            Frame::Group => {
                self.closed_parens.insert(i, (false, String::new()));
            }
            _ => unreachable!(),
        }
    }

    fn open_bracket(&mut self, i: usize) {
        let kind = if i == 0 {
            BracketKind::Type
        } else if self.is_sym(i - 1, "]") {
            self.last_bracket
        } else if self.is_ident(i - 1) {
            if self.in_new_chain(i - 1) {
                BracketKind::Alloc
            } else if self.is_sym(i + 1, "]") {
                BracketKind::Type
            } else if KEYWORDS.contains(&self.txt(i - 1)) {
                BracketKind::Type
            } else {
                BracketKind::Index
            }
        } else if self.is_sym(i - 1, ")")
            || matches!(self.toks[i - 1].kind, TokKind::Str | TokKind::Char)
        {
            BracketKind::Index
        } else {
            BracketKind::Type
        };
        self.frames.push(Frame::Bracket(kind));
    }

    /// Is the identifier at `j` (tail of a dotted chain) part of a `new`
    /// expression?
    fn in_new_chain(&self, j: usize) -> bool {
        let mut k = j;
        while k >= 2 && self.is_sym(k - 1, ".") && self.is_ident(k - 2) {
            k -= 2;
        }
        k >= 1 && self.is_ident(k - 1) && self.txt(k - 1) == "new"
    }

    fn open_brace(&mut self, i: usize) {
        if let Some(name) = self.pending_class.take() {
            self.classes.push(ClassCtx {
                name,
                fields: BTreeSet::new(),
            });
            self.frames.push(Frame::ClassBody);
            self.expect_stmt = true;
            return;
        }
        // Array initializer positions.
        if i > 0 {
            let prev_init = self.is_sym(i - 1, "=")
                || ((self.is_sym(i - 1, "{") || self.is_sym(i - 1, ","))
                    && matches!(self.frames.last(), Some(Frame::ArrayInit)))
                || (self.is_sym(i - 1, "]") && self.last_bracket != BracketKind::Index);
            if prev_init {
                self.frames.push(Frame::ArrayInit);
                return;
            }
        }
        // Method body: `{` preceded by `)` of a call-shaped header, with an
        // optional throws list in between.
        if let Some(name) = self.method_header_before(i) {
            self.methods.push(name);
            self.scopes.push(BTreeSet::new());
            self.frames.push(Frame::MethodBody);
            self.expect_stmt = true;
            return;
        }
        self.scopes.push(BTreeSet::new());
        self.frames.push(Frame::Body);
        self.expect_stmt = true;
    }

    fn method_header_before(&self, i: usize) -> Option<String> {
        let mut j = i;
        while j > 0 {
            j -= 1;
            match &self.toks[j].kind {
                TokKind::Ident if self.txt(j) == "throws" || !KEYWORDS.contains(&self.txt(j)) => {
                    continue
                }
                TokKind::Sym if matches!(self.txt(j), "," | ".") => continue,
                TokKind::Sym if self.txt(j) == ")" => {
                    return match self.closed_parens.get(&j) {
                        Some((true, name)) => Some(name.clone()),
                        _ => None,
                    };
                }
                _ => return None,
            }
        }
        None
    }

    fn close_brace(&mut self) {
        match self.frames.pop() {
            Some(Frame::ClassBody) => {
                self.classes.pop();
            }
            Some(Frame::MethodBody) => {
                self.methods.pop();
                self.scopes.pop();
            }
            Some(Frame::Body) => {
                self.scopes.pop();
            }
            Some(Frame::ArrayInit) => return,
            _ => {}
        }
        self.close_region_below(self.frames.len() + 1);
        self.return_depth = None;
        self.expect_stmt = true;
    }

    fn on_semicolon(&mut self) {
        self.suppress_semi = false;
        if let Some(Frame::ForCtl { clause }) = self.frames.last_mut() {
            *clause += 1;
            self.close_region_at(self.frames.len());
            self.expect_stmt = true;
            return;
        }
        self.close_region_at(self.frames.len());
        if self.return_depth == Some(self.frames.len()) {
            self.return_depth = None;
        }
        self.expect_stmt = true;
    }

    fn on_comma(&mut self) {
        self.close_region_at(self.frames.len());
        if let Some(Frame::Call(c)) = self.frames.last_mut() {
            c.finish_arg();
            c.arg_index += 1;
            c.tokens_in_arg = 0;
        }
    }

    fn close_region_at(&mut self, depth: usize) {
        if self
            .region
            .as_ref()
            .map_or(false, |r| r.frame_base == depth)
        {
            self.region = None;
        }
    }

    fn close_region_below(&mut self, depth: usize) {
        if self
            .region
            .as_ref()
            .map_or(false, |r| r.frame_base >= depth)
        {
            self.region = None;
        }
    }

    // ---- statement matching -------------------------------------------

    fn match_statement(&mut self, s: usize) {
        let mut j = s;
        // Skip annotations.
        while self.is_sym(j, "@") {
            j += 1;
            j = self.skip_chain_idents(j);
            if self.is_sym(j, "(") {
                j = self.skip_balanced(j);
            }
        }
        while self.is_ident(j) && MODIFIERS.contains(&self.txt(j)) {
            j += 1;
        }
        if self.is_sym(j, "++") || self.is_sym(j, "--") {
            if self.is_ident(j + 1) {
                let (identity, _) = self.resolve_target(self.txt(j + 1));
                let stmt = self.next_stmt();
                self.record_write(identity, stmt);
            }
            return;
        }
        if !self.is_ident(j) {
            return;
        }
        let head = self.txt(j);
        if head == "import" || head == "package" {
            self.suppress_semi = true;
            return;
        }
        if BAIL_KEYWORDS.contains(&head) && head != "this" && head != "super" {
            return;
        }
        if matches!(head, "class" | "interface" | "enum") {
            return;
        }

        let Some((chain, after)) = self.parse_chain(j) else {
            return;
        };
        if self.is_ident(after) && !KEYWORDS.contains(&self.txt(after)) {
            self.match_declarators(after);
        } else if self.is_sym(after, "=") && !self.is_sym(after, "==") {
            let (identity, field) = self.resolve_target(&chain);
            let stmt = self.next_stmt();
            self.record_write(identity.clone(), stmt);
            self.pending_regions.insert(
                after + 1,
                Region {
                    identity,
                    target: chain,
                    is_decl: false,
                    field_target: field,
                    frame_base: self.frames.len(),
                },
            );
        } else if self.is_sym(after, "++") || self.is_sym(after, "--") {
            let (identity, _) = self.resolve_target(&chain);
            let stmt = self.next_stmt();
            self.record_write(identity, stmt);
        } else if after < self.toks.len()
            && matches!(self.toks[after].kind, TokKind::Sym)
            && COMPOUND_ASSIGN.contains(&self.txt(after))
        {
            let (identity, field) = self.resolve_target(&chain);
            let stmt = self.next_stmt();
            self.record_write(identity.clone(), stmt);
            self.pending_regions.insert(
                after + 1,
                Region {
                    identity,
                    target: chain,
                    is_decl: false,
                    field_target: field,
                    frame_base: self.frames.len(),
                },
            );
        }
    }

    /// Declarator list after a type: `name [= init] (, name [= init])*`.
    fn match_declarators(&mut self, mut k: usize) {
        loop {
            if !self.is_ident(k) || KEYWORDS.contains(&self.txt(k)) {
                return;
            }
            let name = self.txt(k).to_string();
            self.suppressed.insert(k);
            k += 1;
            while self.is_sym(k, "[") && self.is_sym(k + 1, "]") {
                k += 2;
            }
            let (identity, is_field) = self.declare_var(&name);
            if self.is_sym(k, "=") {
                let stmt = self.next_stmt();
                self.record_write(identity.clone(), stmt);
                self.pending_regions.insert(
                    k + 1,
                    Region {
                        identity,
                        target: name,
                        is_decl: true,
                        field_target: is_field,
                        frame_base: self.frames.len(),
                    },
                );
                k = self.skip_to_list_end(k + 1);
            }
            if self.is_sym(k, ",") {
                k += 1;
            } else {
                return;
            }
        }
    }

    /// Dotted identifier chain with balanced generics and empty array
    /// brackets. Returns the dotted text (idents only) and the index after.
    fn parse_chain(&self, mut j: usize) -> Option<(String, usize)> {
        let mut parts = Vec::new();
        loop {
            if !self.is_ident(j) {
                return None;
            }
            parts.push(self.txt(j).to_string());
            j += 1;
            if self.is_sym(j, "<") {
                if let Some(after) = self.skip_generics(j) {
                    j = after;
                }
            }
            if self.is_sym(j, ".") && self.is_ident(j + 1) {
                j += 1;
                continue;
            }
            break;
        }
        while self.is_sym(j, "[") && self.is_sym(j + 1, "]") {
            j += 2;
        }
        Some((parts.join("."), j))
    }

    fn skip_chain_idents(&self, mut j: usize) -> usize {
        while self.is_ident(j) {
            j += 1;
            if self.is_sym(j, ".") {
                j += 1;
            } else {
                break;
            }
        }
        j
    }

    /// Best-effort balanced skip over `<...>`; returns None when this is a
    /// comparison rather than generics.
    fn skip_generics(&self, open: usize) -> Option<usize> {
        let mut depth: i32 = 0;
        let mut j = open;
        while j < self.toks.len() && j - open < 64 {
            if matches!(self.toks[j].kind, TokKind::Sym) {
                match self.txt(j) {
                    "<" => depth += 1,
                    ">" => depth -= 1,
                    ">>" => depth -= 2,
                    ">>>" => depth -= 3,
                    ";" | "{" | ")" | "=" => return None,
                    _ => {}
                }
                if depth <= 0 {
                    return Some(j + 1);
                }
            } else if matches!(
                self.toks[j].kind,
                TokKind::Int { .. } | TokKind::Float { .. } | TokKind::Str
            ) {
                return None;
            }
            j += 1;
        }
        None
    }

    fn skip_balanced(&self, open: usize) -> usize {
        let mut depth = 0;
        let mut j = open;
        while j < self.toks.len() {
            if matches!(self.toks[j].kind, TokKind::Sym) {
                match self.txt(j) {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        depth -= 1;
                        if depth == 0 {
                            return j + 1;
                        }
                    }
                    _ => {}
                }
            }
            j += 1;
        }
        j
    }

    /// Skips an initializer expression up to the `,` or `;` that ends it at
    /// the current nesting level.
    fn skip_to_list_end(&self, mut j: usize) -> usize {
        let mut depth = 0;
        while j < self.toks.len() {
            if matches!(self.toks[j].kind, TokKind::Sym) {
                match self.txt(j) {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            return j;
                        }
                        depth -= 1;
                    }
                    "," | ";" if depth == 0 => return j,
                    _ => {}
                }
            }
            j += 1;
        }
        j
    }

    fn class_path(&self) -> String {
        self.classes
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join(".")
    }

    fn qualify(&self, name: &str) -> String {
        let cp = self.class_path();
        if cp.is_empty() {
            name.to_string()
        } else {
            format!("{cp}.{name}")
        }
    }

    /// Registers a declared variable; returns its identity and whether it
    /// is a field.
    fn declare_var(&mut self, name: &str) -> (String, bool) {
        let at_class_level = self.methods.is_empty()
            && matches!(self.frames.last(), Some(Frame::ClassBody));
        if at_class_level {
            if let Some(c) = self.classes.last_mut() {
                c.fields.insert(name.to_string());
            }
            (self.qualify(name), true)
        } else {
            if let Some(s) = self.scopes.last_mut() {
                s.insert(name.to_string());
            }
            (self.local_identity(name), false)
        }
    }

    fn local_identity(&self, name: &str) -> String {
        let method = self.methods.last().map(String::as_str).unwrap_or("<block>");
        self.qualify(&format!("{method}().{name}"))
    }

    /// Resolves an assignment target path to (identity, is_field_target).
    fn resolve_target(&self, path: &str) -> (String, bool) {
        if let Some(rest) = path.strip_prefix("this.") {
            return (self.qualify(rest), true);
        }
        if path.contains('.') {
            return (self.qualify(path), true);
        }
        if self.scopes.iter().rev().any(|s| s.contains(path)) {
            return (self.local_identity(path), false);
        }
        (self.qualify(path), true)
    }

    fn next_stmt(&mut self) -> usize {
        self.stmt_counter += 1;
        self.stmt_counter
    }

    fn record_write(&mut self, identity: String, statement: usize) {
        self.out.writes.push(WriteEvent {
            identity,
            statement,
        });
    }
}
