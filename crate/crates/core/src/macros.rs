//! Macro expansion over the token stream.
//!
//! Expands user definitions and a bounded set of primitives, keeps
//! grouped scoping, and tallies every undefined control sequence.
//! Undefined macros never abort a conversion: they become visible
//! marker tokens so partial output survives and the statistics harness
//! can rank what is missing.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::time::Instant;

use crate::catcode::{Catcode, CatcodeTable};
use crate::diagnostics::Diagnostic;
use crate::span::Span;
use crate::token::{Token, TokenKind};
use crate::tokenizer::Lexer;

/// Names of every control sequence the pipeline understands, one per
/// line. Shipped as a data asset so tests and docs share one list.
pub const BINDING_MANIFEST: &str = include_str!("../assets/binding_manifest.txt");

const REF_PLACEHOLDER_PREFIX: &str = "texweb@ref@";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternPart {
    /// `#n` slot, 1-based.
    Slot(u8),
    /// Literal delimiter token that must appear in the call.
    Delim(TokenKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroOrigin {
    Document,
    Builtin,
    PackageBinding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroDefinition {
    pub name: String,
    pub pattern: Vec<PatternPart>,
    pub body: Vec<Token>,
    pub long: bool,
    pub origin: MacroOrigin,
    /// LaTeX-style optional first argument default, when defined with
    /// `\newcommand{\x}[n][default]{..}`.
    pub opt_default: Option<Vec<Token>>,
}

impl MacroDefinition {
    pub fn arity(&self) -> u8 {
        self.pattern
            .iter()
            .filter_map(|p| match p {
                PatternPart::Slot(n) => Some(*n),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub enum Binding {
    Macro(MacroDefinition),
    /// Known control sequence consumed by a later stage (sectioning,
    /// math commands, frontmatter, ...). Passes through unexpanded.
    Opaque,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DefineError {
    #[error("malformed parameter pattern: {0}")]
    MalformedPattern(String),
}

/// Per-occurrence tally of one undefined control sequence.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MissingMacroRecord {
    pub name: String,
    pub count: u64,
    pub first_span: Span,
}

#[derive(Debug)]
struct Frame {
    bindings: HashMap<String, Binding>,
    catcode_restore: Vec<(char, Catcode)>,
}

impl Frame {
    fn new() -> Self {
        Frame {
            bindings: HashMap::new(),
            catcode_restore: Vec::new(),
        }
    }
}

/// Group-scoped binding stack; the global frame is always present.
#[derive(Debug)]
pub struct ScopeStack {
    frames: Vec<Frame>,
}

impl ScopeStack {
    pub fn new() -> Self {
        ScopeStack {
            frames: vec![Frame::new()],
        }
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn push(&mut self) {
        self.frames.push(Frame::new());
    }

    /// Pops one frame; returns false at the global frame.
    pub fn pop(&mut self, table: Option<&mut CatcodeTable>) -> bool {
        if self.frames.len() == 1 {
            return false;
        }
        let frame = self.frames.pop().unwrap();
        if let Some(table) = table {
            for (c, cat) in frame.catcode_restore.into_iter().rev() {
                table.set(c, cat);
            }
        }
        true
    }

    pub fn lookup(&self, name: &str) -> Option<&Binding> {
        self.frames.iter().rev().find_map(|f| f.bindings.get(name))
    }

    pub fn define_local(&mut self, name: String, binding: Binding) {
        self.frames.last_mut().unwrap().bindings.insert(name, binding);
    }

    pub fn define_global(&mut self, name: String, binding: Binding) {
        for frame in &mut self.frames[1..] {
            frame.bindings.remove(&name);
        }
        self.frames[0].bindings.insert(name, binding);
    }

    fn note_catcode(&mut self, c: char, old: Catcode) {
        self.frames.last_mut().unwrap().catcode_restore.push((c, old));
    }
}

impl Default for ScopeStack {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug)]
pub struct ExpandOutcome {
    pub tokens: Vec<Token>,
    pub missing: Vec<MissingMacroRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

enum Source<'l, 'i> {
    List(std::vec::IntoIter<Token>),
    Lexer(&'l mut Lexer<'i>),
}

/// Hard cap on tokens waiting to be re-read. Exponential-growth
/// macros hit this long before they exhaust memory.
const PUSHBACK_LIMIT: usize = 2_000_000;

struct Cursor<'l, 'i> {
    pushback: VecDeque<Token>,
    source: Source<'l, 'i>,
}

impl<'l, 'i> Cursor<'l, 'i> {
    fn next(&mut self) -> Option<Token> {
        if let Some(t) = self.pushback.pop_front() {
            return Some(t);
        }
        match &mut self.source {
            Source::List(it) => it.next(),
            Source::Lexer(lx) => lx.next_token(),
        }
    }

    fn push_front(&mut self, tok: Token) {
        self.pushback.push_front(tok);
    }

    fn push_front_all(&mut self, toks: Vec<Token>) {
        for t in toks.into_iter().rev() {
            self.pushback.push_front(t);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MathState {
    Text,
    Inline,
    Display,
}

/// The digestion engine: scope stack plus expansion machinery.
pub struct Engine {
    pub scopes: ScopeStack,
    pub depth_limit: usize,
    pub deadline: Option<Instant>,
    expansions: usize,
    limit_hit: bool,
    math: MathState,
    group_depth: usize,
    group_spans: Vec<Span>,
    cond_stack: Vec<()>,
    labels: Vec<String>,
    missing: BTreeMap<String, MissingMacroRecord>,
    diagnostics: Vec<Diagnostic>,
    timed_out: bool,
}

impl Engine {
    pub fn new() -> Self {
        Engine {
            scopes: ScopeStack::new(),
            depth_limit: 10_000,
            deadline: None,
            expansions: 0,
            limit_hit: false,
            math: MathState::Text,
            group_depth: 0,
            group_spans: Vec::new(),
            cond_stack: Vec::new(),
            labels: Vec::new(),
            missing: BTreeMap::new(),
            diagnostics: Vec::new(),
            timed_out: false,
        }
    }

    /// State pre-loaded with the supported binding subset from the
    /// manifest asset.
    pub fn with_builtins() -> Self {
        let mut engine = Engine::new();
        for name in manifest_names() {
            engine
                .scopes
                .define_global(name.to_string(), Binding::Opaque);
        }
        // Control space cannot live in the manifest (lines are trimmed).
        engine.scopes.define_global(" ".to_string(), Binding::Opaque);
        engine
    }

    pub fn timed_out(&self) -> bool {
        self.timed_out
    }

    pub fn lookup(&self, name: &str) -> Option<&Binding> {
        self.scopes.lookup(name)
    }

    /// Installs a macro definition after checking pattern invariants.
    pub fn define(
        &mut self,
        name: &str,
        pattern: Vec<PatternPart>,
        body: Vec<Token>,
        global: bool,
    ) -> Result<(), DefineError> {
        let def = build_definition(name, pattern, body, MacroOrigin::Document, None)?;
        if global {
            self.scopes.define_global(name.to_string(), Binding::Macro(def));
        } else {
            self.scopes.define_local(name.to_string(), Binding::Macro(def));
        }
        Ok(())
    }

    /// Expands a pre-lexed token list.
    pub fn expand(&mut self, tokens: Vec<Token>) -> ExpandOutcome {
        let mut cursor = Cursor {
            pushback: VecDeque::new(),
            source: Source::List(tokens.into_iter()),
        };
        self.run(&mut cursor, None)
    }

    /// Expands straight from a live lexer, which lets `\catcode`
    /// assignments affect later tokenization.
    pub fn expand_lexer(&mut self, lexer: &mut Lexer<'_>) -> ExpandOutcome {
        let mut cursor = Cursor {
            pushback: VecDeque::new(),
            source: Source::Lexer(lexer),
        };
        self.run(&mut cursor, Some(()))
    }

    fn run(&mut self, cur: &mut Cursor<'_, '_>, _live: Option<()>) -> ExpandOutcome {
        let mut out: Vec<Token> = Vec::new();
        let mut iters: usize = 0;
        while let Some(tok) = cur.next() {
            iters += 1;
            // Checked often: exponential-growth macros can blow past a
            // coarse interval between two checks.
            if iters % 16 == 0 {
                if let Some(deadline) = self.deadline {
                    if Instant::now() >= deadline {
                        self.timed_out = true;
                        self.diagnostics.push(Diagnostic::fatal(
                            "timeout",
                            "conversion deadline exceeded during expansion",
                        ));
                        break;
                    }
                }
                if cur.pushback.len() > PUSHBACK_LIMIT {
                    self.limit_hit = true;
                    self.diagnostics.push(Diagnostic::fatal(
                        "expansion-overflow",
                        "pending expansion grew past the token volume limit",
                    ));
                    break;
                }
            }
            match &tok.kind {
                TokenKind::ControlSequence(name) => {
                    let name = name.clone();
                    self.handle_control(tok, &name, cur, &mut out);
                }
                TokenKind::Character(_, Catcode::BeginGroup) => {
                    self.scopes.push();
                    self.group_depth += 1;
                    self.group_spans.push(tok.span);
                    out.push(tok);
                }
                TokenKind::Character(_, Catcode::EndGroup) => {
                    if self.group_depth == 0 {
                        self.diagnostics.push(
                            Diagnostic::error("unbalanced-group", "`}` without matching `{`")
                                .with_span(tok.span),
                        );
                    } else {
                        self.group_depth -= 1;
                        self.group_spans.pop();
                        let table = match &mut cur.source {
                            Source::Lexer(lx) => Some(lx.table_mut()),
                            Source::List(_) => None,
                        };
                        self.scopes.pop(table);
                    }
                    out.push(tok);
                }
                TokenKind::Character(_, Catcode::MathShift) => {
                    self.toggle_math(&tok, cur, &mut out);
                }
                TokenKind::Character('~', Catcode::Active) => {
                    out.push(Token::character(' ', Catcode::Space, tok.span));
                }
                TokenKind::MissingMacro(name) => {
                    // Re-tally markers flowing through so tally
                    // exactness holds on re-expansion.
                    self.tally_missing(name.clone(), tok.span);
                    out.push(tok);
                }
                _ => out.push(tok),
            }
        }
        if self.group_depth > 0 {
            let span = self.group_spans.last().copied();
            let mut d = Diagnostic::error(
                "unbalanced-group",
                format!("{} unclosed group(s) at end of input", self.group_depth),
            );
            if let Some(span) = span {
                d = d.with_span(span);
            }
            self.diagnostics.push(d);
        }
        let out = self.resolve_refs(out);
        ExpandOutcome {
            tokens: out,
            missing: self.missing.values().cloned().collect(),
            diagnostics: std::mem::take(&mut self.diagnostics),
        }
    }

    fn toggle_math(&mut self, tok: &Token, cur: &mut Cursor<'_, '_>, out: &mut Vec<Token>) {
        match self.math {
            MathState::Text => {
                // A second math shift right behind the first opens
                // display math.
                if let Some(next) = cur.next() {
                    if next.is_char_cat(Catcode::MathShift) {
                        self.math = MathState::Display;
                        out.push(tok.clone());
                        out.push(next);
                        return;
                    }
                    cur.push_front(next);
                }
                self.math = MathState::Inline;
                out.push(tok.clone());
            }
            MathState::Inline => {
                self.math = MathState::Text;
                out.push(tok.clone());
            }
            MathState::Display => {
                out.push(tok.clone());
                if let Some(next) = cur.next() {
                    if next.is_char_cat(Catcode::MathShift) {
                        self.math = MathState::Text;
                        out.push(next);
                        return;
                    }
                    cur.push_front(next);
                }
                // Lone `$` closing `$$`: tolerate, back to text.
                self.math = MathState::Text;
            }
        }
    }

    fn handle_control(
        &mut self,
        tok: Token,
        name: &str,
        cur: &mut Cursor<'_, '_>,
        out: &mut Vec<Token>,
    ) {
        match name {
            "def" | "gdef" => self.exec_def(tok, name == "gdef", cur),
            "global" => {
                // Only \global\def / \global\gdef in the subset.
                match cur.next() {
                    Some(next) if next.is_control("def") || next.is_control("gdef") => {
                        self.exec_def(next, true, cur)
                    }
                    Some(next) => {
                        self.diagnostics.push(
                            Diagnostic::warning(
                                "unsupported-global",
                                "\\global supported only before \\def",
                            )
                            .with_span(tok.span),
                        );
                        cur.push_front(next);
                    }
                    None => {}
                }
            }
            "newcommand" | "renewcommand" | "providecommand" => {
                self.exec_newcommand(tok, name, cur)
            }
            "catcode" => self.exec_catcode(tok, cur),
            "ifmmode" => {
                let cond = self.math != MathState::Text;
                self.exec_conditional(cond, cur);
            }
            "ifx" => {
                let a = cur.next();
                let b = cur.next();
                let cond = match (&a, &b) {
                    (Some(a), Some(b)) => self.tokens_ifx_equal(a, b),
                    _ => false,
                };
                self.exec_conditional(cond, cur);
            }
            "else" => {
                // An \else reached in a live true-branch: skip its
                // alternative up to \fi.
                if self.cond_stack.pop().is_some() {
                    self.skip_conditional_branch(cur, false);
                } else {
                    self.diagnostics.push(
                        Diagnostic::info("stray-conditional", "\\else outside a conditional")
                            .with_span(tok.span),
                    );
                }
            }
            "fi" => {
                if self.cond_stack.pop().is_none() {
                    self.diagnostics.push(
                        Diagnostic::info("stray-conditional", "\\fi outside a conditional")
                            .with_span(tok.span),
                    );
                }
            }
            "label" => {
                let key = self.capture_text_arg(cur);
                self.labels.push(key);
            }
            "ref" => {
                let key = self.capture_text_arg(cur);
                out.push(Token::control(
                    &format!("{REF_PLACEHOLDER_PREFIX}{key}"),
                    tok.span,
                ));
            }
            "relax" => {}
            "documentclass" | "usepackage" => {
                // Consumed with their arguments; no package semantics.
                self.skip_optional_bracket(cur);
                let _ = self.capture_group_or_token(cur);
            }
            _ if name.len() > 2 && name.starts_with("if") => {
                // Unsupported conditional: keep both branches raw so
                // content survives, flag it, and tally the name.
                self.diagnostics.push(
                    Diagnostic::warning(
                        "unsupported-conditional",
                        format!("conditional \\{name} not interpreted; content kept raw"),
                    )
                    .with_span(tok.span),
                );
                self.tally_missing(name.to_string(), tok.span);
                out.push(Token::new(TokenKind::MissingMacro(name.to_string()), tok.span));
            }
            _ if name.starts_with(REF_PLACEHOLDER_PREFIX) => out.push(tok),
            _ => match self.scopes.lookup(name) {
                Some(Binding::Macro(def)) => {
                    let def = def.clone();
                    self.apply_macro(&tok, &def, cur, out);
                }
                Some(Binding::Opaque) => out.push(tok),
                None => {
                    self.diagnostics.push(
                        Diagnostic::error(
                            "undefined-macro",
                            format!("undefined control sequence \\{name}"),
                        )
                        .with_span(tok.span),
                    );
                    self.tally_missing(name.to_string(), tok.span);
                    out.push(Token::new(
                        TokenKind::MissingMacro(name.to_string()),
                        tok.span,
                    ));
                }
            },
        }
    }

    fn tally_missing(&mut self, name: String, span: Span) {
        self.missing
            .entry(name.clone())
            .and_modify(|r| r.count += 1)
            .or_insert(MissingMacroRecord {
                name,
                count: 1,
                first_span: span,
            });
    }

    fn apply_macro(
        &mut self,
        call: &Token,
        def: &MacroDefinition,
        cur: &mut Cursor<'_, '_>,
        out: &mut Vec<Token>,
    ) {
        if self.limit_hit {
            out.push(call.clone());
            return;
        }
        // Growth guard at the growth site: body substitution can
        // double the pending stream on every single call.
        if cur.pushback.len() > PUSHBACK_LIMIT {
            self.limit_hit = true;
            self.diagnostics.push(
                Diagnostic::fatal(
                    "expansion-overflow",
                    "pending expansion grew past the token volume limit",
                )
                .with_span(call.span),
            );
            out.push(call.clone());
            return;
        }
        self.expansions += 1;
        if self.expansions > self.depth_limit {
            self.limit_hit = true;
            self.diagnostics.push(
                Diagnostic::error(
                    "expansion-depth-exceeded",
                    format!(
                        "macro expansion limit of {} exceeded at \\{}",
                        self.depth_limit, def.name
                    ),
                )
                .with_span(call.span),
            );
            out.push(call.clone());
            return;
        }
        let mut args: Vec<Vec<Token>> = vec![Vec::new(); def.arity() as usize];
        // An optional default pre-fills the pattern's first slot.
        let skip = if let Some(default) = &def.opt_default {
            match self.capture_optional_bracket(cur) {
                Some(opt) => args[0] = opt,
                None => args[0] = default.clone(),
            }
            1
        } else {
            0
        };
        let mut pattern_iter = def.pattern.iter().skip(skip).peekable();
        while let Some(part) = pattern_iter.next() {
            match part {
                PatternPart::Slot(n) => {
                    let idx = (*n - 1) as usize;
                    // Delimited when a delimiter follows the slot.
                    if let Some(PatternPart::Delim(delim)) = pattern_iter.peek() {
                        let delim = (*delim).clone();
                        args[idx] = self.capture_until_delim(cur, &delim, call.span);
                        pattern_iter.next();
                        // Swallow any further consecutive delimiters.
                        while let Some(PatternPart::Delim(d)) = pattern_iter.peek() {
                            let d = (*d).clone();
                            match cur.next() {
                                Some(t) if t.kind == d => {
                                    pattern_iter.next();
                                }
                                Some(t) => {
                                    cur.push_front(t);
                                    break;
                                }
                                None => break,
                            }
                        }
                    } else {
                        args[idx] = self.capture_group_or_token(cur);
                    }
                }
                PatternPart::Delim(kind) => match cur.next() {
                    Some(t) if &t.kind == kind => {}
                    Some(t) => {
                        self.diagnostics.push(
                            Diagnostic::warning(
                                "macro-delimiter-mismatch",
                                format!("use of \\{} does not match its pattern", def.name),
                            )
                            .with_span(t.span),
                        );
                        cur.push_front(t);
                    }
                    None => {}
                },
            }
        }
        let mut replacement = Vec::new();
        for body_tok in &def.body {
            match &body_tok.kind {
                TokenKind::Parameter(i) => {
                    let idx = (*i - 1) as usize;
                    if let Some(arg) = args.get(idx) {
                        for t in arg {
                            let mut t = t.clone();
                            // Argument tokens keep their own spans;
                            // body tokens get the call site span.
                            if t.span.is_empty() {
                                t.span = call.span;
                            }
                            replacement.push(t);
                        }
                    }
                }
                _ => {
                    let mut t = body_tok.clone();
                    t.span = call.span;
                    replacement.push(t);
                }
            }
        }
        cur.push_front_all(replacement);
    }

    /// Next token with leading spaces skipped.
    fn next_nonspace(&mut self, cur: &mut Cursor<'_, '_>) -> Option<Token> {
        loop {
            let t = cur.next()?;
            if !t.is_space() {
                return Some(t);
            }
        }
    }

    /// Undelimited macro argument: next non-blank token, or a balanced
    /// group with the outer braces stripped.
    fn capture_group_or_token(&mut self, cur: &mut Cursor<'_, '_>) -> Vec<Token> {
        match self.next_nonspace(cur) {
            None => Vec::new(),
            Some(t) if t.is_begin_group() => self.capture_balanced(cur, t.span),
            Some(t) => vec![t],
        }
    }

    /// Tokens up to the matching end-group, outer braces excluded.
    fn capture_balanced(&mut self, cur: &mut Cursor<'_, '_>, open_span: Span) -> Vec<Token> {
        let mut depth = 0usize;
        let mut toks = Vec::new();
        loop {
            match cur.next() {
                None => {
                    self.diagnostics.push(
                        Diagnostic::error("unbalanced-group", "group not closed before end of input")
                            .with_span(open_span),
                    );
                    return toks;
                }
                Some(t) if t.is_begin_group() => {
                    depth += 1;
                    toks.push(t);
                }
                Some(t) if t.is_end_group() => {
                    if depth == 0 {
                        return toks;
                    }
                    depth -= 1;
                    toks.push(t);
                }
                Some(t) => toks.push(t),
            }
        }
    }

    fn capture_until_delim(
        &mut self,
        cur: &mut Cursor<'_, '_>,
        delim: &TokenKind,
        call_span: Span,
    ) -> Vec<Token> {
        let mut depth = 0usize;
        let mut toks = Vec::new();
        loop {
            match cur.next() {
                None => {
                    self.diagnostics.push(
                        Diagnostic::error(
                            "macro-delimiter-mismatch",
                            "delimited argument ran to end of input",
                        )
                        .with_span(call_span),
                    );
                    return toks;
                }
                Some(t) if depth == 0 && &t.kind == delim => return toks,
                Some(t) => {
                    if t.is_begin_group() {
                        depth += 1;
                    } else if t.is_end_group() {
                        depth = depth.saturating_sub(1);
                    }
                    toks.push(t);
                }
            }
        }
    }

    fn capture_optional_bracket(&mut self, cur: &mut Cursor<'_, '_>) -> Option<Vec<Token>> {
        let t = self.next_nonspace(cur)?;
        if !matches!(&t.kind, TokenKind::Character('[', _)) {
            cur.push_front(t);
            return None;
        }
        let mut depth = 0usize;
        let mut toks = Vec::new();
        loop {
            match cur.next() {
                None => return Some(toks),
                Some(t) if depth == 0 && matches!(&t.kind, TokenKind::Character(']', _)) => {
                    return Some(toks)
                }
                Some(t) => {
                    if t.is_begin_group() {
                        depth += 1;
                    } else if t.is_end_group() {
                        depth = depth.saturating_sub(1);
                    }
                    toks.push(t);
                }
            }
        }
    }

    fn skip_optional_bracket(&mut self, cur: &mut Cursor<'_, '_>) {
        let _ = self.capture_optional_bracket(cur);
    }

    fn capture_text_arg(&mut self, cur: &mut Cursor<'_, '_>) -> String {
        self.capture_group_or_token(cur)
            .iter()
            .map(|t| t.source_text())
            .collect()
    }

    fn exec_def(&mut self, def_tok: Token, global: bool, cur: &mut Cursor<'_, '_>) {
        let name_tok = match self.next_nonspace(cur) {
            Some(t) => t,
            None => return,
        };
        let name = match name_tok.cs_name() {
            Some(n) => n.to_string(),
            None => {
                self.diagnostics.push(
                    Diagnostic::error("malformed-definition", "\\def expects a control sequence")
                        .with_span(name_tok.span),
                );
                return;
            }
        };
        // Pattern: everything up to the body's begin-group.
        let mut pattern = Vec::new();
        let body = loop {
            match cur.next() {
                None => {
                    self.diagnostics.push(
                        Diagnostic::error("malformed-definition", "\\def without a body")
                            .with_span(def_tok.span),
                    );
                    return;
                }
                Some(t) if t.is_begin_group() => {
                    break self.capture_balanced(cur, t.span);
                }
                Some(t) => match &t.kind {
                    TokenKind::Parameter(i) => pattern.push(PatternPart::Slot(*i)),
                    kind => pattern.push(PatternPart::Delim(kind.clone())),
                },
            }
        };
        match build_definition(&name, pattern, body, MacroOrigin::Document, None) {
            Ok(def) => {
                if global {
                    self.scopes.define_global(name, Binding::Macro(def));
                } else {
                    self.scopes.define_local(name, Binding::Macro(def));
                }
            }
            Err(e) => self.diagnostics.push(
                Diagnostic::error("malformed-definition", e.to_string()).with_span(def_tok.span),
            ),
        }
    }

    fn exec_newcommand(&mut self, cmd_tok: Token, which: &str, cur: &mut Cursor<'_, '_>) {
        // Optional star variant is accepted and ignored.
        if let Some(t) = cur.next() {
            if !matches!(&t.kind, TokenKind::Character('*', _)) {
                cur.push_front(t);
            }
        }
        let name_toks = self.capture_group_or_token(cur);
        let name = match name_toks.as_slice() {
            [t] => match t.cs_name() {
                Some(n) => n.to_string(),
                None => {
                    self.diagnostics.push(
                        Diagnostic::error(
                            "malformed-definition",
                            format!("\\{which} expects a control sequence name"),
                        )
                        .with_span(t.span),
                    );
                    return;
                }
            },
            _ => {
                self.diagnostics.push(
                    Diagnostic::error(
                        "malformed-definition",
                        format!("\\{which} expects a single control sequence name"),
                    )
                    .with_span(cmd_tok.span),
                );
                return;
            }
        };
        let arity: u8 = match self.capture_optional_bracket(cur) {
            Some(toks) => {
                let text: String = toks.iter().map(|t| t.source_text()).collect();
                match text.trim().parse() {
                    Ok(n) if n <= 9 => n,
                    _ => {
                        self.diagnostics.push(
                            Diagnostic::error(
                                "malformed-definition",
                                format!("bad argument count for \\{name}"),
                            )
                            .with_span(cmd_tok.span),
                        );
                        0
                    }
                }
            }
            None => 0,
        };
        let opt_default = if arity > 0 {
            self.capture_optional_bracket(cur)
        } else {
            None
        };
        let body = self.capture_group_or_token(cur);
        let exists = self.scopes.lookup(&name).is_some();
        match (which, exists) {
            ("newcommand", true) => self.diagnostics.push(
                Diagnostic::warning(
                    "redefined-command",
                    format!("\\newcommand redefines existing \\{name}"),
                )
                .with_span(cmd_tok.span),
            ),
            ("renewcommand", false) => self.diagnostics.push(
                Diagnostic::warning(
                    "renew-undefined",
                    format!("\\renewcommand of undefined \\{name}"),
                )
                .with_span(cmd_tok.span),
            ),
            ("providecommand", true) => return,
            _ => {}
        }
        let pattern = (1..=arity).map(PatternPart::Slot).collect();
        match build_definition(&name, pattern, body, MacroOrigin::Document, opt_default) {
            Ok(def) => self.scopes.define_local(name, Binding::Macro(def)),
            Err(e) => self.diagnostics.push(
                Diagnostic::error("malformed-definition", e.to_string()).with_span(cmd_tok.span),
            ),
        }
    }

    fn exec_catcode(&mut self, cmd_tok: Token, cur: &mut Cursor<'_, '_>) {
        // \catcode`\X=NN or \catcode`X=NN
        let backquote = self.next_nonspace(cur);
        let ok = matches!(&backquote, Some(t) if matches!(&t.kind, TokenKind::Character('`', _)));
        if !ok {
            if let Some(t) = backquote {
                cur.push_front(t);
            }
            self.diagnostics.push(
                Diagnostic::warning("unsupported-catcode", "only \\catcode`<char>=<n> is supported")
                    .with_span(cmd_tok.span),
            );
            return;
        }
        let target = match cur.next() {
            Some(t) => match &t.kind {
                TokenKind::Character(c, _) => *c,
                TokenKind::ControlSequence(n) if n.chars().count() == 1 => {
                    n.chars().next().unwrap()
                }
                _ => {
                    self.diagnostics.push(
                        Diagnostic::warning("unsupported-catcode", "bad \\catcode target")
                            .with_span(t.span),
                    );
                    return;
                }
            },
            None => return,
        };
        // Equals sign then digits.
        if let Some(t) = self.next_nonspace(cur) {
            if !matches!(&t.kind, TokenKind::Character('=', _)) {
                cur.push_front(t);
            }
        }
        let mut digits = String::new();
        while let Some(t) = cur.next() {
            match &t.kind {
                TokenKind::Character(c, _) if c.is_ascii_digit() => digits.push(*c),
                // A space terminates the number and is consumed.
                TokenKind::Character(_, Catcode::Space) => break,
                _ => {
                    cur.push_front(t);
                    break;
                }
            }
        }
        let value: u8 = match digits.parse() {
            Ok(v) if v <= 15 => v,
            _ => {
                self.diagnostics.push(
                    Diagnostic::warning("unsupported-catcode", "bad \\catcode value")
                        .with_span(cmd_tok.span),
                );
                return;
            }
        };
        let cat = Catcode::from_u8(value).unwrap();
        match &mut cur.source {
            Source::Lexer(lx) => {
                let old = lx.table().get(target);
                self.scopes.note_catcode(target, old);
                lx.table_mut().set(target, cat);
            }
            Source::List(_) => {
                self.diagnostics.push(
                    Diagnostic::warning(
                        "catcode-ignored",
                        "\\catcode has no effect on a pre-lexed stream",
                    )
                    .with_span(cmd_tok.span),
                );
            }
        }
    }

    fn exec_conditional(&mut self, condition: bool, cur: &mut Cursor<'_, '_>) {
        if condition {
            self.cond_stack.push(());
        } else {
            self.skip_conditional_branch(cur, true);
        }
    }

    /// Skips tokens up to the conditional's `\fi`. With
    /// `stop_at_else`, an `\else` at the same nesting level ends the
    /// skip and activates the alternative branch.
    fn skip_conditional_branch(&mut self, cur: &mut Cursor<'_, '_>, stop_at_else: bool) {
        let mut depth = 0usize;
        while let Some(t) = cur.next() {
            if let Some(name) = t.cs_name() {
                if name.len() > 2 && name.starts_with("if") || name == "ifx" || name == "ifmmode" {
                    depth += 1;
                } else if name == "fi" {
                    if depth == 0 {
                        return;
                    }
                    depth -= 1;
                } else if name == "else" && stop_at_else && depth == 0 {
                    self.cond_stack.push(());
                    return;
                }
            }
        }
        self.diagnostics.push(Diagnostic::warning(
            "stray-conditional",
            "conditional not closed by \\fi",
        ));
    }

    fn tokens_ifx_equal(&self, a: &Token, b: &Token) -> bool {
        match (&a.kind, &b.kind) {
            (TokenKind::ControlSequence(na), TokenKind::ControlSequence(nb)) => {
                match (self.scopes.lookup(na), self.scopes.lookup(nb)) {
                    (None, None) => true,
                    (Some(Binding::Opaque), Some(Binding::Opaque)) => na == nb,
                    (Some(Binding::Macro(da)), Some(Binding::Macro(db))) => {
                        da.pattern == db.pattern
                            && body_kinds(&da.body) == body_kinds(&db.body)
                    }
                    _ => false,
                }
            }
            (ka, kb) => ka == kb,
        }
    }

    fn resolve_refs(&mut self, tokens: Vec<Token>) -> Vec<Token> {
        let label_index: HashMap<&str, usize> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i + 1))
            .collect();
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let key = tok
                .cs_name()
                .and_then(|n| n.strip_prefix(REF_PLACEHOLDER_PREFIX))
                .map(str::to_string);
            match key {
                Some(key) => {
                    let text = match label_index.get(key.as_str()) {
                        Some(n) => n.to_string(),
                        None => {
                            self.diagnostics.push(
                                Diagnostic::warning(
                                    "undefined-reference",
                                    format!("reference to undefined label `{key}`"),
                                )
                                .with_span(tok.span),
                            );
                            "?".to_string()
                        }
                    };
                    for c in text.chars() {
                        out.push(Token::character(c, Catcode::Other, tok.span));
                    }
                }
                None => out.push(tok),
            }
        }
        out
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

fn body_kinds(body: &[Token]) -> Vec<&TokenKind> {
    body.iter().map(|t| &t.kind).collect()
}

fn build_definition(
    name: &str,
    pattern: Vec<PatternPart>,
    body: Vec<Token>,
    origin: MacroOrigin,
    opt_default: Option<Vec<Token>>,
) -> Result<MacroDefinition, DefineError> {
    let mut expected = 1u8;
    for part in &pattern {
        if let PatternPart::Slot(n) = part {
            if *n != expected {
                return Err(DefineError::MalformedPattern(format!(
                    "parameter #{n} out of order in \\{name}"
                )));
            }
            expected += 1;
        }
    }
    let arity = expected - 1;
    for tok in &body {
        if let TokenKind::Parameter(i) = &tok.kind {
            if *i > arity {
                return Err(DefineError::MalformedPattern(format!(
                    "body of \\{name} references #{i} beyond arity {arity}"
                )));
            }
        }
    }
    Ok(MacroDefinition {
        name: name.to_string(),
        pattern,
        body,
        long: false,
        origin,
        opt_default,
    })
}

/// Control sequence names from the binding manifest asset. A line is
/// a comment when `#` is followed by more text; a bare `#` is the
/// binding for the `\#` escape.
pub fn manifest_names() -> impl Iterator<Item = &'static str> {
    BINDING_MANIFEST
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !(l.starts_with('#') && l.len() > 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catcode::CatcodeTable;
    use crate::tokenizer::tokenize;

    fn expand_str(input: &str) -> ExpandOutcome {
        let (toks, _) = tokenize(input, CatcodeTable::default_catcodes());
        Engine::with_builtins().expand(toks)
    }

    fn text_of(tokens: &[Token]) -> String {
        tokens.iter().map(|t| t.source_text()).collect()
    }

    #[test]
    fn direct_substitution() {
        let out = expand_str("\\def\\x{y}\\x");
        assert_eq!(text_of(&out.tokens), "y");
        assert!(out.missing.is_empty());
    }

    #[test]
    fn two_parameter_macro() {
        let out = expand_str("\\def\\pair#1#2{(#1,#2)}\\pair ab");
        assert_eq!(text_of(&out.tokens), "(a,b)");
    }

    #[test]
    fn newcommand_and_use() {
        let out = expand_str("\\newcommand{\\v}{42} \\v");
        assert_eq!(text_of(&out.tokens).trim(), "42");
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn newcommand_with_args_and_optional_default() {
        let out = expand_str("\\newcommand{\\greet}[2][Hi]{#1 #2}\\greet{X}\\greet[Yo]{Z}");
        assert_eq!(text_of(&out.tokens), "Hi XYo Z");
    }

    #[test]
    fn definition_scoped_to_group() {
        let out = expand_str("{\\def\\x{y}\\x}\\x");
        assert_eq!(out.missing.len(), 1);
        assert_eq!(out.missing[0].name, "x");
        assert_eq!(out.missing[0].count, 1);
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.code == "undefined-macro"));
    }

    #[test]
    fn global_definition_survives_group() {
        let out = expand_str("{\\global\\def\\x{y}}\\x");
        assert_eq!(out.missing.len(), 0);
        assert_eq!(text_of(&out.tokens), "{}y");
    }

    #[test]
    fn runaway_recursion_hits_limit() {
        let (toks, _) = tokenize("\\def\\loop{\\loop}\\loop", CatcodeTable::default_catcodes());
        let mut engine = Engine::with_builtins();
        engine.depth_limit = 50;
        let out = engine.expand(toks);
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.code == "expansion-depth-exceeded"));
    }

    #[test]
    fn unknown_macro_becomes_marker_and_record() {
        let out = expand_str("\\unknowncmd x");
        assert_eq!(out.missing.len(), 1);
        assert_eq!(out.missing[0].name, "unknowncmd");
        assert_eq!(out.missing[0].count, 1);
        let markers = out
            .tokens
            .iter()
            .filter(|t| matches!(t.kind, TokenKind::MissingMacro(_)))
            .count();
        assert_eq!(markers, 1);
        // Expansion continues with the rest of the input.
        assert!(text_of(&out.tokens).ends_with('x'));
    }

    #[test]
    fn tally_exactness() {
        let out = expand_str("\\foo\\foo\\baz x\\foo");
        let sum: u64 = out.missing.iter().map(|r| r.count).sum();
        let markers = out
            .tokens
            .iter()
            .filter(|t| matches!(t.kind, TokenKind::MissingMacro(_)))
            .count() as u64;
        assert_eq!(sum, markers);
        assert_eq!(sum, 4);
        let foo = out.missing.iter().find(|r| r.name == "foo").unwrap();
        assert_eq!(foo.count, 3);
    }

    #[test]
    fn idempotent_at_fixpoint() {
        let out = expand_str("\\def\\x{ab}\\x $y$ \\section{T} \\foo");
        let mut second = Engine::with_builtins();
        let re = second.expand(out.tokens.clone());
        assert_eq!(re.tokens, out.tokens);
    }

    #[test]
    fn builtin_lookup() {
        let engine = Engine::with_builtins();
        assert!(matches!(engine.lookup("section"), Some(Binding::Opaque)));
        assert!(matches!(engine.lookup("frac"), Some(Binding::Opaque)));
        assert!(engine.lookup("tikzpicture").is_none());
    }

    #[test]
    fn manifest_covers_documented_subset() {
        // The manifest file is the oracle for the binding count.
        let names: Vec<&str> = manifest_names().collect();
        for required in [
            "section", "subsection", "paragraph", "emph", "textbf", "textit", "title",
            "author", "institute", "maketitle", "frac", "sqrt", "left", "right", "alpha",
            "omega", "times", "cdot", "sum", "int", "begin", "end", "item",
        ] {
            assert!(names.contains(&required), "manifest missing {required}");
        }
        assert!(names.len() >= 200, "manifest unexpectedly small: {}", names.len());
        assert!(names.contains(&"#"), "escape binding \\# missing");
    }

    #[test]
    fn ifmmode_branches() {
        let out = expand_str("$\\ifmmode m\\else t\\fi$ \\ifmmode m\\else t\\fi");
        assert_eq!(text_of(&out.tokens), "$m$ t");
    }

    #[test]
    fn ifx_on_macro_equality() {
        let out = expand_str("\\def\\a{q}\\def\\b{q}\\def\\c{r}\\ifx\\a\\b1\\else 0\\fi\\ifx\\a\\c 1\\else 0\\fi");
        assert_eq!(text_of(&out.tokens), "10");
    }

    #[test]
    fn unsupported_conditional_keeps_content() {
        let out = expand_str("\\ifdim x\\else y\\fi");
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.code == "unsupported-conditional"));
        let t = text_of(&out.tokens);
        assert!(t.contains('x') && t.contains('y'));
    }

    #[test]
    fn label_ref_two_pass() {
        // Forward reference resolves via the collect-then-substitute pass.
        let out = expand_str("see \\ref{late}. \\label{early}\\label{late}done");
        assert_eq!(text_of(&out.tokens), "see 2. done");
        let out = expand_str("\\ref{nowhere}");
        assert_eq!(text_of(&out.tokens), "?");
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.code == "undefined-reference"));
    }

    #[test]
    fn unbalanced_groups_detected() {
        let out = expand_str("{x");
        assert!(out.diagnostics.iter().any(|d| d.code == "unbalanced-group"));
        let out = expand_str("x}");
        assert!(out.diagnostics.iter().any(|d| d.code == "unbalanced-group"));
        let out = expand_str("{x}");
        assert!(!out.diagnostics.iter().any(|d| d.code == "unbalanced-group"));
    }

    #[test]
    fn redefinition_warns_but_proceeds() {
        let out = expand_str("\\newcommand{\\x}{1}\\newcommand{\\x}{2}\\x");
        assert!(out.diagnostics.iter().any(|d| d.code == "redefined-command"));
        assert_eq!(text_of(&out.tokens), "2");
    }

    #[test]
    fn delimited_parameters() {
        let out = expand_str("\\def\\upto#1.{[#1]}\\upto abc.x");
        assert_eq!(text_of(&out.tokens), "[abc]x");
    }

    #[test]
    fn malformed_pattern_rejected() {
        let mut engine = Engine::new();
        let err = engine.define(
            "bad",
            vec![PatternPart::Slot(2)],
            vec![],
            false,
        );
        assert!(matches!(err, Err(DefineError::MalformedPattern(_))));
    }

    #[test]
    fn catcode_applies_on_live_lexer() {
        use crate::tokenizer::Lexer;
        let input = "\\catcode`\\@=11 \\def\\a@b{ok}\\a@b";
        let mut lexer = Lexer::new(input, CatcodeTable::default_catcodes());
        let mut engine = Engine::with_builtins();
        let out = engine.expand_lexer(&mut lexer);
        assert_eq!(text_of(&out.tokens), "ok");
    }
}
