//! Math expression parsing: token list → `MathExpr` tree.
//!
//! The parser is total. Anything it cannot interpret degrades to atom
//! runs or text leaves with a diagnostic, never a failure, so the
//! authored formula always reaches the emitter.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::catcode::Catcode;
use crate::diagnostics::Diagnostic;
use crate::token::{Token, TokenKind};

/// Classification table asset: `input-form<TAB>codepoint<TAB>class`.
pub const CLASSIFICATION_TABLE: &str = include_str!("../assets/math_classification.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomClass {
    Identifier,
    Number,
    Operator,
}

impl AtomClass {
    fn parse(s: &str) -> Option<AtomClass> {
        match s {
            "identifier" => Some(AtomClass::Identifier),
            "number" => Some(AtomClass::Number),
            "operator" => Some(AtomClass::Operator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MathExpr {
    Atom {
        text: String,
        class: AtomClass,
    },
    Row(Vec<MathExpr>),
    Script {
        base: Box<MathExpr>,
        sub: Option<Box<MathExpr>>,
        sup: Option<Box<MathExpr>>,
    },
    Fraction {
        numerator: Box<MathExpr>,
        denominator: Box<MathExpr>,
        line: bool,
    },
    Radical {
        radicand: Box<MathExpr>,
        index: Option<Box<MathExpr>>,
    },
    /// Empty fence strings are explicit invisible fences (`\left.`).
    Fenced {
        open: String,
        close: String,
        body: Box<MathExpr>,
    },
    BigOperator {
        op: Box<MathExpr>,
        under: Option<Box<MathExpr>>,
        over: Option<Box<MathExpr>>,
        limits: bool,
    },
    Accent {
        base: Box<MathExpr>,
        mark: String,
        over: bool,
    },
    Array {
        rows: Vec<Vec<MathExpr>>,
    },
    TextInMath(String),
    /// Horizontal spacing, width in `em` units formatted as emitted.
    Space(&'static str),
}

impl MathExpr {
    pub fn atom(text: impl Into<String>, class: AtomClass) -> MathExpr {
        MathExpr::Atom {
            text: text.into(),
            class,
        }
    }
}

struct ClassTable {
    map: HashMap<String, (String, AtomClass)>,
}

fn class_table() -> &'static ClassTable {
    static TABLE: OnceLock<ClassTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut map = HashMap::new();
        for line in CLASSIFICATION_TABLE.lines() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(form), Some(cp), Some(class)) =
                (parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            let Ok(cp) = u32::from_str_radix(cp, 16) else {
                continue;
            };
            let Some(ch) = char::from_u32(cp) else {
                continue;
            };
            let Some(class) = AtomClass::parse(class) else {
                continue;
            };
            map.insert(form.to_string(), (ch.to_string(), class));
        }
        ClassTable { map }
    })
}

/// Looks up a character in the shipped classification table.
fn lookup_char(c: char) -> Option<(String, AtomClass)> {
    class_table().map.get(&c.to_string()).cloned()
}

/// Looks up a control sequence (`name` without the backslash).
fn lookup_command(name: &str) -> Option<(String, AtomClass)> {
    class_table().map.get(&format!("\\{name}")).cloned()
}

/// Classifies one token into an atom. Unknown math commands classify
/// as identifiers and report a diagnostic through the parser.
pub fn classify_atom(token: &Token) -> MathExpr {
    match &token.kind {
        TokenKind::Character(c, Catcode::Letter) => {
            MathExpr::atom(c.to_string(), AtomClass::Identifier)
        }
        TokenKind::Character(c, _) if c.is_ascii_digit() => {
            MathExpr::atom(c.to_string(), AtomClass::Number)
        }
        TokenKind::Character(c, _) => match lookup_char(*c) {
            Some((text, class)) => MathExpr::atom(text, class),
            // Ambiguous characters default to operator.
            None => MathExpr::atom(c.to_string(), AtomClass::Operator),
        },
        TokenKind::ControlSequence(name) => match lookup_command(name) {
            Some((text, class)) => MathExpr::atom(text, class),
            None => MathExpr::atom(name.clone(), AtomClass::Identifier),
        },
        TokenKind::Parameter(i) => MathExpr::atom(format!("#{i}"), AtomClass::Operator),
        TokenKind::MissingMacro(name) => MathExpr::TextInMath(format!("\\{name}")),
    }
}

const SUM_CLASS: [&str; 14] = [
    "sum", "prod", "coprod", "bigcup", "bigcap", "bigoplus", "bigotimes", "bigodot",
    "biguplus", "bigvee", "bigwedge", "lim", "limsup", "liminf",
];
const INT_CLASS: [&str; 4] = ["int", "iint", "iiint", "oint"];
const NAMED_LIMIT_OPS: [&str; 9] = [
    "lim", "limsup", "liminf", "max", "min", "sup", "inf", "det", "Pr",
];
const NAMED_FUNCTIONS: [&str; 24] = [
    "sin", "cos", "tan", "cot", "sec", "csc", "arcsin", "arccos", "arctan", "sinh",
    "cosh", "tanh", "coth", "log", "ln", "lg", "exp", "dim", "ker", "deg", "gcd",
    "hom", "arg", "Pr",
];
const ACCENTS_OVER: [(&str, &str); 10] = [
    ("hat", "^"),
    ("widehat", "^"),
    ("bar", "\u{00AF}"),
    ("overline", "\u{00AF}"),
    ("vec", "\u{2192}"),
    ("tilde", "~"),
    ("widetilde", "~"),
    ("dot", "\u{02D9}"),
    ("ddot", "\u{00A8}"),
    ("overrightarrow", "\u{2192}"),
];
const STYLE_IDENT_COMMANDS: [&str; 8] = [
    "mathrm", "mathbf", "mathit", "mathsf", "mathtt", "mathbb", "mathcal", "mathfrak",
];
const MATRIX_ENVS: [(&str, &str, &str); 8] = [
    ("matrix", "", ""),
    ("smallmatrix", "", ""),
    ("pmatrix", "(", ")"),
    ("bmatrix", "[", "]"),
    ("Bmatrix", "{", "}"),
    ("vmatrix", "|", "|"),
    ("Vmatrix", "\u{2016}", "\u{2016}"),
    ("aligned", "", ""),
];

/// Parses a math leaf's token list. Total: always returns a tree.
pub fn parse_math(tokens: &[Token], display: bool) -> (MathExpr, Vec<Diagnostic>) {
    let mut parser = MathParser {
        toks: tokens,
        pos: 0,
        display,
        diagnostics: Vec::new(),
    };
    let items = parser.parse_row(&[]);
    let expr = row_or_single(items);
    (expr, parser.diagnostics)
}

/// Parses a matrix-like environment body (already split from its
/// `\begin`/`\end` wrapper) into an array, with fences per the
/// environment name.
pub fn parse_array(env: &str, body: &[Token], display: bool) -> (MathExpr, Vec<Diagnostic>) {
    let mut parser = MathParser {
        toks: body,
        pos: 0,
        display,
        diagnostics: Vec::new(),
    };
    let expr = parser.finish_array(env);
    (expr, parser.diagnostics)
}

fn row_or_single(mut items: Vec<MathExpr>) -> MathExpr {
    if items.len() == 1 {
        items.pop().unwrap()
    } else {
        MathExpr::Row(items)
    }
}

struct MathParser<'t> {
    toks: &'t [Token],
    pos: usize,
    display: bool,
    diagnostics: Vec<Diagnostic>,
}

impl<'t> MathParser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.toks[self.pos..].iter().find(|t| !t.is_space())
    }

    fn next(&mut self) -> Option<&'t Token> {
        while let Some(t) = self.toks.get(self.pos) {
            self.pos += 1;
            if !t.is_space() {
                return Some(t);
            }
        }
        None
    }

    fn at_stop(&self, stops: &[&str]) -> bool {
        match self.peek() {
            None => true,
            Some(t) => match &t.kind {
                TokenKind::Character(_, Catcode::EndGroup) => true,
                TokenKind::ControlSequence(n) => stops.contains(&n.as_str()),
                TokenKind::Character(c, Catcode::Alignment) => {
                    let _ = c;
                    stops.contains(&"&")
                }
                _ => false,
            },
        }
    }

    /// Parses items until end of input, an end-group, or one of the
    /// named stop control sequences (left unconsumed).
    fn parse_row(&mut self, stops: &[&str]) -> Vec<MathExpr> {
        let mut items = Vec::new();
        loop {
            if self.at_stop(stops) {
                // End-group at row level outside a group: consume and
                // keep going, with a diagnostic.
                if let Some(t) = self.peek() {
                    if t.is_end_group() && !stops.contains(&"}") {
                        let span = t.span;
                        self.next();
                        self.diagnostics.push(
                            Diagnostic::warning("stray-end-group", "unmatched `}` in math")
                                .with_span(span),
                        );
                        continue;
                    }
                }
                break;
            }
            if let Some(item) = self.parse_item(stops) {
                items.push(item);
            }
        }
        items
    }

    /// One nucleus plus any attached scripts.
    fn parse_item(&mut self, stops: &[&str]) -> Option<MathExpr> {
        let nucleus = self.parse_nucleus(stops)?;
        Some(self.attach_scripts(nucleus))
    }

    fn attach_scripts(&mut self, base: MathExpr) -> MathExpr {
        let mut sub: Option<MathExpr> = None;
        let mut sup: Option<MathExpr> = None;
        loop {
            match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Character(_, Catcode::Superscript)) => {
                    let span = self.peek().unwrap().span;
                    self.next();
                    let arg = self.parse_argument();
                    if sup.is_some() {
                        self.diagnostics.push(
                            Diagnostic::warning("double-script", "double superscript")
                                .with_span(span),
                        );
                    }
                    sup = Some(arg);
                }
                Some(TokenKind::Character(_, Catcode::Subscript)) => {
                    let span = self.peek().unwrap().span;
                    self.next();
                    let arg = self.parse_argument();
                    if sub.is_some() {
                        self.diagnostics.push(
                            Diagnostic::warning("double-script", "double subscript")
                                .with_span(span),
                        );
                    }
                    sub = Some(arg);
                }
                Some(TokenKind::Character('\'', _)) => {
                    // Primes accumulate into one superscript.
                    let mut primes = String::new();
                    while matches!(
                        self.peek().map(|t| &t.kind),
                        Some(TokenKind::Character('\'', _))
                    ) {
                        self.next();
                        primes.push('\u{2032}');
                    }
                    sup = Some(MathExpr::atom(primes, AtomClass::Operator));
                }
                _ => break,
            }
        }
        if sub.is_none() && sup.is_none() {
            return base;
        }
        // Scripts on limit-style big operators render under/over.
        if let MathExpr::BigOperator {
            op,
            under: None,
            over: None,
            limits: true,
        } = base
        {
            return MathExpr::BigOperator {
                op,
                under: sub.map(Box::new),
                over: sup.map(Box::new),
                limits: true,
            };
        }
        MathExpr::Script {
            base: Box::new(base),
            sub: sub.map(Box::new),
            sup: sup.map(Box::new),
        }
    }

    /// A single argument: one token's worth of structure, or a braced
    /// group.
    fn parse_argument(&mut self) -> MathExpr {
        match self.peek() {
            None => MathExpr::Row(Vec::new()),
            Some(t) if t.is_begin_group() => {
                self.next();
                let items = self.parse_row(&["}"]);
                self.consume_end_group();
                row_or_single(items)
            }
            _ => self
                .parse_nucleus(&[])
                .unwrap_or(MathExpr::Row(Vec::new())),
        }
    }

    fn consume_end_group(&mut self) {
        match self.peek() {
            Some(t) if t.is_end_group() => {
                self.next();
            }
            _ => self.diagnostics.push(Diagnostic::warning(
                "unbalanced-group",
                "group not closed in math",
            )),
        }
    }

    fn parse_nucleus(&mut self, stops: &[&str]) -> Option<MathExpr> {
        let tok = self.next()?;
        match &tok.kind {
            TokenKind::Character(_, Catcode::BeginGroup) => {
                let items = self.parse_row(&["}"]);
                self.consume_end_group();
                Some(row_or_single(items))
            }
            TokenKind::Character(_, Catcode::EndGroup) => {
                self.diagnostics.push(
                    Diagnostic::warning("stray-end-group", "unmatched `}` in math")
                        .with_span(tok.span),
                );
                None
            }
            TokenKind::Character(c, _) if c.is_ascii_digit() => Some(self.parse_number(*c)),
            TokenKind::Character(_, Catcode::Alignment) => {
                self.diagnostics.push(
                    Diagnostic::warning("stray-alignment", "`&` outside an array")
                        .with_span(tok.span),
                );
                Some(MathExpr::atom("&", AtomClass::Operator))
            }
            TokenKind::Character(_, _) => Some(classify_atom(tok)),
            TokenKind::Parameter(_) => Some(classify_atom(tok)),
            TokenKind::MissingMacro(name) => Some(MathExpr::TextInMath(format!("\\{name}"))),
            TokenKind::ControlSequence(name) => self.parse_command(tok, name, stops),
        }
    }

    /// Digit run, with decimal point, into one number atom.
    fn parse_number(&mut self, first: char) -> MathExpr {
        let mut text = first.to_string();
        loop {
            match self.toks.get(self.pos).map(|t| &t.kind) {
                Some(TokenKind::Character(c, _)) if c.is_ascii_digit() => {
                    text.push(*c);
                    self.pos += 1;
                }
                Some(TokenKind::Character('.', _)) => {
                    // Only when a digit follows: `1.5` yes, `1.` no.
                    if let Some(TokenKind::Character(d, _)) =
                        self.toks.get(self.pos + 1).map(|t| &t.kind)
                    {
                        if d.is_ascii_digit() && !text.contains('.') {
                            text.push('.');
                            self.pos += 1;
                            continue;
                        }
                    }
                    break;
                }
                _ => break,
            }
        }
        MathExpr::atom(text, AtomClass::Number)
    }

    fn parse_command(
        &mut self,
        tok: &Token,
        name: &str,
        stops: &[&str],
    ) -> Option<MathExpr> {
        match name {
            "frac" | "dfrac" | "tfrac" => {
                let numerator = self.parse_argument();
                let denominator = self.parse_argument();
                Some(MathExpr::Fraction {
                    numerator: Box::new(numerator),
                    denominator: Box::new(denominator),
                    line: true,
                })
            }
            "binom" => {
                let top = self.parse_argument();
                let bottom = self.parse_argument();
                Some(MathExpr::Fenced {
                    open: "(".to_string(),
                    close: ")".to_string(),
                    body: Box::new(MathExpr::Fraction {
                        numerator: Box::new(top),
                        denominator: Box::new(bottom),
                        line: false,
                    }),
                })
            }
            "sqrt" => {
                let index = self.parse_optional_bracket();
                let radicand = self.parse_argument();
                Some(MathExpr::Radical {
                    radicand: Box::new(radicand),
                    index: index.map(Box::new),
                })
            }
            "left" => {
                let open = self.parse_fence_delimiter();
                let items = self.parse_row(&["right"]);
                let close = match self.peek() {
                    Some(t) if t.is_control("right") => {
                        self.next();
                        self.parse_fence_delimiter()
                    }
                    _ => {
                        self.diagnostics.push(
                            Diagnostic::warning("unmatched-left", "\\left without \\right")
                                .with_span(tok.span),
                        );
                        String::new()
                    }
                };
                Some(MathExpr::Fenced {
                    open,
                    close,
                    body: Box::new(row_or_single(items)),
                })
            }
            "right" => {
                self.diagnostics.push(
                    Diagnostic::warning("unmatched-right", "\\right without \\left")
                        .with_span(tok.span),
                );
                let fence = self.parse_fence_delimiter();
                Some(MathExpr::atom(fence, AtomClass::Operator))
            }
            "text" => {
                let text = self.argument_text();
                Some(MathExpr::TextInMath(text))
            }
            "operatorname" => {
                let text = self.argument_text();
                Some(MathExpr::atom(normalize_math_text(&text), AtomClass::Identifier))
            }
            _ if STYLE_IDENT_COMMANDS.contains(&name) => {
                let text = self.argument_text();
                Some(MathExpr::atom(normalize_math_text(&text), AtomClass::Identifier))
            }
            "," => Some(MathExpr::Space("0.167em")),
            ":" => Some(MathExpr::Space("0.222em")),
            ";" => Some(MathExpr::Space("0.278em")),
            "!" => None,
            " " => Some(MathExpr::Space("0.333em")),
            "quad" => Some(MathExpr::Space("1em")),
            "qquad" => Some(MathExpr::Space("2em")),
            "begin" => self.parse_environment(tok),
            "end" => {
                let env = self.argument_text();
                self.diagnostics.push(
                    Diagnostic::warning(
                        "environment-mismatch",
                        format!("stray \\end{{{env}}} in math"),
                    )
                    .with_span(tok.span),
                );
                None
            }
            "\\" => {
                if !stops.contains(&"\\") {
                    self.diagnostics.push(
                        Diagnostic::warning("stray-row-break", "`\\\\` outside an array")
                            .with_span(tok.span),
                    );
                }
                None
            }
            _ if SUM_CLASS.contains(&name) || INT_CLASS.contains(&name) => {
                let limits = self.display && SUM_CLASS.contains(&name);
                let op = if NAMED_LIMIT_OPS.contains(&name) {
                    MathExpr::atom(name, AtomClass::Identifier)
                } else {
                    // Symbol from the table; sum-class names are all in
                    // the classification asset.
                    classify_atom(tok)
                };
                Some(MathExpr::BigOperator {
                    op: Box::new(op),
                    under: None,
                    over: None,
                    limits,
                })
            }
            _ if NAMED_LIMIT_OPS.contains(&name) => {
                let limits = self.display;
                Some(MathExpr::BigOperator {
                    op: Box::new(MathExpr::atom(name, AtomClass::Identifier)),
                    under: None,
                    over: None,
                    limits,
                })
            }
            _ if NAMED_FUNCTIONS.contains(&name) => {
                Some(MathExpr::atom(name, AtomClass::Identifier))
            }
            _ if ACCENTS_OVER.iter().any(|(n, _)| *n == name) => {
                let mark = ACCENTS_OVER
                    .iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1
                    .to_string();
                let base = self.parse_argument();
                Some(MathExpr::Accent {
                    base: Box::new(base),
                    mark,
                    over: true,
                })
            }
            "underline" => {
                let base = self.parse_argument();
                Some(MathExpr::Accent {
                    base: Box::new(base),
                    mark: "\u{005F}".to_string(),
                    over: false,
                })
            }
            _ => match lookup_command(name) {
                Some(_) => Some(classify_atom(tok)),
                None => {
                    self.diagnostics.push(
                        Diagnostic::warning(
                            "unknown-math-command",
                            format!("unknown math command \\{name}"),
                        )
                        .with_span(tok.span),
                    );
                    Some(MathExpr::atom(name, AtomClass::Identifier))
                }
            },
        }
    }

    fn parse_optional_bracket(&mut self) -> Option<MathExpr> {
        match self.peek() {
            Some(t) if matches!(&t.kind, TokenKind::Character('[', _)) => {
                self.next();
                let items = self.parse_row(&["]"]);
                // The `]` stop only catches `\]`; a plain `]` char ends
                // the scan below.
                let mut items = items;
                loop {
                    match self.peek() {
                        Some(t) if matches!(&t.kind, TokenKind::Character(']', _)) => {
                            self.next();
                            break;
                        }
                        None => break,
                        _ => {
                            if let Some(item) = self.parse_item(&[]) {
                                items.push(item);
                            } else {
                                break;
                            }
                        }
                    }
                }
                Some(row_or_single(items))
            }
            _ => None,
        }
    }

    fn parse_fence_delimiter(&mut self) -> String {
        match self.next() {
            None => String::new(),
            Some(t) => match &t.kind {
                TokenKind::Character('.', _) => String::new(),
                TokenKind::Character(c, _) => c.to_string(),
                TokenKind::ControlSequence(n) => match lookup_command(n) {
                    Some((text, _)) => text,
                    None => {
                        self.diagnostics.push(
                            Diagnostic::warning(
                                "unknown-math-command",
                                format!("unknown fence \\{n}"),
                            )
                            .with_span(t.span),
                        );
                        String::new()
                    }
                },
                _ => String::new(),
            },
        }
    }

    fn argument_text(&mut self) -> String {
        match self.peek() {
            None => String::new(),
            Some(t) if t.is_begin_group() => {
                self.next();
                let mut depth = 0usize;
                let mut text = String::new();
                while let Some(t) = self.toks.get(self.pos) {
                    self.pos += 1;
                    if t.is_begin_group() {
                        depth += 1;
                    } else if t.is_end_group() {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                    } else {
                        text.push_str(&t.source_text());
                    }
                }
                text
            }
            _ => self
                .next()
                .map(|t| t.source_text())
                .unwrap_or_default(),
        }
    }

    fn parse_environment(&mut self, begin_tok: &Token) -> Option<MathExpr> {
        let env = self.argument_text();
        let body = self.collect_environment_body(&env);
        let base = env.trim_end_matches('*');
        if MATRIX_ENVS.iter().any(|(n, _, _)| *n == base)
            || base == "array"
            || base == "cases"
            || base == "split"
        {
            let mut sub = MathParser {
                toks: &body,
                pos: 0,
                display: self.display,
                diagnostics: Vec::new(),
            };
            let expr = sub.finish_array(base);
            self.diagnostics.append(&mut sub.diagnostics);
            Some(expr)
        } else {
            self.diagnostics.push(
                Diagnostic::warning(
                    "unknown-environment",
                    format!("environment `{env}` not supported in math"),
                )
                .with_span(begin_tok.span),
            );
            let text: String = body.iter().map(|t| t.source_text()).collect();
            Some(MathExpr::TextInMath(text))
        }
    }

    fn collect_environment_body(&mut self, env: &str) -> Vec<Token> {
        let mut depth = 0usize;
        let mut out = Vec::new();
        while let Some(t) = self.toks.get(self.pos).cloned() {
            self.pos += 1;
            if t.is_control("begin") {
                let name = self.argument_text();
                if name == env {
                    depth += 1;
                }
                out.push(t);
                for c in name.chars() {
                    out.push(Token::character(c, Catcode::Letter, crate::span::Span::new(0, 0)));
                }
                continue;
            }
            if t.is_control("end") {
                let name = self.argument_text();
                if name == env {
                    if depth == 0 {
                        return out;
                    }
                    depth -= 1;
                }
                out.push(t);
                continue;
            }
            out.push(t);
        }
        self.diagnostics.push(Diagnostic::warning(
            "unterminated-environment",
            format!("math environment `{env}` never closed"),
        ));
        out
    }

    /// Splits collected environment body tokens into an array and
    /// wraps it in the environment's fences.
    fn finish_array(&mut self, env: &str) -> MathExpr {
        // `array` and `cases` take a column-spec group first.
        if env == "array" {
            let _ = self.argument_text();
        }
        let body = &self.toks[self.pos..];
        self.pos = self.toks.len();
        let mut rows: Vec<Vec<MathExpr>> = Vec::new();
        for row_toks in split_on_control(body, "\\") {
            if row_toks.iter().all(|t| t.is_space()) {
                continue;
            }
            let mut cells = Vec::new();
            for cell_toks in split_on_alignment(row_toks) {
                let mut sub = MathParser {
                    toks: cell_toks,
                    pos: 0,
                    display: self.display,
                    diagnostics: Vec::new(),
                };
                let items = sub.parse_row(&["\\", "&"]);
                self.diagnostics.append(&mut sub.diagnostics);
                cells.push(row_or_single(items));
            }
            rows.push(cells);
        }
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ragged = false;
        for row in &mut rows {
            while row.len() < width {
                ragged = true;
                row.push(MathExpr::Row(Vec::new()));
            }
        }
        if ragged {
            self.diagnostics.push(Diagnostic::warning(
                "ragged-rows",
                format!("array `{env}` has ragged rows; padded with empty cells"),
            ));
        }
        let array = MathExpr::Array { rows };
        let (open, close) = match MATRIX_ENVS.iter().find(|(n, _, _)| *n == env) {
            Some((_, o, c)) => (o.to_string(), c.to_string()),
            None if env == "cases" => ("{".to_string(), String::new()),
            None => (String::new(), String::new()),
        };
        if open.is_empty() && close.is_empty() {
            array
        } else {
            MathExpr::Fenced {
                open,
                close,
                body: Box::new(array),
            }
        }
    }
}

fn normalize_math_text(s: &str) -> String {
    s.trim().to_string()
}

fn split_on_control<'a>(tokens: &'a [Token], name: &str) -> Vec<&'a [Token]> {
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        if t.is_begin_group() {
            depth += 1;
        } else if t.is_end_group() {
            depth = depth.saturating_sub(1);
        } else if depth == 0 && t.is_control(name) {
            parts.push(&tokens[start..i]);
            start = i + 1;
        }
    }
    parts.push(&tokens[start..]);
    parts
}

fn split_on_alignment(tokens: &[Token]) -> Vec<&[Token]> {
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        if t.is_begin_group() {
            depth += 1;
        } else if t.is_end_group() {
            depth = depth.saturating_sub(1);
        } else if depth == 0 && t.is_char_cat(Catcode::Alignment) {
            parts.push(&tokens[start..i]);
            start = i + 1;
        }
    }
    parts.push(&tokens[start..]);
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catcode::CatcodeTable;
    use crate::tokenizer::tokenize;

    fn parse(input: &str, display: bool) -> (MathExpr, Vec<Diagnostic>) {
        let (toks, _) = tokenize(input, CatcodeTable::default_catcodes());
        parse_math(&toks, display)
    }

    fn atom(text: &str, class: AtomClass) -> MathExpr {
        MathExpr::atom(text, class)
    }

    #[test]
    fn superscript() {
        let (expr, _) = parse("a^2", false);
        assert_eq!(
            expr,
            MathExpr::Script {
                base: Box::new(atom("a", AtomClass::Identifier)),
                sub: None,
                sup: Some(Box::new(atom("2", AtomClass::Number))),
            }
        );
    }

    #[test]
    fn fraction() {
        let (expr, _) = parse("\\frac{1}{2}", false);
        assert_eq!(
            expr,
            MathExpr::Fraction {
                numerator: Box::new(atom("1", AtomClass::Number)),
                denominator: Box::new(atom("2", AtomClass::Number)),
                line: true,
            }
        );
    }

    #[test]
    fn fenced_row() {
        let (expr, _) = parse("\\left( x+y \\right)", false);
        assert_eq!(
            expr,
            MathExpr::Fenced {
                open: "(".to_string(),
                close: ")".to_string(),
                body: Box::new(MathExpr::Row(vec![
                    atom("x", AtomClass::Identifier),
                    atom("+", AtomClass::Operator),
                    atom("y", AtomClass::Identifier),
                ])),
            }
        );
    }

    #[test]
    fn subsup_flattens_to_one_node() {
        let (a, _) = parse("a_i^2", false);
        let (b, _) = parse("a^2_i", false);
        assert_eq!(a, b);
        assert_eq!(
            a,
            MathExpr::Script {
                base: Box::new(atom("a", AtomClass::Identifier)),
                sub: Some(Box::new(atom("i", AtomClass::Identifier))),
                sup: Some(Box::new(atom("2", AtomClass::Number))),
            }
        );
    }

    #[test]
    fn big_operator_display_limits() {
        let (expr, _) = parse("\\sum_{k=1}^{n} k", true);
        match expr {
            MathExpr::Row(items) => {
                assert_eq!(items.len(), 2);
                match &items[0] {
                    MathExpr::BigOperator {
                        op,
                        under,
                        over,
                        limits,
                    } => {
                        assert_eq!(**op, atom("\u{2211}", AtomClass::Operator));
                        assert!(*limits);
                        assert_eq!(
                            *under.as_ref().unwrap().clone(),
                            MathExpr::Row(vec![
                                atom("k", AtomClass::Identifier),
                                atom("=", AtomClass::Operator),
                                atom("1", AtomClass::Number),
                            ])
                        );
                        assert_eq!(*over.as_ref().unwrap().clone(), atom("n", AtomClass::Identifier));
                    }
                    other => panic!("expected big operator, got {other:?}"),
                }
                assert_eq!(items[1], atom("k", AtomClass::Identifier));
            }
            other => panic!("expected row, got {other:?}"),
        }
    }

    #[test]
    fn inline_sum_uses_script_style() {
        let (expr, _) = parse("\\sum_{k} k", false);
        match expr {
            MathExpr::Row(items) => {
                assert!(matches!(items[0], MathExpr::Script { .. }));
            }
            other => panic!("expected row, got {other:?}"),
        }
    }

    #[test]
    fn greek_classification() {
        let (toks, _) = tokenize("\\alpha", CatcodeTable::default_catcodes());
        let expr = classify_atom(&toks[0]);
        assert_eq!(expr, atom("\u{03B1}", AtomClass::Identifier));
    }

    #[test]
    fn operators_and_identifiers() {
        let (toks, _) = tokenize("x=7", CatcodeTable::default_catcodes());
        assert_eq!(classify_atom(&toks[0]), atom("x", AtomClass::Identifier));
        assert_eq!(classify_atom(&toks[1]), atom("=", AtomClass::Operator));
        assert_eq!(classify_atom(&toks[2]), atom("7", AtomClass::Number));
    }

    #[test]
    fn pmatrix_is_fenced_array() {
        let (expr, diags) =
            parse("\\begin{pmatrix} a & b \\\\ c & d \\end{pmatrix}", true);
        assert!(diags.is_empty(), "{diags:?}");
        match expr {
            MathExpr::Fenced { open, close, body } => {
                assert_eq!(open, "(");
                assert_eq!(close, ")");
                match *body {
                    MathExpr::Array { rows } => {
                        assert_eq!(rows.len(), 2);
                        assert!(rows.iter().all(|r| r.len() == 2));
                    }
                    other => panic!("expected array, got {other:?}"),
                }
            }
            other => panic!("expected fenced, got {other:?}"),
        }
    }

    #[test]
    fn single_cell_matrix() {
        let (expr, _) = parse("\\begin{matrix} a \\end{matrix}", true);
        match expr {
            MathExpr::Array { rows } => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].len(), 1);
            }
            other => panic!("expected array, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_padded_with_diagnostic() {
        let (expr, diags) = parse("\\begin{matrix} a & b \\\\ c \\end{matrix}", true);
        assert!(diags.iter().any(|d| d.code == "ragged-rows"));
        match expr {
            MathExpr::Array { rows } => {
                assert_eq!(rows.len(), 2);
                // Brute-force recount: padded to rectangular.
                let counts: Vec<usize> = rows.iter().map(Vec::len).collect();
                assert_eq!(counts, vec![2, 2]);
                assert_eq!(rows[1][1], MathExpr::Row(Vec::new()));
            }
            other => panic!("expected array, got {other:?}"),
        }
    }

    #[test]
    fn invisible_fences_explicit() {
        let (expr, _) = parse("\\left. x \\right|", false);
        assert_eq!(
            expr,
            MathExpr::Fenced {
                open: String::new(),
                close: "|".to_string(),
                body: Box::new(atom("x", AtomClass::Identifier)),
            }
        );
    }

    #[test]
    fn missing_macro_marker_becomes_text() {
        use crate::macros::Engine;
        let (toks, _) = tokenize("\\notreal x", CatcodeTable::default_catcodes());
        let out = Engine::with_builtins().expand(toks);
        let (expr, _) = parse_math(&out.tokens, false);
        match expr {
            MathExpr::Row(items) => {
                assert_eq!(items[0], MathExpr::TextInMath("\\notreal".to_string()));
                assert_eq!(items[1], atom("x", AtomClass::Identifier));
            }
            other => panic!("expected row, got {other:?}"),
        }
    }

    #[test]
    fn unknown_command_is_identifier_with_diagnostic() {
        let (expr, diags) = parse("\\mysteryop", false);
        assert!(diags.iter().any(|d| d.code == "unknown-math-command"));
        assert_eq!(expr, atom("mysteryop", AtomClass::Identifier));
    }

    #[test]
    fn totality_on_junk() {
        // Structural tokens in nonsense positions still yield a tree.
        for junk in ["^", "_2", "}{", "\\right)", "& a", "\\\\", "a^", "\\frac"] {
            let (_, _) = parse(junk, true);
        }
    }

    #[test]
    fn determinism() {
        let (a, _) = parse("\\sum_{i=0}^n \\frac{x_i}{1+x_i}", true);
        let (b, _) = parse("\\sum_{i=0}^n \\frac{x_i}{1+x_i}", true);
        assert_eq!(a, b);
    }

    #[test]
    fn number_runs_group() {
        let (expr, _) = parse("42.5x", false);
        assert_eq!(
            expr,
            MathExpr::Row(vec![
                atom("42.5", AtomClass::Number),
                atom("x", AtomClass::Identifier),
            ])
        );
    }

    #[test]
    fn text_in_math() {
        let (expr, _) = parse("\\text{if } x", false);
        match expr {
            MathExpr::Row(items) => {
                assert_eq!(items[0], MathExpr::TextInMath("if ".to_string()));
            }
            other => panic!("expected row, got {other:?}"),
        }
    }

    #[test]
    fn cases_environment() {
        let (expr, _) = parse("\\begin{cases} 1 & x \\\\ 0 & y \\end{cases}", true);
        match expr {
            MathExpr::Fenced { open, close, .. } => {
                assert_eq!(open, "{");
                assert_eq!(close, "");
            }
            other => panic!("expected fenced, got {other:?}"),
        }
    }
}
