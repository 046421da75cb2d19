//! TeX lexical units.

use crate::catcode::Catcode;
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// `\name` — escape character plus a name (one non-letter, or a
    /// letter run).
    ControlSequence(String),
    /// A character with the category the table assigned when it was
    /// lexed. Never carries escape/comment/ignored/invalid.
    Character(char, Catcode),
    /// `#n` parameter marker, index 1..=9.
    Parameter(u8),
    /// Placeholder left behind for an undefined control sequence; the
    /// name is kept so downstream stages can render it visibly.
    MissingMacro(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

impl Token {
    pub fn new(kind: TokenKind, span: Span) -> Self {
        Token { kind, span }
    }

    pub fn control(name: &str, span: Span) -> Self {
        Token::new(TokenKind::ControlSequence(name.to_string()), span)
    }

    pub fn character(c: char, cat: Catcode, span: Span) -> Self {
        Token::new(TokenKind::Character(c, cat), span)
    }

    pub fn is_control(&self, name: &str) -> bool {
        matches!(&self.kind, TokenKind::ControlSequence(n) if n == name)
    }

    pub fn is_char_cat(&self, cat: Catcode) -> bool {
        matches!(&self.kind, TokenKind::Character(_, c) if *c == cat)
    }

    pub fn is_space(&self) -> bool {
        self.is_char_cat(Catcode::Space)
    }

    pub fn is_begin_group(&self) -> bool {
        self.is_char_cat(Catcode::BeginGroup)
    }

    pub fn is_end_group(&self) -> bool {
        self.is_char_cat(Catcode::EndGroup)
    }

    pub fn cs_name(&self) -> Option<&str> {
        match &self.kind {
            TokenKind::ControlSequence(n) => Some(n),
            _ => None,
        }
    }

    /// Canonical one-line serialization used by tests and debug dumps.
    pub fn dump(&self) -> String {
        match &self.kind {
            TokenKind::ControlSequence(n) => format!("cs:{n}"),
            TokenKind::Character(c, cat) => format!("ch:{}/{}", c, *cat as u8),
            TokenKind::Parameter(i) => format!("param:{i}"),
            TokenKind::MissingMacro(n) => format!("missing:{n}"),
        }
    }

    /// Source text this token stands for, used for verbatim recovery.
    pub fn source_text(&self) -> String {
        match &self.kind {
            TokenKind::ControlSequence(n) => format!("\\{n}"),
            TokenKind::Character(c, _) => c.to_string(),
            TokenKind::Parameter(i) => format!("#{i}"),
            TokenKind::MissingMacro(n) => format!("\\{n}"),
        }
    }
}
