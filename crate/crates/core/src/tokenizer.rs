//! Incremental TeX lexer.
//!
//! Follows the TeX input state machine: new-line (N), mid-line (M) and
//! skip-spaces (S) states, comment stripping, space collapsing, `par`
//! on blank lines, and `^^` character notation. The table is owned by
//! the lexer so catcode assignments can take effect on later input.

use crate::catcode::{Catcode, CatcodeTable};
use crate::diagnostics::Diagnostic;
use crate::span::Span;
use crate::token::{Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineState {
    NewLine,
    MidLine,
    SkipSpaces,
}

pub struct Lexer<'a> {
    input: &'a str,
    pos: usize,
    state: LineState,
    table: CatcodeTable,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Lexer<'a> {
    pub fn new(input: &'a str, table: CatcodeTable) -> Self {
        Lexer {
            input,
            pos: 0,
            state: LineState::NewLine,
            table,
            diagnostics: Vec::new(),
        }
    }

    pub fn table(&self) -> &CatcodeTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut CatcodeTable {
        &mut self.table
    }

    pub fn take_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.input.len()
    }

    fn peek_raw(&self) -> Option<char> {
        self.input[self.pos..].chars().next()
    }

    /// Reads one input character, decoding `^^` notation (two-hex and
    /// offset-64 forms). Returns the character and the byte span it
    /// occupied in the raw input.
    fn read_char(&mut self) -> Option<(char, Span)> {
        let start = self.pos;
        let c = self.peek_raw()?;
        self.pos += c.len_utf8();
        if self.table.get(c) == Catcode::Superscript {
            let rest = &self.input[self.pos..];
            let mut it = rest.chars();
            if it.next() == Some(c) {
                let after = &rest[c.len_utf8()..];
                let mut ac = after.chars();
                match (ac.next(), ac.next()) {
                    (Some(h1), Some(h2)) if is_lchex(h1) && is_lchex(h2) => {
                        self.pos += c.len_utf8() + h1.len_utf8() + h2.len_utf8();
                        let v = (hexval(h1) << 4) | hexval(h2);
                        return Some((v as u8 as char, Span::new(start, self.pos)));
                    }
                    (Some(x), _) if (x as u32) < 128 => {
                        self.pos += c.len_utf8() + x.len_utf8();
                        let v = x as u8;
                        let decoded = if v < 64 { v + 64 } else { v - 64 };
                        return Some((decoded as char, Span::new(start, self.pos)));
                    }
                    _ => {}
                }
            }
        }
        Some((c, Span::new(start, self.pos)))
    }

    /// Skips the remainder of the current line including its terminator.
    fn skip_to_line_end(&mut self) {
        while let Some((c, _)) = self.read_char() {
            if self.table.get(c) == Catcode::EndOfLine {
                break;
            }
        }
        self.state = LineState::NewLine;
    }

    /// Produces the next token, or `None` at end of input.
    pub fn next_token(&mut self) -> Option<Token> {
        loop {
            let (c, span) = self.read_char()?;
            match self.table.get(c) {
                Catcode::Escape => return Some(self.read_control_sequence(span)),
                Catcode::Comment => {
                    self.skip_to_line_end();
                }
                Catcode::EndOfLine => {
                    // Swallow the LF of a CRLF pair as one line end.
                    if c == '\r' && self.peek_raw() == Some('\n') {
                        self.pos += 1;
                    }
                    match self.state {
                        LineState::NewLine => {
                            return Some(Token::control("par", span));
                        }
                        LineState::MidLine => {
                            self.state = LineState::NewLine;
                            return Some(Token::character(' ', Catcode::Space, span));
                        }
                        LineState::SkipSpaces => {
                            self.state = LineState::NewLine;
                        }
                    }
                }
                Catcode::Space => match self.state {
                    LineState::MidLine => {
                        self.state = LineState::SkipSpaces;
                        return Some(Token::character(' ', Catcode::Space, span));
                    }
                    _ => {}
                },
                Catcode::Ignored => {}
                Catcode::Invalid => {
                    self.diagnostics.push(
                        Diagnostic::error(
                            "invalid-character",
                            format!("invalid character U+{:04X}", c as u32),
                        )
                        .with_span(span),
                    );
                }
                Catcode::Parameter => {
                    self.state = LineState::MidLine;
                    if let Some(d) = self.peek_raw().filter(|d| ('1'..='9').contains(d)) {
                        self.pos += d.len_utf8();
                        let idx = d as u8 - b'0';
                        return Some(Token::new(
                            TokenKind::Parameter(idx),
                            Span::new(span.start, self.pos),
                        ));
                    }
                    return Some(Token::character(c, Catcode::Parameter, span));
                }
                cat => {
                    self.state = LineState::MidLine;
                    return Some(Token::character(c, cat, span));
                }
            }
        }
    }

    fn read_control_sequence(&mut self, escape_span: Span) -> Token {
        let mut name = String::new();
        let mut end = escape_span.end;
        match self.read_char() {
            None => {
                // Lone escape at end of input: csname is empty.
                self.state = LineState::MidLine;
            }
            Some((c, sp)) => {
                if self.table.get(c) == Catcode::Letter {
                    name.push(c);
                    end = sp.end;
                    loop {
                        let save = self.pos;
                        match self.read_char() {
                            Some((c2, sp2)) if self.table.get(c2) == Catcode::Letter => {
                                name.push(c2);
                                end = sp2.end;
                            }
                            _ => {
                                self.pos = save;
                                break;
                            }
                        }
                    }
                    // Control word: spaces after it are skipped.
                    self.state = LineState::SkipSpaces;
                } else {
                    name.push(c);
                    end = sp.end;
                    self.state = if self.table.get(c) == Catcode::Space {
                        LineState::SkipSpaces
                    } else {
                        LineState::MidLine
                    };
                }
            }
        }
        Token::control(&name, Span::new(escape_span.start, end))
    }
}

fn is_lchex(c: char) -> bool {
    c.is_ascii_digit() || ('a'..='f').contains(&c)
}

fn hexval(c: char) -> u8 {
    if c.is_ascii_digit() {
        c as u8 - b'0'
    } else {
        c as u8 - b'a' + 10
    }
}

/// Tokenizes the whole input in one shot. Invalid characters are
/// reported as diagnostics and skipped.
pub fn tokenize(input: &str, table: CatcodeTable) -> (Vec<Token>, Vec<Diagnostic>) {
    let mut lexer = Lexer::new(input, table);
    let mut out = Vec::new();
    while let Some(tok) = lexer.next_token() {
        out.push(tok);
    }
    (out, lexer.take_diagnostics())
}
