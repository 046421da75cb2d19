//! Structural validation against a fixed MathML Core profile.
//!
//! The profile lives in a data asset (element whitelist, per-element
//! attribute sets, child arities) rather than in code, so tightening
//! or auditing it never touches the validator logic.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use crate::mathml::{MathMLChild, MathMLNode};

pub const CORE_SCHEMA: &str = include_str!("../assets/core_schema.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arity {
    Any,
    TextOnly,
    Exact(usize),
    AtLeast(usize),
}

#[derive(Debug, Clone)]
struct ElementRule {
    arity: Arity,
    /// None means any profile element; empty means no element children.
    children: Option<Vec<String>>,
    attrs: Vec<String>,
}

pub struct CoreSchema {
    rules: HashMap<String, ElementRule>,
}

impl CoreSchema {
    fn parse(text: &str) -> CoreSchema {
        let mut rules = HashMap::new();
        for line in text.lines() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(name), Some(arity), Some(children), Some(attrs)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                continue;
            };
            let arity = match arity {
                "*" => Arity::Any,
                "text" => Arity::TextOnly,
                s if s.ends_with('+') => {
                    Arity::AtLeast(s.trim_end_matches('+').parse().unwrap_or(1))
                }
                s => Arity::Exact(s.parse().unwrap_or(0)),
            };
            let children = match children {
                "*" => None,
                "-" => Some(Vec::new()),
                list => Some(list.split(',').map(str::to_string).collect()),
            };
            let attrs = match attrs {
                "-" => Vec::new(),
                list => list.split(',').map(str::to_string).collect(),
            };
            rules.insert(
                name.to_string(),
                ElementRule {
                    arity,
                    children,
                    attrs,
                },
            );
        }
        CoreSchema { rules }
    }

    pub fn allows_element(&self, name: &str) -> bool {
        self.rules.contains_key(name)
    }
}

pub fn core_schema() -> &'static CoreSchema {
    static SCHEMA: OnceLock<CoreSchema> = OnceLock::new();
    SCHEMA.get_or_init(|| CoreSchema::parse(CORE_SCHEMA))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Slash-separated element path with sibling indices, e.g.
    /// `math/semantics[0]/mrow[0]`.
    pub path: String,
    pub rule: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.path, self.message, self.rule)
    }
}

/// Checks a tree against the profile. Reports every violation found in
/// one pass, never stops at the first.
pub fn validate_core(node: &MathMLNode) -> Vec<Violation> {
    let mut out = Vec::new();
    check_node(node, &node.name.clone(), core_schema(), &mut out);
    out
}

fn check_node(node: &MathMLNode, path: &str, schema: &CoreSchema, out: &mut Vec<Violation>) {
    let Some(rule) = schema.rules.get(&node.name) else {
        out.push(Violation {
            path: path.to_string(),
            rule: "unknown-element".to_string(),
            message: format!("element `{}` is not in the profile", node.name),
        });
        // Still descend so nested problems surface too.
        for (i, child) in node.element_children().enumerate() {
            let child_path = format!("{path}/{}[{i}]", child.name);
            check_node(child, &child_path, schema, out);
        }
        return;
    };
    for key in node.attrs.keys() {
        if !rule.attrs.iter().any(|a| a == key) {
            out.push(Violation {
                path: path.to_string(),
                rule: "unknown-attribute".to_string(),
                message: format!("attribute `{key}` not allowed on `{}`", node.name),
            });
        }
    }
    if let Some(intent) = node.attrs.get("intent") {
        if let Err(why) = validate_intent(intent) {
            out.push(Violation {
                path: path.to_string(),
                rule: "bad-intent".to_string(),
                message: why,
            });
        }
    }
    let element_count = node.element_children().count();
    let has_text = node
        .children
        .iter()
        .any(|c| matches!(c, MathMLChild::Text(t) if !t.trim().is_empty()));
    match rule.arity {
        Arity::Any => {}
        Arity::TextOnly => {
            if element_count > 0 {
                out.push(Violation {
                    path: path.to_string(),
                    rule: "text-leaf".to_string(),
                    message: format!("`{}` may only contain character data", node.name),
                });
            }
        }
        Arity::Exact(n) => {
            if element_count != n {
                out.push(Violation {
                    path: path.to_string(),
                    rule: "arity".to_string(),
                    message: format!(
                        "`{}` requires exactly {n} children, found {element_count}",
                        node.name
                    ),
                });
            }
        }
        Arity::AtLeast(n) => {
            if element_count < n {
                out.push(Violation {
                    path: path.to_string(),
                    rule: "arity".to_string(),
                    message: format!(
                        "`{}` requires at least {n} children, found {element_count}",
                        node.name
                    ),
                });
            }
        }
    }
    if rule.arity != Arity::TextOnly && has_text {
        out.push(Violation {
            path: path.to_string(),
            rule: "unexpected-text".to_string(),
            message: format!("`{}` may not contain bare character data", node.name),
        });
    }
    if let Some(allowed) = &rule.children {
        for child in node.element_children() {
            if !allowed.iter().any(|a| a == &child.name) {
                out.push(Violation {
                    path: path.to_string(),
                    rule: "bad-child".to_string(),
                    message: format!(
                        "`{}` may not contain `{}`",
                        node.name, child.name
                    ),
                });
            }
        }
    }
    for (i, child) in node.element_children().enumerate() {
        let child_path = format!("{path}/{}[{i}]", child.name);
        check_node(child, &child_path, schema, out);
    }
}

/// Checks an `intent` attribute value. Accepted forms: a property
/// reference like `:literal`, a concept name like `binomial-coefficient`,
/// or an underscore-joined literal like `x_approx`.
pub fn validate_intent(value: &str) -> Result<(), String> {
    if value.is_empty() {
        return Err("intent value is empty".to_string());
    }
    let body = value.strip_prefix(':').unwrap_or(value);
    if body.is_empty() {
        return Err("intent property has no name".to_string());
    }
    let mut chars = body.chars();
    let first = chars.next().unwrap();
    if !(first.is_ascii_alphabetic() || first == '_') {
        return Err(format!("intent `{value}` must start with a letter"));
    }
    for c in body.chars() {
        if !(c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(format!("intent `{value}` contains invalid character `{c}`"));
        }
    }
    Ok(())
}

/// A byte offset plus message for XML parse failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for XmlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "offset {}: {}", self.offset, self.message)
    }
}

/// Minimal XML reader for validating externally supplied documents and
/// for the serialize/parse fixpoint check. Handles elements,
/// attributes, character data, the five predefined entities, numeric
/// references, and comments. No namespaces, DTDs, or CDATA.
pub fn parse_mathml(input: &str) -> Result<MathMLNode, XmlError> {
    let mut parser = XmlParser {
        bytes: input.as_bytes(),
        input,
        pos: 0,
    };
    parser.skip_misc();
    let root = parser.parse_element()?;
    parser.skip_misc();
    if parser.pos < parser.bytes.len() {
        return Err(parser.err("trailing content after root element"));
    }
    Ok(root)
}

struct XmlParser<'a> {
    bytes: &'a [u8],
    input: &'a str,
    pos: usize,
}

impl<'a> XmlParser<'a> {
    fn err(&self, message: &str) -> XmlError {
        XmlError {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    /// Whitespace, comments, and processing instructions between
    /// top-level constructs.
    fn skip_misc(&mut self) {
        loop {
            self.skip_ws();
            if self.input[self.pos..].starts_with("<!--") {
                match self.input[self.pos..].find("-->") {
                    Some(end) => self.pos += end + 3,
                    None => {
                        self.pos = self.bytes.len();
                        return;
                    }
                }
            } else if self.input[self.pos..].starts_with("<?") {
                match self.input[self.pos..].find("?>") {
                    Some(end) => self.pos += end + 2,
                    None => {
                        self.pos = self.bytes.len();
                        return;
                    }
                }
            } else if self.input[self.pos..].starts_with("<!DOCTYPE") {
                match self.input[self.pos..].find('>') {
                    Some(end) => self.pos += end + 1,
                    None => {
                        self.pos = self.bytes.len();
                        return;
                    }
                }
            } else {
                return;
            }
        }
    }

    fn parse_name(&mut self) -> Result<String, XmlError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            let c = b as char;
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' || c == ':' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected a name"));
        }
        Ok(self.input[start..self.pos].to_string())
    }

    fn parse_element(&mut self) -> Result<MathMLNode, XmlError> {
        if self.peek() != Some(b'<') {
            return Err(self.err("expected `<`"));
        }
        self.pos += 1;
        let name = self.parse_name()?;
        let mut node = MathMLNode::new(&name);
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'>') => {
                    self.pos += 1;
                    break;
                }
                Some(b'/') => {
                    self.pos += 1;
                    if self.peek() != Some(b'>') {
                        return Err(self.err("expected `>` after `/`"));
                    }
                    self.pos += 1;
                    return Ok(node);
                }
                Some(_) => {
                    let key = self.parse_name()?;
                    self.skip_ws();
                    if self.peek() != Some(b'=') {
                        return Err(self.err("expected `=` in attribute"));
                    }
                    self.pos += 1;
                    self.skip_ws();
                    let quote = match self.peek() {
                        Some(q @ (b'"' | b'\'')) => q,
                        _ => return Err(self.err("expected quoted attribute value")),
                    };
                    self.pos += 1;
                    let start = self.pos;
                    while self.peek().is_some_and(|b| b != quote) {
                        self.pos += 1;
                    }
                    if self.peek().is_none() {
                        return Err(self.err("unterminated attribute value"));
                    }
                    let raw = &self.input[start..self.pos];
                    self.pos += 1;
                    if node.attrs.contains_key(&key) {
                        return Err(self.err("duplicate attribute"));
                    }
                    node.attrs.insert(key, decode_entities(raw, self.pos)?);
                }
                None => return Err(self.err("unterminated start tag")),
            }
        }
        // Content until the matching end tag.
        loop {
            let start = self.pos;
            while self.peek().is_some_and(|b| b != b'<') {
                self.pos += 1;
            }
            if self.pos > start {
                let text = decode_entities(&self.input[start..self.pos], start)?;
                if !text.is_empty() {
                    node.children.push(MathMLChild::Text(text));
                }
            }
            if self.peek().is_none() {
                return Err(self.err("unterminated element"));
            }
            if self.input[self.pos..].starts_with("<!--") {
                match self.input[self.pos..].find("-->") {
                    Some(end) => self.pos += end + 3,
                    None => return Err(self.err("unterminated comment")),
                }
                continue;
            }
            if self.input[self.pos..].starts_with("</") {
                self.pos += 2;
                let end_name = self.parse_name()?;
                if end_name != name {
                    return Err(self.err("mismatched end tag"));
                }
                self.skip_ws();
                if self.peek() != Some(b'>') {
                    return Err(self.err("expected `>` in end tag"));
                }
                self.pos += 1;
                return Ok(node);
            }
            let child = self.parse_element()?;
            node.children.push(MathMLChild::Element(child));
        }
    }
}

fn decode_entities(raw: &str, offset: usize) -> Result<String, XmlError> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let Some(semi) = rest.find(';') else {
            return Err(XmlError {
                offset,
                message: "unterminated entity reference".to_string(),
            });
        };
        let entity = &rest[1..semi];
        match entity {
            "amp" => out.push('&'),
            "lt" => out.push('<'),
            "gt" => out.push('>'),
            "quot" => out.push('"'),
            "apos" => out.push('\''),
            _ => {
                let value = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                match value.and_then(char::from_u32) {
                    Some(c) => out.push(c),
                    None => {
                        return Err(XmlError {
                            offset,
                            message: format!("unknown entity `&{entity};`"),
                        })
                    }
                }
            }
        }
        rest = &rest[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
