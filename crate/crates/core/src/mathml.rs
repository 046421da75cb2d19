//! MathML Core emission and serialization.
//!
//! Every emitted formula is `math > semantics > (presentation,
//! annotation)`. The annotation carries the exact authored source and
//! the math root carries the `:literal` intent marker; nothing else in
//! the tree gets an intent attribute.

use std::collections::BTreeMap;

use crate::math::{AtomClass, MathExpr};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MathMLNode {
    pub name: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<MathMLChild>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MathMLChild {
    Element(MathMLNode),
    Text(String),
}

impl MathMLNode {
    pub fn new(name: &str) -> MathMLNode {
        MathMLNode {
            name: name.to_string(),
            attrs: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn attr(mut self, key: &str, value: &str) -> MathMLNode {
        self.attrs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn child(mut self, node: MathMLNode) -> MathMLNode {
        self.children.push(MathMLChild::Element(node));
        self
    }

    pub fn text(mut self, text: &str) -> MathMLNode {
        // Empty text is dropped so serialization stays canonical: an
        // element with no children always self-closes.
        if !text.is_empty() {
            self.children.push(MathMLChild::Text(text.to_string()));
        }
        self
    }

    pub fn element_children(&self) -> impl Iterator<Item = &MathMLNode> {
        self.children.iter().filter_map(|c| match c {
            MathMLChild::Element(n) => Some(n),
            MathMLChild::Text(_) => None,
        })
    }

    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for c in &self.children {
            match c {
                MathMLChild::Element(n) => out.push_str(&n.text_content()),
                MathMLChild::Text(t) => out.push_str(t),
            }
        }
        out
    }
}

/// Wraps a parsed expression in the full annotated `math` element.
/// `verbatim` is the authored source between the math delimiters,
/// reproduced byte for byte in the annotation.
pub fn emit_math(expr: &MathExpr, verbatim: &str, display: bool) -> MathMLNode {
    let presentation = emit_expr(expr);
    let annotation = MathMLNode::new("annotation")
        .attr("encoding", "application/x-tex")
        .text(verbatim);
    let semantics = MathMLNode::new("semantics")
        .child(presentation)
        .child(annotation);
    MathMLNode::new("math")
        .attr("display", if display { "block" } else { "inline" })
        .attr("intent", ":literal")
        .child(semantics)
}

/// Emits the presentation subtree for one expression.
pub fn emit_expr(expr: &MathExpr) -> MathMLNode {
    match expr {
        MathExpr::Atom { text, class } => emit_atom(text, *class),
        MathExpr::Row(items) => {
            let mut row = MathMLNode::new("mrow");
            for item in items {
                row = row.child(emit_expr(item));
            }
            row
        }
        MathExpr::Script { base, sub, sup } => {
            let base = emit_expr(base);
            match (sub, sup) {
                (Some(sb), Some(sp)) => MathMLNode::new("msubsup")
                    .child(base)
                    .child(emit_expr(sb))
                    .child(emit_expr(sp)),
                (Some(sb), None) => MathMLNode::new("msub").child(base).child(emit_expr(sb)),
                (None, Some(sp)) => MathMLNode::new("msup").child(base).child(emit_expr(sp)),
                (None, None) => base,
            }
        }
        MathExpr::Fraction {
            numerator,
            denominator,
            line,
        } => {
            let mut frac = MathMLNode::new("mfrac")
                .child(emit_expr(numerator))
                .child(emit_expr(denominator));
            if !line {
                frac = frac.attr("linethickness", "0");
            }
            frac
        }
        MathExpr::Radical { radicand, index } => match index {
            Some(idx) => MathMLNode::new("mroot")
                .child(emit_expr(radicand))
                .child(emit_expr(idx)),
            None => MathMLNode::new("msqrt").child(emit_expr(radicand)),
        },
        MathExpr::Fenced { open, close, body } => {
            let mut row = MathMLNode::new("mrow");
            if !open.is_empty() {
                row = row.child(fence_mo(open));
            }
            row = row.child(emit_expr(body));
            if !close.is_empty() {
                row = row.child(fence_mo(close));
            }
            row
        }
        MathExpr::BigOperator {
            op,
            under,
            over,
            limits,
        } => {
            let base = emit_expr(op);
            let (under, over) = (under.as_deref(), over.as_deref());
            match (under, over, limits) {
                (None, None, _) => base,
                (Some(u), Some(o), true) => MathMLNode::new("munderover")
                    .child(base)
                    .child(emit_expr(u))
                    .child(emit_expr(o)),
                (Some(u), None, true) => {
                    MathMLNode::new("munder").child(base).child(emit_expr(u))
                }
                (None, Some(o), true) => {
                    MathMLNode::new("mover").child(base).child(emit_expr(o))
                }
                (Some(u), Some(o), false) => MathMLNode::new("msubsup")
                    .child(base)
                    .child(emit_expr(u))
                    .child(emit_expr(o)),
                (Some(u), None, false) => {
                    MathMLNode::new("msub").child(base).child(emit_expr(u))
                }
                (None, Some(o), false) => {
                    MathMLNode::new("msup").child(base).child(emit_expr(o))
                }
            }
        }
        MathExpr::Accent { base, mark, over } => {
            let mark_mo = MathMLNode::new("mo").text(mark);
            if *over {
                MathMLNode::new("mover")
                    .attr("accent", "true")
                    .child(emit_expr(base))
                    .child(mark_mo)
            } else {
                MathMLNode::new("munder")
                    .attr("accentunder", "true")
                    .child(emit_expr(base))
                    .child(mark_mo)
            }
        }
        MathExpr::Array { rows } => {
            let mut table = MathMLNode::new("mtable");
            for row in rows {
                let mut tr = MathMLNode::new("mtr");
                for cell in row {
                    tr = tr.child(MathMLNode::new("mtd").child(emit_expr(cell)));
                }
                table = table.child(tr);
            }
            table
        }
        MathExpr::TextInMath(text) => MathMLNode::new("mtext").text(text),
        MathExpr::Space(width) => MathMLNode::new("mspace").attr("width", width),
    }
}

fn emit_atom(text: &str, class: AtomClass) -> MathMLNode {
    match class {
        AtomClass::Number => MathMLNode::new("mn").text(text),
        AtomClass::Operator => MathMLNode::new("mo").text(text),
        AtomClass::Identifier => {
            let mut mi = MathMLNode::new("mi").text(text);
            // Multi-letter names render upright, like function names.
            if text.chars().count() > 1 {
                mi = mi.attr("mathvariant", "normal");
            }
            mi
        }
    }
}

fn fence_mo(fence: &str) -> MathMLNode {
    MathMLNode::new("mo").attr("stretchy", "true").text(fence)
}

/// Serializes with attributes in sorted order and no inter-element
/// whitespace, so equal trees always produce identical bytes.
pub fn serialize(node: &MathMLNode) -> String {
    let mut out = String::new();
    write_node(node, &mut out);
    out
}

fn write_node(node: &MathMLNode, out: &mut String) {
    out.push('<');
    out.push_str(&node.name);
    for (k, v) in &node.attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        out.push_str(&escape_attr(v));
        out.push('"');
    }
    if node.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for child in &node.children {
        match child {
            MathMLChild::Element(n) => write_node(n, out),
            MathMLChild::Text(t) => out.push_str(&escape_text(t)),
        }
    }
    out.push_str("</");
    out.push_str(&node.name);
    out.push('>');
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}
