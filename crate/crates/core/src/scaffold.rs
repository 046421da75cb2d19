//! HTML page assembly around the document tree.
//!
//! Pages are self-describing semantic HTML with the styling in a
//! separate linked stylesheet. There is never an inline `style` or
//! `script` anywhere in generated output.

use crate::diagnostics::Diagnostic;
use crate::doc::{DocNode, EmphasisStyle, Frontmatter, NodeKind};
use crate::math::parse_math;
use crate::mathml::{emit_math, escape_attr, escape_text, serialize};

/// The stylesheet shipped next to generated pages.
pub const DEFAULT_THEME: &str = include_str!("../assets/theme.css");

pub struct PageOptions {
    /// `href` used for the stylesheet link.
    pub stylesheet: String,
    /// Language tag for the `html` element.
    pub lang: String,
}

impl Default for PageOptions {
    fn default() -> Self {
        PageOptions {
            stylesheet: "theme.css".to_string(),
            lang: "en".to_string(),
        }
    }
}

pub struct PageOutput {
    pub html: String,
    pub diagnostics: Vec<Diagnostic>,
}

/// Renders a complete standalone page for a document tree.
pub fn assemble_page(tree: &DocNode, options: &PageOptions) -> PageOutput {
    let mut r = Renderer {
        out: String::new(),
        diagnostics: Vec::new(),
    };
    let frontmatter = crate::doc::extract_frontmatter(tree);
    let title = frontmatter
        .title
        .as_ref()
        .map(|t| inline_text(t))
        .filter(|t| !t.trim().is_empty())
        .unwrap_or_else(|| "Untitled document".to_string());

    r.out.push_str("<!DOCTYPE html>\n");
    r.out
        .push_str(&format!("<html lang=\"{}\">\n", escape_attr(&options.lang)));
    r.out.push_str("<head>\n<meta charset=\"utf-8\">\n");
    r.out.push_str(
        "<meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\n",
    );
    r.out
        .push_str(&format!("<title>{}</title>\n", escape_text(&title)));
    r.out.push_str(&format!(
        "<link rel=\"stylesheet\" href=\"{}\">\n",
        escape_attr(&options.stylesheet)
    ));
    r.out.push_str("</head>\n<body>\n");
    for child in &tree.children {
        r.render(child);
    }
    r.out.push_str("</body>\n</html>\n");
    PageOutput {
        html: r.out,
        diagnostics: r.diagnostics,
    }
}

fn inline_text(nodes: &[DocNode]) -> String {
    let mut out = String::new();
    for n in nodes {
        out.push_str(&n.text_content());
    }
    out
}

struct Renderer {
    out: String,
    diagnostics: Vec<Diagnostic>,
}

impl Renderer {
    fn render(&mut self, node: &DocNode) {
        match &node.kind {
            NodeKind::Document => {
                for c in &node.children {
                    self.render(c);
                }
            }
            NodeKind::Frontmatter(fm) => self.render_frontmatter(fm),
            NodeKind::Section { depth, number } => {
                self.out.push_str("<section>\n");
                // Document sections start at h2; h1 is the page title.
                let level = (*depth as usize + 1).min(5);
                self.out.push_str(&format!("<h{level}>"));
                if let Some(number) = number {
                    self.out.push_str(&escape_text(number));
                    self.out.push(' ');
                }
                for t in &node.title {
                    self.render_inline(t);
                }
                self.out.push_str(&format!("</h{level}>\n"));
                for c in &node.children {
                    self.render(c);
                }
                self.out.push_str("</section>\n");
            }
            NodeKind::Paragraph => {
                self.out.push_str("<p>");
                for c in &node.children {
                    self.render_inline(c);
                }
                self.out.push_str("</p>\n");
            }
            NodeKind::List { ordered } => {
                let tag = if *ordered { "ol" } else { "ul" };
                self.out.push_str(&format!("<{tag}>\n"));
                for c in &node.children {
                    self.render(c);
                }
                self.out.push_str(&format!("</{tag}>\n"));
            }
            NodeKind::ListItem => {
                self.out.push_str("<li>");
                for c in &node.children {
                    self.render_inline_or_block(c);
                }
                self.out.push_str("</li>\n");
            }
            NodeKind::Theorem { name } => {
                self.out.push_str(&format!(
                    "<div class=\"theorem\" data-kind=\"{}\">\n",
                    escape_attr(name)
                ));
                self.out.push_str("<p class=\"theorem-head\">");
                self.out.push_str(&escape_text(&capitalize(name)));
                if !node.title.is_empty() {
                    self.out.push_str(" (");
                    for t in &node.title {
                        self.render_inline(t);
                    }
                    self.out.push(')');
                }
                self.out.push_str("</p>\n");
                for c in &node.children {
                    self.render(c);
                }
                self.out.push_str("</div>\n");
            }
            NodeKind::Math { display, .. } if *display => {
                self.render_math(node);
                self.out.push('\n');
            }
            NodeKind::FallbackBlob {
                construct,
                verbatim,
            } => {
                self.out.push_str(&format!(
                    "<pre class=\"fallback\" data-construct=\"{}\">{}</pre>\n",
                    escape_attr(construct),
                    escape_text(verbatim)
                ));
            }
            NodeKind::TableFallback { verbatim } => {
                self.out.push_str(&format!(
                    "<pre class=\"fallback\" data-construct=\"tabular\">{}</pre>\n",
                    escape_text(verbatim)
                ));
            }
            _ => self.render_inline(node),
        }
    }

    /// List items may hold either loose inline content or paragraphs.
    fn render_inline_or_block(&mut self, node: &DocNode) {
        match &node.kind {
            NodeKind::Paragraph | NodeKind::List { .. } => self.render(node),
            _ => self.render_inline(node),
        }
    }

    fn render_inline(&mut self, node: &DocNode) {
        match &node.kind {
            NodeKind::TextRun(text) => self.out.push_str(&escape_text(text)),
            NodeKind::Emphasis(style) => {
                let (open, close) = emphasis_tags(*style);
                self.out.push_str(open);
                for c in &node.children {
                    self.render_inline(c);
                }
                self.out.push_str(close);
            }
            NodeKind::Cite(key) => {
                self.out.push_str(&format!(
                    "<span class=\"cite\">[{}]</span>",
                    escape_text(key)
                ));
            }
            NodeKind::MissingMarker(name) => {
                self.out.push_str(&format!(
                    "<span class=\"missing-macro\">\\{}</span>",
                    escape_text(name)
                ));
            }
            NodeKind::Math { .. } => self.render_math(node),
            // A block node in inline position still renders; content
            // beats strict nesting.
            _ => self.render(node),
        }
    }

    fn render_math(&mut self, node: &DocNode) {
        let NodeKind::Math {
            display,
            tokens,
            verbatim,
        } = &node.kind
        else {
            return;
        };
        let (expr, mut diags) = parse_math(tokens, *display);
        self.diagnostics.append(&mut diags);
        let mathml = emit_math(&expr, verbatim, *display);
        self.out.push_str(&serialize(&mathml));
    }

    fn render_frontmatter(&mut self, fm: &Frontmatter) {
        self.out.push_str("<header class=\"frontmatter\">\n");
        if let Some(title) = &fm.title {
            self.out.push_str("<h1>");
            for t in title {
                self.render_inline(t);
            }
            self.out.push_str("</h1>\n");
        }
        if !fm.authors.is_empty() {
            self.out.push_str("<p class=\"authors\">");
            for (i, author) in fm.authors.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                self.out.push_str(&escape_text(&author.name));
                for (j, idx) in author.affiliation_refs.iter().enumerate() {
                    if j == 0 {
                        self.out.push_str("<span class=\"affiliation-ref\">");
                    } else {
                        self.out.push(',');
                    }
                    self.out.push_str(&(idx + 1).to_string());
                    if j + 1 == author.affiliation_refs.len() {
                        self.out.push_str("</span>");
                    }
                }
            }
            self.out.push_str("</p>\n");
        }
        if !fm.affiliations.is_empty() {
            self.out.push_str("<ol class=\"affiliations\">\n");
            for a in &fm.affiliations {
                self.out
                    .push_str(&format!("<li>{}</li>\n", escape_text(&a.text)));
            }
            self.out.push_str("</ol>\n");
        }
        self.out.push_str("</header>\n");
    }
}

fn emphasis_tags(style: EmphasisStyle) -> (&'static str, &'static str) {
    match style {
        EmphasisStyle::Emph => ("<em>", "</em>"),
        EmphasisStyle::Bold => ("<strong>", "</strong>"),
        EmphasisStyle::Italic => ("<i>", "</i>"),
        EmphasisStyle::Mono => ("<code>", "</code>"),
        EmphasisStyle::Roman => ("<span class=\"upright\">", "</span>"),
        EmphasisStyle::SmallCaps => ("<span class=\"smallcaps\">", "</span>"),
        EmphasisStyle::Footnote => ("<span class=\"footnote\">", "</span>"),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catcode::CatcodeTable;
    use crate::doc::build_document;
    use crate::macros::Engine;
    use crate::tokenizer::tokenize;

    fn page(input: &str) -> String {
        let (toks, _) = tokenize(input, CatcodeTable::default_catcodes());
        let out = Engine::with_builtins().expand(toks);
        let build = build_document(out.tokens, input);
        assert!(!build.fatal, "unexpected fatal build for {input}");
        assemble_page(&build.tree, &PageOptions::default()).html
    }

    #[test]
    fn minimal_page_structure() {
        let html = page("Hello world.");
        assert!(html.starts_with("<!DOCTYPE html>"));
        assert!(html.contains("<meta charset=\"utf-8\">"));
        assert!(html.contains("<link rel=\"stylesheet\" href=\"theme.css\">"));
        assert!(html.contains("<p>Hello world.</p>"));
    }

    #[test]
    fn no_inline_style_or_script() {
        let html = page("\\section{One} Text $x^2$ \\begin{weird} raw \\end{weird}");
        assert!(!html.contains("<script"));
        assert!(!html.contains("<style"));
        assert!(!html.contains(" style=\""));
    }

    #[test]
    fn sections_nest_with_numbered_headings() {
        let html = page("\\section{Alpha}\nText.\n\\subsection{Beta}\nMore.");
        assert!(html.contains("<h2>1 Alpha</h2>"), "{html}");
        assert!(html.contains("<h3>1.1 Beta</h3>"), "{html}");
        let outer = html.find("<section>").unwrap();
        let inner = html.rfind("<section>").unwrap();
        let outer_close = html.rfind("</section>").unwrap();
        assert!(outer < inner && inner < outer_close);
    }

    #[test]
    fn frontmatter_header_block() {
        let html = page(
            "\\title{A Study}\\author{Ada \\inst{1} \\and Grace \\inst{1}}\\institute{Dept A}\\maketitle Body text.",
        );
        assert!(html.contains("<h1>A Study</h1>"), "{html}");
        assert!(html.contains("Ada"), "{html}");
        assert!(html.contains("Grace"), "{html}");
        assert!(html.contains("<ol class=\"affiliations\">"), "{html}");
        assert!(html.contains("<li>Dept A</li>"), "{html}");
        assert!(html.contains("<title>A Study</title>"), "{html}");
    }

    #[test]
    fn math_embedded_with_annotation() {
        let html = page("Euler: $e^{i\\pi} + 1 = 0$.");
        assert!(html.contains("<math display=\"inline\" intent=\":literal\">"), "{html}");
        assert!(
            html.contains("<annotation encoding=\"application/x-tex\">e^{i\\pi} + 1 = 0</annotation>"),
            "{html}"
        );
    }

    #[test]
    fn fallback_blob_is_pre_with_data_attribute() {
        let html = page("Before \\begin{tikzpicture} \\draw (0,0); \\end{tikzpicture} after.");
        assert!(
            html.contains("<pre class=\"fallback\" data-construct=\"tikzpicture\">"),
            "{html}"
        );
        assert!(html.contains("\\draw (0,0);"), "{html}");
    }

    #[test]
    fn missing_macro_visible() {
        let html = page("Use \\definitelynotreal here.");
        assert!(
            html.contains("<span class=\"missing-macro\">\\definitelynotreal</span>"),
            "{html}"
        );
    }

    #[test]
    fn lists_render() {
        let html = page(
            "\\begin{itemize}\\item First\\item Second\\end{itemize}\\begin{enumerate}\\item One\\end{enumerate}",
        );
        assert!(html.contains("<ul>"), "{html}");
        assert!(html.contains("<ol>"), "{html}");
        assert!(html.contains("<li><p>First</p>"), "{html}");
    }

    #[test]
    fn emphasis_tags_map() {
        let html = page("\\emph{alpha} \\textbf{beta} \\texttt{gamma}");
        assert!(html.contains("<em>alpha</em>"), "{html}");
        assert!(html.contains("<strong>beta</strong>"), "{html}");
        assert!(html.contains("<code>gamma</code>"), "{html}");
    }

    #[test]
    fn theorem_block() {
        let html = page("\\begin{theorem} Everything is fine. \\end{theorem}");
        assert!(html.contains("<div class=\"theorem\" data-kind=\"theorem\">"), "{html}");
        assert!(html.contains("<p class=\"theorem-head\">Theorem</p>"), "{html}");
    }

    #[test]
    fn escaping_in_text() {
        let html = page("Compare a < b & c > d.");
        assert!(html.contains("a &lt; b &amp; c &gt; d."), "{html}");
    }

    #[test]
    fn page_text_covers_tree_text() {
        // Every text run, marker, cite key, and math verbatim from the
        // tree must appear in the page.
        let input = "\\section{Intro} Text with $x+y$ and \\unknowncmd and \\emph{stress}. \\begin{quote}kept\\end{quote}";
        let (toks, _) = tokenize(input, CatcodeTable::default_catcodes());
        let out = Engine::with_builtins().expand(toks);
        let build = build_document(out.tokens, input);
        let html = assemble_page(&build.tree, &PageOptions::default()).html;
        let mut fragments = Vec::new();
        crate::doc::walk(&build.tree, &mut |n| match &n.kind {
            NodeKind::TextRun(t) => fragments.push(t.clone()),
            NodeKind::Math { verbatim, .. } => fragments.push(verbatim.clone()),
            NodeKind::MissingMarker(m) => fragments.push(format!("\\{m}")),
            NodeKind::Cite(k) => fragments.push(k.clone()),
            NodeKind::FallbackBlob { verbatim, .. }
            | NodeKind::TableFallback { verbatim } => fragments.push(verbatim.clone()),
            _ => {}
        });
        assert!(!fragments.is_empty());
        for frag in fragments {
            let escaped = escape_text(&frag);
            assert!(html.contains(escaped.trim()), "missing `{frag}` in page");
        }
    }

    #[test]
    fn theme_asset_nonempty_and_external() {
        assert!(DEFAULT_THEME.contains("body"));
        assert!(!DEFAULT_THEME.contains("<style"));
    }
}
