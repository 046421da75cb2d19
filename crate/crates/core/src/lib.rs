//! Scoped LaTeX to HTML+MathML conversion pipeline.
//!
//! Stages: tokenization ([`tokenizer`]), macro expansion ([`macros`]),
//! document modelling ([`doc`]), math parsing ([`math`]), MathML Core
//! emission ([`mathml`]), page assembly ([`scaffold`]) and structural
//! validation ([`validator`]). The [`harness`] module batches
//! conversions over a corpus and aggregates health metrics.

pub mod catcode;
pub mod diagnostics;
pub mod doc;
pub mod harness;
pub mod macros;
pub mod math;
pub mod mathml;
pub mod pipeline;
pub mod report;
pub mod scaffold;
pub mod span;
pub mod token;
pub mod tokenizer;
pub mod validator;

pub use catcode::{Catcode, CatcodeTable};
pub use diagnostics::{Diagnostic, Severity};
pub use pipeline::{convert_document, PipelineOptions, PipelineResult};
pub use report::{ConversionReport, ConversionStatus, CorpusReport};
pub use span::Span;
pub use token::{Token, TokenKind};
