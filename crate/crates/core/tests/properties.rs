//! Randomized invariants over the tokenizer, expander, and math
//! parser.

use proptest::prelude::*;

use texweb::catcode::CatcodeTable;
use texweb::macros::Engine;
use texweb::math::parse_math;
use texweb::mathml::{emit_math, serialize};
use texweb::tokenizer::tokenize;
use texweb::validator::{parse_mathml, validate_core};

/// ASCII-ish text with TeX structure characters mixed in.
fn tex_soup() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            5 => proptest::char::range('a', 'z').prop_map(|c| c.to_string()),
            2 => Just(" ".to_string()),
            1 => Just("\n".to_string()),
            1 => prop_oneof![
                Just("{".to_string()),
                Just("}".to_string()),
                Just("\\alpha".to_string()),
                Just("\\frac".to_string()),
                Just("^".to_string()),
                Just("_".to_string()),
                Just("%".to_string()),
                Just("~".to_string()),
                Just("&".to_string()),
                Just("#1".to_string()),
                Just("$".to_string()),
                Just("123".to_string()),
            ],
        ],
        0..60,
    )
    .prop_map(|parts| parts.concat())
}

/// Like `tex_soup` but without `$` and `%`, so the token stream stays
/// in one mode and nothing is comment-swallowed.
fn math_soup() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            5 => proptest::char::range('a', 'z').prop_map(|c| c.to_string()),
            2 => proptest::char::range('0', '9').prop_map(|c| c.to_string()),
            2 => Just(" ".to_string()),
            1 => prop_oneof![
                Just("{".to_string()),
                Just("}".to_string()),
                Just("^".to_string()),
                Just("_".to_string()),
                Just("+".to_string()),
                Just("=".to_string()),
                Just("&".to_string()),
                Just("\\frac".to_string()),
                Just("\\sqrt".to_string()),
                Just("\\alpha".to_string()),
                Just("\\sum".to_string()),
                Just("\\left(".to_string()),
                Just("\\right)".to_string()),
                Just("\\\\".to_string()),
                Just("'".to_string()),
            ],
        ],
        0..40,
    )
    .prop_map(|parts| parts.concat())
}

proptest! {
    #[test]
    fn tokenizer_is_deterministic(input in tex_soup()) {
        let (a, da) = tokenize(&input, CatcodeTable::default_catcodes());
        let (b, db) = tokenize(&input, CatcodeTable::default_catcodes());
        prop_assert_eq!(a, b);
        prop_assert_eq!(da.len(), db.len());
    }

    #[test]
    fn token_spans_lie_within_input(input in tex_soup()) {
        let (tokens, _) = tokenize(&input, CatcodeTable::default_catcodes());
        for t in &tokens {
            prop_assert!(t.span.start <= t.span.end);
            prop_assert!(t.span.end <= input.len());
        }
        // Spans never go backwards.
        for pair in tokens.windows(2) {
            prop_assert!(pair[0].span.start <= pair[1].span.start);
        }
    }

    #[test]
    fn expansion_never_panics_and_is_deterministic(input in tex_soup()) {
        let (tokens, _) = tokenize(&input, CatcodeTable::default_catcodes());
        let a = Engine::with_builtins().expand(tokens.clone());
        let b = Engine::with_builtins().expand(tokens);
        prop_assert_eq!(a.tokens, b.tokens);
        prop_assert_eq!(a.missing, b.missing);
    }

    #[test]
    fn math_parse_is_total(input in math_soup()) {
        let (tokens, _) = tokenize(&input, CatcodeTable::default_catcodes());
        // Must not panic, whatever the input shape.
        let (expr, _diags) = parse_math(&tokens, true);
        let _ = format!("{expr:?}");
    }

    #[test]
    fn emitted_math_validates_and_round_trips(input in math_soup()) {
        let (tokens, _) = tokenize(&input, CatcodeTable::default_catcodes());
        let (expr, _) = parse_math(&tokens, false);
        let node = emit_math(&expr, &input, false);
        let violations = validate_core(&node);
        prop_assert!(violations.is_empty(), "{:?} for {:?}", violations, input);
        let first = serialize(&node);
        let reparsed = parse_mathml(&first).map_err(|e| {
            TestCaseError::fail(format!("reparse failed for {input:?}: {e}"))
        })?;
        prop_assert_eq!(first, serialize(&reparsed));
    }
}
