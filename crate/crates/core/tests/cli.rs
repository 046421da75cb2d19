//! End-to-end checks of the command-line interface and its exit-code
//! contract: 0 error-free, 1 completed-with-errors, 2 failed or
//! invalid, 64 usage error.

use std::fs;
use std::process::Command;

fn texweb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_texweb"))
}

#[test]
fn convert_clean_exits_zero_and_writes_page() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sample.tex");
    fs::write(&input, "\\section{One}\nClean text with $x^2$.\n").unwrap();
    let out = dir.path().join("out");
    let status = texweb()
        .arg("convert")
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("sample.html").is_file());
    assert!(out.join("sample.report.json").is_file());
    assert!(out.join("theme.css").is_file());
}

#[test]
fn convert_with_unknown_macro_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("warn.tex");
    fs::write(&input, "Uses \\nosuchthing here.").unwrap();
    let status = texweb()
        .arg("convert")
        .arg(&input)
        .arg("-o")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    // Output still ships alongside the error diagnostics.
    assert!(dir.path().join("out/warn.html").is_file());
}

#[test]
fn convert_broken_math_exits_two_without_page() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("broken.tex");
    fs::write(&input, "Open math $x + y").unwrap();
    let status = texweb()
        .arg("convert")
        .arg(&input)
        .arg("-o")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!dir.path().join("out/broken.html").exists());
    // The failure report still exists for tooling.
    assert!(dir.path().join("out/broken.report.json").is_file());
}

#[test]
fn validate_three_child_mfrac_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.mml");
    fs::write(
        &input,
        "<math><mfrac><mn>1</mn><mn>2</mn><mn>3</mn></mfrac></math>",
    )
    .unwrap();
    let output = texweb().arg("validate").arg(&input).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    assert!(stdout.contains("arity"), "{stdout}");
}

#[test]
fn validate_clean_file_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("good.mml");
    fs::write(&input, "<math display=\"block\"><mi>x</mi></math>").unwrap();
    let status = texweb().arg("validate").arg(&input).status().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn usage_errors_exit_sixty_four() {
    for args in [vec!["frobnicate"], vec!["convert"], vec![]] {
        let status = texweb().args(&args).status().unwrap();
        assert_eq!(status.code(), Some(64), "args {args:?}");
    }
    // Missing input file is a usage problem, not a conversion failure.
    let status = texweb()
        .args(["convert", "/nonexistent/nope.tex"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(64));
}

#[test]
fn corpus_mode_writes_artifacts_and_maps_exit() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("good.tex"), "fine text").unwrap();
    fs::write(dir.path().join("bad.tex"), "broken $x").unwrap();
    let out = dir.path().join("out");
    let status = texweb()
        .arg("corpus")
        .arg(dir.path())
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "failed document present");
    assert!(out.join("report.jsonl").is_file());
    assert!(out.join("summary.json").is_file());
    assert!(out.join("ranking.txt").is_file());
    assert!(out.join("good.html").is_file());
    assert!(!out.join("bad.html").exists());
}

#[test]
fn json_flag_prints_summary_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("only.tex"), "short").unwrap();
    let out = dir.path().join("out");
    let output = texweb()
        .arg("corpus")
        .arg(dir.path())
        .arg("-o")
        .arg(&out)
        .arg("--json")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("stdout is pure JSON");
    assert_eq!(summary["documents"], 1);
}

#[test]
fn standalone_xml_mode_writes_namespaced_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mathy.tex");
    fs::write(&input, "Two: $a+b$ and $c$.").unwrap();
    let out = dir.path().join("out");
    let status = texweb()
        .args(["convert"])
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .args(["--math", "standalone-xml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let one = fs::read_to_string(out.join("mathy-math-001.xml")).unwrap();
    assert!(one.contains("xmlns=\"http://www.w3.org/1998/Math/MathML\""));
    assert!(out.join("mathy-math-002.xml").is_file());
}
