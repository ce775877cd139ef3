use std::collections::HashSet;

use turducken_core::checkers::{
    check_external, check_parse, checker_from_spec, parallel_check_all, ExternalChecker, ExternalCheckerConfig,
};
use turducken_core::{Checker, Error, Grammar};

fn cmd(template: &str, timeout_ms: u64) -> ExternalCheckerConfig {
    ExternalCheckerConfig {
        timeout_ms,
        ..ExternalCheckerConfig::command(template)
    }
}

#[test]
fn stub_command_matrix() {
    let ok = check_external(&cmd("sh -c 'exit 0' {file}", 5000), "x").unwrap();
    assert!(ok.executable);
    let fail = check_external(&cmd("sh -c 'echo broken >&2; exit 1' {file}", 5000), "x").unwrap();
    assert!(!fail.executable);
    assert!(fail.diagnostics.contains("broken"));
    let slow = check_external(&cmd("sh -c 'sleep 5' {file}", 200), "x").unwrap();
    assert!(!slow.executable);
    assert!(slow.diagnostics.contains("timeout"), "{}", slow.diagnostics);
    assert!(slow.duration_ms < 4000);
}

#[test]
fn custom_success_codes() {
    let mut c = cmd("sh -c 'exit 3' {file}", 5000);
    c.success_exit_codes = [0, 3].into();
    assert!(check_external(&c, "").unwrap().executable);
}

#[test]
fn candidate_text_reaches_the_file() {
    let c = cmd("grep -q needle {file}", 5000);
    assert!(check_external(&c, "hay needle hay").unwrap().executable);
    assert!(!check_external(&c, "hay hay").unwrap().executable);
}

#[test]
fn scaffold_wraps_body() {
    let mut c = cmd("grep -q 'BEGIN x = 1 END' {file}", 5000);
    c.scaffold = Some("BEGIN {body} END".into());
    assert!(check_external(&c, "x = 1").unwrap().executable);
}

#[test]
fn concurrent_checks_use_separate_files() {
    // each check echoes the path and content of its own file
    let checker = ExternalChecker::new(cmd("sh -c 'echo \"$0\"; cat \"$0\"' {file}", 10_000)).unwrap();
    let sources: Vec<String> = (0..16).map(|i| format!("candidate-{i}")).collect();
    let out = parallel_check_all(&checker, &sources, 16);
    let mut paths = HashSet::new();
    for (src, o) in sources.iter().zip(out) {
        let o = o.unwrap();
        let mut lines = o.diagnostics.lines();
        let path = lines.next().unwrap().to_string();
        assert_eq!(lines.next(), Some(src.as_str()));
        assert!(paths.insert(path));
    }
    assert_eq!(paths.len(), 16);
}

#[test]
fn same_source_same_verdict() {
    let c = checker_from_spec("parse:python", None).unwrap();
    for src in ["x = 1\n", "def (:\n"] {
        let a = c.check(src).unwrap();
        let b = c.check(src).unwrap();
        assert_eq!(a.executable, b.executable);
    }
}

#[test]
fn parse_checker_flags_errors() {
    assert!(check_parse("x = 1\n", Grammar::Python).unwrap().executable);
    assert!(!check_parse("x = (1,\n", Grammar::Python).unwrap().executable);
    assert!(check_parse("class A {}", Grammar::Java).unwrap().executable);
    assert!(!check_parse("class A {", Grammar::Java).unwrap().executable);
}

#[test]
fn missing_program_is_unavailable() {
    let err = check_external(&cmd("definitely-not-a-real-binary-xyz {file}", 1000), "x").unwrap_err();
    assert!(matches!(err, Error::CheckerUnavailable(_)), "{err}");
}

#[test]
fn template_needs_exactly_one_file_slot() {
    assert!(matches!(
        ExternalChecker::new(cmd("true", 1000)),
        Err(Error::CheckerConfig(_))
    ));
    assert!(matches!(
        ExternalChecker::new(cmd("cat {file} {file}", 1000)),
        Err(Error::CheckerConfig(_))
    ));
    assert!(checker_from_spec("bogus", None).is_err());
    assert!(checker_from_spec("parse:cobol", None).is_err());
}

#[test]
fn presets_validate() {
    for c in [
        ExternalCheckerConfig::lyra(),
        ExternalCheckerConfig::lyra_pylint(),
        ExternalCheckerConfig::pisces(),
    ] {
        assert!(c.validate().is_ok());
    }
}

#[test]
fn python_compile_preset_when_available() {
    let c = checker_from_spec("lyra", Some(20_000)).unwrap();
    match c.check("x = 1\n") {
        Ok(o) => {
            assert!(o.executable, "{}", o.diagnostics);
            assert!(!c.check("def (:\n").unwrap().executable);
        }
        Err(Error::CheckerUnavailable(_)) => eprintln!("python3 not installed; skipped"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn java_compile_preset_when_available() {
    let c = checker_from_spec("pisces", Some(60_000)).unwrap();
    match c.check("int f() { return 1; }") {
        Ok(o) => {
            assert!(o.executable, "{}", o.diagnostics);
            assert!(!c.check("int f() { return }").unwrap().executable);
        }
        Err(Error::CheckerUnavailable(_)) => eprintln!("javac not installed; skipped"),
        Err(e) => panic!("{e}"),
    }
}
