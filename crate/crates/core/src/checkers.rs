//! Executability checks: external compiler commands run without a shell,
//! and an in-process parse check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::grammar::Grammar;

pub const FILE_SLOT: &str = "{file}";
pub const BODY_SLOT: &str = "{body}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub executable: bool,
    pub diagnostics: String,
    pub duration_ms: u64,
    pub checker_id: String,
}

/// Decides whether a candidate program is executable.
///
/// `Err` is reserved for a checker that cannot run at all; a failed check
/// is an `Ok` outcome with `executable == false`.
pub trait Checker: Send + Sync {
    fn id(&self) -> String;

    fn check(&self, source: &str) -> Result<CheckOutcome>;
}

impl<C: Checker + ?Sized> Checker for Box<C> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn check(&self, source: &str) -> Result<CheckOutcome> {
        (**self).check(source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalCheckerConfig {
    /// Program and arguments, shell-quoted; `{file}` appears exactly once.
    pub command_template: String,
    pub success_exit_codes: BTreeSet<i32>,
    pub timeout_ms: u64,
    /// Directory copied into the scratch directory before each check.
    pub workdir_template: Option<PathBuf>,
    /// Wrapper around the candidate with a `{body}` slot.
    pub scaffold: Option<String>,
    pub file_extension: String,
    /// Fixed file name, for compilers that tie names to contents.
    pub file_name: Option<String>,
    pub env: BTreeMap<String, String>,
}

impl Default for ExternalCheckerConfig {
    fn default() -> Self {
        Self {
            command_template: String::new(),
            success_exit_codes: BTreeSet::from([0]),
            timeout_ms: 10_000,
            workdir_template: None,
            scaffold: None,
            file_extension: "txt".into(),
            file_name: None,
            env: BTreeMap::new(),
        }
    }
}

const JAVA_SCAFFOLD: &str = "import java.sql.*;\nimport java.util.*;\n\npublic class Main {\n{body}\n}\n";

impl ExternalCheckerConfig {
    pub fn command(template: impl Into<String>) -> Self {
        Self {
            command_template: template.into(),
            ..Default::default()
        }
    }

    /// Python byte-compilation of the candidate file.
    pub fn lyra() -> Self {
        Self {
            command_template: "python3 -m py_compile {file}".into(),
            file_extension: "py".into(),
            ..Default::default()
        }
    }

    /// pylint with only the syntax-error message enabled.
    pub fn lyra_pylint() -> Self {
        Self {
            command_template: "pylint --disable=all --enable=E0001 --score=n {file}".into(),
            file_extension: "py".into(),
            ..Default::default()
        }
    }

    /// javac over a class wrapper with JDBC imports.
    pub fn pisces() -> Self {
        Self {
            command_template: "javac -d . {file}".into(),
            scaffold: Some(JAVA_SCAFFOLD.into()),
            file_extension: "java".into(),
            file_name: Some("Main.java".into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.command_template.matches(FILE_SLOT).count();
        if n != 1 {
            return Err(Error::CheckerConfig(format!(
                "command template must contain {FILE_SLOT} exactly once, found {n}"
            )));
        }
        let argv = shlex::split(&self.command_template)
            .ok_or_else(|| Error::CheckerConfig("unbalanced quoting in command template".into()))?;
        if argv.is_empty() {
            return Err(Error::CheckerConfig("empty command template".into()));
        }
        if let Some(s) = &self.scaffold {
            if !s.contains(BODY_SLOT) {
                return Err(Error::CheckerConfig(format!("scaffold lacks a {BODY_SLOT} slot")));
            }
        }
        if self.success_exit_codes.is_empty() {
            return Err(Error::CheckerConfig("no success exit codes".into()));
        }
        Ok(argv)
    }
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let dest = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            fs::create_dir_all(&dest)?;
            copy_tree(&entry.path(), &dest)?;
        } else {
            fs::copy(entry.path(), dest)?;
        }
    }
    Ok(())
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Writes the candidate into a fresh scratch directory and runs the
/// configured command on it. The directory is removed afterwards.
pub fn check_external(cfg: &ExternalCheckerConfig, source: &str) -> Result<CheckOutcome> {
    let argv = cfg.validate()?;
    let started = Instant::now();
    let dir = tempfile::Builder::new().prefix("turducken-check-").tempdir()?;
    if let Some(template) = &cfg.workdir_template {
        copy_tree(template, dir.path())
            .map_err(|e| Error::CheckerConfig(format!("workdir template {}: {e}", template.display())))?;
    }
    let name = cfg
        .file_name
        .clone()
        .unwrap_or_else(|| format!("candidate.{}", cfg.file_extension));
    let file = dir.path().join(name);
    let text = match &cfg.scaffold {
        Some(s) => s.replace(BODY_SLOT, source),
        None => source.to_string(),
    };
    fs::write(&file, text)?;
    let file_str = file.to_string_lossy();
    let argv: Vec<String> = argv.iter().map(|a| a.replace(FILE_SLOT, &file_str)).collect();

    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(dir.path())
        .envs(&cfg.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::CheckerUnavailable(format!("cannot run `{}`: {e}", argv[0])))?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let id = format!("cmd:{}", cfg.command_template);
    let status = child.wait_timeout(Duration::from_millis(cfg.timeout_ms))?;
    let outcome = match status {
        Some(status) => {
            let mut diagnostics = err.join().unwrap_or_default();
            let stdout = out.join().unwrap_or_default();
            if !stdout.is_empty() {
                if !diagnostics.is_empty() {
                    diagnostics.push('\n');
                }
                diagnostics.push_str(&stdout);
            }
            let executable = status.code().is_some_and(|c| cfg.success_exit_codes.contains(&c));
            if status.code().is_none() {
                diagnostics.push_str("\nterminated by signal");
            }
            CheckOutcome {
                executable,
                diagnostics,
                duration_ms: started.elapsed().as_millis() as u64,
                checker_id: id,
            }
        }
        None => {
            let _ = child.kill();
            let _ = child.wait();
            // grandchildren may still hold the pipes open; the reader
            // threads are left to finish on their own
            CheckOutcome {
                executable: false,
                diagnostics: format!("timeout after {} ms", cfg.timeout_ms),
                duration_ms: started.elapsed().as_millis() as u64,
                checker_id: id,
            }
        }
    };
    Ok(outcome)
}

/// Parses `source` in-process; executable iff the tree has no error nodes.
pub fn check_parse(source: &str, grammar: Grammar) -> Result<CheckOutcome> {
    let started = Instant::now();
    let tree = grammar.parse(source)?;
    let executable = !tree.has_error();
    Ok(CheckOutcome {
        executable,
        diagnostics: if executable {
            String::new()
        } else {
            "syntax error".into()
        },
        duration_ms: started.elapsed().as_millis() as u64,
        checker_id: format!("parse:{grammar}"),
    })
}

#[derive(Debug, Clone)]
pub struct ExternalChecker {
    pub config: ExternalCheckerConfig,
}

impl ExternalChecker {
    pub fn new(config: ExternalCheckerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl Checker for ExternalChecker {
    fn id(&self) -> String {
        format!("cmd:{}", self.config.command_template)
    }

    fn check(&self, source: &str) -> Result<CheckOutcome> {
        check_external(&self.config, source)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseChecker {
    pub grammar: Grammar,
}

impl Checker for ParseChecker {
    fn id(&self) -> String {
        format!("parse:{}", self.grammar)
    }

    fn check(&self, source: &str) -> Result<CheckOutcome> {
        check_parse(source, self.grammar)
    }
}

/// Checker backed by a predicate; used for scripted scenarios.
pub struct ScriptedChecker<F> {
    verdict: F,
}

impl<F: Fn(&str) -> bool + Send + Sync> ScriptedChecker<F> {
    pub fn new(verdict: F) -> Self {
        Self { verdict }
    }
}

impl<F: Fn(&str) -> bool + Send + Sync> Checker for ScriptedChecker<F> {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn check(&self, source: &str) -> Result<CheckOutcome> {
        Ok(CheckOutcome {
            executable: (self.verdict)(source),
            diagnostics: String::new(),
            duration_ms: 0,
            checker_id: self.id(),
        })
    }
}

/// Builds a checker from a spec string: `cmd:<template>`, `parse:<grammar>`,
/// `lyra`, `lyra-pylint` or `pisces`.
pub fn checker_from_spec(spec: &str, timeout_ms: Option<u64>) -> Result<Box<dyn Checker>> {
    let mut cfg = match spec {
        "lyra" => ExternalCheckerConfig::lyra(),
        "lyra-pylint" => ExternalCheckerConfig::lyra_pylint(),
        "pisces" => ExternalCheckerConfig::pisces(),
        _ => {
            if let Some(g) = spec.strip_prefix("parse:") {
                return Ok(Box::new(ParseChecker { grammar: g.parse()? }));
            }
            match spec.strip_prefix("cmd:") {
                Some(t) => ExternalCheckerConfig::command(t),
                None => return Err(Error::CheckerConfig(format!("unknown checker `{spec}`"))),
            }
        }
    };
    if let Some(t) = timeout_ms {
        cfg.timeout_ms = t;
    }
    Ok(Box::new(ExternalChecker::new(cfg)?))
}

/// Checks every source on a bounded pool (`pool == 0` means one worker per
/// CPU). Outcomes follow input order; errors stay per candidate.
pub fn parallel_check_all<C, S>(checker: &C, sources: &[S], pool: usize) -> Vec<Result<CheckOutcome>>
where
    C: Checker + ?Sized,
    S: AsRef<str> + Sync,
{
    let threads = if pool == 0 {
        thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        pool
    };
    let run = || {
        sources
            .par_iter()
            .map(|s| checker.check(s.as_ref()))
            .collect::<Vec<_>>()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p.install(run),
        Err(_) => sources.iter().map(|s| checker.check(s.as_ref())).collect(),
    }
}
