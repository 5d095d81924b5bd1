//! Child-process execution of untrusted candidate programs.
//!
//! Every execution gets a fresh process in its own process group, a private
//! temporary working directory, an environment reduced to an allowlist, piped
//! stdin, and capped stdout/stderr capture. The whole group is killed when the
//! wall-clock budget runs out, and again after the leader exits so that no
//! stragglers survive the call.
//!
//! In-interpreter hardening (blocked builtins, print replacement, line-numbered
//! error reports) is the job of a guard shim invoked through the runner
//! command. When the shim is used, its final stderr line has the form
//! `###ERR {"type": ..., "line": ..., "msg": ...}` and is parsed into
//! [`ExecutionOutcome::error_line`].

use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problemgen::IoCase;

pub const DEFAULT_WALL_MS: u64 = 10_000;
pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 64 * 1024;
/// How far past `wall_ms` a timed-out execution may run before it has been
/// killed and reaped.
pub const OVERSHOOT_BUDGET_MS: u64 = 500;
pub const PROGRAM_PLACEHOLDER: &str = "{program}";
pub const ERROR_REPORT_PREFIX: &str = "###ERR ";

/// Environment variables passed through to the child when set in the parent.
pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "GUARD_BLOCKLIST"];

const POLL_INTERVAL: Duration = Duration::from_millis(2);
const STDERR_TAIL_BYTES: usize = 4096;
const READ_CHUNK: usize = 8192;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("runner command must contain the {PROGRAM_PLACEHOLDER} placeholder: {0:?}")]
    InvalidRunner(String),
    #[error("invalid execution limits: {0}")]
    InvalidLimits(&'static str),
    #[error("case list is empty")]
    NoCases,
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionLimits {
    pub wall_ms: u64,
    pub max_output_bytes: usize,
    /// Applied as an address-space rlimit on the child when present.
    #[serde(default)]
    pub max_memory_hint: Option<u64>,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            wall_ms: DEFAULT_WALL_MS,
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            max_memory_hint: None,
        }
    }
}

impl ExecutionLimits {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.wall_ms == 0 {
            return Err(SandboxError::InvalidLimits("wall_ms must be positive"));
        }
        if self.max_output_bytes == 0 {
            return Err(SandboxError::InvalidLimits("max_output_bytes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Completed,
    Timeout,
    RuntimeError,
    OutputOverflow,
    SetupError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub verdict: Verdict,
    pub stdout: String,
    pub stderr: String,
    pub exit_status: Option<i32>,
    pub duration_ms: u64,
    pub error_line: Option<u32>,
}

impl ExecutionOutcome {
    fn setup_error(message: String, started: Instant) -> Self {
        Self {
            verdict: Verdict::SetupError,
            stdout: String::new(),
            stderr: message,
            exit_status: None,
            duration_ms: started.elapsed().as_millis() as u64,
            error_line: None,
        }
    }

    /// Short human-readable description of what the program produced, used
    /// when a failure is reported back to an agent.
    pub fn describe_actual(&self) -> String {
        match self.verdict {
            Verdict::Completed => normalize(&self.stdout),
            Verdict::Timeout => format!("Timeout (no answer within {} ms)", self.duration_ms),
            Verdict::OutputOverflow => "OutputOverflow (output exceeded the size cap)".to_string(),
            Verdict::SetupError => "SetupError".to_string(),
            Verdict::RuntimeError => {
                let last = self
                    .stderr
                    .lines()
                    .rev()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("")
                    .trim();
                match self.error_line {
                    Some(line) => format!("RuntimeError at line {line}: {last}"),
                    None if last.is_empty() => "RuntimeError".to_string(),
                    None => format!("RuntimeError: {last}"),
                }
            }
        }
    }
}

/// Structured error report emitted by the guard shim as its final stderr line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub line: Option<u32>,
    #[serde(default)]
    pub msg: String,
}

/// Parses the `###ERR {json}` report from the last non-empty stderr line.
pub fn parse_error_report(stderr: &str) -> Option<ErrorReport> {
    let last = stderr.lines().rev().find(|l| !l.trim().is_empty())?;
    let json = last.trim_end().strip_prefix(ERROR_REPORT_PREFIX)?;
    serde_json::from_str(json).ok()
}

/// Output comparison rule: trailing whitespace is stripped from every line and
/// trailing empty lines are dropped; everything else is compared byte-exact.
pub fn normalize(text: &str) -> String {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last() == Some(&"") {
        lines.pop();
    }
    lines.join("\n")
}

pub fn outputs_match(actual: &str, expected: &str) -> bool {
    normalize(actual) == normalize(expected)
}

/// A runner command line such as `python3 {program}`. Tokens are split on
/// whitespace; every occurrence of `{program}` is replaced by the path of the
/// program file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerCommand {
    template: String,
    argv: Vec<String>,
}

impl RunnerCommand {
    pub fn parse(template: &str) -> Result<Self, SandboxError> {
        let argv: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        if argv.is_empty() || !argv.iter().any(|t| t.contains(PROGRAM_PLACEHOLDER)) {
            return Err(SandboxError::InvalidRunner(template.to_owned()));
        }
        Ok(Self {
            template: template.to_owned(),
            argv,
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    fn argv_for(&self, program: &Path) -> Vec<String> {
        let path = program.to_string_lossy();
        self.argv
            .iter()
            .map(|t| t.replace(PROGRAM_PLACEHOLDER, &path))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub runner: RunnerCommand,
    pub limits: ExecutionLimits,
    pub env_allowlist: Vec<String>,
    /// Parent directory for per-execution working directories; the system temp
    /// directory when unset.
    pub temp_root: Option<PathBuf>,
    /// File name the program source is written to inside the working directory.
    pub program_file: String,
}

impl SandboxConfig {
    pub fn new(runner: RunnerCommand) -> Self {
        Self {
            runner,
            limits: ExecutionLimits::default(),
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            temp_root: None,
            program_file: "solution.py".to_string(),
        }
    }

    pub fn with_limits(mut self, limits: ExecutionLimits) -> Self {
        self.limits = limits;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: IoCase,
    pub outcome: ExecutionOutcome,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub case_results: Vec<CaseResult>,
    pub all_passed: bool,
    pub first_failure: Option<usize>,
}

impl SuiteResult {
    pub fn from_results(case_results: Vec<CaseResult>) -> Self {
        let first_failure = case_results.iter().position(|r| !r.passed);
        Self {
            all_passed: first_failure.is_none(),
            first_failure,
            case_results,
        }
    }

    pub fn first_failed(&self) -> Option<&CaseResult> {
        self.first_failure.map(|i| &self.case_results[i])
    }
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        config.limits.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Runs `program_source` once with `stdin_text` on its stdin.
    ///
    /// Failures to prepare or start the child are reported with
    /// [`Verdict::SetupError`] so callers can tell them apart from failures of
    /// the program itself.
    pub fn execute(&self, program_source: &str, stdin_text: &str) -> ExecutionOutcome {
        let started = Instant::now();
        let limits = self.config.limits;

        let mut builder = tempfile::Builder::new();
        builder.prefix("seqforge-exec-");
        let workdir = match &self.config.temp_root {
            Some(root) => builder.tempdir_in(root),
            None => builder.tempdir(),
        };
        let workdir = match workdir {
            Ok(dir) => dir,
            Err(e) => return ExecutionOutcome::setup_error(format!("temp dir: {e}"), started),
        };
        let program_path = workdir.path().join(&self.config.program_file);
        if let Err(e) = std::fs::write(&program_path, program_source) {
            return ExecutionOutcome::setup_error(format!("writing program: {e}"), started);
        }

        let argv = self.config.runner.argv_for(&program_path);
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(workdir.path())
            .env_clear()
            .env("HOME", workdir.path())
            .env("TMPDIR", workdir.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for key in &self.config.env_allowlist {
            if let Some(value) = std::env::var_os(key) {
                cmd.env(key, value);
            }
        }
        if let Some(bytes) = limits.max_memory_hint {
            // SAFETY: setrlimit is async-signal-safe and touches no parent state.
            unsafe {
                cmd.pre_exec(move || {
                    let lim = libc::rlimit {
                        rlim_cur: bytes as libc::rlim_t,
                        rlim_max: bytes as libc::rlim_t,
                    };
                    if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    Ok(())
                });
            }
        }

        let mut child = match cmd.spawn() {
            Ok(child) => child,
            Err(e) => {
                return ExecutionOutcome::setup_error(
                    format!("failed to start `{}`: {e}", argv[0]),
                    started,
                )
            }
        };
        let pgid = child.id() as libc::pid_t;

        if let Some(mut stdin) = child.stdin.take() {
            let input = stdin_text.as_bytes().to_vec();
            // Not joined: a program that never reads its input must not block us.
            thread::spawn(move || {
                let _ = stdin.write_all(&input);
            });
        }

        let overflow = Arc::new(AtomicBool::new(false));
        let stdout_reader = child.stdout.take().map(|pipe| {
            let overflow = Arc::clone(&overflow);
            let cap = limits.max_output_bytes;
            thread::spawn(move || read_capped(pipe, cap, Some(&overflow)))
        });
        let stderr_reader = child.stderr.take().map(|pipe| {
            let cap = limits.max_output_bytes;
            thread::spawn(move || read_capped(pipe, cap, None))
        });

        let wall = Duration::from_millis(limits.wall_ms);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {}
                Err(_) => break None,
            }
            if overflow.load(Ordering::Relaxed) {
                kill_group(pgid);
                break child.wait().ok();
            }
            if started.elapsed() >= wall {
                timed_out = true;
                kill_group(pgid);
                let _ = child.wait();
                break None;
            }
            thread::sleep(POLL_INTERVAL);
        };
        // Reap anything the program left running in its group.
        kill_group(pgid);

        let stdout = stdout_reader
            .and_then(|h| h.join().ok())
            .unwrap_or_default();
        let stderr = stderr_reader
            .and_then(|h| h.join().ok())
            .unwrap_or_default();
        let elapsed = started.elapsed().as_millis() as u64;
        drop(workdir);

        let stdout_text = truncate_utf8(stdout.head, limits.max_output_bytes);
        let stderr_text = if stderr.overflowed {
            let head = truncate_utf8(stderr.head, limits.max_output_bytes);
            let tail = String::from_utf8_lossy(&stderr.tail).into_owned();
            format!("{head}\n...[stderr truncated]...\n{tail}")
        } else {
            truncate_utf8(stderr.head, limits.max_output_bytes)
        };
        let error_line = parse_error_report(&stderr_text).and_then(|r| r.line);
        let exit_status = status.map(|s| match s.code() {
            Some(code) => code,
            None => 128 + s.signal().unwrap_or(0),
        });

        let verdict = if timed_out {
            Verdict::Timeout
        } else if stdout.overflowed {
            Verdict::OutputOverflow
        } else if status.map(|s| s.success()).unwrap_or(false) {
            Verdict::Completed
        } else {
            Verdict::RuntimeError
        };
        let duration_ms = if timed_out {
            elapsed.max(limits.wall_ms)
        } else {
            elapsed
        };

        ExecutionOutcome {
            verdict,
            stdout: stdout_text,
            stderr: stderr_text,
            exit_status: if verdict == Verdict::Timeout { None } else { exit_status },
            duration_ms,
            error_line,
        }
    }

    /// Feeds `case.input` (plus a newline) to the program and compares the
    /// normalized stdout with the expected output.
    pub fn run_case(&self, program_source: &str, case: &IoCase) -> CaseResult {
        let stdin = format!("{}\n", case.input);
        let outcome = self.execute(program_source, &stdin);
        let passed = outcome.verdict == Verdict::Completed
            && outputs_match(&outcome.stdout, &case.expected_output);
        CaseResult {
            case: case.clone(),
            outcome,
            passed,
        }
    }

    /// Runs every case in order. With `fail_fast` the suite stops after the
    /// first failing case. A setup failure aborts the suite with an error.
    pub fn run_suite(
        &self,
        program_source: &str,
        cases: &[IoCase],
        fail_fast: bool,
    ) -> Result<SuiteResult, SandboxError> {
        if cases.is_empty() {
            return Err(SandboxError::NoCases);
        }
        let mut results = Vec::with_capacity(cases.len());
        for case in cases {
            let result = self.run_case(program_source, case);
            if result.outcome.verdict == Verdict::SetupError {
                return Err(SandboxError::Setup(result.outcome.stderr));
            }
            let failed = !result.passed;
            results.push(result);
            if failed && fail_fast {
                break;
            }
        }
        Ok(SuiteResult::from_results(results))
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; a stale group id yields ESRCH, which is ignored.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

#[derive(Default)]
struct Captured {
    head: Vec<u8>,
    tail: Vec<u8>,
    overflowed: bool,
}

fn read_capped(mut pipe: impl Read, cap: usize, overflow: Option<&AtomicBool>) -> Captured {
    let mut out = Captured::default();
    let mut chunk = [0u8; READ_CHUNK];
    loop {
        let n = match pipe.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        let data = &chunk[..n];
        let room = cap.saturating_sub(out.head.len());
        out.head.extend_from_slice(&data[..room.min(n)]);
        if n > room {
            if !out.overflowed {
                out.overflowed = true;
                if let Some(flag) = overflow {
                    flag.store(true, Ordering::Relaxed);
                }
            }
            out.tail.extend_from_slice(&data[room.min(n)..]);
            if out.tail.len() > STDERR_TAIL_BYTES {
                let excess = out.tail.len() - STDERR_TAIL_BYTES;
                out.tail.drain(..excess);
            }
        }
    }
    out
}

fn truncate_utf8(bytes: Vec<u8>, cap: usize) -> String {
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    if text.len() > cap {
        let mut end = cap;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        text.truncate(end);
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh_sandbox(wall_ms: u64, max_output_bytes: usize) -> Sandbox {
        let config = SandboxConfig::new(RunnerCommand::parse("sh {program}").unwrap()).with_limits(
            ExecutionLimits {
                wall_ms,
                max_output_bytes,
                max_memory_hint: None,
            },
        );
        Sandbox::new(config).unwrap()
    }

    fn case(input: &str, expected: &str) -> IoCase {
        IoCase {
            input: input.to_string(),
            expected_output: expected.to_string(),
            term_position: None,
        }
    }

    #[test]
    fn normalization_rules() {
        assert!(outputs_match("21\n", "21"));
        assert!(outputs_match("21 ", "21"));
        assert!(outputs_match("21\r\n\n\n", "21"));
        assert!(outputs_match("1 \n2\t\n", "1\n2"));
        assert!(!outputs_match("2 1", "21"));
        assert!(!outputs_match(" 21", "21"));
    }

    #[test]
    fn runner_requires_placeholder() {
        assert!(RunnerCommand::parse("python3 main.py").is_err());
        assert!(RunnerCommand::parse("").is_err());
        let r = RunnerCommand::parse("python3 -I {program}").unwrap();
        assert_eq!(
            r.argv_for(Path::new("/tmp/x.py")),
            vec!["python3", "-I", "/tmp/x.py"]
        );
    }

    #[test]
    fn limits_validation() {
        let zero = ExecutionLimits {
            wall_ms: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        assert_eq!(ExecutionLimits::default().wall_ms, 10_000);
    }

    #[test]
    fn echo_increment_completes() {
        let sb = sh_sandbox(5_000, 1024);
        let out = sb.execute("read n\necho $((n + 1))\n", "4\n");
        assert_eq!(out.verdict, Verdict::Completed);
        assert_eq!(out.exit_status, Some(0));
        assert_eq!(normalize(&out.stdout), "5");
    }

    #[test]
    fn nonzero_exit_is_runtime_error() {
        let sb = sh_sandbox(5_000, 1024);
        let out = sb.execute("echo boom >&2\nexit 3\n", "");
        assert_eq!(out.verdict, Verdict::RuntimeError);
        assert_eq!(out.exit_status, Some(3));
        assert!(out.error_line.is_none());
        assert_eq!(out.describe_actual(), "RuntimeError: boom");
    }

    #[test]
    fn guard_report_line_is_parsed() {
        let sb = sh_sandbox(5_000, 1024);
        let program = "echo partial\n\
            echo 'Traceback' >&2\n\
            echo '###ERR {\"type\": \"ZeroDivisionError\", \"line\": 3, \"msg\": \"division by zero\"}' >&2\n\
            exit 1\n";
        let out = sb.execute(program, "");
        assert_eq!(out.verdict, Verdict::RuntimeError);
        assert_eq!(out.error_line, Some(3));
        let report = parse_error_report(&out.stderr).unwrap();
        assert_eq!(report.kind, "ZeroDivisionError");
    }

    #[test]
    fn error_report_must_be_last_line() {
        assert!(parse_error_report("###ERR {\"type\":\"X\",\"line\":1}\nmore\n").is_none());
        assert!(parse_error_report("###ERR not-json").is_none());
        assert_eq!(
            parse_error_report("x\n###ERR {\"type\":\"X\",\"line\":null,\"msg\":\"m\"}\n\n")
                .unwrap()
                .line,
            None
        );
    }

    #[test]
    fn missing_interpreter_is_setup_error() {
        let config = SandboxConfig::new(
            RunnerCommand::parse("/nonexistent/interpreter-xyz {program}").unwrap(),
        );
        let sb = Sandbox::new(config).unwrap();
        let out = sb.execute("", "");
        assert_eq!(out.verdict, Verdict::SetupError);
        let err = sb.run_suite("", &[case("1", "1")], false).unwrap_err();
        assert!(matches!(err, SandboxError::Setup(_)));
    }

    #[test]
    fn environment_is_scrubbed() {
        std::env::set_var("SEQFORGE_SECRET_TEST_VAR", "leak");
        let sb = sh_sandbox(5_000, 1024);
        let out = sb.execute("echo \"[${SEQFORGE_SECRET_TEST_VAR}]\"\n", "");
        assert_eq!(normalize(&out.stdout), "[]");
    }

    #[test]
    fn run_case_comparisons() {
        let sb = sh_sandbox(5_000, 1024);
        assert!(sb.run_case("echo 21\n", &case("0", "21")).passed);
        assert!(sb.run_case("printf '21 '\n", &case("0", "21")).passed);
        assert!(!sb.run_case("echo '2 1'\n", &case("0", "21")).passed);
        // Right output, wrong exit status.
        assert!(!sb.run_case("echo 21; exit 1\n", &case("0", "21")).passed);
    }

    #[test]
    fn suite_fail_fast_and_full() {
        let sb = sh_sandbox(5_000, 1024);
        let cases = vec![case("1", "2"), case("2", "3"), case("3", "5")];
        let prog = "read n\necho $((n + 1))\n";
        let full = sb.run_suite(prog, &cases, false).unwrap();
        assert_eq!(full.case_results.len(), 3);
        assert!(!full.all_passed);
        assert_eq!(full.first_failure, Some(2));
        let fast = sb.run_suite("echo 1\n", &cases, true).unwrap();
        assert_eq!(fast.case_results.len(), 1);
        assert_eq!(fast.first_failure, Some(0));
        assert!(sb.run_suite(prog, &[], true).is_err());
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let s = truncate_utf8("ééé".as_bytes().to_vec(), 3);
        assert_eq!(s, "é");
        let s = truncate_utf8(vec![0xff, b'a', b'b'], 3);
        assert!(s.len() <= 3);
    }
}
