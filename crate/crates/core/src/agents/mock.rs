//! Offline transports for tests and hermetic runs.
//!
//! Script file format, one entry per line:
//!
//! ```text
//! # comment
//! FP <64 hex digits> => <response text>
//! FP <64 hex digits> => !FAIL
//! DEFAULT => <response text>
//! ```
//!
//! Response text is unescaped: `\n` becomes a newline, `\t` a tab, `\\` a
//! backslash. A literal response of `!FAIL` can be written as `\!FAIL`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use super::{CompletionRequest, Fingerprint, FinishReason, Transport, TransportError, TransportReply};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Respond(String),
    Fail,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("script has no entries")]
    Empty,
}

/// Responses keyed by request fingerprint. Unknown fingerprints get the
/// default response when one is set, otherwise a transport failure.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    entries: HashMap<Fingerprint, Directive>,
    default: Option<String>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn insert(&mut self, fingerprint: Fingerprint, directive: Directive) {
        self.entries.insert(fingerprint, directive);
    }

    pub fn respond_to(mut self, request: &CompletionRequest, text: impl Into<String>) -> Self {
        self.insert(request.fingerprint(), Directive::Respond(text.into()));
        self
    }

    pub fn fail_on(mut self, request: &CompletionRequest) -> Self {
        self.insert(request.fingerprint(), Directive::Fail);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.default.is_none()
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut mock = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let syntax = |message: &str| ScriptError::Syntax {
                line: line_no,
                message: message.to_string(),
            };
            let (lhs, rhs) = line
                .split_once(" => ")
                .ok_or_else(|| syntax("expected `<key> => <response>`"))?;
            let lhs = lhs.trim();
            if lhs == "DEFAULT" {
                mock.default = Some(unescape(rhs).map_err(syntax)?);
                continue;
            }
            let hex = lhs
                .strip_prefix("FP ")
                .ok_or_else(|| syntax("key must be `FP <hex>` or `DEFAULT`"))?;
            let fp: Fingerprint = hex.trim().parse().map_err(|_| syntax("bad fingerprint"))?;
            let directive = if rhs == "!FAIL" {
                Directive::Fail
            } else {
                Directive::Respond(unescape(rhs).map_err(syntax)?)
            };
            mock.entries.insert(fp, directive);
        }
        if mock.is_empty() {
            return Err(ScriptError::Empty);
        }
        Ok(mock)
    }

    /// Renders the script in the file format accepted by [`ScriptedMock::parse`],
    /// sorted by fingerprint.
    pub fn to_script(&self) -> String {
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for fp in keys {
            let rhs = match &self.entries[fp] {
                Directive::Fail => "!FAIL".to_string(),
                Directive::Respond(text) => escape(text),
            };
            out.push_str(&format!("FP {fp} => {rhs}\n"));
        }
        if let Some(default) = &self.default {
            out.push_str(&format!("DEFAULT => {}\n", escape(default)));
        }
        out
    }
}

impl Transport for ScriptedMock {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, TransportError> {
        let fp = request.fingerprint();
        match self.entries.get(&fp) {
            Some(Directive::Respond(text)) => Ok(TransportReply::stop(text.clone())),
            Some(Directive::Fail) => Err(TransportError::new("scripted failure")),
            None => match &self.default {
                Some(text) => Ok(TransportReply::stop(text.clone())),
                None => Err(TransportError::new(format!("no scripted response for {fp}"))),
            },
        }
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    if text == "!FAIL" {
        return "\\!FAIL".to_string();
    }
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> Result<String, &'static str> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some('!') => out.push('!'),
            _ => return Err("bad escape sequence"),
        }
    }
    Ok(out)
}

/// Answers every request through a closure. Determinism is the closure's
/// responsibility; pipeline tests use closures that depend only on the
/// request.
pub struct FnMock<F>(F);

impl<F> FnMock<F>
where
    F: Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> Transport for FnMock<F>
where
    F: Fn(&CompletionRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, TransportError> {
        (self.0)(request).map(TransportReply::stop)
    }
}

/// Fails the first `failures` calls, then answers with `response`.
#[derive(Debug)]
pub struct FailSchedule {
    failures: usize,
    response: String,
    calls: AtomicUsize,
}

impl FailSchedule {
    pub fn new(failures: usize, response: impl Into<String>) -> Self {
        Self {
            failures,
            response: response.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always_failing() -> Self {
        Self::new(usize::MAX, "")
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FailSchedule {
    fn send(&self, _request: &CompletionRequest) -> Result<TransportReply, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(TransportError::new(format!("scheduled failure {}", n + 1)))
        } else {
            Ok(TransportReply {
                text: self.response.clone(),
                finish_reason: FinishReason::Stop,
            })
        }
    }
}
