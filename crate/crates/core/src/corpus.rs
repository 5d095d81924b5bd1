//! Sequence records: ingestion from record files, information-density
//! filtering, and the SFT/RL group split.
//!
//! # Record file format
//!
//! UTF-8 text. Records are separated by a line containing only `%%`. Inside a
//! record every non-blank line is `<key>: <value>`:
//!
//! | key            | required | value                                         |
//! |----------------|----------|-----------------------------------------------|
//! | `id`           | yes      | identifier, unique within the file            |
//! | `terms`        | yes      | comma-separated decimal integers (any size)   |
//! | `offset`       | no (0)   | index of the first listed term (`i64`)        |
//! | `title`        | no ("")  | text                                          |
//! | `description`  | no ("")  | text                                          |
//! | `meta.<name>`  | no       | text; `<name>` is `[A-Za-z0-9_-]+`            |
//!
//! A key may appear once per record. A record that breaks any of these rules
//! is skipped and reported; the rest of the file is still read. See
//! `docs/record-format.md` for the byte-level grammar.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{DENSITY_CHECK, VERDICT_REMINDER};
use crate::agents::{bindings, Agent, AgentError};
use crate::seed;

pub const RECORD_SEPARATOR: &str = "%%";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record stream unreadable: {0}")]
    StreamUnreadable(#[from] std::io::Error),
    #[error("corpus contains no parseable records ({skipped} skipped)")]
    EmptyCorpus { skipped: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("agent reply for {record_id} lacks a verdict line after {attempts} attempt(s)")]
    AgentFormat { record_id: String, attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[serde(rename = "oeis")]
    OeisLike,
    #[serde(rename = "euler")]
    EulerLike,
    #[serde(rename = "exam")]
    ExamLike,
    Fixture,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oeis" => Ok(Source::OeisLike),
            "euler" => Ok(Source::EulerLike),
            "exam" => Ok(Source::ExamLike),
            "fixture" => Ok(Source::Fixture),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    #[serde(with = "decimal_vec")]
    pub terms: Vec<BigInt>,
    pub offset: i64,
    pub title: String,
    pub description: String,
    pub metadata: BTreeMap<String, String>,
    pub source: Source,
}

impl SequenceRecord {
    /// The term at `position` in the listed terms (0-based).
    pub fn term(&self, position: usize) -> Option<&BigInt> {
        self.terms.get(position)
    }

    pub fn terms_csv(&self) -> String {
        join_terms(&self.terms)
    }

    /// Renders the record in the record file format.
    pub fn to_record_text(&self) -> String {
        let mut out = format!(
            "id: {}\noffset: {}\nterms: {}\n",
            self.id,
            self.offset,
            self.terms_csv()
        );
        if !self.title.is_empty() {
            out.push_str(&format!("title: {}\n", self.title));
        }
        if !self.description.is_empty() {
            out.push_str(&format!("description: {}\n", self.description));
        }
        for (k, v) in &self.metadata {
            out.push_str(&format!("meta.{k}: {v}\n"));
        }
        out
    }
}

pub fn join_terms(terms: &[BigInt]) -> String {
    terms
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) mod decimal_vec {
    use num_bigint::BigInt;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(terms: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(terms.iter().map(|t| t.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| s.parse().map_err(|_| de::Error::custom(format!("not an integer: {s:?}"))))
            .collect()
    }
}

pub(crate) mod decimal {
    use num_bigint::BigInt;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse()
            .map_err(|_| de::Error::custom(format!("not an integer: {raw:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    TooFewTerms,
    DerivedFromOtherSequence,
    MissingRequiredField,
    AgentDensityReject,
    ParseError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub record_id: String,
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_notes: Option<String>,
}

impl FilterVerdict {
    pub fn from_reasons(record_id: &str, reasons: Vec<RejectReason>) -> Self {
        Self {
            record_id: record_id.to_string(),
            accepted: reasons.is_empty(),
            reasons,
            agent_notes: None,
        }
    }
}

/// Why a block of the record file was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// 1-based index of the block in the file.
    pub ordinal: usize,
    /// 1-based line number where the block starts.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl SkipReport {
    pub fn verdict(&self) -> FilterVerdict {
        let id = self
            .id
            .clone()
            .unwrap_or_else(|| format!("#block{}", self.ordinal));
        FilterVerdict::from_reasons(&id, vec![RejectReason::ParseError])
    }
}

impl fmt::Display for SkipReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {} (line {}): {}", self.ordinal, self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCorpus {
    pub records: Vec<SequenceRecord>,
    pub skipped: Vec<SkipReport>,
}

/// Reads a record file. Malformed blocks are skipped and reported; the call
/// fails only when the stream cannot be read or nothing parses.
pub fn parse_records(mut stream: impl Read, source: Source) -> Result<ParsedCorpus, CorpusError> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes)?;
    let parsed = parse_bytes(&bytes, source);
    if parsed.records.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            skipped: parsed.skipped.len(),
        });
    }
    Ok(parsed)
}

/// Parsing without the empty-corpus check; total on any input.
pub fn parse_bytes(bytes: &[u8], source: Source) -> ParsedCorpus {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();

    let mut block: Vec<(usize, &[u8])> = Vec::new();
    let mut ordinal = 0usize;
    let mut flush = |block: &mut Vec<(usize, &[u8])>, ordinal: &mut usize| {
        if block.iter().all(|(_, l)| is_blank(l)) {
            block.clear();
            return;
        }
        *ordinal += 1;
        let start = block[0].0;
        match parse_block(block, source) {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    records.push(record);
                } else {
                    skipped.push(SkipReport {
                        ordinal: *ordinal,
                        line: start,
                        message: format!("duplicate id {:?}", record.id),
                        id: Some(record.id),
                    });
                }
            }
            Err((id, message)) => skipped.push(SkipReport {
                ordinal: *ordinal,
                line: start,
                id,
                message,
            }),
        }
        block.clear();
    };

    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = raw.strip_suffix(b"\r").unwrap_or(raw);
        if line == RECORD_SEPARATOR.as_bytes() {
            flush(&mut block, &mut ordinal);
        } else {
            block.push((idx + 1, line));
        }
    }
    flush(&mut block, &mut ordinal);
    ParsedCorpus { records, skipped }
}

fn is_blank(line: &[u8]) -> bool {
    line.iter().all(|b| b.is_ascii_whitespace())
}

type BlockError = (Option<String>, String);

fn parse_block(lines: &[(usize, &[u8])], source: Source) -> Result<SequenceRecord, BlockError> {
    let mut id: Option<String> = None;
    let mut fields: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    let mut first_error: Option<String> = None;

    for &(line_no, raw) in lines {
        if is_blank(raw) {
            continue;
        }
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s,
            Err(_) => {
                first_error.get_or_insert(format!("line {line_no}: invalid UTF-8"));
                continue;
            }
        };
        let Some((key, value)) = line.split_once(':') else {
            first_error.get_or_insert(format!("line {line_no}: expected `key: value`"));
            continue;
        };
        let key = key.trim();
        let value = value.trim().to_string();
        if let Some(name) = key.strip_prefix("meta.") {
            let valid = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid {
                first_error.get_or_insert(format!("line {line_no}: bad metadata key {key:?}"));
            } else if metadata.insert(name.to_string(), value).is_some() {
                first_error.get_or_insert(format!("line {line_no}: repeated key {key:?}"));
            }
            continue;
        }
        match key {
            "id" | "offset" | "terms" | "title" | "description" => {
                if key == "id" && !value.is_empty() {
                    id.get_or_insert(value.clone());
                }
                if fields.insert(key.to_string(), (line_no, value)).is_some() {
                    first_error.get_or_insert(format!("line {line_no}: repeated key {key:?}"));
                }
            }
            other => {
                first_error.get_or_insert(format!("line {line_no}: unknown key {other:?}"));
            }
        }
    }

    if let Some(message) = first_error {
        return Err((id, message));
    }
    let fail = |message: String| Err((id.clone(), message));
    let Some(record_id) = id.clone() else {
        return fail("missing `id` line".to_string());
    };
    let Some((terms_line, terms_text)) = fields.get("terms") else {
        return fail("missing `terms` line".to_string());
    };
    let terms = match parse_terms(terms_text) {
        Ok(t) => t,
        Err(m) => return fail(format!("line {terms_line}: {m}")),
    };
    let offset = match fields.get("offset") {
        None => 0,
        Some((line_no, text)) => match text.parse::<i64>() {
            Ok(o) => o,
            Err(_) => return fail(format!("line {line_no}: offset is not an integer")),
        },
    };
    if offset.checked_add(terms.len() as i64).is_none() {
        return fail("offset + term count overflows".to_string());
    }
    let text_field = |k: &str| fields.get(k).map(|(_, v)| v.clone()).unwrap_or_default();
    Ok(SequenceRecord {
        id: record_id,
        terms,
        offset,
        title: text_field("title"),
        description: text_field("description"),
        metadata,
        source,
    })
}

fn parse_terms(text: &str) -> Result<Vec<BigInt>, String> {
    if text.trim().is_empty() {
        return Err("terms list is empty".to_string());
    }
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let digits = t.strip_prefix('-').unwrap_or(t);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("term {t:?} is not an integer"));
            }
            t.parse::<BigInt>().map_err(|e| format!("term {t:?}: {e}"))
        })
        .collect()
}

/// Rule-based filter configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub min_terms: usize,
    pub required_fields: Vec<String>,
    pub reject_derived: bool,
    /// Case-insensitive substrings that mark a sequence as derived from
    /// another one when found in the description or any metadata value.
    pub derived_markers: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_terms: 12,
            required_fields: vec!["mathematics".to_string(), "programming".to_string()],
            reject_derived: true,
            derived_markers: [
                "derived from",
                "evolved from",
                "evolves from",
                "obtained from sequence",
                "transform of a",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

impl FilterRules {
    pub fn is_derived(&self, record: &SequenceRecord) -> bool {
        let markers: Vec<String> = self
            .derived_markers
            .iter()
            .map(|m| m.to_lowercase())
            .filter(|m| !m.is_empty())
            .collect();
        std::iter::once(&record.description)
            .chain(record.metadata.values())
            .map(|text| text.to_lowercase())
            .any(|text| markers.iter().any(|m| text.contains(m.as_str())))
    }
}

pub fn apply_rule_filters(record: &SequenceRecord, rules: &FilterRules) -> FilterVerdict {
    let mut reasons = Vec::new();
    if record.terms.len() < rules.min_terms {
        reasons.push(RejectReason::TooFewTerms);
    }
    if rules.reject_derived && rules.is_derived(record) {
        reasons.push(RejectReason::DerivedFromOtherSequence);
    }
    let missing = rules.required_fields.iter().any(|field| {
        record
            .metadata
            .get(field)
            .map(|v| v.trim().is_empty())
            .unwrap_or(true)
    });
    if missing {
        reasons.push(RejectReason::MissingRequiredField);
    }
    FilterVerdict::from_reasons(&record.id, reasons)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DensityAnswer {
    Sufficient,
    Insufficient(String),
}

/// Reads the verdict from the last non-empty line of a density reply.
pub fn parse_density_verdict(reply: &str) -> Option<DensityAnswer> {
    let last = reply.lines().rev().find(|l| !l.trim().is_empty())?.trim();
    let (tag, rest) = last.split_once(':')?;
    if !tag.trim().eq_ignore_ascii_case("verdict") {
        return None;
    }
    let rest = rest.trim();
    let (word, reason) = match rest.split_once(':') {
        Some((w, r)) => (w.trim(), r.trim()),
        None => (rest, ""),
    };
    match word {
        "SUFFICIENT" if reason.is_empty() => Some(DensityAnswer::Sufficient),
        "INSUFFICIENT" => Some(DensityAnswer::Insufficient(reason.to_string())),
        _ => None,
    }
}

/// Options for the agent-based density check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityOptions {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after a reply without a verdict line.
    pub reasks: u32,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 2048,
            reasks: 2,
        }
    }
}

fn metadata_block(record: &SequenceRecord) -> String {
    if record.metadata.is_empty() {
        return "(none)".to_string();
    }
    record
        .metadata
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn record_bindings(record: &SequenceRecord) -> Vec<(&'static str, String)> {
    vec![
        ("id", record.id.clone()),
        ("title", record.title.clone()),
        ("description", record.description.clone()),
        ("terms", record.terms_csv()),
        ("metadata", metadata_block(record)),
    ]
}

/// Asks the working agent to plan problem generation for `record` and judge
/// whether the available information is sufficient. The transcript of every
/// attempt is kept in `agent_notes`.
pub fn assess_density(
    record: &SequenceRecord,
    agent: &Agent,
    options: &DensityOptions,
    seed: u64,
) -> Result<FilterVerdict, CorpusError> {
    let vars = record_bindings(record).into_iter().collect();
    let base = DENSITY_CHECK
        .render(&vars)
        .expect("density template bindings are complete");
    let reminder = VERDICT_REMINDER
        .render(&bindings([]))
        .expect("reminder has no placeholders");

    let mut transcript = Vec::new();
    let attempts = options.reasks + 1;
    for attempt in 0..attempts {
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}{reminder}")
        };
        let request = agent
            .request(prompt)
            .with_temperature(options.temperature)
            .with_max_tokens(options.max_tokens)
            .with_seed(seed::child(seed, attempt as u64));
        let reply = agent.complete_text(&request)?;
        transcript.push(reply.clone());
        if let Some(answer) = parse_density_verdict(&reply) {
            let reasons = match answer {
                DensityAnswer::Sufficient => vec![],
                DensityAnswer::Insufficient(_) => vec![RejectReason::AgentDensityReject],
            };
            let mut verdict = FilterVerdict::from_reasons(&record.id, reasons);
            verdict.agent_notes = Some(transcript.join("\n---\n"));
            return Ok(verdict);
        }
    }
    Err(CorpusError::AgentFormat {
        record_id: record.id.clone(),
        attempts,
    })
}

/// Partitions `items` into `(sft_group, rl_group)` with
/// `round(sft_fraction * len)` items in the first group. Membership is decided
/// by a seeded shuffle; each group keeps the input order.
///
/// # Panics
///
/// If `sft_fraction` is outside `[0, 1]`.
pub fn split_groups<T: Clone>(items: &[T], sft_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        (0.0..=1.0).contains(&sft_fraction),
        "sft_fraction must lie in [0, 1], got {sft_fraction}"
    );
    let n = items.len();
    let take = ((sft_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_sft = vec![false; n];
    for &i in &order[..take] {
        in_sft[i] = true;
    }
    let mut sft = Vec::with_capacity(take);
    let mut rl = Vec::with_capacity(n - take);
    for (item, chosen) in items.iter().zip(in_sft) {
        if chosen {
            sft.push(item.clone());
        } else {
            rl.push(item.clone());
        }
    }
    (sft, rl)
}
