//! RL data: rollout solvability, window selection, case audits and rewards.
//!
//! Solvability is the exact fraction of rollouts whose extracted program
//! passes every test case. Problems whose solvability falls inside a
//! [`SelectionWindow`] become RL samples. [`score`] turns a policy response
//! into a scalar reward; the default variant combines a log-scaled
//! inverse-solvability bonus with the share of correct `case:` lines in the
//! response, and is gated on format validity and on the test suite.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use once_cell::sync::Lazy;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agents::prompts::ROLLOUT_SOLVE;
use crate::agents::Agent;
use crate::corpus::SequenceRecord;
use crate::extract::extract_code;
use crate::problemgen::{AlgorithmicProblem, IndexMap};
use crate::sandbox::{Sandbox, SandboxError, SuiteResult};
use crate::seed;
use crate::sftgen::CaseView;

pub const DEFAULT_ROLLOUTS: u32 = 32;
pub const DEFAULT_LAMBDA: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("rollout count must be at least 1")]
    NoRollouts,
    #[error("problem {0} has no test cases assigned")]
    NoTestCases(String),
    #[error("estimate for {problem_id} stopped with {missing} of {n} rollouts missing: {cause}")]
    Incomplete {
        problem_id: String,
        n: u32,
        missing: usize,
        cause: String,
        partial: PartialEstimate,
    },
    #[error("no problem matches estimate {0}")]
    UnknownProblem(String),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("response passes all tests but its reasoning contains no `case:` lines")]
    MissingCases,
    #[error("malformed response record: {0}")]
    Schema(String),
    #[error("invalid selection window: {0}")]
    InvalidWindow(String),
}

/// Unreduced pass ratio `num / den`, serialized as `{"num": .., "den": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sov {
    pub num: u64,
    pub den: u64,
}

impl Sov {
    pub fn new(num: u64, den: u64) -> Result<Self, String> {
        if den == 0 || num > den {
            return Err(format!("solvability {num}/{den} is not in [0, 1]"));
        }
        Ok(Self { num, den })
    }

    pub fn to_rational(self) -> BigRational {
        BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Sov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvabilityEstimate {
    pub problem_id: String,
    pub n: u32,
    pub n_pass: u32,
    pub rollout_verdicts: Vec<bool>,
}

impl SolvabilityEstimate {
    pub fn from_verdicts(problem_id: impl Into<String>, rollout_verdicts: Vec<bool>) -> Self {
        Self {
            problem_id: problem_id.into(),
            n: rollout_verdicts.len() as u32,
            n_pass: rollout_verdicts.iter().filter(|v| **v).count() as u32,
            rollout_verdicts,
        }
    }

    pub fn sov(&self) -> Sov {
        Sov {
            num: u64::from(self.n_pass),
            den: u64::from(self.n),
        }
    }
}

/// Rollout slots filled so far; `None` marks a slot still to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialEstimate {
    pub problem_id: String,
    pub verdicts: Vec<Option<bool>>,
}

impl PartialEstimate {
    pub fn empty(problem_id: impl Into<String>, n: u32) -> Self {
        Self {
            problem_id: problem_id.into(),
            verdicts: vec![None; n as usize],
        }
    }

    pub fn missing(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutOptions {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 10 * 1024,
        }
    }
}

/// The outcome of judging one completion against a problem's test cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub format_ok: bool,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteResult>,
}

/// Extracts the program from `completion` and runs it. A missing code block
/// is a failed judgement, not an error.
pub fn judge_completion(
    problem: &AlgorithmicProblem,
    completion: &str,
    sandbox: &Sandbox,
    fail_fast: bool,
) -> Result<Judgement, SandboxError> {
    let Some(code) = extract_code(completion) else {
        return Ok(Judgement {
            format_ok: false,
            passed: false,
            suite: None,
        });
    };
    let suite = sandbox.run_suite(&code, &problem.test_cases, fail_fast)?;
    Ok(Judgement {
        format_ok: true,
        passed: suite.all_passed,
        suite: Some(suite),
    })
}

pub fn rollout_prompt(problem: &AlgorithmicProblem) -> String {
    let vars = [
        ("statement", problem.statement.clone()),
        ("examples", problem.examples_text()),
    ]
    .into_iter()
    .collect();
    ROLLOUT_SOLVE.render(&vars).expect("bindings complete")
}

pub fn estimate_solvability(
    problem: &AlgorithmicProblem,
    rollout: &Agent,
    n: u32,
    sandbox: &Sandbox,
    seed: u64,
    options: &RolloutOptions,
) -> Result<SolvabilityEstimate, RlError> {
    if n == 0 {
        return Err(RlError::NoRollouts);
    }
    resume_solvability(
        problem,
        PartialEstimate::empty(&problem.problem_id, n),
        rollout,
        sandbox,
        seed,
        options,
    )
}

/// Fills the empty slots of `partial`. Each slot has its own seed, so a
/// resumed estimate equals one computed in a single pass.
pub fn resume_solvability(
    problem: &AlgorithmicProblem,
    partial: PartialEstimate,
    rollout: &Agent,
    sandbox: &Sandbox,
    seed: u64,
    options: &RolloutOptions,
) -> Result<SolvabilityEstimate, RlError> {
    let n = partial.verdicts.len() as u32;
    if n == 0 {
        return Err(RlError::NoRollouts);
    }
    if problem.test_cases.is_empty() {
        return Err(RlError::NoTestCases(problem.problem_id.clone()));
    }
    let prompt = rollout_prompt(problem);
    let filled: Vec<(Option<bool>, Option<String>)> = partial
        .verdicts
        .par_iter()
        .enumerate()
        .map(|(slot, prior)| {
            if let Some(v) = prior {
                return (Some(*v), None);
            }
            let request = rollout
                .request(prompt.clone())
                .with_temperature(options.temperature)
                .with_max_tokens(options.max_tokens)
                .with_seed(seed::child(seed, slot as u64));
            let text = match rollout.complete_text(&request) {
                Ok(text) => text,
                Err(e) => return (None, Some(e.to_string())),
            };
            match judge_completion(problem, &text, sandbox, true) {
                Ok(j) => (Some(j.passed), None),
                Err(e) => (None, Some(e.to_string())),
            }
        })
        .collect();

    let cause = filled.iter().find_map(|(_, e)| e.clone());
    let verdicts: Vec<Option<bool>> = filled.into_iter().map(|(v, _)| v).collect();
    match cause {
        None => Ok(SolvabilityEstimate::from_verdicts(
            &problem.problem_id,
            verdicts.into_iter().map(|v| v.expect("filled")).collect(),
        )),
        Some(cause) => {
            let partial = PartialEstimate {
                problem_id: problem.problem_id.clone(),
                verdicts,
            };
            Err(RlError::Incomplete {
                problem_id: problem.problem_id.clone(),
                n,
                missing: partial.missing(),
                cause,
                partial,
            })
        }
    }
}

/// Parses a non-negative decimal such as `0.46` or `3/8` into an exact rational.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() || n.is_negative() || d.is_negative() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = num_traits::pow(BigInt::from(10), frac.len());
    Some(BigRational::new(digits, scale))
}

fn rational_text(r: &BigRational) -> String {
    if r.denom() == &BigInt::from(1) {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn ser_rational<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational_text(r))
}

fn de_rational<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(serde_json::Number),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(t) => t,
        Raw::Number(n) => n.to_string(),
    };
    parse_rational(&text)
        .ok_or_else(|| serde::de::Error::custom(format!("`{text}` is not a non-negative rational")))
}

/// Solvability interval with closed bounds, except that a lower bound of 0
/// admits 0 only when `include_lo_zero` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionWindow {
    #[serde(serialize_with = "ser_rational", deserialize_with = "de_rational")]
    pub lo: BigRational,
    #[serde(serialize_with = "ser_rational", deserialize_with = "de_rational")]
    pub hi: BigRational,
    #[serde(default)]
    pub include_lo_zero: bool,
}

impl Default for SelectionWindow {
    /// Solvable, but by at most 46% of rollouts.
    fn default() -> Self {
        Self::parse("0", "0.46", false).expect("valid default")
    }
}

impl SelectionWindow {
    pub fn parse(lo: &str, hi: &str, include_lo_zero: bool) -> Result<Self, RlError> {
        let window = Self {
            lo: parse_rational(lo).ok_or_else(|| RlError::InvalidWindow(format!("lower bound `{lo}`")))?,
            hi: parse_rational(hi).ok_or_else(|| RlError::InvalidWindow(format!("upper bound `{hi}`")))?,
            include_lo_zero,
        };
        window.validate()?;
        Ok(window)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let one = BigRational::from_integer(BigInt::from(1));
        if self.lo.is_negative() || self.lo > self.hi || self.hi > one {
            return Err(RlError::InvalidWindow(format!(
                "need 0 <= lo <= hi <= 1, got [{}, {}]",
                rational_text(&self.lo),
                rational_text(&self.hi)
            )));
        }
        Ok(())
    }

    pub fn contains(&self, sov: Sov) -> bool {
        let x = sov.to_rational();
        if x > self.hi || x < self.lo {
            return false;
        }
        !(x.is_zero() && !self.include_lo_zero)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlSample {
    pub sample_id: String,
    pub problem_id: String,
    pub pattern_id: String,
    pub statement: String,
    pub example_cases: Vec<CaseView>,
    pub test_cases: Vec<CaseView>,
    pub solvability: Sov,
}

/// Emits one sample per problem whose solvability lies in `window`, ordered
/// by problem id.
pub fn select_rl(
    estimates: &[SolvabilityEstimate],
    problems: &[AlgorithmicProblem],
    window: &SelectionWindow,
) -> Result<Vec<RlSample>, RlError> {
    let mut out = Vec::new();
    for est in estimates {
        let problem = problems
            .iter()
            .find(|p| p.problem_id == est.problem_id)
            .ok_or_else(|| RlError::UnknownProblem(est.problem_id.clone()))?;
        if !window.contains(est.sov()) {
            continue;
        }
        out.push(RlSample {
            sample_id: format!("{}:rl", problem.problem_id),
            problem_id: problem.problem_id.clone(),
            pattern_id: problem.pattern_id.clone(),
            statement: problem.statement.clone(),
            example_cases: problem.example_cases.iter().map(CaseView::from).collect(),
            test_cases: problem.test_cases.iter().map(CaseView::from).collect(),
            solvability: est.sov(),
        });
    }
    out.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    Ok(out)
}

static CASE_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^[ \t]*case:[ \t]*(-?\d+)[ \t]*->[ \t]*(-?\d+)[ \t]*\r?$").unwrap());

/// Every `case: <int> -> <int>` line, in order, duplicates kept.
pub fn extract_cases(cot: &str) -> Vec<(BigInt, BigInt)> {
    CASE_LINE
        .captures_iter(cot)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseAudit {
    pub extracted_cases: Vec<(BigInt, BigInt)>,
    pub n_c: usize,
    pub n_tc: usize,
}

impl CaseAudit {
    /// Audit from counts alone, for callers that checked cases elsewhere.
    pub fn from_counts(n_c: usize, n_tc: usize) -> Self {
        assert!(n_tc <= n_c, "correct cases exceed extracted cases");
        Self {
            extracted_cases: Vec::new(),
            n_c,
            n_tc,
        }
    }

    pub fn all_correct(&self) -> bool {
        self.n_tc == self.n_c
    }
}

/// Checks each claimed case against the record's true term at that input.
/// Inputs outside the listed terms count as incorrect.
pub fn audit_cases(cases: &[(BigInt, BigInt)], record: &SequenceRecord, index: IndexMap) -> CaseAudit {
    let n_tc = cases
        .iter()
        .filter(|(input, claimed)| {
            index
                .position(input)
                .and_then(|p| record.term(p))
                .is_some_and(|t| t == claimed)
        })
        .count();
    CaseAudit {
        extracted_cases: cases.to_vec(),
        n_c: cases.len(),
        n_tc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    Cssr,
    Binary,
    PassRate,
    NoLog,
}

impl FromStr for RewardVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cssr" => Ok(Self::Cssr),
            "binary" => Ok(Self::Binary),
            "pass_rate" | "passrate" => Ok(Self::PassRate),
            "no_log" | "nolog" => Ok(Self::NoLog),
            other => Err(format!("unknown reward variant `{other}`")),
        }
    }
}

/// Only the natural logarithm is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub log_base: LogBase,
    pub variant: RewardVariant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            log_base: LogBase::Natural,
            variant: RewardVariant::Cssr,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(RlError::InvalidConfig(format!("lambda {} is outside [0, 1]", self.lambda)));
        }
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(RlError::InvalidConfig(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    FormatError,
    CaseFailure,
    AllPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub verdict_class: VerdictClass,
    pub solvability_term: f64,
    pub case_term: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn flat(verdict_class: VerdictClass, total: f64) -> Self {
        Self {
            verdict_class,
            solvability_term: 0.0,
            case_term: 0.0,
            total,
        }
    }
}

pub fn score(
    format_ok: bool,
    suite: &SuiteResult,
    audit: &CaseAudit,
    sov: Sov,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RlError> {
    score_parts(format_ok, suite.all_passed, audit, sov, cfg)
}

/// [`score`] with the suite reduced to its all-pass flag.
pub fn score_parts(
    format_ok: bool,
    all_passed: bool,
    audit: &CaseAudit,
    sov: Sov,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RlError> {
    cfg.validate()?;
    let class = match (format_ok, all_passed) {
        (false, _) => VerdictClass::FormatError,
        (true, false) => VerdictClass::CaseFailure,
        (true, true) => VerdictClass::AllPass,
    };
    let s = sov.to_f64();
    let lambda = cfg.lambda;
    let case_rate = || {
        if audit.n_c == 0 {
            Err(RlError::MissingCases)
        } else {
            Ok(audit.n_tc as f64 / audit.n_c as f64)
        }
    };
    Ok(match (cfg.variant, class) {
        (RewardVariant::Binary, VerdictClass::AllPass) => RewardBreakdown::flat(class, 1.0),
        (RewardVariant::Binary, _) => RewardBreakdown::flat(class, 0.0),
        (_, VerdictClass::FormatError) => RewardBreakdown::flat(class, -1.0),
        (RewardVariant::PassRate, _) => RewardBreakdown {
            verdict_class: class,
            solvability_term: 1.0 - s,
            case_term: 0.0,
            total: 1.0 - s,
        },
        (_, VerdictClass::CaseFailure) => RewardBreakdown::flat(class, 0.0),
        (RewardVariant::Cssr, VerdictClass::AllPass) => {
            let solvability_term = -lambda * (s + cfg.epsilon).min(1.0).ln();
            let case_term = (1.0 - lambda) * case_rate()?;
            RewardBreakdown {
                verdict_class: class,
                solvability_term,
                case_term,
                total: solvability_term + case_term,
            }
        }
        (RewardVariant::NoLog, VerdictClass::AllPass) => {
            let solvability_term = lambda * (1.0 - s);
            let case_term = (1.0 - lambda) * case_rate()?;
            RewardBreakdown {
                verdict_class: class,
                solvability_term,
                case_term,
                total: solvability_term + case_term,
            }
        }
    })
}

fn de_bigint<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(serde_json::Number),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(t) => t,
        Raw::Number(n) => n.to_string(),
    };
    text.trim()
        .parse()
        .map_err(|_| serde::de::Error::custom(format!("`{text}` is not an integer")))
}

fn de_bigint_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
    #[derive(Deserialize)]
    struct Wrap(#[serde(deserialize_with = "de_bigint")] BigInt);
    Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClaimedCase {
    #[serde(deserialize_with = "de_bigint")]
    pub input: BigInt,
    #[serde(deserialize_with = "de_bigint")]
    pub output: BigInt,
}

/// A policy response as seen by the reward: its format flag, the per-case
/// pass flags of its suite run, the `case:` claims from its reasoning, and
/// the problem's solvability and source sequence.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub format_ok: bool,
    pub suite: Vec<bool>,
    #[serde(default)]
    pub cases: Vec<ClaimedCase>,
    pub sov: Sov,
    #[serde(deserialize_with = "de_bigint_vec")]
    pub terms: Vec<BigInt>,
    #[serde(default = "one")]
    pub index_base: i64,
}

fn one() -> i64 {
    1
}

impl ResponseRecord {
    pub fn parse(text: &str) -> Result<Self, RlError> {
        let record: Self = serde_json::from_str(text).map_err(|e| RlError::Schema(e.to_string()))?;
        Sov::new(record.sov.num, record.sov.den).map_err(RlError::Schema)?;
        if record.format_ok && record.suite.is_empty() {
            return Err(RlError::Schema("suite is empty".into()));
        }
        Ok(record)
    }

    pub fn audit(&self) -> CaseAudit {
        let cases: Vec<(BigInt, BigInt)> =
            self.cases.iter().map(|c| (c.input.clone(), c.output.clone())).collect();
        let n_tc = cases
            .iter()
            .filter(|(input, claimed)| {
                IndexMap {
                    base: self.index_base,
                }
                .position(input)
                .and_then(|p| self.terms.get(p))
                .is_some_and(|t| t == claimed)
            })
            .count();
        CaseAudit {
            n_c: cases.len(),
            n_tc,
            extracted_cases: cases,
        }
    }

    pub fn score(&self, cfg: &RewardConfig) -> Result<RewardBreakdown, RlError> {
        let all_passed = self.suite.iter().all(|p| *p);
        score_parts(self.format_ok, all_passed, &self.audit(), self.sov, cfg)
    }
}
