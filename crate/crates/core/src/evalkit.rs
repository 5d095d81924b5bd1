//! Evaluation and dataset analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::NEXT_NUMBER;
use crate::agents::Agent;
use crate::corpus::{join_terms, SequenceRecord};
use crate::extract::last_integer;
use crate::problemgen::{AlgorithmicProblem, IndexMap};
use crate::rlgen::{audit_cases, extract_cases, judge_completion, rollout_prompt, Sov};
use crate::sandbox::Sandbox;
use crate::seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("evaluation stopped after {} of its problems: {cause}", completed.len())]
    Partial {
        completed: Vec<GtgProblemRun>,
        cause: String,
    },
    #[error("next-number evaluation stopped: {0}")]
    Agent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact unbiased pass@k: `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<BigRational, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::Domain(format!(
            "pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}"
        )));
    }
    let one = BigRational::from_integer(BigInt::from(1));
    if n - c < k {
        return Ok(one);
    }
    let fail = num_integer::binomial(BigInt::from(n - c), BigInt::from(k));
    let all = num_integer::binomial(BigInt::from(n), BigInt::from(k));
    Ok(one - BigRational::new(fail, all))
}

pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    let r = pass_at_k_exact(n, c, k)?;
    Ok(r.to_f64().expect("value in [0, 1]"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub rollouts_n: u32,
    /// Highest temperature the model accepts, if it has one.
    pub model_max_temperature: Option<f64>,
    /// Longest response the model can produce, if limited.
    pub model_max_length: Option<u32>,
    pub per_exec_timeout_s: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts_n: 32,
            model_max_temperature: None,
            model_max_length: None,
            per_exec_timeout_s: 10,
        }
    }
}

impl EvalConfig {
    pub fn temperature(&self) -> f64 {
        self.model_max_temperature.map_or(1.0, |t| t.min(1.0))
    }

    pub fn max_response_tokens(&self) -> u32 {
        self.model_max_length.map_or(10 * 1024, |l| l.min(10 * 1024))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rollouts_n == 0 {
            return Err(EvalError::Domain("rollouts_n must be at least 1".into()));
        }
        if self.per_exec_timeout_s == 0 {
            return Err(EvalError::Domain("per_exec_timeout_s must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtgResult {
    pub problem_id: String,
    pub n: u32,
    pub c: u32,
    pub pass_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtgCompletion {
    pub problem_id: String,
    pub slot: u32,
    pub text: String,
    pub format_ok: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtgProblemRun {
    pub result: GtgResult,
    pub completions: Vec<GtgCompletion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtgAggregate {
    pub n_problems: usize,
    pub rollouts_n: u32,
    /// Mean pass@1 over problems, as a percentage.
    pub pass_at_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtgReport {
    pub problems: Vec<GtgResult>,
    pub aggregate: GtgAggregate,
}

impl GtgReport {
    pub fn from_results(mut problems: Vec<GtgResult>, rollouts_n: u32) -> Self {
        problems.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
        // Exact mean of c/n, so the aggregate does not depend on problem order.
        let sum = problems.iter().fold(BigRational::zero(), |acc, r| {
            acc + BigRational::new(BigInt::from(r.c), BigInt::from(r.n))
        });
        let pass_at_1 = if problems.is_empty() {
            0.0
        } else {
            (sum * BigInt::from(100) / BigInt::from(problems.len()))
                .to_f64()
                .unwrap()
        };
        Self {
            aggregate: GtgAggregate {
                n_problems: problems.len(),
                rollouts_n,
                pass_at_1,
            },
            problems,
        }
    }

    /// `problem_id,c,n,pass_at_1` rows for charting.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["problem_id", "c", "n", "pass_at_1"]).unwrap();
        for r in &self.problems {
            w.write_record([
                r.problem_id.clone(),
                r.c.to_string(),
                r.n.to_string(),
                r.pass_at_1.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn eval_problem(
    problem: &AlgorithmicProblem,
    model: &Agent,
    cfg: &EvalConfig,
    sandbox: &Sandbox,
    seed: u64,
) -> Result<GtgProblemRun, String> {
    let prompt = rollout_prompt(problem);
    let problem_seed = seed::derive(seed, "eval-gtg", &problem.problem_id);
    let completions = (0..cfg.rollouts_n)
        .into_par_iter()
        .map(|slot| {
            let request = model
                .request(prompt.clone())
                .with_temperature(cfg.temperature())
                .with_max_tokens(cfg.max_response_tokens())
                .with_seed(seed::child(problem_seed, u64::from(slot)));
            let text = model.complete_text(&request).map_err(|e| e.to_string())?;
            let j = judge_completion(problem, &text, sandbox, true).map_err(|e| e.to_string())?;
            Ok(GtgCompletion {
                problem_id: problem.problem_id.clone(),
                slot,
                text,
                format_ok: j.format_ok,
                passed: j.passed,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let c = completions.iter().filter(|c| c.passed).count() as u32;
    Ok(GtgProblemRun {
        result: GtgResult {
            problem_id: problem.problem_id.clone(),
            n: cfg.rollouts_n,
            c,
            pass_at_1: f64::from(c) / f64::from(cfg.rollouts_n),
        },
        completions,
    })
}

/// Samples `cfg.rollouts_n` completions per problem and counts the ones whose
/// program passes every test case. Problems already in `completed` are not
/// re-run; on an agent failure the finished problems come back in
/// [`EvalError::Partial`].
pub fn eval_gtg(
    problems: &[AlgorithmicProblem],
    model: &Agent,
    cfg: &EvalConfig,
    sandbox: &Sandbox,
    seed: u64,
    completed: Vec<GtgProblemRun>,
) -> Result<(GtgReport, Vec<GtgProblemRun>), EvalError> {
    cfg.validate()?;
    let done: BTreeSet<String> = completed.iter().map(|r| r.result.problem_id.clone()).collect();
    let fresh: Vec<Result<GtgProblemRun, String>> = problems
        .par_iter()
        .filter(|p| !done.contains(&p.problem_id))
        .map(|p| eval_problem(p, model, cfg, sandbox, seed))
        .collect();
    let mut runs = completed;
    let mut cause = None;
    for r in fresh {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                cause.get_or_insert(e);
            }
        }
    }
    runs.sort_by(|a, b| a.result.problem_id.cmp(&b.result.problem_id));
    if let Some(cause) = cause {
        return Err(EvalError::Partial {
            completed: runs,
            cause,
        });
    }
    let report = GtgReport::from_results(runs.iter().map(|r| r.result.clone()).collect(), cfg.rollouts_n);
    Ok((report, runs))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextNumberItem {
    pub id: String,
    #[serde(with = "crate::corpus::decimal_vec")]
    pub prefix: Vec<BigInt>,
    #[serde(with = "crate::corpus::decimal")]
    pub next: BigInt,
}

impl NextNumberItem {
    /// Holds out the last listed term of `record`.
    pub fn from_record(record: &SequenceRecord) -> Option<Self> {
        let (next, prefix) = record.terms.split_last()?;
        (prefix.len() >= 2).then(|| Self {
            id: record.id.clone(),
            prefix: prefix.to_vec(),
            next: next.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextNumberOutcome {
    pub id: String,
    pub answer: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextNumberReport {
    pub accuracy: f64,
    pub outcomes: Vec<NextNumberOutcome>,
}

/// Asks for the next term of each prefix; the last integer in the reply is
/// the answer.
pub fn eval_next_number(items: &[NextNumberItem], model: &Agent, seed: u64) -> Result<NextNumberReport, EvalError> {
    if let Some(bad) = items.iter().find(|i| i.prefix.len() < 2) {
        return Err(EvalError::Domain(format!("item {} has fewer than 2 prefix terms", bad.id)));
    }
    let outcomes = items
        .par_iter()
        .map(|item| {
            let vars = [("terms", join_terms(&item.prefix))].into_iter().collect();
            let prompt = NEXT_NUMBER.render(&vars).expect("bindings complete");
            let request = model
                .request(prompt)
                .with_temperature(0.0)
                .with_seed(seed::derive(seed, "eval-next", &item.id));
            let reply = model.complete_text(&request).map_err(|e| EvalError::Agent(e.to_string()))?;
            let answer = last_integer(&reply);
            Ok(NextNumberOutcome {
                id: item.id.clone(),
                correct: answer.as_ref() == Some(&item.next),
                answer: answer.map(|a| a.to_string()),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let accuracy = if items.is_empty() {
        0.0
    } else {
        100.0 * correct as f64 / items.len() as f64
    };
    Ok(NextNumberReport { accuracy, outcomes })
}

/// How a response's `case:` claims relate to its test verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseBucket {
    /// All claimed cases are in the sequence, program correct.
    #[serde(rename = "C-C")]
    Cc,
    /// All claimed cases are in the sequence, program fails.
    #[serde(rename = "C-F")]
    Cf,
    /// Some claimed case is wrong or none was written, program correct.
    #[serde(rename = "No-C")]
    NoC,
    /// Some claimed case is wrong or none was written, program fails.
    #[serde(rename = "No-F")]
    NoF,
}

pub fn bucket_of(cot: &str, record: &SequenceRecord, index: IndexMap, passed: bool) -> CaseBucket {
    let audit = audit_cases(&extract_cases(cot), record, index);
    let cases_ok = audit.n_c > 0 && audit.all_correct();
    match (cases_ok, passed) {
        (true, true) => CaseBucket::Cc,
        (true, false) => CaseBucket::Cf,
        (false, true) => CaseBucket::NoC,
        (false, false) => CaseBucket::NoF,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BucketCounts {
    #[serde(rename = "C-C")]
    pub cc: usize,
    #[serde(rename = "C-F")]
    pub cf: usize,
    #[serde(rename = "No-C")]
    pub no_c: usize,
    #[serde(rename = "No-F")]
    pub no_f: usize,
}

impl BucketCounts {
    pub fn add(&mut self, bucket: CaseBucket) {
        match bucket {
            CaseBucket::Cc => self.cc += 1,
            CaseBucket::Cf => self.cf += 1,
            CaseBucket::NoC => self.no_c += 1,
            CaseBucket::NoF => self.no_f += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.cc + self.cf + self.no_c + self.no_f
    }
}

pub struct CaseResponse<'a> {
    pub cot: &'a str,
    pub record: &'a SequenceRecord,
    pub index: IndexMap,
    pub passed: bool,
}

pub fn bucket_case_outcomes<'a>(responses: impl IntoIterator<Item = CaseResponse<'a>>) -> BucketCounts {
    let mut counts = BucketCounts::default();
    for r in responses {
        counts.add(bucket_of(r.cot, r.record, r.index, r.passed));
    }
    counts
}

/// The fields of an SFT or RL dataset line that statistics look at.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct StatsSample {
    pub pattern_id: String,
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default)]
    pub response_tokens: Option<usize>,
    #[serde(default)]
    pub solvability: Option<Sov>,
}

impl StatsSample {
    pub fn parse(line: &str) -> Result<Self, String> {
        let s: Self = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if s.rounds.is_none() && s.solvability.is_none() {
            return Err("line has neither `rounds` nor `solvability`".into());
        }
        if let Some(sov) = s.solvability {
            Sov::new(sov.num, sov.den)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_samples: usize,
    pub n_patterns: usize,
    pub max_response_tokens: Option<usize>,
    pub n_reflective_samples: usize,
    /// Mean rounds over every sample that records rounds.
    pub avg_rounds: Option<f64>,
    /// Mean rounds over samples with at least one round.
    pub avg_rounds_reflective: Option<f64>,
    pub max_rounds: Option<u32>,
    pub rounds_histogram: BTreeMap<u32, usize>,
    pub min_sov: Option<f64>,
    pub max_sov: Option<f64>,
    pub avg_sov: Option<f64>,
}

/// Order-independent accumulator behind [`dataset_stats`].
#[derive(Debug, Clone, Default)]
pub struct StatsFold {
    n_samples: usize,
    patterns: BTreeSet<String>,
    max_tokens: Option<usize>,
    rounds: BTreeMap<u32, usize>,
    sov_sum: BigRational,
    sov_count: usize,
    sov_min: Option<BigRational>,
    sov_max: Option<BigRational>,
    line: usize,
}

impl StatsFold {
    pub fn push(&mut self, sample: &StatsSample) {
        self.n_samples += 1;
        self.patterns.insert(sample.pattern_id.clone());
        if let Some(t) = sample.response_tokens {
            self.max_tokens = Some(self.max_tokens.map_or(t, |m| m.max(t)));
        }
        if let Some(r) = sample.rounds {
            *self.rounds.entry(r).or_default() += 1;
        }
        if let Some(sov) = sample.solvability {
            let x = sov.to_rational();
            self.sov_sum += &x;
            self.sov_count += 1;
            if self.sov_min.as_ref().is_none_or(|m| &x < m) {
                self.sov_min = Some(x.clone());
            }
            if self.sov_max.as_ref().is_none_or(|m| &x > m) {
                self.sov_max = Some(x);
            }
        }
    }

    /// Parses and folds one JSONL line; blank lines are skipped.
    pub fn push_line(&mut self, line: &str) -> Result<(), EvalError> {
        self.line += 1;
        if line.trim().is_empty() {
            return Ok(());
        }
        let sample = StatsSample::parse(line).map_err(|message| EvalError::Schema {
            line: self.line,
            message,
        })?;
        self.push(&sample);
        Ok(())
    }

    pub fn finish(&self) -> StatsReport {
        let with_rounds: usize = self.rounds.values().sum();
        let round_sum: u64 = self.rounds.iter().map(|(r, n)| u64::from(*r) * *n as u64).sum();
        let reflective: usize = self.rounds.iter().filter(|(r, _)| **r >= 1).map(|(_, n)| n).sum();
        let to_f64 = |r: &BigRational| r.to_f64().unwrap();
        StatsReport {
            n_samples: self.n_samples,
            n_patterns: self.patterns.len(),
            max_response_tokens: self.max_tokens,
            n_reflective_samples: reflective,
            avg_rounds: (with_rounds > 0).then(|| round_sum as f64 / with_rounds as f64),
            avg_rounds_reflective: (reflective > 0).then(|| round_sum as f64 / reflective as f64),
            max_rounds: self.rounds.keys().next_back().copied(),
            rounds_histogram: self.rounds.clone(),
            min_sov: self.sov_min.as_ref().map(to_f64),
            max_sov: self.sov_max.as_ref().map(to_f64),
            avg_sov: (self.sov_count > 0)
                .then(|| to_f64(&(self.sov_sum.clone() / BigInt::from(self.sov_count)))),
        }
    }
}

/// Statistics over a JSONL stream, one line at a time.
pub fn dataset_stats(reader: impl BufRead) -> Result<StatsReport, EvalError> {
    let mut fold = StatsFold::default();
    for line in reader.lines() {
        fold.push_line(&line?)?;
    }
    Ok(fold.finish())
}

/// Statistics over samples already in memory.
pub fn stats_of(samples: &[StatsSample]) -> StatsReport {
    let mut fold = StatsFold::default();
    for s in samples {
        fold.push(s);
    }
    fold.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n_points: usize,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport, EvalError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::Domain(format!(
            "correlation needs two equal-length series of at least 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EvalError::Domain("correlation inputs must be finite".into()));
    }
    Ok(CorrelationReport {
        pearson: pearson(xs, ys),
        spearman: pearson(&average_ranks(xs), &average_ranks(ys)),
        n_points: xs.len(),
    })
}

/// Rescales to [0, 1]; a constant series maps to all zeros.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Correlation between normalized response length and solvability.
pub fn length_vs_solvability(lengths: &[usize], sovs: &[Sov]) -> Result<CorrelationReport, EvalError> {
    let xs = min_max_normalize(&lengths.iter().map(|l| *l as f64).collect::<Vec<_>>());
    let ys: Vec<f64> = sovs.iter().map(|s| s.to_f64()).collect();
    correlate(&xs, &ys)
}
