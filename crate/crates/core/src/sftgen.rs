//! SFT samples from case-driven reflection.
//!
//! The working agent drafts a program, the sandbox runs it on the held-out
//! test cases, and on failure the guiding agent explains the first failing
//! case. The explanation, the case and the previous program go back to the
//! working agent for a repair. The loop ends on an all-pass program or after
//! `max_rounds` repairs. Successful traces are rendered into a
//! chain-of-thought in one of three styles.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{FAILURE_REASON, REPAIR, SOLUTION_DRAFT};
use crate::agents::{Agent, AgentError};
use crate::extract::extract_code;
use crate::problemgen::{AlgorithmicProblem, IoCase};
use crate::sandbox::{Sandbox, SandboxError, SuiteResult};
use crate::seed;

pub const DEFAULT_MAX_ROUNDS: u32 = 5;
pub const FAILED_CASE_MARKER: &str = "Failed case:";

#[derive(Debug, Error)]
pub enum SftError {
    #[error("agent reply contains no code block")]
    AgentFormat,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("attempt already passes every test case; nothing to reflect on")]
    AttemptPassed,
    #[error("problem {0} has no test cases assigned")]
    NoTestCases(String),
    #[error("trace for {0} did not reach an all-pass solution")]
    TraceNotSucceeded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionAttempt {
    pub round: u32,
    pub source: String,
    pub suite: SuiteResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionStep {
    pub failed_case: IoCase,
    /// What the program produced on the failed case, as shown to the agents.
    pub actual: String,
    pub reason: String,
    pub prior_source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    pub problem_id: String,
    pub attempts: Vec<SolutionAttempt>,
    pub steps: Vec<ReflectionStep>,
    pub rounds: u32,
    pub succeeded: bool,
}

impl ReflectionTrace {
    pub fn final_attempt(&self) -> &SolutionAttempt {
        self.attempts.last().expect("a trace holds at least the draft")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotVariant {
    /// Concrete failed cases, reasons and fixes per round.
    CaseReflect,
    /// Cases with explanations, no failure narrative.
    CaseEx,
    /// Failure reasons in prose only, no case values.
    Nl,
}

impl fmt::Display for CotVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CotVariant::CaseReflect => "case_reflect",
            CotVariant::CaseEx => "case_ex",
            CotVariant::Nl => "nl",
        })
    }
}

impl std::str::FromStr for CotVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "case_reflect" => Ok(CotVariant::CaseReflect),
            "case_ex" => Ok(CotVariant::CaseEx),
            "nl" => Ok(CotVariant::Nl),
            other => Err(format!("unknown CoT variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftOptions {
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_rounds: u32,
}

impl Default for SftOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 4096,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

fn evaluate(
    problem: &AlgorithmicProblem,
    sandbox: &Sandbox,
    source: &str,
) -> Result<SuiteResult, SftError> {
    if problem.test_cases.is_empty() {
        return Err(SftError::NoTestCases(problem.problem_id.clone()));
    }
    Ok(sandbox.run_suite(source, &problem.test_cases, false)?)
}

pub fn draft_solution(
    problem: &AlgorithmicProblem,
    working: &Agent,
    sandbox: &Sandbox,
    seed: u64,
    options: &SftOptions,
) -> Result<SolutionAttempt, SftError> {
    let vars: HashMap<&str, String> = [
        ("statement", problem.statement.clone()),
        ("examples", problem.examples_text()),
    ]
    .into_iter()
    .collect();
    let prompt = SOLUTION_DRAFT.render(&vars).expect("bindings complete");
    let request = working
        .request(prompt)
        .with_temperature(options.temperature)
        .with_max_tokens(options.max_tokens)
        .with_seed(seed);
    let reply = working.complete_text(&request)?;
    let source = extract_code(&reply).ok_or(SftError::AgentFormat)?;
    let suite = evaluate(problem, sandbox, &source)?;
    Ok(SolutionAttempt {
        round: 0,
        source,
        suite,
    })
}

fn failure_bindings(
    problem: &AlgorithmicProblem,
    source: &str,
    case: &IoCase,
    actual: &str,
) -> HashMap<&'static str, String> {
    [
        ("statement", problem.statement.clone()),
        ("examples", problem.examples_text()),
        ("code", source.trim_end().to_string()),
        ("input", case.input.clone()),
        ("expected", case.expected_output.clone()),
        ("actual", actual.to_string()),
    ]
    .into_iter()
    .collect()
}

/// Asks the guiding agent why `attempt` fails its first failing test case.
pub fn reflect_once(
    problem: &AlgorithmicProblem,
    attempt: &SolutionAttempt,
    guiding: &Agent,
    seed: u64,
) -> Result<ReflectionStep, SftError> {
    let failed = attempt.suite.first_failed().ok_or(SftError::AttemptPassed)?;
    let actual = failed.outcome.describe_actual();
    let vars = failure_bindings(problem, &attempt.source, &failed.case, &actual);
    let prompt = FAILURE_REASON.render(&vars).expect("bindings complete");
    let request = guiding.request(prompt).with_temperature(0.0).with_seed(seed);
    let reason = guiding.complete_text(&request)?.trim().to_string();
    Ok(ReflectionStep {
        failed_case: failed.case.clone(),
        actual,
        reason,
        prior_source: attempt.source.clone(),
    })
}

/// Feeds the failure reason, the failed case and the previous program back to
/// the working agent and tests the corrected program.
pub fn repair(
    problem: &AlgorithmicProblem,
    previous: &SolutionAttempt,
    step: &ReflectionStep,
    working: &Agent,
    sandbox: &Sandbox,
    seed: u64,
    options: &SftOptions,
) -> Result<SolutionAttempt, SftError> {
    let mut vars = failure_bindings(problem, &step.prior_source, &step.failed_case, &step.actual);
    vars.insert("reason", step.reason.clone());
    let prompt = REPAIR.render(&vars).expect("bindings complete");
    let request = working
        .request(prompt)
        .with_temperature(options.temperature)
        .with_max_tokens(options.max_tokens)
        .with_seed(seed);
    let reply = working.complete_text(&request)?;
    let source = extract_code(&reply).ok_or(SftError::AgentFormat)?;
    let suite = evaluate(problem, sandbox, &source)?;
    Ok(SolutionAttempt {
        round: previous.round + 1,
        source,
        suite,
    })
}

/// Runs draft → (test → reflect → repair)* until a program passes every test
/// case or `options.max_rounds` repairs have been made. Running out of rounds
/// yields `succeeded = false`, not an error.
pub fn build_trace(
    problem: &AlgorithmicProblem,
    working: &Agent,
    guiding: &Agent,
    sandbox: &Sandbox,
    seed: u64,
    options: &SftOptions,
) -> Result<ReflectionTrace, SftError> {
    let mut attempts = vec![draft_solution(
        problem,
        working,
        sandbox,
        seed::derive(seed, "draft", ""),
        options,
    )?];
    let mut steps = Vec::new();
    while !attempts.last().unwrap().suite.all_passed && (steps.len() as u32) < options.max_rounds {
        let round = steps.len() as u64 + 1;
        let latest = attempts.last().unwrap();
        let step = reflect_once(problem, latest, guiding, seed::derive(seed, "reflect", &round.to_string()))?;
        let next = repair(
            problem,
            latest,
            &step,
            working,
            sandbox,
            seed::derive(seed, "repair", &round.to_string()),
            options,
        )?;
        steps.push(step);
        attempts.push(next);
    }
    let succeeded = attempts.last().unwrap().suite.all_passed;
    Ok(ReflectionTrace {
        problem_id: problem.problem_id.clone(),
        rounds: steps.len() as u32,
        attempts,
        steps,
        succeeded,
    })
}

fn indent_continuation(text: &str) -> String {
    let mut lines = text.trim().lines();
    let mut out = lines.next().unwrap_or("").to_string();
    for line in lines {
        out.push_str("\n  ");
        out.push_str(line);
    }
    out
}

/// Renders a successful trace as a chain-of-thought.
pub fn assemble_cot(
    problem: &AlgorithmicProblem,
    trace: &ReflectionTrace,
    variant: CotVariant,
) -> Result<String, SftError> {
    if !trace.succeeded {
        return Err(SftError::TraceNotSucceeded(trace.problem_id.clone()));
    }
    let n_tests = trace.final_attempt().suite.case_results.len();
    let mut out = String::new();
    match variant {
        CotVariant::CaseReflect | CotVariant::CaseEx => {
            out.push_str("Let me pin down the general term from the examples.\n");
            for case in &problem.example_cases {
                out.push_str(&format!("case: {} -> {}\n", case.input, case.expected_output));
            }
        }
        CotVariant::Nl => {
            out.push_str("Let me pin down the general term from the problem description.\n");
        }
    }

    match variant {
        CotVariant::CaseReflect => {
            for (i, (step, attempt)) in trace.steps.iter().zip(&trace.attempts).enumerate() {
                let passed = attempt.suite.case_results.iter().filter(|r| r.passed).count();
                let total = attempt.suite.case_results.len();
                out.push_str(&format!(
                    "\nRound {}:\nAttempt {} passes {passed} of {total} test cases.\n",
                    i + 1,
                    i + 1
                ));
                out.push_str(&format!(
                    "{FAILED_CASE_MARKER} input {}, expected {}, got {}\n",
                    step.failed_case.input,
                    step.failed_case.expected_output,
                    indent_continuation(&step.actual)
                ));
                out.push_str(&format!(
                    "case: {} -> {}\n",
                    step.failed_case.input, step.failed_case.expected_output
                ));
                out.push_str(&format!("Reason: {}\n", indent_continuation(&step.reason)));
                out.push_str(&format!(
                    "Fix: change the program so that input {} yields {}, addressing the reason above.\n",
                    step.failed_case.input, step.failed_case.expected_output
                ));
            }
        }
        CotVariant::CaseEx => {
            for step in &trace.steps {
                out.push_str(&format!(
                    "case: {} -> {}\nExplanation: the term at index {} of the sequence is {}, so the general term must produce it.\n",
                    step.failed_case.input,
                    step.failed_case.expected_output,
                    step.failed_case.input,
                    step.failed_case.expected_output
                ));
            }
        }
        CotVariant::Nl => {
            for (i, step) in trace.steps.iter().enumerate() {
                out.push_str(&format!(
                    "\nRound {}:\nThe current program does not produce the right term for one of the test inputs.\nReason: {}\nFix: revise the program to address this reason.\n",
                    i + 1,
                    indent_continuation(&step.reason)
                ));
            }
        }
    }
    out.push_str(&format!(
        "\nFinal solution: the program below computes the general term directly and passes all {n_tests} test cases.\n"
    ));
    Ok(out)
}

/// Counts tokens of a response for length statistics.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-delimited tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseView {
    pub input: String,
    pub expected_output: String,
}

impl From<&IoCase> for CaseView {
    fn from(case: &IoCase) -> Self {
        Self {
            input: case.input.clone(),
            expected_output: case.expected_output.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftInput {
    pub statement: String,
    pub example_cases: Vec<CaseView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftOutput {
    pub cot: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub sample_id: String,
    pub problem_id: String,
    pub pattern_id: String,
    pub variant: CotVariant,
    pub input: SftInput,
    pub output: SftOutput,
    pub rounds: u32,
    pub response_tokens: usize,
}

pub fn emit_sft(
    problem: &AlgorithmicProblem,
    trace: &ReflectionTrace,
    variant: CotVariant,
    resample_index: u32,
    counter: &dyn TokenCounter,
) -> Result<SftSample, SftError> {
    let cot = assemble_cot(problem, trace, variant)?;
    let code = trace.final_attempt().source.clone();
    let response_tokens = counter.count(&cot) + counter.count(&code);
    Ok(SftSample {
        sample_id: format!("{}:{variant}:{resample_index}", problem.problem_id),
        problem_id: problem.problem_id.clone(),
        pattern_id: problem.pattern_id.clone(),
        variant,
        input: SftInput {
            statement: problem.statement.clone(),
            example_cases: problem.example_cases.iter().map(CaseView::from).collect(),
        },
        output: SftOutput { cot, code },
        rounds: trace.rounds,
        response_tokens,
    })
}

/// Number of reflection segments in a CaseReflect chain-of-thought.
pub fn count_reflection_segments(cot: &str) -> usize {
    cot.lines().filter(|l| l.starts_with(FAILED_CASE_MARKER)).count()
}
