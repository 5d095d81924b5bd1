//! General-term problems: generation by the working agent, validation by the
//! guiding agent, and held-out test-case assignment.
//!
//! A problem's inputs are indices in the problem's own numbering. The mapping
//! to positions in the source record's term list is `position = input -
//! index_base` and is kept out of the statement. Generation accepts the two
//! numberings a story can reasonably use: 1-based, and the record's own
//! offset.

use std::collections::HashMap;

use num_bigint::BigInt;
use once_cell::sync::Lazy;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::{DIRECT_ANSWER, PROBLEM_GENERATION};
use crate::agents::{Agent, AgentError};
use crate::corpus::{record_bindings, SequenceRecord};
use crate::sandbox::normalize;
use crate::seed;

pub const PROBLEM_MARKER: &str = "===PROBLEM===";
pub const CASES_MARKER: &str = "===CASES===";
pub const MIN_TEST_CASES: usize = 5;
pub const MAX_TEST_CASES: usize = 7;

static CASE_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*IN:\s*(-?\d+)\s+OUT:\s*(-?\d+)\s*$").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProblemError {
    #[error("agent reply format: {0}")]
    AgentFormat(String),
    #[error("example case {case} (input {input}, output {output}) is not a term of the sequence")]
    ExampleCaseNotInSequence {
        case: usize,
        input: String,
        output: String,
    },
    #[error("test case count {0} outside {MIN_TEST_CASES}..={MAX_TEST_CASES}")]
    InvalidTestCount(usize),
    #[error("sequence has {available} terms, {needed} needed for the requested test cases")]
    InsufficientTerms { needed: usize, available: usize },
    #[error("problem example cases carry no term positions")]
    MissingTermPositions,
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IoCase {
    pub input: String,
    pub expected_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_position: Option<usize>,
}

impl IoCase {
    pub fn at(record: &SequenceRecord, index: IndexMap, position: usize) -> Option<Self> {
        Some(Self {
            input: index.input_for(position).to_string(),
            expected_output: record.term(position)?.to_string(),
            term_position: Some(position),
        })
    }
}

/// Maps problem inputs to record term positions: `position = input - base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub base: i64,
}

impl IndexMap {
    pub const ONE_BASED: IndexMap = IndexMap { base: 1 };

    pub fn position(self, input: &BigInt) -> Option<usize> {
        let input: i64 = input.try_into().ok()?;
        let pos = input.checked_sub(self.base)?;
        usize::try_from(pos).ok()
    }

    pub fn input_for(self, position: usize) -> i64 {
        self.base + position as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmicProblem {
    pub problem_id: String,
    pub sequence_id: String,
    pub statement: String,
    pub example_cases: Vec<IoCase>,
    #[serde(default)]
    pub test_cases: Vec<IoCase>,
    pub pattern_id: String,
    pub index_base: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_cot: Option<String>,
}

impl AlgorithmicProblem {
    pub fn index_map(&self) -> IndexMap {
        IndexMap {
            base: self.index_base,
        }
    }

    /// Examples rendered for prompts and SFT inputs.
    pub fn examples_text(&self) -> String {
        self.example_cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                format!(
                    "Example {}:\nInput: {}\nOutput: {}",
                    i + 1,
                    c.input,
                    c.expected_output
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationOptions {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 4096,
        }
    }
}

struct ParsedReply {
    preamble: Option<String>,
    statement: String,
    cases: Vec<(BigInt, BigInt)>,
}

/// Parses the `===PROBLEM===` / `===CASES===` markup of a generation reply.
pub fn parse_problem_reply(reply: &str) -> Result<(String, Vec<(BigInt, BigInt)>), ProblemError> {
    parse_reply(reply).map(|p| (p.statement, p.cases))
}

fn parse_reply(reply: &str) -> Result<ParsedReply, ProblemError> {
    let format = |m: &str| ProblemError::AgentFormat(m.to_string());
    let (preamble, rest) = reply
        .split_once(PROBLEM_MARKER)
        .ok_or_else(|| format("missing ===PROBLEM=== marker"))?;
    let (statement, cases_text) = rest
        .split_once(CASES_MARKER)
        .ok_or_else(|| format("missing ===CASES=== marker"))?;
    let statement = statement.trim().to_string();
    if statement.is_empty() {
        return Err(format("empty problem statement"));
    }
    let cases: Vec<(BigInt, BigInt)> = cases_text
        .lines()
        .filter_map(|l| CASE_LINE.captures(l))
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .take(2)
        .collect();
    if cases.len() < 2 {
        return Err(format("fewer than two `IN: <int> OUT: <int>` case lines"));
    }
    if cases[0].0 == cases[1].0 {
        return Err(format("example cases share the same input"));
    }
    let preamble = preamble.trim();
    Ok(ParsedReply {
        preamble: (!preamble.is_empty()).then(|| preamble.to_string()),
        statement,
        cases,
    })
}

fn admissible_maps(record: &SequenceRecord) -> Vec<IndexMap> {
    let mut maps = vec![IndexMap::ONE_BASED];
    if record.offset != 1 {
        maps.push(IndexMap {
            base: record.offset,
        });
    }
    maps
}

/// Asks the working agent for a story-wrapped problem about `record` with two
/// example cases, then checks the examples against the record's terms.
pub fn generate_problem(
    record: &SequenceRecord,
    working: &Agent,
    sample_index: u32,
    seed: u64,
    options: &GenerationOptions,
) -> Result<AlgorithmicProblem, ProblemError> {
    let mut vars: HashMap<&str, String> = record_bindings(record).into_iter().collect();
    vars.insert("variation", format!("variant {sample_index}"));
    let prompt = PROBLEM_GENERATION
        .render(&vars)
        .expect("generation template bindings are complete");
    let request = working
        .request(prompt)
        .with_temperature(options.temperature)
        .with_max_tokens(options.max_tokens)
        .with_seed(seed);
    let reply = working.complete_text(&request)?;
    let parsed = parse_reply(&reply)?;

    let mut chosen = None;
    let mut first_mismatch = 0;
    for map in admissible_maps(record) {
        let positions: Vec<Option<usize>> = parsed
            .cases
            .iter()
            .map(|(input, output)| {
                map.position(input)
                    .filter(|&p| record.term(p) == Some(output))
            })
            .collect();
        if let [Some(a), Some(b)] = positions[..] {
            chosen = Some((map, a, b));
            break;
        }
        if map == IndexMap::ONE_BASED {
            first_mismatch = positions.iter().position(Option::is_none).unwrap_or(0);
        }
    }
    let Some((map, a, b)) = chosen else {
        let (input, output) = &parsed.cases[first_mismatch];
        return Err(ProblemError::ExampleCaseNotInSequence {
            case: first_mismatch,
            input: input.to_string(),
            output: output.to_string(),
        });
    };
    let (first, second) = if a < b { (a, b) } else { (b, a) };
    let example_cases = vec![
        IoCase::at(record, map, first).expect("position checked"),
        IoCase::at(record, map, second).expect("position checked"),
    ];
    Ok(AlgorithmicProblem {
        problem_id: format!("{}-g{}", record.id, sample_index),
        sequence_id: record.id.clone(),
        statement: parsed.statement,
        example_cases,
        test_cases: Vec::new(),
        pattern_id: record.id.clone(),
        index_base: map.base,
        generation_cot: parsed.preamble,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub problem_id: String,
    pub passed: bool,
    pub agent_answers: Vec<String>,
    pub mismatches: Vec<usize>,
}

/// Answer comparison for direct answering: surrounding whitespace is
/// dropped, then the sandbox output rule applies.
pub fn answers_match(answer: &str, expected: &str) -> bool {
    normalize(answer.trim()) == normalize(expected.trim())
}

/// Has the guiding agent answer each example input directly from the
/// statement. The problem passes only if both answers are right.
pub fn validate_problem(
    problem: &AlgorithmicProblem,
    guiding: &Agent,
    seed: u64,
) -> Result<ValidationResult, ProblemError> {
    let mut answers = Vec::with_capacity(problem.example_cases.len());
    let mut mismatches = Vec::new();
    for (i, case) in problem.example_cases.iter().enumerate() {
        let vars: HashMap<&str, String> = [
            ("statement", problem.statement.clone()),
            ("input", case.input.clone()),
        ]
        .into_iter()
        .collect();
        let prompt = DIRECT_ANSWER.render(&vars).expect("bindings complete");
        let request = guiding
            .request(prompt)
            .with_temperature(0.0)
            .with_seed(seed::child(seed, i as u64));
        let answer = guiding.complete_text(&request)?;
        if !answers_match(&answer, &case.expected_output) {
            mismatches.push(i);
        }
        answers.push(answer);
    }
    Ok(ValidationResult {
        problem_id: problem.problem_id.clone(),
        passed: mismatches.is_empty(),
        agent_answers: answers,
        mismatches,
    })
}

fn second_example_position(problem: &AlgorithmicProblem) -> Result<usize, ProblemError> {
    problem
        .example_cases
        .get(1)
        .and_then(|c| c.term_position)
        .ok_or(ProblemError::MissingTermPositions)
}

/// Picks a test-case count uniformly from the counts in `5..=7` that the
/// record can supply, or `None` when even 5 do not fit.
pub fn choose_test_count(
    problem: &AlgorithmicProblem,
    record: &SequenceRecord,
    rng_seed: u64,
) -> Option<usize> {
    let second = second_example_position(problem).ok()?;
    let feasible: Vec<usize> = (MIN_TEST_CASES..=MAX_TEST_CASES)
        .filter(|c| second + 1 + c <= record.terms.len())
        .collect();
    if feasible.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Some(feasible[rng.random_range(0..feasible.len())])
}

/// Assigns `count` held-out test cases. The first sits right after the second
/// example; the rest are drawn without replacement from later positions and
/// sorted.
pub fn assign_test_cases(
    problem: &AlgorithmicProblem,
    record: &SequenceRecord,
    count: usize,
    rng_seed: u64,
) -> Result<AlgorithmicProblem, ProblemError> {
    if !(MIN_TEST_CASES..=MAX_TEST_CASES).contains(&count) {
        return Err(ProblemError::InvalidTestCount(count));
    }
    let second = second_example_position(problem)?;
    let needed = second + 1 + count;
    if record.terms.len() < needed {
        return Err(ProblemError::InsufficientTerms {
            needed,
            available: record.terms.len(),
        });
    }
    let first = second + 1;
    let pool_start = first + 1;
    let pool_len = record.terms.len() - pool_start;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut rest: Vec<usize> = rand::seq::index::sample(&mut rng, pool_len, count - 1)
        .into_iter()
        .map(|i| pool_start + i)
        .collect();
    rest.sort_unstable();

    let map = problem.index_map();
    let test_cases = std::iter::once(first)
        .chain(rest)
        .map(|p| IoCase::at(record, map, p).expect("position in range"))
        .collect();
    Ok(AlgorithmicProblem {
        test_cases,
        ..problem.clone()
    })
}

/// Checks every case-layout invariant of an assigned problem against its
/// record. Returns the first violation found.
pub fn check_case_layout(problem: &AlgorithmicProblem, record: &SequenceRecord) -> Result<(), String> {
    if problem.example_cases.len() != 2 {
        return Err(format!("{} example cases", problem.example_cases.len()));
    }
    let n = problem.test_cases.len();
    if !(MIN_TEST_CASES..=MAX_TEST_CASES).contains(&n) {
        return Err(format!("{n} test cases"));
    }
    let map = problem.index_map();
    let mut positions = Vec::new();
    for case in problem.example_cases.iter().chain(&problem.test_cases) {
        let pos = case
            .term_position
            .ok_or_else(|| format!("case {:?} lacks a term position", case.input))?;
        let input: BigInt = case
            .input
            .parse()
            .map_err(|_| format!("input {:?} is not an integer", case.input))?;
        if map.position(&input) != Some(pos) {
            return Err(format!("input {} does not map to position {pos}", case.input));
        }
        let expected: BigInt = case
            .expected_output
            .parse()
            .map_err(|_| format!("output {:?} is not an integer", case.expected_output))?;
        if record.term(pos) != Some(&expected) {
            return Err(format!("position {pos} holds no term {expected}"));
        }
        if positions.contains(&pos) {
            return Err(format!("position {pos} used twice"));
        }
        positions.push(pos);
    }
    let second = problem.example_cases[1].term_position.unwrap();
    if problem.test_cases[0].term_position != Some(second + 1) {
        return Err("first test case does not follow the second example".to_string());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentRole, FnMock};
    use crate::corpus::Source;
    use proptest::prelude::*;

    pub(crate) fn fib_record() -> SequenceRecord {
        SequenceRecord {
            id: "F1".into(),
            terms: [1, 1, 2, 3, 5, 8, 13, 21, 34, 55]
                .into_iter()
                .map(BigInt::from)
                .collect(),
            offset: 1,
            title: "Fibonacci numbers".into(),
            description: "F(n) = F(n-1) + F(n-2)".into(),
            metadata: Default::default(),
            source: Source::Fixture,
        }
    }

    fn working(reply: &'static str) -> Agent {
        Agent::mock(AgentRole::Working, FnMock::new(move |_| Ok(reply.to_string())))
    }

    const FIB_REPLY: &str = "I will wrap Fibonacci in a rabbit story.\n===PROBLEM===\nRabbits breed... print the n-th count.\n===CASES===\nIN: 4 OUT: 3\nIN: 5 OUT: 5\n";

    fn fib_problem() -> AlgorithmicProblem {
        generate_problem(&fib_record(), &working(FIB_REPLY), 0, 1, &GenerationOptions::default())
            .unwrap()
    }

    #[test]
    fn generation_maps_examples_to_positions() {
        let p = fib_problem();
        assert_eq!(p.problem_id, "F1-g0");
        assert_eq!(p.pattern_id, "F1");
        assert_eq!(p.index_base, 1);
        let pos: Vec<_> = p.example_cases.iter().map(|c| c.term_position).collect();
        assert_eq!(pos, [Some(3), Some(4)]);
        assert_eq!(p.example_cases[0].expected_output, "3");
        assert_eq!(p.statement, "Rabbits breed... print the n-th count.");
        assert_eq!(p.generation_cot.as_deref(), Some("I will wrap Fibonacci in a rabbit story."));
    }

    #[test]
    fn generation_rejects_wrong_example() {
        let err = generate_problem(
            &fib_record(),
            &working("===PROBLEM===\nS\n===CASES===\nIN: 4 OUT: 3\nIN: 5 OUT: 99\n"),
            0,
            1,
            &GenerationOptions::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            ProblemError::ExampleCaseNotInSequence {
                case: 1,
                input: "5".into(),
                output: "99".into()
            }
        );
    }

    #[test]
    fn generation_format_errors() {
        for reply in [
            "just prose",
            "===PROBLEM===\nS\n",
            "===PROBLEM===\n  \n===CASES===\nIN: 1 OUT: 1\nIN: 2 OUT: 1\n",
            "===PROBLEM===\nS\n===CASES===\nIN: 1 OUT: 1\n",
            "===PROBLEM===\nS\n===CASES===\nIN: 2 OUT: 1\nIN: 2 OUT: 1\n",
        ] {
            assert!(
                matches!(
                    generate_problem(&fib_record(), &working(reply), 0, 1, &GenerationOptions::default()),
                    Err(ProblemError::AgentFormat(_))
                ),
                "{reply:?}"
            );
        }
    }

    #[test]
    fn offset_numbering_is_admissible() {
        // Offset-0 sequence: a(0)=0, a(1)=1, a(2)=4 ... squares.
        let mut r = fib_record();
        r.id = "SQ".into();
        r.offset = 0;
        r.terms = (0..15).map(|n| BigInt::from(n * n)).collect();
        // 1-based would need terms[2]=4 for input 3; the story uses a(3)=9.
        let p = generate_problem(
            &r,
            &working("===PROBLEM===\nS\n===CASES===\nIN: 3 OUT: 9\nIN: 4 OUT: 16\n"),
            0,
            1,
            &GenerationOptions::default(),
        )
        .unwrap();
        assert_eq!(p.index_base, 0);
        assert_eq!(p.example_cases[1].term_position, Some(4));
        let assigned = assign_test_cases(&p, &r, 5, 3).unwrap();
        assert_eq!(assigned.test_cases[0].input, "5");
        assert_eq!(assigned.test_cases[0].expected_output, "25");
        check_case_layout(&assigned, &r).unwrap();
    }

    #[test]
    fn examples_given_out_of_order_are_sorted() {
        let p = generate_problem(
            &fib_record(),
            &working("===PROBLEM===\nS\n===CASES===\nIN: 7 OUT: 13\nIN: 3 OUT: 2\n"),
            0,
            1,
            &GenerationOptions::default(),
        )
        .unwrap();
        let pos: Vec<_> = p.example_cases.iter().map(|c| c.term_position.unwrap()).collect();
        assert_eq!(pos, [2, 6]);
    }

    #[test]
    fn seed_sensitive_mock_varies_statement() {
        let agent = Agent::mock(
            AgentRole::Working,
            FnMock::new(|req| {
                Ok(format!(
                    "===PROBLEM===\nStory number {}\n===CASES===\nIN: 4 OUT: 3\nIN: 5 OUT: 5\n",
                    req.seed.unwrap() % 1000
                ))
            }),
        );
        let opts = GenerationOptions::default();
        let a = generate_problem(&fib_record(), &agent, 0, 11, &opts).unwrap();
        let b = generate_problem(&fib_record(), &agent, 1, 12, &opts).unwrap();
        assert_ne!(a.statement, b.statement);
        assert_eq!(a.pattern_id, b.pattern_id);
    }

    fn guiding(answers: [&'static str; 2]) -> Agent {
        Agent::mock(
            AgentRole::Guiding,
            FnMock::new(move |req| {
                let idx = if req.prompt.contains("Input:\n4\n") { 0 } else { 1 };
                Ok(answers[idx].to_string())
            }),
        )
    }

    #[test]
    fn validation_outcomes() {
        let p = fib_problem();
        let ok = validate_problem(&p, &guiding(["3", "5"]), 0).unwrap();
        assert!(ok.passed && ok.mismatches.is_empty());
        let bad = validate_problem(&p, &guiding(["3", "8"]), 0).unwrap();
        assert!(!bad.passed);
        assert_eq!(bad.mismatches, vec![1]);
        let ws = validate_problem(&p, &guiding([" 3\n", "5"]), 0).unwrap();
        assert!(ws.passed);
        assert_eq!(ws.agent_answers, vec![" 3\n".to_string(), "5".to_string()]);
    }

    #[test]
    fn validation_propagates_outage() {
        let dead = Agent::mock(AgentRole::Guiding, crate::agents::FailSchedule::always_failing());
        assert!(matches!(
            validate_problem(&fib_problem(), &dead, 0),
            Err(ProblemError::Agent(_))
        ));
    }

    #[test]
    fn assignment_on_fibonacci() {
        let p = assign_test_cases(&fib_problem(), &fib_record(), 5, 0).unwrap();
        let pos: Vec<_> = p.test_cases.iter().map(|c| c.term_position.unwrap()).collect();
        assert_eq!(pos, [5, 6, 7, 8, 9]);
        assert_eq!(p.test_cases[0].input, "6");
        assert_eq!(p.test_cases[0].expected_output, "8");
        check_case_layout(&p, &fib_record()).unwrap();
    }

    #[test]
    fn assignment_errors() {
        assert_eq!(
            assign_test_cases(&fib_problem(), &fib_record(), 8, 0).unwrap_err(),
            ProblemError::InvalidTestCount(8)
        );
        assert_eq!(
            assign_test_cases(&fib_problem(), &fib_record(), 4, 0).unwrap_err(),
            ProblemError::InvalidTestCount(4)
        );
        let mut short = fib_record();
        short.terms.truncate(7);
        let mut p = fib_problem();
        p.example_cases = vec![
            IoCase::at(&short, IndexMap::ONE_BASED, 4).unwrap(),
            IoCase::at(&short, IndexMap::ONE_BASED, 5).unwrap(),
        ];
        assert_eq!(
            assign_test_cases(&p, &short, 5, 0).unwrap_err(),
            ProblemError::InsufficientTerms {
                needed: 11,
                available: 7
            }
        );
        assert_eq!(choose_test_count(&p, &short, 0), None);
    }

    #[test]
    fn test_count_choice_respects_room() {
        // Fibonacci fixture with examples at 3, 4 has room for exactly 5.
        for s in 0..20 {
            assert_eq!(choose_test_count(&fib_problem(), &fib_record(), s), Some(5));
        }
        let mut long = fib_record();
        long.terms = (0..40).map(BigInt::from).collect();
        let seen: std::collections::BTreeSet<_> = (0..200)
            .filter_map(|s| choose_test_count(&fib_problem(), &long, s))
            .collect();
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), [5, 6, 7]);
    }

    #[test]
    fn layout_checker_catches_violations() {
        let good = assign_test_cases(&fib_problem(), &fib_record(), 5, 0).unwrap();
        let mut gap = good.clone();
        gap.test_cases[0] = IoCase::at(&fib_record(), IndexMap::ONE_BASED, 9).unwrap();
        assert!(check_case_layout(&gap, &fib_record()).is_err());
        let mut wrong = good.clone();
        wrong.test_cases[2].expected_output = "0".into();
        assert!(check_case_layout(&wrong, &fib_record()).is_err());
        let mut few = good;
        few.test_cases.truncate(4);
        assert!(check_case_layout(&few, &fib_record()).is_err());
    }

    proptest! {
        #[test]
        fn assignment_invariants(len in 12usize..80, second in 1usize..10, count in 5usize..=7, seed in any::<u64>()) {
            let mut r = fib_record();
            r.terms = (0..len as i64).map(|n| BigInt::from(n * 3 + 1)).collect();
            let mut p = fib_problem();
            p.example_cases = vec![
                IoCase::at(&r, IndexMap::ONE_BASED, second - 1).unwrap(),
                IoCase::at(&r, IndexMap::ONE_BASED, second).unwrap(),
            ];
            let a = assign_test_cases(&p, &r, count, seed);
            if second + 1 + count > len {
                prop_assert!(matches!(a, Err(ProblemError::InsufficientTerms { .. })), "expected InsufficientTerms");
            } else {
                let a = a.unwrap();
                prop_assert_eq!(a.test_cases.len(), count);
                prop_assert!(check_case_layout(&a, &r).is_ok());
                let pos: Vec<_> = a.test_cases.iter().map(|c| c.term_position.unwrap()).collect();
                prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(&a, &assign_test_cases(&p, &r, count, seed).unwrap());
            }
        }

        #[test]
        fn validation_ignores_trailing_whitespace(pad in "[ \t\n]{0,6}") {
            let p = fib_problem();
            let agent = Agent::mock(
                AgentRole::Guiding,
                FnMock::new(move |req| {
                    let v = if req.prompt.contains("Input:\n4\n") { "3" } else { "5" };
                    Ok(format!("{v}{pad}"))
                }),
            );
            prop_assert!(validate_problem(&p, &agent, 0).unwrap().passed);
        }
    }
}
