//! Hermetic fixture run: a 12-sequence corpus and agents that answer every
//! prompt from a table of known formulas.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_bigint::BigInt;
use regex::Regex;
use seqforge::agents::{Agent, AgentRole, AgentSet, CompletionRequest, FnMock, TransportError};
use seqforge::corpus::{parse_records, Source};
use seqforge::pipeline::{Pipeline, PipelineConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

pub fn fixture_config() -> PipelineConfig {
    PipelineConfig::load(&fixture_dir().join("pipeline.json")).expect("fixture config loads")
}

/// Python bodies of `f(n)` for each fixture sequence, 1-based.
const BODIES: [(&str, &str); 12] = [
    ("F01", "return n * n"),
    ("F02", "return n * (n + 1) // 2"),
    ("F03", "a, b = 0, 1\n    for _ in range(n):\n        a, b = b, a + b\n    return a"),
    ("F04", "return 2 ** (n - 1)"),
    ("F05", "return n ** 3"),
    ("F06", "import math\n    return math.factorial(n)"),
    (
        "F07",
        "ps = []\n    k = 2\n    while len(ps) < n:\n        if all(k % p for p in ps if p * p <= k):\n            ps.append(k)\n        k += 1\n    return ps[-1]",
    ),
    ("F08", "import math\n    return math.comb(2 * n, n) // (n + 1)"),
    ("F09", "return 2 * n - 1"),
    ("F10", "return n * n + 1"),
    ("F11", "return 3 * n"),
    ("F12", "return n * (3 * n - 1) // 2"),
];

/// Drafts for these sequences start with an off-by-one bug.
const BUGGY_DRAFTS: [&str; 4] = ["F02", "F03", "F06", "F08"];
/// The first repair for these still has a bug.
const SLOW_REPAIRS: [&str; 1] = ["F03"];
/// Repairs never fix these.
const HOPELESS: [&str; 1] = ["F09"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bug {
    None,
    OffByOne,
    PlusOne,
}

pub fn program(id: &str, bug: Bug) -> String {
    let body = BODIES.iter().find(|(k, _)| *k == id).expect("known id").1;
    let call = match bug {
        Bug::None => "print(f(n))",
        Bug::OffByOne => "print(f(n + 1))  # off by one",
        Bug::PlusOne => "print(f(n) + 1)  # plus one",
    };
    format!("def f(n):\n    {body}\n\n\nn = int(input())\n{call}\n")
}

/// How many of every 32 rollout slots solve the problem.
fn rollout_successes(id: &str) -> u64 {
    match id {
        "F01" | "F02" => 32,
        "F05" => 0,
        "F07" => 12,
        _ => 8,
    }
}

fn code_block(code: &str) -> String {
    format!("```python\n{code}```")
}

#[derive(Debug)]
pub struct Oracle {
    terms: BTreeMap<String, Vec<BigInt>>,
    tag: Regex,
    input: Regex,
}

impl Oracle {
    pub fn load() -> Self {
        let text = std::fs::read(fixture_dir().join("corpus.txt")).unwrap();
        let parsed = parse_records(&text[..], Source::Fixture).unwrap();
        Self {
            terms: parsed.records.into_iter().map(|r| (r.id, r.terms)).collect(),
            tag: Regex::new(r"(?:Tag|Sequence) (F\d\d)").unwrap(),
            input: Regex::new(r"(?m)^Input:\n(\d+)").unwrap(),
        }
    }

    pub fn term(&self, id: &str, n: usize) -> &BigInt {
        &self.terms[id][n - 1]
    }

    fn id_in<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        self.tag.captures(prompt).map(|c| c.get(1).unwrap().as_str())
    }

    pub fn respond(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        let p = req.prompt.as_str();
        if p.starts_with("Here are the first terms") {
            return Ok(self.next_number(p));
        }
        let id = self
            .id_in(p)
            .ok_or_else(|| TransportError::new("prompt names no fixture sequence"))?;
        if p.starts_with("You are preparing integer sequences") {
            return Ok(if id == "F12" {
                "The description gives no rule.\nVERDICT: INSUFFICIENT: no usable formula".into()
            } else {
                "The formula field defines every term.\nVERDICT: SUFFICIENT".into()
            });
        }
        if p.starts_with("Write an algorithmic programming problem") {
            return Ok(self.problem(id));
        }
        if p.starts_with("Read the problem and answer the input directly") {
            let n: usize = self.input.captures(p).unwrap()[1].parse().unwrap();
            let mut answer = self.term(id, n).clone();
            if id == "F10" {
                answer += 1;
            }
            return Ok(format!("{answer}\n"));
        }
        if p.starts_with("A Python solution to the problem below fails") {
            return Ok("The program evaluates the wrong term for the given index.".into());
        }
        if p.starts_with("Your Python solution to the problem below fails") {
            let bug = if HOPELESS.contains(&id) {
                Bug::OffByOne
            } else if SLOW_REPAIRS.contains(&id) && p.contains("# off by one") {
                Bug::PlusOne
            } else {
                Bug::None
            };
            return Ok(code_block(&program(id, bug)));
        }
        if p.starts_with("Solve the following problem") && p.contains("Think step by step") {
            let slot = req.seed.unwrap_or(0) % 32;
            return Ok(self.rollout(id, slot < rollout_successes(id)));
        }
        if p.starts_with("Solve the following problem") {
            let bug = if BUGGY_DRAFTS.contains(&id) || HOPELESS.contains(&id) {
                Bug::OffByOne
            } else {
                Bug::None
            };
            return Ok(format!("Here is a solution.\n{}", code_block(&program(id, bug))));
        }
        Err(TransportError::new("unrecognised prompt"))
    }

    fn problem(&self, id: &str) -> String {
        let (a, b) = if id == "F07" { (3, 4) } else { (1, 2) };
        let mut out_b = self.term(id, b).clone();
        if id == "F11" {
            out_b += 1000;
        }
        format!(
            "The rule is in the formula field.\n===PROBLEM===\nTag {id}. A scribe copies a list of numbers by a fixed rule. \
             Given a position n (counting from 1), print the number at that position.\n===CASES===\n\
             IN: {a} OUT: {}\nIN: {b} OUT: {out_b}\n",
            self.term(id, a)
        )
    }

    fn rollout(&self, id: &str, solve: bool) -> String {
        let mut text = String::from("Check the first few positions.\n");
        for n in 1..=3 {
            let mut t = self.term(id, n).clone();
            if !solve && n == 3 {
                t += 1;
            }
            text.push_str(&format!("case: {n} -> {t}\n"));
        }
        let bug = if solve { Bug::None } else { Bug::OffByOne };
        text.push_str(&code_block(&program(id, bug)));
        text
    }

    fn next_number(&self, prompt: &str) -> String {
        let shown = prompt.lines().nth(1).unwrap_or("");
        for (id, terms) in &self.terms {
            let joined: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
            let k = shown.split(',').count();
            if k <= joined.len() && joined[..k].join(",") == shown {
                let next = &terms[k.min(terms.len() - 1)];
                let odd = id[1..].parse::<u32>().unwrap_or(0) % 2 == 1;
                return if odd { next.to_string() } else { (next + 1u32).to_string() };
            }
        }
        "0".into()
    }
}

pub fn fixture_agents(oracle: Arc<Oracle>) -> AgentSet {
    let agent = |role| {
        let o = oracle.clone();
        Agent::mock(role, FnMock::new(move |req: &CompletionRequest| o.respond(req)))
    };
    AgentSet {
        working: agent(AgentRole::Working),
        guiding: agent(AgentRole::Guiding),
        rollout: agent(AgentRole::Rollout),
    }
}

/// Runs every stage of the fixture pipeline in `run_dir`.
pub fn run_fixture(run_dir: &Path) -> Pipeline {
    let mut pipeline = Pipeline::open(fixture_config(), run_dir, fixture_agents(Arc::new(Oracle::load())))
        .expect("fixture pipeline opens");
    pipeline.run_all(false).expect("fixture pipeline runs");
    pipeline
}
