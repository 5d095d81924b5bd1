//! Run directories, stage manifests and stage orchestration.
//!
//! A run directory holds one JSONL or JSON file per stage output, a
//! `manifest.json` tracking stage states and a `events.jsonl` log. Every
//! output is written to a temporary file and renamed into place, so an
//! interrupted stage never leaves a partial file behind. All randomness is
//! derived from the configured global seed, per stage and per item.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    Agent, AgentRole, AgentSet, HttpTransport, RateLimits, ResponseCache, RetryPolicy, ScriptedMock,
};
use crate::corpus::{
    apply_rule_filters, assess_density, parse_bytes, split_groups, CorpusError, DensityOptions, FilterRules,
    FilterVerdict, RejectReason, SequenceRecord, Source,
};
use crate::evalkit::{
    bucket_of, dataset_stats, eval_gtg, eval_next_number, BucketCounts, EvalConfig, EvalError, GtgCompletion,
    GtgProblemRun, NextNumberItem,
};
use crate::problemgen::{
    assign_test_cases, check_case_layout, choose_test_count, generate_problem, validate_problem,
    AlgorithmicProblem, GenerationOptions, ProblemError, ValidationResult,
};
use crate::rlgen::{
    estimate_solvability, resume_solvability, select_rl, PartialEstimate, RewardConfig, RlError, RolloutOptions,
    SelectionWindow, SolvabilityEstimate,
};
use crate::sandbox::{ExecutionLimits, RunnerCommand, Sandbox, SandboxConfig};
use crate::seed;
use crate::sftgen::{build_trace, emit_sft, CotVariant, SftError, SftOptions, WhitespaceCounter};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config digest {current} differs from the run's stored digest {stored}")]
    ConfigDrift { stored: String, current: String },
    #[error("stage {stage} needs {upstream} to be done first")]
    UpstreamNotDone { stage: Stage, upstream: Stage },
    #[error("stage {stage} failed: {cause}")]
    StageFailed { stage: Stage, cause: String },
    #[error("run directory: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigDrift { .. } => 2,
            PipelineError::UpstreamNotDone { .. } => 3,
            PipelineError::StageFailed { .. } | PipelineError::Io(_) => 4,
        }
    }
}

fn config_err(message: impl fmt::Display) -> PipelineError {
    PipelineError::Config(message.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInput {
    pub path: PathBuf,
    #[serde(default = "default_source")]
    pub source: Source,
}

fn default_source() -> Source {
    Source::OeisLike
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub rules: FilterRules,
    /// Ask the working agent whether each record carries enough information.
    pub density_check: bool,
    pub density: DensityOptions,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            rules: FilterRules::default(),
            density_check: true,
            density: DensityOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// An OpenAI-style completions endpoint.
    Http {
        base_url: String,
        model: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: u64,
        #[serde(default)]
        limits: RateLimits,
        #[serde(default)]
        retry: RetryPolicy,
        /// Keep replies in `<run_dir>/cache/<role>.jsonl` for replay.
        #[serde(default = "yes")]
        cache: bool,
    },
    /// A fingerprint-keyed script of canned replies.
    Mock {
        script: PathBuf,
        #[serde(default)]
        limits: RateLimits,
    },
}

fn default_timeout_s() -> u64 {
    300
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    pub working: AgentSpec,
    pub guiding: AgentSpec,
    pub rollout: AgentSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub samples_per_sequence: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let o = GenerationOptions::default();
        Self {
            samples_per_sequence: 1,
            temperature: o.temperature,
            max_tokens: o.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of sequences whose problems go to SFT; the rest go to RL.
    pub sft_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { sft_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSettings {
    pub runner: String,
    pub limits: ExecutionLimits,
    pub program_file: String,
    pub temp_root: Option<PathBuf>,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            runner: "python3 {program}".into(),
            limits: ExecutionLimits::default(),
            program_file: "solution.py".into(),
            temp_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub max_rounds: u32,
    pub resamples: u32,
    pub variants: Vec<CotVariant>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SftConfig {
    fn default() -> Self {
        let o = SftOptions::default();
        Self {
            max_rounds: o.max_rounds,
            resamples: 1,
            variants: vec![CotVariant::CaseReflect],
            temperature: o.temperature,
            max_tokens: o.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub rollouts: u32,
    pub window: SelectionWindow,
    pub reward: RewardConfig,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RlConfig {
    fn default() -> Self {
        let o = RolloutOptions::default();
        Self {
            rollouts: crate::rlgen::DEFAULT_ROLLOUTS,
            window: SelectionWindow::default(),
            reward: RewardConfig::default(),
            temperature: o.temperature,
            max_tokens: o.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Vec<CorpusInput>,
    #[serde(default)]
    pub filter: FilterConfig,
    pub agents: AgentsConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub sandbox: SandboxSettings,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    4
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = serde_json::from_str(text).map_err(config_err)?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Range checks and existence of every referenced file.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.corpus.is_empty() {
            return Err(config_err("no corpus files configured"));
        }
        for c in &self.corpus {
            let p = self.resolve(&c.path);
            if !p.is_file() {
                return Err(config_err(format!("corpus file {} does not exist", p.display())));
            }
        }
        for role in AgentRole::ALL {
            if let AgentSpec::Mock { script, .. } = self.agent_spec(role) {
                let p = self.resolve(script);
                if !p.is_file() {
                    return Err(config_err(format!("mock script {} does not exist", p.display())));
                }
            }
        }
        let s = &self.split.sft_fraction;
        if !(0.0..=1.0).contains(s) {
            return Err(config_err(format!("split.sft_fraction {s} is outside [0, 1]")));
        }
        if self.generation.samples_per_sequence == 0 {
            return Err(config_err("generation.samples_per_sequence must be at least 1"));
        }
        if self.sft.resamples == 0 || self.sft.variants.is_empty() {
            return Err(config_err("sft.resamples and sft.variants must be non-empty"));
        }
        if self.rl.rollouts == 0 {
            return Err(config_err("rl.rollouts must be at least 1"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        self.rl.window.validate().map_err(config_err)?;
        self.rl.reward.validate().map_err(config_err)?;
        self.eval.validate().map_err(config_err)?;
        self.sandbox.limits.validate().map_err(config_err)?;
        RunnerCommand::parse(&self.sandbox.runner).map_err(config_err)?;
        Ok(())
    }

    pub fn agent_spec(&self, role: AgentRole) -> &AgentSpec {
        match role {
            AgentRole::Working => &self.agents.working,
            AgentRole::Guiding => &self.agents.guiding,
            AgentRole::Rollout => &self.agents.rollout,
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring the worker count.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("object").remove("workers");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn sandbox_config(&self) -> Result<SandboxConfig, PipelineError> {
        let mut cfg = SandboxConfig::new(RunnerCommand::parse(&self.sandbox.runner).map_err(config_err)?)
            .with_limits(self.sandbox.limits);
        cfg.program_file = self.sandbox.program_file.clone();
        cfg.temp_root = self.sandbox.temp_root.as_ref().map(|p| self.resolve(p));
        Ok(cfg)
    }

    /// Agents as configured, caching HTTP replies under `run_dir`.
    pub fn build_agents(&self, run_dir: &Path) -> Result<AgentSet, PipelineError> {
        let build = |role: AgentRole| -> Result<Agent, PipelineError> {
            match self.agent_spec(role) {
                AgentSpec::Http {
                    base_url,
                    model,
                    token_env,
                    timeout_s,
                    limits,
                    retry,
                    cache,
                } => {
                    let transport =
                        HttpTransport::new(base_url, model, token_env.as_deref(), Duration::from_secs(*timeout_s));
                    let mut agent = Agent::new(role, Arc::new(transport)).with_retry(*retry).with_limits(*limits);
                    if *cache {
                        let dir = run_dir.join("cache");
                        fs::create_dir_all(&dir)?;
                        agent = agent.with_cache(Arc::new(ResponseCache::open(&dir.join(format!("{role}.jsonl")))?));
                    }
                    Ok(agent)
                }
                AgentSpec::Mock { script, limits } => {
                    let path = self.resolve(script);
                    let text = fs::read_to_string(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                    let mock = ScriptedMock::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                    Ok(Agent::mock(role, mock).with_limits(*limits))
                }
            }
        };
        Ok(AgentSet {
            working: build(AgentRole::Working)?,
            guiding: build(AgentRole::Guiding)?,
            rollout: build(AgentRole::Rollout)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Filter,
    GenProblems,
    Validate,
    AssignCases,
    GenSft,
    EstimateSov,
    SelectRl,
    EvalGtg,
    EvalNext,
    Stats,
    AnalyzeCases,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Filter,
        Stage::GenProblems,
        Stage::Validate,
        Stage::AssignCases,
        Stage::GenSft,
        Stage::EstimateSov,
        Stage::SelectRl,
        Stage::EvalGtg,
        Stage::EvalNext,
        Stage::Stats,
        Stage::AnalyzeCases,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::GenProblems => "gen-problems",
            Stage::Validate => "validate",
            Stage::AssignCases => "assign-cases",
            Stage::GenSft => "gen-sft",
            Stage::EstimateSov => "estimate-sov",
            Stage::SelectRl => "select-rl",
            Stage::EvalGtg => "eval-gtg",
            Stage::EvalNext => "eval-next",
            Stage::Stats => "stats",
            Stage::AnalyzeCases => "analyze-cases",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Filter => &[],
            Stage::GenProblems => &[Stage::Filter],
            Stage::Validate => &[Stage::GenProblems],
            Stage::AssignCases => &[Stage::Validate],
            Stage::GenSft | Stage::EstimateSov | Stage::EvalGtg => &[Stage::AssignCases],
            Stage::SelectRl => &[Stage::EstimateSov],
            Stage::EvalNext => &[Stage::Filter],
            Stage::Stats => &[Stage::GenSft, Stage::SelectRl],
            Stage::AnalyzeCases => &[Stage::EvalGtg],
        }
    }

    /// Stages that read this stage's outputs, directly or transitively.
    pub fn downstream(self) -> Vec<Stage> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![self];
        while let Some(s) = frontier.pop() {
            for t in Stage::ALL {
                if t.upstream().contains(&s) && out.insert(t) {
                    frontier.push(t);
                }
            }
        }
        out.into_iter().collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Output file names inside the run directory.
pub mod files {
    pub const FILTERED: &str = "filtered.jsonl";
    pub const FILTER_VERDICTS: &str = "filter_verdicts.jsonl";
    pub const PROBLEMS: &str = "problems.jsonl";
    pub const GENERATION_FAILURES: &str = "generation_failures.jsonl";
    pub const VALIDATION: &str = "validation.jsonl";
    pub const VALIDATED: &str = "validated.jsonl";
    pub const ASSIGNED: &str = "assigned.jsonl";
    pub const ASSIGN_FAILURES: &str = "assign_failures.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const SFT_PROBLEMS: &str = "sft_problems.jsonl";
    pub const RL_PROBLEMS: &str = "rl_problems.jsonl";
    pub const SFT: &str = "sft.jsonl";
    pub const TRACES: &str = "traces.jsonl";
    pub const ESTIMATES: &str = "estimates.jsonl";
    pub const ESTIMATES_PARTIAL: &str = "estimates.partial.jsonl";
    pub const RL: &str = "rl.jsonl";
    pub const GTG_REPORT: &str = "gtg_report.json";
    pub const GTG_CSV: &str = "gtg.csv";
    pub const GTG_COMPLETIONS: &str = "gtg_completions.jsonl";
    pub const GTG_PARTIAL: &str = "gtg.partial.jsonl";
    pub const NEXT_NUMBER: &str = "next_number.json";
    pub const STATS: &str = "stats.json";
    pub const CASE_BUCKETS: &str = "case_buckets.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub state: StageState,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub started_at_ms: Option<u64>,
    #[serde(default)]
    pub finished_at_ms: Option<u64>,
    #[serde(default)]
    pub error: Option<String>,
}

impl StageRecord {
    fn pending() -> Self {
        Self {
            state: StageState::Pending,
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            started_at_ms: None,
            finished_at_ms: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        Self {
            run_id: format!("run-{}", &config_digest[..12]),
            config_digest: config_digest.to_string(),
            stages: Stage::ALL.into_iter().map(|s| (s, StageRecord::pending())).collect(),
        }
    }

    pub fn state(&self, stage: Stage) -> StageState {
        self.stages.get(&stage).map_or(StageState::Pending, |r| r.state)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Line-oriented JSON events, to a file in the run directory and optionally
/// to stderr.
#[derive(Debug)]
pub struct EventLog {
    file: Mutex<fs::File>,
    to_stderr: bool,
}

impl EventLog {
    pub fn open(path: &Path, to_stderr: bool) -> std::io::Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
            to_stderr,
        })
    }

    pub fn emit(&self, stage: Stage, event: &str, fields: Value) {
        let mut obj = json!({"ts_ms": now_ms(), "stage": stage.name(), "event": event});
        if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
            o.extend(extra);
        }
        let line = format!("{obj}\n");
        if let Ok(mut f) = self.file.lock() {
            let _ = f.write_all(line.as_bytes());
        }
        if self.to_stderr {
            eprint!("{line}");
        }
    }
}

/// What a finished stage reports back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub counts: BTreeMap<String, usize>,
}

struct Produced {
    files: Vec<(&'static str, Vec<u8>)>,
    counts: BTreeMap<String, usize>,
}

impl Produced {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    fn jsonl<T: Serialize>(mut self, name: &'static str, items: &[T]) -> Self {
        self.counts.insert(name.to_string(), items.len());
        self.files.push((name, to_jsonl(items).into_bytes()));
        self
    }

    fn json<T: Serialize>(mut self, name: &'static str, value: &T) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.files.push((name, text.into_bytes()));
        self
    }

    fn raw(mut self, name: &'static str, bytes: Vec<u8>) -> Self {
        self.files.push((name, bytes));
        self
    }
}

type StageResult = Result<Produced, String>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationFailure {
    problem_id: String,
    sequence_id: String,
    error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceSummary {
    problem_id: String,
    resample: u32,
    rounds: u32,
    succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum EstimateCheckpoint {
    Done(SolvabilityEstimate),
    Partial(PartialEstimate),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub sft: Vec<String>,
    pub rl: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBundle {
    pub sft: crate::evalkit::StatsReport,
    pub rl: crate::evalkit::StatsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseBucketReport {
    pub n_responses: usize,
    pub counts: BucketCounts,
}

/// A run directory bound to a config and a set of agents.
pub struct Pipeline {
    config: PipelineConfig,
    run_dir: PathBuf,
    agents: AgentSet,
    sandbox: Sandbox,
    pool: rayon::ThreadPool,
    events: EventLog,
    manifest: RunManifest,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("run_dir", &self.run_dir)
            .field("manifest", &self.manifest)
            .finish()
    }
}

impl Pipeline {
    /// Opens or creates `run_dir`. An existing run must have been created
    /// from a config with the same digest.
    pub fn open(config: PipelineConfig, run_dir: &Path, agents: AgentSet) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(run_dir)?;
        let digest = config.digest();
        let manifest_path = run_dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path)?;
            let m: RunManifest = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", manifest_path.display())))?;
            if m.config_digest != digest {
                return Err(PipelineError::ConfigDrift {
                    stored: m.config_digest,
                    current: digest,
                });
            }
            m
        } else {
            let m = RunManifest::new(&digest);
            write_atomic(&manifest_path, &serde_json::to_vec_pretty(&m).unwrap())?;
            m
        };
        let sandbox = Sandbox::new(config.sandbox_config()?).map_err(config_err)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(config_err)?;
        let events = EventLog::open(&run_dir.join(EVENTS_FILE), false)?;
        Ok(Self {
            config,
            run_dir: run_dir.to_path_buf(),
            agents,
            sandbox,
            pool,
            events,
            manifest,
        })
    }

    /// Opens the run with agents built from the config's agent specs.
    pub fn from_config(config: PipelineConfig, run_dir: &Path) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(run_dir)?;
        let agents = config.build_agents(run_dir)?;
        Self::open(config, run_dir, agents)
    }

    /// Mirrors events to stderr as well as the run's event file.
    pub fn with_stderr_events(mut self, on: bool) -> Self {
        self.events.to_stderr = on;
        self
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.run_dir.join(file)
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        write_atomic(
            &self.run_dir.join(MANIFEST_FILE),
            &serde_json::to_vec_pretty(&self.manifest).unwrap(),
        )?;
        Ok(())
    }

    /// Runs one stage. A stage that is already done is skipped unless
    /// `force` is set; forcing a stage resets everything downstream of it.
    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageOutcome, PipelineError> {
        for &up in stage.upstream() {
            if self.manifest.state(up) != StageState::Done {
                return Err(PipelineError::UpstreamNotDone { stage, upstream: up });
            }
        }
        if self.manifest.state(stage) == StageState::Done && !force {
            self.events.emit(stage, "skipped", json!({"reason": "already done"}));
            return Ok(StageOutcome {
                stage,
                skipped: true,
                counts: self.manifest.stages[&stage].counts.clone(),
            });
        }
        if force {
            for down in stage.downstream() {
                if self.manifest.state(down) != StageState::Pending {
                    self.manifest.stages.insert(down, StageRecord::pending());
                }
            }
        }
        let started = now_ms();
        self.manifest.stages.insert(
            stage,
            StageRecord {
                state: StageState::Running,
                started_at_ms: Some(started),
                ..StageRecord::pending()
            },
        );
        self.save_manifest()?;
        self.events.emit(stage, "started", json!({}));

        let result = self.pool.install(|| self.execute(stage, force));
        let record = self.manifest.stages.get_mut(&stage).expect("inserted");
        record.finished_at_ms = Some(now_ms());
        match result {
            Ok(produced) => {
                for (name, bytes) in &produced.files {
                    write_atomic(&self.run_dir.join(name), bytes)?;
                }
                record.state = StageState::Done;
                record.outputs = produced.files.iter().map(|(n, _)| n.to_string()).collect();
                record.counts = produced.counts.clone();
                self.save_manifest()?;
                self.events.emit(stage, "done", json!({"counts": produced.counts}));
                Ok(StageOutcome {
                    stage,
                    skipped: false,
                    counts: produced.counts,
                })
            }
            Err(cause) => {
                record.state = StageState::Failed;
                record.error = Some(cause.clone());
                self.save_manifest()?;
                self.events.emit(stage, "failed", json!({"error": cause}));
                Err(PipelineError::StageFailed { stage, cause })
            }
        }
    }

    /// Runs every stage in dependency order.
    pub fn run_all(&mut self, force: bool) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.into_iter().map(|s| self.run_stage(s, force)).collect()
    }

    fn seed(&self, stage: Stage, item: &str) -> u64 {
        seed::derive(self.config.seed, stage.name(), item)
    }

    fn load<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, String> {
        read_jsonl(&self.run_dir.join(file))
    }

    fn execute(&self, stage: Stage, force: bool) -> StageResult {
        match stage {
            Stage::Filter => self.stage_filter(),
            Stage::GenProblems => self.stage_gen_problems(),
            Stage::Validate => self.stage_validate(),
            Stage::AssignCases => self.stage_assign_cases(),
            Stage::GenSft => self.stage_gen_sft(),
            Stage::EstimateSov => self.stage_estimate_sov(force),
            Stage::SelectRl => self.stage_select_rl(),
            Stage::EvalGtg => self.stage_eval_gtg(force),
            Stage::EvalNext => self.stage_eval_next(),
            Stage::Stats => self.stage_stats(),
            Stage::AnalyzeCases => self.stage_analyze_cases(),
        }
    }

    fn stage_filter(&self) -> StageResult {
        let mut records: Vec<SequenceRecord> = Vec::new();
        let mut verdicts: Vec<FilterVerdict> = Vec::new();
        let mut seen = BTreeSet::new();
        for input in &self.config.corpus {
            let path = self.config.resolve(&input.path);
            let bytes = fs::read(&path).map_err(|e| CorpusError::StreamUnreadable(e).to_string())?;
            let parsed = parse_bytes(&bytes, input.source);
            for skip in &parsed.skipped {
                self.events.emit(
                    Stage::Filter,
                    "record_skipped",
                    json!({"file": input.path, "line": skip.line, "id": skip.id, "message": skip.message}),
                );
                verdicts.push(skip.verdict());
            }
            for r in parsed.records {
                if seen.insert(r.id.clone()) {
                    records.push(r);
                } else {
                    self.events.emit(Stage::Filter, "duplicate_id", json!({"id": r.id, "file": input.path}));
                }
            }
        }
        if records.is_empty() {
            return Err(CorpusError::EmptyCorpus { skipped: verdicts.len() }.to_string());
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));

        let judged: Vec<Result<FilterVerdict, String>> = records
            .par_iter()
            .map(|r| {
                let rule = apply_rule_filters(r, &self.config.filter.rules);
                if !rule.accepted || !self.config.filter.density_check {
                    return Ok(rule);
                }
                match assess_density(r, &self.agents.working, &self.config.filter.density, self.seed(Stage::Filter, &r.id)) {
                    Ok(v) => Ok(v),
                    Err(CorpusError::AgentFormat { record_id, attempts }) => {
                        let mut v = FilterVerdict::from_reasons(&record_id, vec![RejectReason::AgentDensityReject]);
                        v.agent_notes = Some(format!("no verdict line after {attempts} attempts"));
                        Ok(v)
                    }
                    Err(e) => Err(e.to_string()),
                }
            })
            .collect();
        let mut accepted = Vec::new();
        for (record, verdict) in records.iter().zip(judged) {
            let verdict = verdict?;
            if verdict.accepted {
                accepted.push(record.clone());
            }
            verdicts.push(verdict);
        }
        Ok(Produced::new()
            .jsonl(files::FILTERED, &accepted)
            .jsonl(files::FILTER_VERDICTS, &verdicts))
    }

    fn stage_gen_problems(&self) -> StageResult {
        let records: Vec<SequenceRecord> = self.load(files::FILTERED)?;
        let options = GenerationOptions {
            temperature: self.config.generation.temperature,
            max_tokens: self.config.generation.max_tokens,
        };
        let jobs: Vec<(&SequenceRecord, u32)> = records
            .iter()
            .flat_map(|r| (0..self.config.generation.samples_per_sequence).map(move |i| (r, i)))
            .collect();
        let results: Vec<_> = jobs
            .par_iter()
            .map(|(r, i)| {
                let item = format!("{}#{i}", r.id);
                generate_problem(r, &self.agents.working, *i, self.seed(Stage::GenProblems, &item), &options)
            })
            .collect();
        let mut problems = Vec::new();
        let mut failures = Vec::new();
        for ((record, i), result) in jobs.iter().zip(results) {
            match result {
                Ok(p) => problems.push(p),
                Err(ProblemError::Agent(e)) => return Err(e.to_string()),
                Err(e) => {
                    let problem_id = format!("{}-g{i}", record.id);
                    self.events.emit(
                        Stage::GenProblems,
                        "generation_rejected",
                        json!({"problem_id": problem_id, "error": e.to_string()}),
                    );
                    failures.push(GenerationFailure {
                        problem_id,
                        sequence_id: record.id.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(Produced::new()
            .jsonl(files::PROBLEMS, &problems)
            .jsonl(files::GENERATION_FAILURES, &failures))
    }

    fn stage_validate(&self) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::PROBLEMS)?;
        let results: Vec<ValidationResult> = problems
            .par_iter()
            .map(|p| validate_problem(p, &self.agents.guiding, self.seed(Stage::Validate, &p.problem_id)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let passed: Vec<&AlgorithmicProblem> = problems
            .iter()
            .zip(&results)
            .filter(|(_, r)| r.passed)
            .map(|(p, _)| p)
            .collect();
        Ok(Produced::new()
            .jsonl(files::VALIDATION, &results)
            .jsonl(files::VALIDATED, &passed))
    }

    fn stage_assign_cases(&self) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::VALIDATED)?;
        let records: BTreeMap<String, SequenceRecord> = self
            .load::<SequenceRecord>(files::FILTERED)?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect();
        let mut assigned = Vec::new();
        let mut failures = Vec::new();
        for p in &problems {
            let record = records
                .get(&p.sequence_id)
                .ok_or_else(|| format!("problem {} refers to unknown sequence {}", p.problem_id, p.sequence_id))?;
            let seed = self.seed(Stage::AssignCases, &p.problem_id);
            let result = choose_test_count(p, record, seed)
                .ok_or_else(|| "too few terms for 5 test cases".to_string())
                .and_then(|count| assign_test_cases(p, record, count, seed::child(seed, 1)).map_err(|e| e.to_string()));
            match result {
                Ok(a) => {
                    check_case_layout(&a, record).map_err(|e| format!("{}: {e}", a.problem_id))?;
                    assigned.push(a);
                }
                Err(error) => {
                    self.events.emit(
                        Stage::AssignCases,
                        "assignment_rejected",
                        json!({"problem_id": p.problem_id, "error": error}),
                    );
                    failures.push(GenerationFailure {
                        problem_id: p.problem_id.clone(),
                        sequence_id: p.sequence_id.clone(),
                        error,
                    });
                }
            }
        }
        let sequences: Vec<String> = assigned
            .iter()
            .map(|p| p.sequence_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let (sft_ids, rl_ids) = split_groups(&sequences, self.config.split.sft_fraction, self.seed(Stage::AssignCases, "split"));
        let sft_set: BTreeSet<&String> = sft_ids.iter().collect();
        let (sft, rl): (Vec<AlgorithmicProblem>, Vec<AlgorithmicProblem>) =
            assigned.iter().cloned().partition(|p| sft_set.contains(&p.sequence_id));
        Ok(Produced::new()
            .jsonl(files::ASSIGNED, &assigned)
            .jsonl(files::ASSIGN_FAILURES, &failures)
            .json(files::SPLIT, &SplitManifest { sft: sft_ids, rl: rl_ids })
            .jsonl(files::SFT_PROBLEMS, &sft)
            .jsonl(files::RL_PROBLEMS, &rl))
    }

    fn stage_gen_sft(&self) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::SFT_PROBLEMS)?;
        let cfg = &self.config.sft;
        let options = SftOptions {
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            max_rounds: cfg.max_rounds,
        };
        let jobs: Vec<(&AlgorithmicProblem, u32)> = problems
            .iter()
            .flat_map(|p| (0..cfg.resamples).map(move |r| (p, r)))
            .collect();
        let traces: Vec<_> = jobs
            .par_iter()
            .map(|(p, r)| {
                let seed = self.seed(Stage::GenSft, &format!("{}#{r}", p.problem_id));
                build_trace(p, &self.agents.working, &self.agents.guiding, &self.sandbox, seed, &options)
            })
            .collect();
        let mut samples = Vec::new();
        let mut summaries = Vec::new();
        for ((problem, resample), trace) in jobs.iter().zip(traces) {
            let trace = match trace {
                Ok(t) => t,
                Err(e @ (SftError::Agent(_) | SftError::Sandbox(_))) => return Err(e.to_string()),
                Err(e) => {
                    self.events.emit(
                        Stage::GenSft,
                        "trace_aborted",
                        json!({"problem_id": problem.problem_id, "resample": resample, "error": e.to_string()}),
                    );
                    summaries.push(TraceSummary {
                        problem_id: problem.problem_id.clone(),
                        resample: *resample,
                        rounds: 0,
                        succeeded: false,
                        error: Some(e.to_string()),
                    });
                    continue;
                }
            };
            summaries.push(TraceSummary {
                problem_id: problem.problem_id.clone(),
                resample: *resample,
                rounds: trace.rounds,
                succeeded: trace.succeeded,
                error: None,
            });
            if !trace.succeeded {
                self.events.emit(
                    Stage::GenSft,
                    "trace_exhausted",
                    json!({"problem_id": problem.problem_id, "resample": resample, "rounds": trace.rounds}),
                );
                continue;
            }
            for &variant in &cfg.variants {
                samples.push(emit_sft(problem, &trace, variant, *resample, &WhitespaceCounter).map_err(|e| e.to_string())?);
            }
        }
        Ok(Produced::new().jsonl(files::SFT, &samples).jsonl(files::TRACES, &summaries))
    }

    fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions {
            temperature: self.config.rl.temperature,
            max_tokens: self.config.rl.max_tokens,
        }
    }

    fn stage_estimate_sov(&self, force: bool) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::RL_PROBLEMS)?;
        let checkpoint_path = self.path(files::ESTIMATES_PARTIAL);
        let mut prior: BTreeMap<String, EstimateCheckpoint> = BTreeMap::new();
        if checkpoint_path.exists() && !force {
            for c in read_jsonl::<EstimateCheckpoint>(&checkpoint_path)? {
                let id = match &c {
                    EstimateCheckpoint::Done(e) => e.problem_id.clone(),
                    EstimateCheckpoint::Partial(p) => p.problem_id.clone(),
                };
                prior.insert(id, c);
            }
            self.events.emit(Stage::EstimateSov, "resumed", json!({"checkpointed": prior.len()}));
        }
        let n = self.config.rl.rollouts;
        let options = self.rollout_options();
        let results: Vec<Result<SolvabilityEstimate, RlError>> = problems
            .par_iter()
            .map(|p| {
                let seed = self.seed(Stage::EstimateSov, &p.problem_id);
                match prior.get(&p.problem_id) {
                    Some(EstimateCheckpoint::Done(e)) if e.n == n => Ok(e.clone()),
                    Some(EstimateCheckpoint::Partial(part)) if part.verdicts.len() == n as usize => {
                        resume_solvability(p, part.clone(), &self.agents.rollout, &self.sandbox, seed, &options)
                    }
                    _ => estimate_solvability(p, &self.agents.rollout, n, &self.sandbox, seed, &options),
                }
            })
            .collect();

        let mut estimates = Vec::new();
        let mut checkpoint = Vec::new();
        let mut first_error = None;
        for r in results {
            match r {
                Ok(e) => {
                    checkpoint.push(EstimateCheckpoint::Done(e.clone()));
                    estimates.push(e);
                }
                Err(RlError::Incomplete { partial, cause, .. }) => {
                    checkpoint.push(EstimateCheckpoint::Partial(partial));
                    first_error.get_or_insert(cause);
                }
                Err(e) => {
                    first_error.get_or_insert(e.to_string());
                }
            }
        }
        if let Some(cause) = first_error {
            write_atomic(&checkpoint_path, to_jsonl(&checkpoint).as_bytes()).map_err(|e| e.to_string())?;
            return Err(format!("{cause} (progress saved to {})", files::ESTIMATES_PARTIAL));
        }
        if checkpoint_path.exists() {
            fs::remove_file(&checkpoint_path).map_err(|e| e.to_string())?;
        }
        Ok(Produced::new().jsonl(files::ESTIMATES, &estimates))
    }

    fn stage_select_rl(&self) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::RL_PROBLEMS)?;
        let estimates: Vec<SolvabilityEstimate> = self.load(files::ESTIMATES)?;
        let samples = select_rl(&estimates, &problems, &self.config.rl.window).map_err(|e| e.to_string())?;
        Ok(Produced::new().jsonl(files::RL, &samples))
    }

    fn stage_eval_gtg(&self, force: bool) -> StageResult {
        let problems: Vec<AlgorithmicProblem> = self.load(files::ASSIGNED)?;
        let checkpoint_path = self.path(files::GTG_PARTIAL);
        let completed: Vec<GtgProblemRun> = if checkpoint_path.exists() && !force {
            read_jsonl(&checkpoint_path)?
        } else {
            Vec::new()
        };
        let mut sandbox_cfg = self.sandbox.config().clone();
        sandbox_cfg.limits.wall_ms = self.config.eval.per_exec_timeout_s * 1000;
        let sandbox = Sandbox::new(sandbox_cfg).map_err(|e| e.to_string())?;
        let seed = self.seed(Stage::EvalGtg, "");
        match eval_gtg(&problems, &self.agents.rollout, &self.config.eval, &sandbox, seed, completed) {
            Ok((report, runs)) => {
                if checkpoint_path.exists() {
                    fs::remove_file(&checkpoint_path).map_err(|e| e.to_string())?;
                }
                let completions: Vec<&GtgCompletion> = runs.iter().flat_map(|r| &r.completions).collect();
                Ok(Produced::new()
                    .json(files::GTG_REPORT, &report)
                    .raw(files::GTG_CSV, report.to_csv().into_bytes())
                    .jsonl(files::GTG_COMPLETIONS, &completions))
            }
            Err(EvalError::Partial { completed, cause }) => {
                write_atomic(&checkpoint_path, to_jsonl(&completed).as_bytes()).map_err(|e| e.to_string())?;
                Err(format!("{cause} (progress saved to {})", files::GTG_PARTIAL))
            }
            Err(e) => Err(e.to_string()),
        }
    }

    fn stage_eval_next(&self) -> StageResult {
        let records: Vec<SequenceRecord> = self.load(files::FILTERED)?;
        let items: Vec<NextNumberItem> = records.iter().filter_map(NextNumberItem::from_record).collect();
        let report = eval_next_number(&items, &self.agents.rollout, self.seed(Stage::EvalNext, ""))
            .map_err(|e| e.to_string())?;
        Ok(Produced::new().json(files::NEXT_NUMBER, &report))
    }

    fn stage_stats(&self) -> StageResult {
        let stats = |file: &str| -> Result<crate::evalkit::StatsReport, String> {
            let f = fs::File::open(self.path(file)).map_err(|e| format!("{file}: {e}"))?;
            dataset_stats(BufReader::new(f)).map_err(|e| format!("{file}: {e}"))
        };
        let bundle = StatsBundle {
            sft: stats(files::SFT)?,
            rl: stats(files::RL)?,
        };
        Ok(Produced::new().json(files::STATS, &bundle))
    }

    fn stage_analyze_cases(&self) -> StageResult {
        let completions: Vec<GtgCompletion> = self.load(files::GTG_COMPLETIONS)?;
        let problems: BTreeMap<String, AlgorithmicProblem> = self
            .load::<AlgorithmicProblem>(files::ASSIGNED)?
            .into_iter()
            .map(|p| (p.problem_id.clone(), p))
            .collect();
        let records: BTreeMap<String, SequenceRecord> = self
            .load::<SequenceRecord>(files::FILTERED)?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect();
        let mut counts = BucketCounts::default();
        for c in &completions {
            let p = problems
                .get(&c.problem_id)
                .ok_or_else(|| format!("completion for unknown problem {}", c.problem_id))?;
            let r = records
                .get(&p.sequence_id)
                .ok_or_else(|| format!("unknown sequence {}", p.sequence_id))?;
            counts.add(bucket_of(&c.text, r, p.index_map(), c.passed));
        }
        Ok(Produced::new().json(
            files::CASE_BUCKETS,
            &CaseBucketReport {
                n_responses: completions.len(),
                counts,
            },
        ))
    }
}
