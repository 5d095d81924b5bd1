//! Turns integer-sequence records into general-term algorithmic problems and
//! builds post-training data from them.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: record ingestion, rule and agent density filters, group split.
//! - [`agents`]: completion gateway (retry, rate limits, cache), scripted mocks,
//!   prompt templates.
//! - [`problemgen`]: problem generation, guiding-agent validation, test-case
//!   assignment.
//! - [`sandbox`]: child-process execution of candidate programs against cases.
//! - [`sftgen`]: draft → test → reflect → repair traces and chain-of-thought
//!   assembly.
//! - [`rlgen`]: rollout solvability estimates, window selection, case audits and
//!   the reward family.
//! - [`evalkit`]: pass@k, GTG and next-number evaluation, case buckets, dataset
//!   statistics, correlation.
//! - [`pipeline`]: config, run directories, stage manifests and orchestration.

pub mod agents;
pub mod corpus;
pub mod evalkit;
pub mod extract;
pub mod pipeline;
pub mod problemgen;
pub mod rlgen;
pub mod sandbox;
pub mod seed;
pub mod sftgen;

pub use agents::{Agent, AgentRole, AgentSet, CompletionRequest, CompletionResult, FinishReason};
pub use corpus::{FilterRules, FilterVerdict, SequenceRecord, Source};
pub use problemgen::{AlgorithmicProblem, IoCase};
pub use sandbox::{ExecutionLimits, ExecutionOutcome, SandboxConfig, SuiteResult, Verdict};
