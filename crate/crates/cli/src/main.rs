use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqforge::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};
use seqforge::rlgen::{ResponseRecord, RewardConfig, RewardVariant, RlError};

#[derive(Debug, Parser)]
#[command(name = "seqforge", version, about = "Turn integer sequences into general-term problems and training data")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding stage outputs and the manifest.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Worker threads per stage; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Re-run stages that are already done.
    #[arg(long, global = true)]
    force: bool,
    /// Do not mirror events to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
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
    /// Every stage in order.
    All,
    /// Score one response record read from stdin.
    ScoreReward {
        #[arg(long)]
        variant: Option<RewardVariant>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Filter => Stage::Filter,
            Command::GenProblems => Stage::GenProblems,
            Command::Validate => Stage::Validate,
            Command::AssignCases => Stage::AssignCases,
            Command::GenSft => Stage::GenSft,
            Command::EstimateSov => Stage::EstimateSov,
            Command::SelectRl => Stage::SelectRl,
            Command::EvalGtg => Stage::EvalGtg,
            Command::EvalNext => Stage::EvalNext,
            Command::Stats => Stage::Stats,
            Command::AnalyzeCases => Stage::AnalyzeCases,
            Command::All | Command::ScoreReward { .. } => return None,
        })
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn run_pipeline(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(cli)?;
    let run_dir = cli
        .run_dir
        .clone()
        .ok_or_else(|| PipelineError::Config("--run-dir is required".into()))?;
    let mut pipeline = Pipeline::from_config(config, &run_dir)?.with_stderr_events(!cli.quiet);
    let stages: Vec<Stage> = match cli.command.stage() {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for stage in stages {
        let outcome = pipeline.run_stage(stage, cli.force)?;
        let line = serde_json::json!({
            "stage": outcome.stage.name(),
            "skipped": outcome.skipped,
            "counts": outcome.counts,
        });
        println!("{line}");
    }
    Ok(())
}

fn score_reward(
    cli: &Cli,
    variant: Option<RewardVariant>,
    lambda: Option<f64>,
    epsilon: Option<f64>,
) -> Result<(), String> {
    let mut cfg = match &cli.config {
        Some(_) => load_config(cli).map_err(|e| e.to_string())?.rl.reward,
        None => RewardConfig::default(),
    };
    if let Some(v) = variant {
        cfg.variant = v;
    }
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let mut input = String::new();
    std::io::stdin()
        .read_to_string(&mut input)
        .map_err(|e| format!("stdin: {e}"))?;
    let record = ResponseRecord::parse(input.trim()).map_err(|e: RlError| e.to_string())?;
    let breakdown = record.score(&cfg).map_err(|e| e.to_string())?;
    println!("{}", serde_json::to_string(&breakdown).expect("serializable"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::ScoreReward {
        variant,
        lambda,
        epsilon,
    } = &cli.command
    {
        return match score_reward(&cli, *variant, *lambda, *epsilon) {
            Ok(()) => ExitCode::SUCCESS,
            Err(message) => {
                eprintln!("error: {message}");
                ExitCode::from(2)
            }
        };
    }
    match run_pipeline(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
