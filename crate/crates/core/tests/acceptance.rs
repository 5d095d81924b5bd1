//! Acceptance checks. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqforge::agents::{Agent, AgentRole, CompletionRequest, FnMock};
use seqforge::evalkit::{correlate, dataset_stats, pass_at_k, pass_at_k_exact, stats_of, StatsSample};
use seqforge::pipeline::{files, read_jsonl};
use seqforge::problemgen::{check_case_layout, AlgorithmicProblem, IoCase};
use seqforge::rlgen::{
    score_parts, select_rl, CaseAudit, RewardConfig, RewardVariant, RlSample, SelectionWindow,
    SolvabilityEstimate, Sov,
};
use seqforge::sandbox::{ExecutionLimits, RunnerCommand, Sandbox, SandboxConfig, Verdict};
use seqforge::sftgen::{build_trace, count_reflection_segments, emit_sft, CotVariant, SftOptions, SftSample, WhitespaceCounter};
use seqforge::SequenceRecord;

type Outcome = Result<String, String>;

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn cfg(variant: RewardVariant, lambda: f64) -> RewardConfig {
    RewardConfig {
        lambda,
        variant,
        ..RewardConfig::default()
    }
}

fn total(format_ok: bool, all_passed: bool, n_c: usize, n_tc: usize, sov: Sov, c: &RewardConfig) -> f64 {
    score_parts(format_ok, all_passed, &CaseAudit::from_counts(n_c, n_tc), sov, c)
        .expect("valid scoring inputs")
        .total
}

/// The CSSR value for an all-pass response, computed through base-2 logs.
fn cssr_oracle(sov: f64, lambda: f64, eps: f64, rate: f64) -> f64 {
    let x = if sov + eps > 1.0 { 1.0 } else { sov + eps };
    -lambda * x.log2() * std::f64::consts::LN_2 + (1.0 - lambda) * rate
}

fn reward_oracle_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let lambdas = [0.0, 0.5, 0.9, 1.0];
    let rates = [(2, 0), (2, 1), (2, 2)];
    let mut worst = 0f64;
    for _ in 0..200 {
        let i = rng.random_range(0..=32u64);
        let lambda = lambdas[rng.random_range(0..4)];
        let (n_c, n_tc) = rates[rng.random_range(0..3)];
        let sov = Sov::new(i, 32).unwrap();
        let got = total(true, true, n_c, n_tc, sov, &cfg(RewardVariant::Cssr, lambda));
        let want = cssr_oracle(i as f64 / 32.0, lambda, 1e-6, n_tc as f64 / n_c as f64);
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e} > 1e-12"))?;

    let d = RewardConfig::default();
    let quarter = Sov::new(8, 32).unwrap();
    let format_err = total(false, true, 2, 1, quarter, &d);
    let case_fail = total(true, false, 2, 1, quarter, &d);
    let worked = total(true, true, 2, 1, quarter, &d);
    ensure(format_err == -1.0, || format!("format error gave {format_err}"))?;
    ensure(case_fail == 0.0, || format!("case failure gave {case_fail}"))?;
    ensure((worked - 1.2977).abs() < 1e-4, || format!("worked example gave {worked}"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("200 points, max deviation {worst:e}; anchors -1, 0, {worked:.4}; {elapsed:?}"))
}

fn variant_reward_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst = 0f64;
    for variant in [RewardVariant::Binary, RewardVariant::PassRate, RewardVariant::NoLog] {
        for _ in 0..50 {
            let den = rng.random_range(1..=64u64);
            let num = rng.random_range(0..=den);
            let s = num as f64 / den as f64;
            let lambda: f64 = rng.random_range(0.0..=1.0);
            let format_ok = rng.random_bool(0.8);
            let all_passed = rng.random_bool(0.6);
            let n_c = rng.random_range(1..=6usize);
            let n_tc = rng.random_range(0..=n_c);
            let rate = n_tc as f64 / n_c as f64;
            let want = match variant {
                RewardVariant::Binary => f64::from(u8::from(format_ok && all_passed)),
                RewardVariant::PassRate if !format_ok => -1.0,
                RewardVariant::PassRate => 1.0 - s,
                _ if !format_ok => -1.0,
                _ if !all_passed => 0.0,
                _ => lambda * (1.0 - s) + (1.0 - lambda) * rate,
            };
            let got = total(format_ok, all_passed, n_c, n_tc, Sov::new(num, den).unwrap(), &cfg(variant, lambda));
            let dev = (got - want).abs();
            ensure(dev <= 1e-12, || {
                format!("{variant:?} at sov {num}/{den}, lambda {lambda}: got {got}, want {want}")
            })?;
            worst = worst.max(dev);
        }
    }
    Ok(format!("3 variants x 50 points, max deviation {worst:e}"))
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for i in 0..10_000 {
        let c = cfg(RewardVariant::Cssr, rng.random_range(0.01..0.99));
        let den = rng.random_range(2..=64u64);
        let a = rng.random_range(1..den);
        let b = rng.random_range(a + 1..=den);
        let n_c = rng.random_range(1..=8usize);
        let n_tc = rng.random_range(0..=n_c);
        let (lo, hi) = (Sov::new(a, den).unwrap(), Sov::new(b, den).unwrap());
        let (r_lo, r_hi) = (total(true, true, n_c, n_tc, lo, &c), total(true, true, n_c, n_tc, hi, &c));
        ensure(r_lo > r_hi, || format!("sample {i}: not decreasing in sov ({a}/{den} -> {b}/{den})"))?;

        let more = rng.random_range(1..=8usize);
        let fewer = rng.random_range(0..more);
        let s = Sov::new(rng.random_range(0..=den), den).unwrap();
        let (low_rate, high_rate) = (total(true, true, 8, fewer, s, &c), total(true, true, 8, more, s, &c));
        ensure(low_rate < high_rate, || format!("sample {i}: not increasing in case rate"))?;

        let fmt = total(false, rng.random_bool(0.5), n_c, n_tc, s, &c);
        let fail = total(true, false, n_c, n_tc, s, &c);
        let pass = total(true, true, n_c, n_tc, s, &c);
        ensure(fmt < fail && fail <= pass, || format!("sample {i}: ordering {fmt} / {fail} / {pass}"))?;
    }
    Ok("10000 samples".into())
}

fn pass_at_k_vs_simulation() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    const DRAWS: usize = 100_000;
    let mut worst_sigmas = 0f64;
    for _ in 0..30 {
        let n = rng.random_range(1..=32usize);
        let c = rng.random_range(0..=n);
        let k = rng.random_range(1..=n.min(4));
        let p = pass_at_k(n as u64, c as u64, k as u64).map_err(|e| e.to_string())?;
        let hits = (0..DRAWS)
            .filter(|_| rand::seq::index::sample(&mut rng, n, k).iter().any(|i| i < c))
            .count();
        let mc = hits as f64 / DRAWS as f64;
        let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
        let dev = (mc - p).abs();
        ensure(dev <= 3.0 * sigma + 1e-12, || format!("(n={n}, c={c}, k={k}): estimator {p}, simulation {mc}"))?;
        if sigma > 0.0 {
            worst_sigmas = worst_sigmas.max(dev / sigma);
        }
    }
    for n in 1..=32u64 {
        for c in 0..=n {
            let exact = pass_at_k_exact(n, c, 1).map_err(|e| e.to_string())?;
            let ratio = BigRational::new(BigInt::from(c), BigInt::from(n));
            ensure(exact == ratio, || format!("pass@1 for n={n}, c={c} is {exact}"))?;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("30 triples within {worst_sigmas:.2} sigma; pass@1 = c/n for n <= 32; {elapsed:?}"))
}

fn square_problem() -> AlgorithmicProblem {
    let case = |n: u64, position: usize| IoCase {
        input: n.to_string(),
        expected_output: (n * n).to_string(),
        term_position: Some(position),
    };
    AlgorithmicProblem {
        problem_id: "SQ-g0".into(),
        sequence_id: "SQ".into(),
        statement: "Given n, print n squared.".into(),
        example_cases: vec![case(1, 0), case(2, 1)],
        test_cases: (3..=7).map(|n| case(n, n as usize - 1)).collect(),
        pattern_id: "SQ".into(),
        index_base: 1,
        generation_cot: None,
    }
}

fn python_sandbox(limits: ExecutionLimits) -> Sandbox {
    Sandbox::new(SandboxConfig::new(RunnerCommand::parse("python3 {program}").unwrap()).with_limits(limits)).unwrap()
}

fn reflection_bookkeeping() -> Outcome {
    const WRONG: &str = "```python\nn = int(input())\nprint(n * n + 1)\n```";
    const RIGHT: &str = "```python\nn = int(input())\nprint(n * n)\n```";
    let sandbox = python_sandbox(ExecutionLimits::default());
    let guiding = Agent::mock(
        AgentRole::Guiding,
        FnMock::new(|_: &CompletionRequest| Ok("The result is one too large.".into())),
    );
    let problem = square_problem();

    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let fail_fail_pass = Agent::mock(
        AgentRole::Working,
        FnMock::new(move |_: &CompletionRequest| {
            let call = seen.fetch_add(1, Ordering::SeqCst);
            Ok(if call < 2 { WRONG } else { RIGHT }.into())
        }),
    );
    let opts = SftOptions::default();
    let trace = build_trace(&problem, &fail_fail_pass, &guiding, &sandbox, 11, &opts).map_err(|e| e.to_string())?;
    ensure(trace.succeeded && trace.rounds == 2, || format!("rounds {} succeeded {}", trace.rounds, trace.succeeded))?;
    let sample = emit_sft(&problem, &trace, CotVariant::CaseReflect, 0, &WhitespaceCounter).map_err(|e| e.to_string())?;
    let segments = count_reflection_segments(&sample.output.cot);
    ensure(segments == 2, || format!("{segments} failed-case segments"))?;

    let never = Agent::mock(AgentRole::Working, FnMock::new(|_: &CompletionRequest| Ok(WRONG.into())));
    let opts = SftOptions {
        max_rounds: 5,
        ..SftOptions::default()
    };
    let exhausted = build_trace(&problem, &never, &guiding, &sandbox, 12, &opts).map_err(|e| e.to_string())?;
    ensure(!exhausted.succeeded && exhausted.attempts.len() == 6, || {
        format!("exhausted trace has {} attempts", exhausted.attempts.len())
    })?;
    ensure(emit_sft(&problem, &exhausted, CotVariant::CaseReflect, 0, &WhitespaceCounter).is_err(), || {
        "exhausted trace emitted a sample".into()
    })?;
    Ok("fail-fail-pass -> 2 rounds, 2 segments; exhaustion -> 6 attempts, no sample".into())
}

fn sandbox_suite() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let shell = |limits: ExecutionLimits| {
        let mut c = SandboxConfig::new(RunnerCommand::parse("sh {program}").unwrap()).with_limits(limits);
        c.program_file = "prog.sh".into();
        c.temp_root = Some(root.path().to_path_buf());
        Sandbox::new(c).unwrap()
    };
    let plain = shell(ExecutionLimits::default());
    let square = "read n\necho $((n * n))\n";
    let first = plain.execute(square, "12\n");
    ensure(first.verdict == Verdict::Completed && first.stdout.trim() == "144", || format!("{first:?}"))?;
    for _ in 0..9 {
        let again = plain.execute(square, "12\n");
        ensure(
            again.verdict == first.verdict && again.stdout == first.stdout && again.exit_status == first.exit_status,
            || format!("repeat differs: {again:?}"),
        )?;
    }

    let timed = shell(ExecutionLimits {
        wall_ms: 200,
        ..ExecutionLimits::default()
    });
    let started = Instant::now();
    let spin = timed.execute("while :; do :; done\n", "");
    let waited = started.elapsed();
    ensure(spin.verdict == Verdict::Timeout, || format!("spin loop verdict {:?}", spin.verdict))?;
    ensure(waited < Duration::from_secs(2), || format!("spin loop ran {waited:?}"))?;

    let capped = shell(ExecutionLimits {
        max_output_bytes: 1024,
        ..ExecutionLimits::default()
    });
    let flood = capped.execute("while :; do echo yyyyyyyyyyyyyyyy; done\n", "");
    ensure(flood.verdict == Verdict::OutputOverflow, || format!("flood verdict {:?}", flood.verdict))?;

    let litter = plain.execute("echo data > scratch.txt\nmkdir sub\necho ok > sub/x\necho done\n", "");
    ensure(litter.verdict == Verdict::Completed, || format!("{litter:?}"))?;
    let leftovers: Vec<_> = fs::read_dir(root.path()).map_err(|e| e.to_string())?.collect();
    ensure(leftovers.is_empty(), || format!("{} entries left in the temp root", leftovers.len()))?;
    Ok(format!("10 identical runs; timeout after {waited:?}; output cap; temp root empty"))
}

fn stats_fold(run: &Path) -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/stats");
    let read = |p: &Path| dataset_stats(BufReader::new(fs::File::open(p).unwrap())).map_err(|e| e.to_string());
    let batch = |p: &Path| {
        let samples: Vec<StatsSample> = fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| StatsSample::parse(l).unwrap())
            .collect();
        stats_of(&samples)
    };

    let sft = read(&fixtures.join("sft.jsonl"))?;
    ensure(sft.n_samples == 4 && sft.n_patterns == 3, || format!("{sft:?}"))?;
    ensure(sft.n_reflective_samples == 3 && sft.max_rounds == Some(5), || format!("{sft:?}"))?;
    ensure(sft.avg_rounds == Some(2.5) && sft.avg_rounds_reflective == Some(10.0 / 3.0), || format!("{sft:?}"))?;
    ensure(sft.max_response_tokens == Some(210), || format!("{sft:?}"))?;
    let hist: BTreeMap<u32, usize> = [(0, 1), (2, 1), (3, 1), (5, 1)].into_iter().collect();
    ensure(sft.rounds_histogram == hist, || format!("histogram {:?}", sft.rounds_histogram))?;
    let rl = read(&fixtures.join("rl.jsonl"))?;
    ensure(rl.n_samples == 2 && rl.n_patterns == 2, || format!("{rl:?}"))?;
    ensure(
        rl.min_sov == Some(0.125) && rl.max_sov == Some(0.375) && rl.avg_sov == Some(0.25),
        || format!("{rl:?}"),
    )?;

    // Rounds of the pipeline's SFT set, recounted from its trace summaries.
    let traces: Vec<serde_json::Value> = read_jsonl(&run.join(files::TRACES))?;
    let variants = common::fixture_config().sft.variants.len();
    let mut expected: BTreeMap<u32, usize> = BTreeMap::new();
    for t in traces.iter().filter(|t| t["succeeded"] == true) {
        *expected.entry(t["rounds"].as_u64().unwrap() as u32).or_default() += variants;
    }
    let run_sft = read(&run.join(files::SFT))?;
    ensure(run_sft.rounds_histogram == expected, || {
        format!("pipeline histogram {:?}, recounted {expected:?}", run_sft.rounds_histogram)
    })?;

    for p in [
        fixtures.join("sft.jsonl"),
        fixtures.join("rl.jsonl"),
        run.join(files::SFT),
        run.join(files::RL),
    ] {
        let streamed = read(&p)?;
        ensure(streamed == batch(&p), || format!("{}: streaming and batch differ", p.display()))?;
    }
    Ok("fixture SFT/RL values exact; pipeline histogram recounted; streaming = batch on 4 files".into())
}

fn correlation() -> Outcome {
    let check = |xs: &[f64], ys: &[f64], pearson: Option<f64>, spearman: f64| -> Result<(), String> {
        let r = correlate(xs, ys).map_err(|e| e.to_string())?;
        let sp = r.spearman.ok_or("no spearman coefficient")?;
        ensure((sp - spearman).abs() <= 1e-12, || format!("spearman {sp} for {xs:?}/{ys:?}"))?;
        if let Some(want) = pearson {
            let got = r.pearson.ok_or("no pearson coefficient")?;
            ensure((got - want).abs() <= 1e-12, || format!("pearson {got} for {xs:?}/{ys:?}"))?;
        }
        Ok(())
    };
    check(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], Some(1.0), 1.0)?;
    check(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], Some(-1.0), -1.0)?;
    check(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0], Some(0.8), 0.8)?;
    Ok("perfect, inverted and rank examples within 1e-12".into())
}

struct FixtureRun {
    dir: tempfile::TempDir,
    elapsed: Duration,
}

fn run_fixture() -> FixtureRun {
    let dir = tempfile::tempdir().expect("temp dir");
    let started = Instant::now();
    common::run_fixture(dir.path());
    FixtureRun {
        elapsed: started.elapsed(),
        dir,
    }
}

fn end_to_end(run: &FixtureRun) -> Outcome {
    let dir = run.dir.path();
    let count = |file: &str| read_jsonl::<serde_json::Value>(&dir.join(file)).map(|v| v.len());
    let validated = count(files::VALIDATED)?;
    let sft: Vec<SftSample> = read_jsonl(&dir.join(files::SFT))?;
    let rl: Vec<RlSample> = read_jsonl(&dir.join(files::RL))?;
    ensure(validated >= 8, || format!("{validated} validated problems"))?;
    ensure(sft.len() >= 5, || format!("{} SFT samples", sft.len()))?;
    ensure(rl.len() >= 3, || format!("{} RL samples", rl.len()))?;

    let assigned: Vec<AlgorithmicProblem> = read_jsonl(&dir.join(files::ASSIGNED))?;
    let records: BTreeMap<String, SequenceRecord> = read_jsonl::<SequenceRecord>(&dir.join(files::FILTERED))?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    for p in &assigned {
        check_case_layout(p, &records[&p.sequence_id]).map_err(|e| format!("{}: {e}", p.problem_id))?;
    }
    let by_id: BTreeMap<&str, &AlgorithmicProblem> = assigned.iter().map(|p| (p.problem_id.as_str(), p)).collect();
    let sandbox = Sandbox::new(common::fixture_config().sandbox_config().map_err(|e| e.to_string())?).unwrap();
    for s in &sft {
        let p = by_id[s.problem_id.as_str()];
        let cases: Vec<IoCase> = p.example_cases.iter().chain(&p.test_cases).cloned().collect();
        let suite = sandbox.run_suite(&s.output.code, &cases, false).map_err(|e| e.to_string())?;
        ensure(suite.all_passed, || format!("{}: code fails its suite", s.sample_id))?;
    }
    ensure(run.elapsed < Duration::from_secs(120), || format!("took {:?}", run.elapsed))?;
    Ok(format!(
        "{validated} validated, {} assigned, {} SFT, {} RL; SFT code re-passes; layouts hold; {:?}",
        assigned.len(),
        sft.len(),
        rl.len(),
        run.elapsed
    ))
}

fn solvability_identity(run: &Path) -> Outcome {
    let mut estimates: Vec<SolvabilityEstimate> = read_jsonl(&run.join(files::ESTIMATES))?;
    let template: AlgorithmicProblem = read_jsonl::<AlgorithmicProblem>(&run.join(files::RL_PROBLEMS))?
        .into_iter()
        .next()
        .ok_or("no RL problems")?;
    let mut problems: Vec<AlgorithmicProblem> = read_jsonl(&run.join(files::RL_PROBLEMS))?;
    for n_pass in 0..=50u32 {
        let id = format!("Z{n_pass:02}-g0");
        problems.push(AlgorithmicProblem {
            problem_id: id.clone(),
            ..template.clone()
        });
        let verdicts = (0..50).map(|i| i < n_pass).collect();
        estimates.push(SolvabilityEstimate::from_verdicts(id, verdicts));
    }

    for e in &estimates {
        let passes = e.rollout_verdicts.iter().filter(|v| **v).count() as u32;
        let product = e.sov().to_rational() * BigRational::from_integer(BigInt::from(e.n));
        ensure(
            passes == e.n_pass && product == BigRational::from_integer(BigInt::from(e.n_pass)),
            || format!("{}: sov * N != N_p", e.problem_id),
        )?;
    }

    // (lo_num, lo_den, hi_num, hi_den, admit zero)
    let windows = [(0u64, 1u64, 23u64, 50u64, false), (0, 1, 23, 50, true), (7, 10, 1, 1, false), (1, 4, 1, 2, false)];
    for (ln, ld, hn, hd, zero) in windows {
        let window = SelectionWindow::parse(&format!("{ln}/{ld}"), &format!("{hn}/{hd}"), zero).map_err(|e| e.to_string())?;
        let selected: BTreeSet<String> = select_rl(&estimates, &problems, &window)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|s| s.problem_id)
            .collect();
        let brute: BTreeSet<String> = estimates
            .iter()
            .filter(|e| {
                let (p, n) = (u64::from(e.n_pass), u64::from(e.n));
                p * ld >= ln * n && p * hd <= hn * n && (p > 0 || zero)
            })
            .map(|e| e.problem_id.clone())
            .collect();
        ensure(selected == brute, || {
            format!("window {ln}/{ld}..{hn}/{hd} zero={zero}: selected {selected:?}, expected {brute:?}")
        })?;
    }
    Ok(format!("{} estimates; 4 windows match brute force, 0 excluded and included", estimates.len()))
}

fn determinism(first: &FixtureRun) -> Outcome {
    let second = run_fixture();
    let listing = |dir: &Path| -> BTreeSet<String> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".jsonl") || n.ends_with(".json") || n.ends_with(".csv"))
            .filter(|n| n != "manifest.json" && n != "events.jsonl")
            .collect()
    };
    let names = listing(first.dir.path());
    ensure(names == listing(second.dir.path()), || "runs produced different file sets".into())?;
    for name in &names {
        let a = fs::read(first.dir.path().join(name)).unwrap();
        let b = fs::read(second.dir.path().join(name)).unwrap();
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} dataset files byte-identical", names.len()))
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(reason) => {
            failures += 1;
            println!("FAIL  {name}: {reason}");
        }
    };
    report("reward oracle suite", reward_oracle_suite());
    report("variant reward suite", variant_reward_suite());
    report("CSSR monotonicity", monotonicity());
    report("pass@k vs simulation", pass_at_k_vs_simulation());
    report("reflection bookkeeping", reflection_bookkeeping());
    report("sandbox suite", sandbox_suite());
    report("correlation", correlation());
    let run = run_fixture();
    report("end-to-end hermetic pipeline", end_to_end(&run));
    report("solvability identity", solvability_identity(run.dir.path()));
    report("statistics fold", stats_fold(run.dir.path()));
    report("determinism", determinism(&run));
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
