mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use offload_tuner::eval::{
    extract_time, Backend, EvalError, EvaluationOutcome, Evaluator, OutcomeStatus,
    SyntheticBackend, ToolchainBackend, ToolchainConfig,
};
use offload_tuner::ga::Genome;
use offload_tuner::probe::{build_candidate_set, CommandCompiler, Prober};
use offload_tuner::sim::fixtures;
use offload_tuner::source::{scan_loops, CandidateSet, DepthFilter, SourceUnit};

/// Sleeps for every measurement and records how many ran at once.
#[derive(Default)]
struct Instrumented {
    running: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

struct Shared(Arc<Instrumented>);

impl Backend for Shared {
    fn measure(&self, genome: &Genome) -> Result<EvaluationOutcome, EvalError> {
        let this = &self.0;
        let now = this.running.fetch_add(1, Ordering::SeqCst) + 1;
        this.peak.fetch_max(now, Ordering::SeqCst);
        this.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(25));
        this.running.fetch_sub(1, Ordering::SeqCst);
        Ok(EvaluationOutcome::ok(genome.clone(), 1.0 + genome.count_ones() as f64, 0.0))
    }
}

#[test]
fn batch_respects_job_limit_and_deduplicates() {
    let probe = Arc::new(Instrumented::default());
    let ev = Evaluator::new(Shared(probe.clone())).with_jobs(4);
    let mut batch: Vec<Genome> = (0..20).map(|i| Genome::from_index(i, 6)).collect();
    batch.extend(batch.clone());
    let out = ev.evaluate_batch(&batch).unwrap();
    assert_eq!(out.len(), 20);
    assert_eq!(probe.calls.load(Ordering::SeqCst), 20);
    assert_eq!(ev.invocations(), 20);
    let peak = probe.peak.load(Ordering::SeqCst);
    assert!((2..=4).contains(&peak), "peak concurrency {peak}");
    for (g, o) in &out {
        assert_eq!(o.time_seconds, Some(1.0 + g.count_ones() as f64));
    }
    ev.evaluate_batch(&batch).unwrap();
    assert_eq!(probe.calls.load(Ordering::SeqCst), 20);
}

#[test]
fn racing_requests_for_one_genome_measure_once() {
    let probe = Arc::new(Instrumented::default());
    let ev = Evaluator::new(Shared(probe.clone()));
    let g: Genome = "1011".parse().unwrap();
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| ev.evaluate(&g).unwrap());
        }
    });
    assert_eq!(probe.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn cache_file_resumes_without_measuring() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let genomes: Vec<Genome> = (0..10).map(|i| Genome::from_index(i * 37, 10)).collect();
    let first = Evaluator::new(SyntheticBackend::new(fixtures::separable10()))
        .with_cache_file(&path, 10)
        .unwrap();
    let a = first.evaluate_batch(&genomes).unwrap();
    assert_eq!(first.invocations(), 10);

    let second = Evaluator::new(SyntheticBackend::new(fixtures::separable10()))
        .with_cache_file(&path, 10)
        .unwrap();
    assert_eq!(second.cache_len(), 10);
    let b = second.evaluate_batch(&genomes).unwrap();
    assert_eq!(second.invocations(), 0);
    for (g, o) in &a {
        assert_eq!(o.time_seconds, b[g].time_seconds);
        assert_eq!(o.wall_cost, b[g].wall_cost);
    }
}

#[test]
fn cache_with_wrong_genome_length_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    Evaluator::new(SyntheticBackend::new(fixtures::separable10()))
        .with_cache_file(&path, 10)
        .unwrap()
        .evaluate(&Genome::zeros(10))
        .unwrap();
    let reopened = Evaluator::new(SyntheticBackend::new(fixtures::matrix12())).with_cache_file(&path, 12);
    assert!(matches!(reopened, Err(EvalError::Cache { .. })));
}

fn matmul_candidates(work: &std::path::Path) -> CandidateSet {
    let unit = SourceUnit::load(common::corpus("matmul.c")).unwrap();
    let loops = scan_loops(&unit).unwrap();
    let compiler = CommandCompiler::new(
        format!("{} {{src}} -o {{out}}", common::mock_compiler()),
        Duration::from_secs(30),
    );
    let prober = Prober::new(&compiler, work);
    build_candidate_set(unit, loops, &prober, DepthFilter::All).unwrap().0
}

fn mock_config(bench: &str, timeout_s: f64) -> ToolchainConfig {
    ToolchainConfig {
        compile_cmd: format!("{} {{src}} -o {{out}}", common::mock_compiler()),
        bench_cmd: bench.into(),
        time_regex: Some(r"elapsed: ([0-9.]+)".into()),
        timeout_s,
        ..ToolchainConfig::default()
    }
}

#[test]
fn toolchain_compiles_runs_and_parses_time() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    assert_eq!(cs.gene_length(), 12);
    let backend = ToolchainBackend::new(cs, mock_config("{exe}", 30.0), dir.path()).unwrap();
    let ev = Evaluator::new(backend).with_jobs(3);

    let zero = ev.evaluate(&Genome::zeros(12)).unwrap();
    assert_eq!(zero.status, OutcomeStatus::Ok);
    assert_eq!(zero.time_seconds, Some(1.0));

    let two: Genome = "100000000001".parse().unwrap();
    let o = ev.evaluate(&two).unwrap();
    assert_eq!(o.status, OutcomeStatus::Ok);
    assert!((o.time_seconds.unwrap() - 1.0 / 3.0).abs() < 1e-5);
    let gdir = ev.backend().genome_dir(&two);
    for f in ["matmul.c", "variant.out", "compile.log", "run.log"] {
        assert!(gdir.join(f).exists(), "{f}");
    }
    let variant = std::fs::read_to_string(gdir.join("matmul.c")).unwrap();
    assert_eq!(variant.matches("#pragma acc kernels").count(), 2);

    // Outer and inner loop of the same nest.
    let nested: Genome = "110000000000".parse().unwrap();
    let o = ev.evaluate(&nested).unwrap();
    assert_eq!(o.status, OutcomeStatus::CompileError);
    assert!(o.compiler_log.contains("may not be nested"));
    assert_eq!(o.scored_time(), None);
}

#[test]
fn benchmark_timeout_scores_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    let backend = ToolchainBackend::new(cs, mock_config("sleep 10", 0.3), dir.path()).unwrap();
    let started = Instant::now();
    let o = Evaluator::new(backend).evaluate(&Genome::zeros(12)).unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!(o.status, OutcomeStatus::Timeout);
    assert_eq!(o.scored_time(), Some(0.3));
}

#[test]
fn benchmark_failure_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    let backend = ToolchainBackend::new(cs, mock_config("{exe} && exit 3", 30.0), dir.path()).unwrap();
    let o = Evaluator::new(backend).evaluate(&Genome::zeros(12)).unwrap();
    assert_eq!(o.status, OutcomeStatus::RuntimeError);
    assert_eq!(o.scored_time(), None);
}

#[test]
fn output_without_a_time_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    let backend = ToolchainBackend::new(cs, mock_config("echo done", 30.0), dir.path()).unwrap();
    let o = Evaluator::new(backend).evaluate(&Genome::zeros(12)).unwrap();
    assert_eq!(o.status, OutcomeStatus::RuntimeError);
}

#[test]
fn missing_compiler_is_a_toolchain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    let config = ToolchainConfig {
        compile_cmd: "no-such-compiler-on-this-host {src} -o {out}".into(),
        ..mock_config("{exe}", 30.0)
    };
    let backend = ToolchainBackend::new(cs, config, dir.path()).unwrap();
    let err = Evaluator::new(backend).evaluate(&Genome::zeros(12)).unwrap_err();
    assert!(matches!(err, EvalError::ToolchainMissing(_)), "{err:?}");
}

#[test]
fn wall_clock_is_used_without_a_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let cs = matmul_candidates(dir.path());
    let config = ToolchainConfig {
        time_regex: None,
        ..mock_config("sleep 0.2", 30.0)
    };
    let backend = ToolchainBackend::new(cs, config, dir.path()).unwrap();
    let o = Evaluator::new(backend).evaluate(&Genome::zeros(12)).unwrap();
    let t = o.time_seconds.unwrap();
    assert!((0.2..2.0).contains(&t), "{t}");
}

#[test]
fn time_extraction() {
    let re = regex::Regex::new(r"time=([0-9.eE+-]+)").unwrap();
    let wall = Duration::from_millis(1500);
    assert_eq!(extract_time("x\ntime=0.25\n", "", wall, Some(&re)).unwrap(), 0.25);
    assert_eq!(extract_time("", "time=3e-2", wall, Some(&re)).unwrap(), 0.03);
    assert!(matches!(
        extract_time("nothing", "", wall, Some(&re)),
        Err(EvalError::TimePatternNotFound)
    ));
    assert_eq!(extract_time("", "", wall, None).unwrap(), 1.5);
}
