//! Genome → measured time, with memoization.
//!
//! An [`Evaluator`] owns the measurement cache and a [`Backend`] that does
//! the actual work: [`ToolchainBackend`] renders, compiles and benchmarks a
//! variant; [`SyntheticBackend`] reads the time off a [`CostModel`].

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ga::{BatchEvaluate, Genome};
use crate::probe::{CommandCompiler, CompileOutput, CompilerDriver, ProbeError};
use crate::runner::{self, Exit};
use crate::sim::{CostModel, SimError};
use crate::source::CandidateSet;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("toolchain unavailable: {0}")]
    ToolchainMissing(String),
    #[error("cannot write work directory {path}: {source}")]
    WorkdirUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("time pattern not found in benchmark output")]
    TimePatternNotFound,
    #[error("cache file {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("evaluator returned no outcome for genome {0}")]
    MissingOutcome(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Render(#[from] crate::source::RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Ok,
    CompileError,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub genome: Genome,
    pub status: OutcomeStatus,
    /// Measured time for `Ok`; the timeout budget for `Timeout`.
    pub time_seconds: Option<f64>,
    pub compiler_log: String,
    pub run_log: String,
    /// Seconds spent producing this outcome.
    pub wall_cost: f64,
}

impl EvaluationOutcome {
    pub fn ok(genome: Genome, time: f64, wall_cost: f64) -> Self {
        Self {
            genome,
            status: OutcomeStatus::Ok,
            time_seconds: Some(time),
            compiler_log: String::new(),
            run_log: String::new(),
            wall_cost,
        }
    }

    pub fn failed(genome: Genome, status: OutcomeStatus, wall_cost: f64) -> Self {
        Self {
            genome,
            status,
            time_seconds: None,
            compiler_log: String::new(),
            run_log: String::new(),
            wall_cost,
        }
    }

    /// The time the GA scores this outcome with, if any. Timeouts count as
    /// having taken the whole budget.
    pub fn scored_time(&self) -> Option<f64> {
        match self.status {
            OutcomeStatus::Ok | OutcomeStatus::Timeout => self.time_seconds,
            OutcomeStatus::CompileError | OutcomeStatus::RuntimeError => None,
        }
    }
}

/// One line of the persisted cache.
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    genome: Genome,
    status: OutcomeStatus,
    time_s: Option<f64>,
    wall_cost_s: f64,
}

impl From<&EvaluationOutcome> for CacheRecord {
    fn from(o: &EvaluationOutcome) -> Self {
        Self {
            genome: o.genome.clone(),
            status: o.status,
            time_s: o.time_seconds,
            wall_cost_s: o.wall_cost,
        }
    }
}

impl From<CacheRecord> for EvaluationOutcome {
    fn from(r: CacheRecord) -> Self {
        Self {
            genome: r.genome,
            status: r.status,
            time_seconds: r.time_s,
            compiler_log: String::new(),
            run_log: String::new(),
            wall_cost: r.wall_cost_s,
        }
    }
}

/// Produces one fresh measurement. Called at most once per genome by
/// [`Evaluator`].
pub trait Backend: Send + Sync {
    fn measure(&self, genome: &Genome) -> Result<EvaluationOutcome, EvalError>;
}

type Slot = Arc<Mutex<Option<EvaluationOutcome>>>;

/// Memoizing front end over a [`Backend`].
pub struct Evaluator<B> {
    backend: B,
    slots: Mutex<HashMap<Genome, Slot>>,
    cache_file: Option<(PathBuf, Mutex<File>)>,
    jobs: usize,
    invocations: AtomicUsize,
}

impl<B: Backend> Evaluator<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            slots: Mutex::new(HashMap::new()),
            cache_file: None,
            jobs: 1,
            invocations: AtomicUsize::new(0),
        }
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    /// Loads previously recorded outcomes from `path` (if it exists) and
    /// appends every new outcome to it.
    pub fn with_cache_file(mut self, path: &Path, gene_length: usize) -> Result<Self, EvalError> {
        let cache_err = |message: String| EvalError::Cache {
            path: path.to_path_buf(),
            message,
        };
        if path.exists() {
            let file = File::open(path).map_err(|e| cache_err(e.to_string()))?;
            let mut slots = self.slots.lock().unwrap();
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| cache_err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| cache_err(format!("line {}: {e}", n + 1)))?;
                if record.genome.len() != gene_length {
                    return Err(cache_err(format!(
                        "line {}: genome length {} does not match gene length {gene_length}",
                        n + 1,
                        record.genome.len()
                    )));
                }
                let outcome = EvaluationOutcome::from(record);
                slots
                    .entry(outcome.genome.clone())
                    .or_insert_with(|| Arc::new(Mutex::new(Some(outcome))));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| EvalError::WorkdirUnwritable {
                path: path.to_path_buf(),
                source,
            })?;
        self.cache_file = Some((path.to_path_buf(), Mutex::new(file)));
        Ok(self)
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Number of times the backend has been asked to measure.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn cached(&self, genome: &Genome) -> Option<EvaluationOutcome> {
        let slot = self.slots.lock().unwrap().get(genome).cloned()?;
        let guard = slot.lock().unwrap();
        guard.clone()
    }

    pub fn cache_len(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.lock().unwrap().is_some())
            .count()
    }

    /// Returns the stored outcome for `genome`, measuring it first if this
    /// is the first request. Concurrent requests for the same genome wait
    /// for the first one instead of measuring again.
    pub fn evaluate(&self, genome: &Genome) -> Result<EvaluationOutcome, EvalError> {
        let slot = self
            .slots
            .lock()
            .unwrap()
            .entry(genome.clone())
            .or_default()
            .clone();
        let mut guard = slot.lock().unwrap();
        if let Some(outcome) = guard.as_ref() {
            return Ok(outcome.clone());
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let outcome = self.backend.measure(genome)?;
        self.persist(&outcome)?;
        *guard = Some(outcome.clone());
        Ok(outcome)
    }

    fn persist(&self, outcome: &EvaluationOutcome) -> Result<(), EvalError> {
        let Some((path, file)) = &self.cache_file else {
            return Ok(());
        };
        let line = serde_json::to_string(&CacheRecord::from(outcome)).expect("record serializes");
        let mut file = file.lock().unwrap();
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|source| EvalError::WorkdirUnwritable {
                path: path.clone(),
                source,
            })
    }

    /// Evaluates every distinct genome in `genomes`, running up to `jobs`
    /// measurements at once. The result does not depend on scheduling.
    pub fn evaluate_batch(
        &self,
        genomes: &[Genome],
    ) -> Result<BTreeMap<Genome, EvaluationOutcome>, EvalError> {
        let mut unique: Vec<&Genome> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for g in genomes {
            if seen.insert(g) {
                unique.push(g);
            }
        }
        let workers = self.jobs.min(unique.len());
        if workers <= 1 {
            return unique
                .into_iter()
                .map(|g| Ok((g.clone(), self.evaluate(g)?)))
                .collect();
        }

        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<EvaluationOutcome, EvalError>>>> =
            Mutex::new((0..unique.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(g) = unique.get(i) else { break };
                    let r = self.evaluate(g);
                    results.lock().unwrap()[i] = Some(r);
                });
            }
        });
        let results = results.into_inner().unwrap();
        unique
            .into_iter()
            .zip(results)
            .map(|(g, r)| Ok((g.clone(), r.expect("every index visited")?)))
            .collect()
    }
}

impl<B: Backend> BatchEvaluate for Evaluator<B> {
    fn evaluate_batch(
        &self,
        genomes: &[Genome],
    ) -> Result<BTreeMap<Genome, EvaluationOutcome>, EvalError> {
        Evaluator::evaluate_batch(self, genomes)
    }
}

/// Reads a time off the cost model. The model time doubles as the
/// evaluation cost so that runs are bit-reproducible.
pub struct SyntheticBackend {
    model: CostModel,
}

impl SyntheticBackend {
    pub fn new(model: CostModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }
}

impl Backend for SyntheticBackend {
    fn measure(&self, genome: &Genome) -> Result<EvaluationOutcome, EvalError> {
        match self.model.model_time(genome) {
            Ok(t) => Ok(EvaluationOutcome::ok(genome.clone(), t, t)),
            Err(SimError::SimulatedCompileError(_)) => {
                let mut o = EvaluationOutcome::failed(genome.clone(), OutcomeStatus::CompileError, 0.0);
                o.compiler_log = "simulated compile error".into();
                Ok(o)
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolchainConfig {
    /// Compile command template with `{src}` and `{out}`.
    pub compile_cmd: String,
    /// Benchmark command template with `{exe}`.
    pub bench_cmd: String,
    /// Regex whose first capture group is the time in seconds.
    pub time_regex: Option<String>,
    pub timeout_s: f64,
    pub compile_timeout_s: f64,
    pub jobs: usize,
    pub repetitions: usize,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        Self {
            compile_cmd: String::new(),
            bench_cmd: "{exe}".into(),
            time_regex: None,
            timeout_s: 120.0,
            compile_timeout_s: 120.0,
            jobs: 1,
            repetitions: 1,
        }
    }
}

/// Pulls the benchmark time out of a finished run: the first capture group
/// of `pattern` (searched in stdout, then stderr) or the wall clock when no
/// pattern is configured.
pub fn extract_time(
    stdout: &str,
    stderr: &str,
    wall: Duration,
    pattern: Option<&Regex>,
) -> Result<f64, EvalError> {
    let Some(re) = pattern else {
        return Ok(wall.as_secs_f64());
    };
    [stdout, stderr]
        .iter()
        .find_map(|text| re.captures(text))
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().trim().parse::<f64>().ok())
        .ok_or(EvalError::TimePatternNotFound)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Renders, compiles and benchmarks variants in per-genome directories
/// under `workdir/evals/`.
pub struct ToolchainBackend {
    cs: CandidateSet,
    config: ToolchainConfig,
    compiler: CommandCompiler,
    time_regex: Option<Regex>,
    workdir: PathBuf,
}

impl ToolchainBackend {
    pub fn new(cs: CandidateSet, config: ToolchainConfig, workdir: impl Into<PathBuf>) -> Result<Self, regex::Error> {
        let time_regex = config.time_regex.as_deref().map(Regex::new).transpose()?;
        let compiler = CommandCompiler::new(
            config.compile_cmd.clone(),
            Duration::from_secs_f64(config.compile_timeout_s),
        );
        Ok(Self {
            cs,
            config,
            compiler,
            time_regex,
            workdir: workdir.into(),
        })
    }

    /// Directory holding the artifacts of `genome`.
    pub fn genome_dir(&self, genome: &Genome) -> PathBuf {
        self.workdir.join("evals").join(genome.to_string())
    }

    fn write(&self, path: &Path, contents: &str) -> Result<(), EvalError> {
        fs::write(path, contents).map_err(|source| EvalError::WorkdirUnwritable {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl Backend for ToolchainBackend {
    fn measure(&self, genome: &Genome) -> Result<EvaluationOutcome, EvalError> {
        let started = Instant::now();
        let dir = self.genome_dir(genome);
        fs::create_dir_all(&dir).map_err(|source| EvalError::WorkdirUnwritable {
            path: dir.clone(),
            source,
        })?;
        let src = dir.join(self.cs.unit.file_name());
        let exe = dir.join("variant.out");
        self.write(&src, &self.cs.render_variant(genome)?)?;

        let compiled: CompileOutput = match self.compiler.compile(&src, &exe, &dir) {
            Ok(c) => c,
            Err(ProbeError::CompilerNotFound(msg)) => return Err(EvalError::ToolchainMissing(msg)),
            Err(ProbeError::Io(source)) => {
                return Err(EvalError::WorkdirUnwritable { path: dir, source })
            }
            Err(e) => return Err(EvalError::ToolchainMissing(e.to_string())),
        };
        self.write(&dir.join("compile.log"), &compiled.diagnostics)?;
        if !compiled.success {
            let mut o = EvaluationOutcome::failed(
                genome.clone(),
                OutcomeStatus::CompileError,
                started.elapsed().as_secs_f64(),
            );
            o.compiler_log = compiled.diagnostics;
            return Ok(o);
        }

        let command = runner::fill_template(&self.config.bench_cmd, &[("exe", &exe)]);
        let budget = Duration::from_secs_f64(self.config.timeout_s);
        let mut times = Vec::new();
        let mut run_log = String::new();
        let mut status = OutcomeStatus::Ok;
        for rep in 0..self.config.repetitions.max(1) {
            let run = runner::run_shell(&command, &dir, budget)
                .map_err(|e| EvalError::ToolchainMissing(format!("{command}: {e}")))?;
            run_log.push_str(&format!("== repetition {rep}: {:?} in {:?}\n", run.exit, run.wall));
            run_log.push_str(&run.combined());
            match run.exit {
                Exit::TimedOut => {
                    status = OutcomeStatus::Timeout;
                    break;
                }
                _ if run.command_not_found() => {
                    self.write(&dir.join("run.log"), &run_log)?;
                    return Err(EvalError::ToolchainMissing(format!(
                        "benchmark command not found: {command}"
                    )));
                }
                Exit::Code(0) => {}
                _ => {
                    status = OutcomeStatus::RuntimeError;
                    break;
                }
            }
            match extract_time(&run.stdout, &run.stderr, run.wall, self.time_regex.as_ref()) {
                Ok(t) if t > 0.0 => times.push(t),
                _ => {
                    run_log.push_str("== no positive time found in benchmark output\n");
                    status = OutcomeStatus::RuntimeError;
                    break;
                }
            }
        }
        self.write(&dir.join("run.log"), &run_log)?;

        let time_seconds = match status {
            OutcomeStatus::Ok => Some(median(times)),
            OutcomeStatus::Timeout => Some(self.config.timeout_s),
            _ => None,
        };
        Ok(EvaluationOutcome {
            genome: genome.clone(),
            status,
            time_seconds,
            compiler_log: compiled.diagnostics,
            run_log,
            wall_cost: started.elapsed().as_secs_f64(),
        })
    }
}
