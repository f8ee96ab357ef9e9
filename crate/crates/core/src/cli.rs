//! The three user-facing commands: `analyze`, `tune` and `report`.
//!
//! Every command works inside the configured work directory. A tuning run
//! leaves behind:
//!
//! | file                   | contents                                      |
//! |------------------------|-----------------------------------------------|
//! | `config.resolved.toml` | the full configuration actually used          |
//! | `probe_report.jsonl`   | one probe verdict per loop                    |
//! | `analysis.json`        | loop inventory and gene positions             |
//! | `cache.jsonl`          | every distinct measurement                    |
//! | `generations.csv`      | best-so-far per generation, baseline first    |
//! | `summary.json`         | headline numbers of the run                   |
//! | `best_<source>`        | the source with the winning directives        |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, ConfigError, RunConfig};
use crate::eval::{Backend, EvalError, Evaluator, SyntheticBackend, ToolchainBackend};
use crate::ga::{generation_csv, run_ga, GaError, Genome, TuningResult, GENERATION_CSV_HEADER};
use crate::probe::{
    candidate_set, report_jsonl, AcceptAll, Classifier, CommandCompiler, CompilerDriver,
    ProbeError, ProbeResult, Prober, RejectClass, Verdict,
};
use crate::sim::{CostModel, SimError};
use crate::source::{scan_loops, CandidateSet, LoopSite, ScanError, SourceUnit};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const PROBE_REPORT: &str = "probe_report.jsonl";
pub const PROBE_CACHE: &str = "probe_cache.jsonl";
pub const ANALYSIS: &str = "analysis.json";
pub const EVAL_CACHE: &str = "cache.jsonl";
pub const GENERATIONS_CSV: &str = "generations.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}:{source}")]
    Scan {
        path: PathBuf,
        #[source]
        source: ScanError,
    },
    #[error("{path}: {source}")]
    Probe {
        path: PathBuf,
        #[source]
        source: ProbeError,
    },
    #[error("{0}: no parallelizable loops, nothing to tune")]
    NoCandidates(PathBuf),
    #[error("toolchain unavailable: {0}")]
    Toolchain(String),
    #[error("aborted: every individual of a generation failed to evaluate")]
    ZeroFitness,
    #[error("missing log {0}")]
    MissingLog(PathBuf),
    #[error("corrupt log {path}: {message}")]
    CorruptLog { path: PathBuf, message: String },
    #[error(transparent)]
    Ga(GaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Scan { .. } | CliError::NoCandidates(_) => 3,
            CliError::Probe { source, .. } => match source {
                ProbeError::CompilerNotFound(_) => 4,
                ProbeError::BadRule { .. } => 2,
                _ => 3,
            },
            CliError::Toolchain(_) => 4,
            CliError::ZeroFitness => 5,
            CliError::MissingLog(_) | CliError::CorruptLog { .. } => 6,
            CliError::Ga(_) | CliError::Io { .. } => 1,
        }
    }

    fn from_ga(err: GaError, source: Option<&Path>) -> Self {
        match err {
            GaError::ZeroTotalFitness => CliError::ZeroFitness,
            GaError::NoCandidates => {
                CliError::NoCandidates(source.map(Path::to_path_buf).unwrap_or_default())
            }
            GaError::InvalidParams(msg) => CliError::Config(ConfigError::Invalid(msg)),
            GaError::BaselineFailed(status) => CliError::Toolchain(format!(
                "the unmodified program did not produce a time ({status:?})"
            )),
            GaError::Evaluator(EvalError::ToolchainMissing(msg)) => CliError::Toolchain(msg),
            GaError::Evaluator(EvalError::Sim(e)) => sim_error(e),
            other => CliError::Ga(other),
        }
    }
}

fn sim_error(e: SimError) -> CliError {
    CliError::Config(ConfigError::Invalid(format!("sim model: {e}")))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopEntry {
    pub id: usize,
    pub line: usize,
    pub depth: usize,
    pub verdict: Verdict,
    pub reject_class: Option<RejectClass>,
    /// Gene position, when the loop is a tuning candidate.
    pub gene: Option<usize>,
}

/// Output of `analyze`, also written as `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub source: PathBuf,
    pub loop_count: usize,
    pub gene_length: usize,
    pub loops: Vec<LoopEntry>,
    pub note: Option<String>,
    #[serde(skip)]
    pub probe_results: Vec<ProbeResult>,
    #[serde(skip)]
    pub compiler_invocations: usize,
}

struct Probed {
    unit: SourceUnit,
    loops: Vec<LoopSite>,
    results: Vec<ProbeResult>,
    invocations: usize,
}

fn probe_source(cfg: &RunConfig, source: &Path) -> Result<Probed, CliError> {
    let unit = SourceUnit::load(source).map_err(|e| CliError::Scan {
        path: source.to_path_buf(),
        source: e,
    })?;
    let loops = scan_loops(&unit).map_err(|e| CliError::Scan {
        path: source.to_path_buf(),
        source: e,
    })?;
    let probe_err = |e| CliError::Probe {
        path: source.to_path_buf(),
        source: e,
    };
    let command;
    let compiler: &dyn CompilerDriver = match cfg.compile_cmd() {
        Some(template) => {
            command = CommandCompiler::new(template, Duration::from_secs_f64(cfg.probe_timeout_s()));
            &command
        }
        None => &AcceptAll,
    };
    fs::create_dir_all(&cfg.workdir).map_err(io_err(&cfg.workdir))?;
    let classifier = Classifier::with_defaults(&cfg.probe_rules).map_err(probe_err)?;
    let prober = Prober::new(compiler, &cfg.workdir)
        .with_classifier(classifier)
        .with_jobs(cfg.jobs())
        .with_cache(cfg.workdir.join(PROBE_CACHE))
        .map_err(probe_err)?;
    let results = prober.probe_all(&unit, &loops).map_err(probe_err)?;
    log::info!(
        "{}: {} loops, {} compile probes",
        source.display(),
        loops.len(),
        prober.invocations()
    );
    Ok(Probed {
        unit,
        loops,
        results,
        invocations: prober.invocations(),
    })
}

fn write_analysis(cfg: &RunConfig, source: &Path, probed: &Probed) -> Result<Analysis, CliError> {
    let candidates: Vec<usize> = probed
        .results
        .iter()
        .filter(|r| r.verdict == Verdict::Parallelizable && cfg.candidate_depth.admits(&probed.loops[r.loop_id]))
        .map(|r| r.loop_id)
        .collect();
    let loops = probed
        .loops
        .iter()
        .zip(&probed.results)
        .map(|(site, r)| LoopEntry {
            id: site.id,
            line: site.line,
            depth: site.depth,
            verdict: r.verdict,
            reject_class: r.reject_class,
            gene: candidates.iter().position(|&c| c == site.id),
        })
        .collect();
    let analysis = Analysis {
        source: source.to_path_buf(),
        loop_count: probed.loops.len(),
        gene_length: candidates.len(),
        loops,
        note: candidates
            .is_empty()
            .then(|| "no parallelizable loops: nothing to tune".to_string()),
        probe_results: probed.results.clone(),
        compiler_invocations: probed.invocations,
    };
    write_file(&cfg.workdir.join(PROBE_REPORT), &report_jsonl(&probed.results))?;
    let json = serde_json::to_string_pretty(&analysis).expect("analysis serializes");
    write_file(&cfg.workdir.join(ANALYSIS), &(json + "\n"))?;
    Ok(analysis)
}

/// Scans and probes the configured source. A file without candidate loops
/// is a valid result with gene length 0.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<Analysis, CliError> {
    let source = cfg
        .source
        .clone()
        .ok_or_else(|| ConfigError::Invalid("analyze needs a source file".into()))?;
    let probed = probe_source(cfg, &source)?;
    write_analysis(cfg, &source, &probed)
}

/// Command-line overrides for `tune`.
#[derive(Debug, Clone, Default)]
pub struct TuneOptions {
    pub seed: Option<u64>,
    pub sim: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline_s: f64,
    pub best_s: f64,
    pub speedup: f64,
    pub best_genome: Genome,
    pub distinct_evals: usize,
    pub cache_hits: usize,
    /// Total evaluation cost of the distinct measurements.
    pub elapsed_s: f64,
    /// File name, inside the work directory, of the best variant.
    pub best_variant: Option<String>,
}

#[derive(Debug)]
pub struct TuneOutcome {
    pub result: TuningResult,
    pub summary: Summary,
    /// Backend measurements performed by this invocation.
    pub evaluations_run: usize,
    /// Probe compilations performed by this invocation.
    pub probe_compilations: usize,
}

fn run_with<B: Backend>(
    evaluator: Evaluator<B>,
    gene_length: usize,
    params: &crate::ga::GaParams,
    source: Option<&Path>,
) -> Result<(TuningResult, usize), CliError> {
    let result = run_ga(gene_length, params, &evaluator).map_err(|e| CliError::from_ga(e, source))?;
    Ok((result, evaluator.invocations()))
}

/// Probes, runs the GA and writes every artifact of the run.
pub fn cmd_tune(cfg: &RunConfig, opts: &TuneOptions) -> Result<TuneOutcome, CliError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.ga.seed = Some(seed);
    }
    if let Some(sim) = &opts.sim {
        cfg.sim_model = Some(sim.clone());
    }
    cfg.validate()?;
    let backend = cfg.backend()?;
    fs::create_dir_all(&cfg.workdir).map_err(io_err(&cfg.workdir))?;

    let model = match &backend {
        BackendChoice::Sim(path) => Some(CostModel::load(path).map_err(sim_error)?),
        BackendChoice::Toolchain(_) => None,
    };
    let (candidates, probe_compilations) = match &cfg.source {
        Some(source) => {
            let probed = probe_source(&cfg, source)?;
            let invocations = probed.invocations;
            write_analysis(&cfg, source, &probed)?;
            let cs = candidate_set(probed.unit, probed.loops, &probed.results, cfg.candidate_depth)
                .map_err(|e| match e {
                    ProbeError::NoCandidates => CliError::NoCandidates(source.clone()),
                    other => CliError::Probe {
                        path: source.clone(),
                        source: other,
                    },
                })?;
            (Some(cs), invocations)
        }
        None => (None, 0),
    };
    let gene_length = match (&candidates, &model) {
        (Some(cs), Some(m)) if cs.gene_length() != m.gene_length() => {
            return Err(ConfigError::Invalid(format!(
                "sim model has {} loops but the source has {} candidates",
                m.gene_length(),
                cs.gene_length()
            ))
            .into())
        }
        (Some(cs), _) => cs.gene_length(),
        (None, Some(m)) => m.gene_length(),
        (None, None) => unreachable!("backend() requires a source for toolchain runs"),
    };

    let params = cfg.ga.resolve(gene_length);
    params
        .validate()
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    write_file(&cfg.workdir.join(RESOLVED_CONFIG), &cfg.resolved_toml(Some(&params)))?;

    let cache = cfg.workdir.join(EVAL_CACHE);
    let cache_err = |e: EvalError| match e {
        EvalError::Cache { path, message } => CliError::CorruptLog { path, message },
        other => CliError::Ga(GaError::Evaluator(other)),
    };
    let source = cfg.source.as_deref();
    let (result, evaluations_run) = match (backend, model) {
        (BackendChoice::Sim(_), Some(model)) => {
            let ev = Evaluator::new(SyntheticBackend::new(model))
                .with_jobs(cfg.jobs())
                .with_cache_file(&cache, gene_length)
                .map_err(cache_err)?;
            run_with(ev, gene_length, &params, source)?
        }
        (BackendChoice::Toolchain(tc), _) => {
            let cs = candidates.clone().expect("toolchain runs have a source");
            let jobs = tc.jobs;
            let backend = ToolchainBackend::new(cs, tc, &cfg.workdir)
                .map_err(|e| ConfigError::Invalid(format!("time_regex: {e}")))?;
            let ev = Evaluator::new(backend)
                .with_jobs(jobs)
                .with_cache_file(&cache, gene_length)
                .map_err(cache_err)?;
            run_with(ev, gene_length, &params, source)?
        }
        (BackendChoice::Sim(_), None) => unreachable!("model loaded for sim backends"),
    };

    write_file(&cfg.workdir.join(GENERATIONS_CSV), &generation_csv(&result.stats))?;
    let best_variant = match &candidates {
        Some(cs) => {
            let name = format!("best_{}", cs.unit.file_name());
            let text = render_best(cs, &result.best_genome)?;
            write_file(&cfg.workdir.join(&name), &text)?;
            Some(name)
        }
        None => None,
    };
    let summary = Summary {
        baseline_s: result.baseline_time,
        best_s: result.best_time,
        speedup: result.speedup(),
        best_genome: result.best_genome.clone(),
        distinct_evals: result.distinct_evals,
        cache_hits: result.cache_hits,
        elapsed_s: result.tuning_cost_s,
        best_variant,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&cfg.workdir.join(SUMMARY), &(json + "\n"))?;
    Ok(TuneOutcome {
        result,
        summary,
        evaluations_run,
        probe_compilations,
    })
}

fn render_best(cs: &CandidateSet, genome: &Genome) -> Result<String, CliError> {
    cs.render_variant(genome)
        .map_err(|e| CliError::Ga(GaError::Evaluator(EvalError::Render(e))))
}

/// One parsed line of `generations.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub generation: usize,
    pub best_time: f64,
    pub best_speedup: f64,
    pub best_genome: Genome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub summary: Option<Summary>,
    pub text: String,
}

fn parse_generations(path: &Path, text: &str) -> Result<Vec<ReportRow>, CliError> {
    let corrupt = |message: String| CliError::CorruptLog {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some(GENERATION_CSV_HEADER) {
        return Err(corrupt("unexpected header".into()));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(corrupt(format!("line {lineno}: expected 7 fields")));
        }
        let bad = |what: &str| corrupt(format!("line {lineno}: bad {what}"));
        let row = ReportRow {
            generation: fields[0].parse().map_err(|_| bad("generation"))?,
            best_time: fields[1].parse().map_err(|_| bad("best_time_s"))?,
            best_speedup: fields[2].parse().map_err(|_| bad("best_speedup"))?,
            best_genome: fields[3].parse().map_err(|_| bad("best_genome"))?,
        };
        if row.generation != rows.len() {
            return Err(corrupt(format!(
                "line {lineno}: generation {} out of sequence",
                row.generation
            )));
        }
        if let Some(prev) = rows.last() {
            if row.best_time > prev.best_time {
                return Err(corrupt(format!(
                    "line {lineno}: best time rose from {} to {}",
                    prev.best_time, row.best_time
                )));
            }
            if row.best_genome.len() != prev.best_genome.len() {
                return Err(corrupt(format!("line {lineno}: genome length changed")));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(corrupt("no rows".into()));
    }
    Ok(rows)
}

/// Reads the logs of a finished run, checks them for consistency and
/// renders the per-generation table. With `gnuplot`, also writes a
/// whitespace-separated data file.
pub fn cmd_report(workdir: &Path, gnuplot: Option<&Path>) -> Result<Report, CliError> {
    let csv_path = workdir.join(GENERATIONS_CSV);
    let text = fs::read_to_string(&csv_path).map_err(|_| CliError::MissingLog(csv_path.clone()))?;
    let rows = parse_generations(&csv_path, &text)?;

    let resolved = workdir.join(RESOLVED_CONFIG);
    if resolved.exists() {
        let cfg_text = fs::read_to_string(&resolved).map_err(io_err(&resolved))?;
        let cfg = RunConfig::from_toml(&cfg_text, workdir).map_err(|e| CliError::CorruptLog {
            path: resolved.clone(),
            message: e.to_string(),
        })?;
        if let Some(t) = cfg.ga.generations {
            if rows.len() != t + 1 {
                return Err(CliError::CorruptLog {
                    path: csv_path,
                    message: format!("{} rows for {t} generations", rows.len()),
                });
            }
        }
    }

    let summary_path = workdir.join(SUMMARY);
    let summary = if summary_path.exists() {
        let s = fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?;
        let summary: Summary = serde_json::from_str(&s).map_err(|e| CliError::CorruptLog {
            path: summary_path.clone(),
            message: e.to_string(),
        })?;
        let last = rows.last().expect("rows checked non-empty");
        if summary.best_s != last.best_time || summary.best_genome != last.best_genome {
            return Err(CliError::CorruptLog {
                path: summary_path,
                message: "best result disagrees with the generation log".into(),
            });
        }
        if let Some(name) = &summary.best_variant {
            if !workdir.join(name).is_file() {
                return Err(CliError::MissingLog(workdir.join(name)));
            }
        }
        Some(summary)
    } else {
        None
    };

    let mut out = String::new();
    writeln!(out, "{:>10}  {:>14}  {:>10}  best genome", "generation", "best time (s)", "speedup").unwrap();
    for r in &rows {
        writeln!(
            out,
            "{:>10}  {:>14.6}  {:>9.2}x  {}",
            r.generation, r.best_time, r.best_speedup, r.best_genome
        )
        .unwrap();
    }
    if let Some(s) = &summary {
        writeln!(out).unwrap();
        writeln!(out, "baseline      {:.6} s", s.baseline_s).unwrap();
        writeln!(out, "best          {:.6} s  ({})", s.best_s, s.best_genome).unwrap();
        writeln!(out, "speedup       {:.2}x", s.speedup).unwrap();
        writeln!(out, "measurements  {} distinct, {} repeats", s.distinct_evals, s.cache_hits).unwrap();
        writeln!(out, "tuning cost   {:.3} s", s.elapsed_s).unwrap();
        if let Some(v) = &s.best_variant {
            writeln!(out, "best variant  {}", workdir.join(v).display()).unwrap();
        }
    }

    if let Some(path) = gnuplot {
        let mut data = String::from("# generation best_time_s best_speedup\n");
        for r in &rows {
            writeln!(data, "{} {} {}", r.generation, r.best_time, r.best_speedup).unwrap();
        }
        write_file(path, &data)?;
    }
    Ok(Report {
        rows,
        summary,
        text: out,
    })
}
