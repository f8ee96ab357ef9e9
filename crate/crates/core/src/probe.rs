//! Per-loop compile probing.
//!
//! Each loop is compiled on its own with the directive inserted above it.
//! Loops that compile become genome positions; the rest are reported with a
//! reason class taken from the compiler diagnostics. The class is for the
//! report only; the candidate decision is the exit status.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::runner::{self, Exit};
use crate::source::{render_with_directives, CandidateSet, DepthFilter, LoopSite, SourceUnit};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("compiler not found: {0}")]
    CompilerNotFound(String),
    #[error("no loop with id {0}")]
    UnknownLoop(usize),
    #[error("no parallelizable loops")]
    NoCandidates,
    #[error("invalid classifier rule {pattern:?}: {source}")]
    BadRule {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Parallelizable,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectClass {
    ExternalCall,
    NestedOverlap,
    EarlyExit,
    DataDependency,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    #[serde(rename = "id")]
    pub loop_id: usize,
    pub line: usize,
    pub verdict: Verdict,
    pub reject_class: Option<RejectClass>,
    #[serde(rename = "message")]
    pub compiler_message: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timed_out: bool,
}

/// Result of one compiler invocation.
#[derive(Debug, Clone)]
pub struct CompileOutput {
    pub success: bool,
    pub timed_out: bool,
    pub diagnostics: String,
}

pub trait CompilerDriver: Sync {
    fn compile(&self, src: &Path, out: &Path, cwd: &Path) -> Result<CompileOutput, ProbeError>;

    /// Identifies the compiler configuration in probe cache keys.
    fn fingerprint(&self) -> String;
}

/// A shell command template with `{src}` and `{out}` placeholders.
#[derive(Debug, Clone)]
pub struct CommandCompiler {
    template: String,
    timeout: Duration,
}

impl CommandCompiler {
    pub fn new(template: impl Into<String>, timeout: Duration) -> Self {
        Self {
            template: template.into(),
            timeout,
        }
    }
}

impl CompilerDriver for CommandCompiler {
    fn compile(&self, src: &Path, out: &Path, cwd: &Path) -> Result<CompileOutput, ProbeError> {
        let command = runner::fill_template(&self.template, &[("src", src), ("out", out)]);
        let run = runner::run_shell(&command, cwd, self.timeout)?;
        if run.command_not_found() {
            return Err(ProbeError::CompilerNotFound(format!(
                "{command}: {}",
                run.stderr.trim()
            )));
        }
        let mut diagnostics = run.combined();
        if run.exit == Exit::TimedOut {
            diagnostics.push_str(&format!(
                "compiler exceeded its {:.0} s budget\n",
                self.timeout.as_secs_f64()
            ));
        }
        Ok(CompileOutput {
            success: run.success(),
            timed_out: run.exit == Exit::TimedOut,
            diagnostics,
        })
    }

    fn fingerprint(&self) -> String {
        self.template.clone()
    }
}

/// Accepts every loop without running anything. Used when no compiler is
/// configured for a synthetic-model run.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl CompilerDriver for AcceptAll {
    fn compile(&self, _: &Path, _: &Path, _: &Path) -> Result<CompileOutput, ProbeError> {
        Ok(CompileOutput {
            success: true,
            timed_out: false,
            diagnostics: "not probed: no compiler configured".into(),
        })
    }

    fn fingerprint(&self) -> String {
        "accept-all".into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    pub class: RejectClass,
}

/// Ordered regex → class rules; the first match wins, no match is `Other`.
#[derive(Debug, Clone)]
pub struct Classifier {
    rules: Vec<(Regex, RejectClass)>,
}

/// Defaults aimed at PGI/NVHPC accelerator diagnostics.
pub const DEFAULT_RULES: &[(&str, RejectClass)] = &[
    (
        r"procedures? called in a compute region|acc routine information|call to (an )?external|unsupported (procedure|call)",
        RejectClass::ExternalCall,
    ),
    (
        r"may not be nested|nested (compute|accelerator|kernels|parallel)|compute regions? .*overlap|already (in|inside) a compute region",
        RejectClass::NestedOverlap,
    ),
    (
        r"loop exit|early exit|multiple exits|\bbreak\b|\bgoto\b|return (statement )?(is )?not allowed",
        RejectClass::EarlyExit,
    ),
    (
        r"loop[- ]carried dependen|data dependen|dependence of|prevents parallelization",
        RejectClass::DataDependency,
    ),
];

impl Classifier {
    pub fn new(rules: &[RuleSpec]) -> Result<Self, ProbeError> {
        let rules = rules
            .iter()
            .map(|r| {
                RegexBuilder::new(&r.pattern)
                    .case_insensitive(true)
                    .build()
                    .map(|re| (re, r.class))
                    .map_err(|source| ProbeError::BadRule {
                        pattern: r.pattern.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    /// User rules checked before the defaults.
    pub fn with_defaults(extra: &[RuleSpec]) -> Result<Self, ProbeError> {
        let mut all = extra.to_vec();
        all.extend(DEFAULT_RULES.iter().map(|&(p, class)| RuleSpec {
            pattern: p.to_string(),
            class,
        }));
        Self::new(&all)
    }

    pub fn classify(&self, diagnostics: &str) -> RejectClass {
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(diagnostics))
            .map_or(RejectClass::Other, |&(_, class)| class)
    }
}

impl Default for Classifier {
    fn default() -> Self {
        Self::with_defaults(&[]).expect("default rules compile")
    }
}

fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbeCacheRecord {
    key: String,
    #[serde(flatten)]
    result: ProbeResult,
}

/// Probe results keyed by (source hash, loop id, compiler hash), appended to
/// a JSON-lines file.
struct ProbeCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, ProbeResult>>,
}

impl ProbeCache {
    fn open(path: PathBuf) -> Result<Self, ProbeError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(fs::File::open(&path)?).lines() {
                let line = line?;
                // A torn last line from an interrupted run is just a miss.
                if let Ok(rec) = serde_json::from_str::<ProbeCacheRecord>(&line) {
                    entries.insert(rec.key, rec.result);
                }
            }
        }
        Ok(Self {
            path,
            entries: Mutex::new(entries),
        })
    }

    fn get(&self, key: &str) -> Option<ProbeResult> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    fn put(&self, key: String, result: &ProbeResult) -> Result<(), ProbeError> {
        let mut entries = self.entries.lock().unwrap();
        let rec = ProbeCacheRecord {
            key: key.clone(),
            result: result.clone(),
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(file, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        entries.insert(key, result.clone());
        Ok(())
    }
}

/// Drives probing of every loop in a source unit.
pub struct Prober<'c> {
    compiler: &'c dyn CompilerDriver,
    classifier: Classifier,
    workdir: PathBuf,
    jobs: usize,
    cache: Option<ProbeCache>,
    invocations: AtomicUsize,
}

impl<'c> Prober<'c> {
    pub fn new(compiler: &'c dyn CompilerDriver, workdir: impl Into<PathBuf>) -> Self {
        Self {
            compiler,
            classifier: Classifier::default(),
            workdir: workdir.into(),
            jobs: 1,
            cache: None,
            invocations: AtomicUsize::new(0),
        }
    }

    pub fn with_classifier(mut self, classifier: Classifier) -> Self {
        self.classifier = classifier;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    /// Reuses and records results in `path`.
    pub fn with_cache(mut self, path: impl Into<PathBuf>) -> Result<Self, ProbeError> {
        self.cache = Some(ProbeCache::open(path.into())?);
        Ok(self)
    }

    /// Compiler runs performed (cache hits excluded).
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    fn cache_key(&self, unit: &SourceUnit, loop_id: usize) -> String {
        format!(
            "{}:{loop_id}:{}",
            sha256_hex(unit.text().as_bytes()),
            sha256_hex(self.compiler.fingerprint().as_bytes())
        )
    }

    /// Compiles `unit` with the directive on loop `loop_id` only. The
    /// variant and compiler log stay in `workdir/probe/loop_<id>/`.
    pub fn probe_loop(
        &self,
        unit: &SourceUnit,
        loops: &[LoopSite],
        loop_id: usize,
    ) -> Result<ProbeResult, ProbeError> {
        let site = loops.get(loop_id).ok_or(ProbeError::UnknownLoop(loop_id))?;
        let key = self.cache_key(unit, loop_id);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }

        let dir = self.workdir.join("probe").join(format!("loop_{loop_id}"));
        fs::create_dir_all(&dir)?;
        let src = dir.join(unit.file_name());
        fs::write(&src, render_with_directives(unit, [site]))?;
        let out = dir.join("probe.out");
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let compiled = self.compiler.compile(&src, &out, &dir)?;
        fs::write(dir.join("compile.log"), &compiled.diagnostics)?;

        let result = if compiled.success {
            ProbeResult {
                loop_id,
                line: site.line,
                verdict: Verdict::Parallelizable,
                reject_class: None,
                compiler_message: compiled.diagnostics.trim().to_string(),
                timed_out: false,
            }
        } else {
            let reject_class = if compiled.timed_out {
                RejectClass::Other
            } else {
                self.classifier.classify(&compiled.diagnostics)
            };
            ProbeResult {
                loop_id,
                line: site.line,
                verdict: Verdict::Rejected,
                reject_class: Some(reject_class),
                compiler_message: compiled.diagnostics.trim().to_string(),
                timed_out: compiled.timed_out,
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(key, &result)?;
        }
        Ok(result)
    }

    /// Probes every loop, up to `jobs` at once. Results come back in loop
    /// order regardless of completion order.
    pub fn probe_all(&self, unit: &SourceUnit, loops: &[LoopSite]) -> Result<Vec<ProbeResult>, ProbeError> {
        let workers = self.jobs.min(loops.len());
        if workers <= 1 {
            return (0..loops.len())
                .map(|id| self.probe_loop(unit, loops, id))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<ProbeResult, ProbeError>>>> =
            Mutex::new((0..loops.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let id = next.fetch_add(1, Ordering::SeqCst);
                    if id >= loops.len() {
                        break;
                    }
                    let r = self.probe_loop(unit, loops, id);
                    slots.lock().unwrap()[id] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every loop probed"))
            .collect()
    }
}

/// Keeps the parallelizable loops admitted by `filter`, in document order.
pub fn candidate_set(
    unit: SourceUnit,
    loops: Vec<LoopSite>,
    results: &[ProbeResult],
    filter: DepthFilter,
) -> Result<CandidateSet, ProbeError> {
    let candidates: Vec<usize> = results
        .iter()
        .filter(|r| r.verdict == Verdict::Parallelizable && filter.admits(&loops[r.loop_id]))
        .map(|r| r.loop_id)
        .collect();
    if candidates.is_empty() {
        return Err(ProbeError::NoCandidates);
    }
    Ok(CandidateSet {
        unit,
        all_loops: loops,
        candidates,
    })
}

/// Probes every loop and keeps the ones that compile.
pub fn build_candidate_set(
    unit: SourceUnit,
    loops: Vec<LoopSite>,
    prober: &Prober<'_>,
    filter: DepthFilter,
) -> Result<(CandidateSet, Vec<ProbeResult>), ProbeError> {
    let results = prober.probe_all(&unit, &loops)?;
    let cs = candidate_set(unit, loops, &results, filter)?;
    Ok((cs, results))
}

/// One JSON object per line: `{id, line, verdict, reject_class, message}`.
pub fn report_jsonl(results: &[ProbeResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
        .collect()
}
