//! Run configuration: one TOML file, overridable from the command line.
//!
//! ```toml
//! source = "matmul.c"
//! workdir = "run"
//! candidate_depth = "all"        # or "outermost"
//! # sim_model = "matrix12.json"  # synthetic backend instead of bench_cmd
//!
//! [ga]
//! population = 12
//! generations = 12
//! crossover_rate = 0.9
//! mutation_rate = 0.05
//! seed = 1
//!
//! [toolchain]
//! compile_cmd = "pgcc -acc -ta=tesla -O2 {src} -o {out}"
//! bench_cmd = "{exe}"
//! time_regex = 'elapsed: ([0-9.]+)'
//! timeout_s = 120
//! jobs = 1
//! repetitions = 1
//!
//! [[probe_rules]]
//! pattern = "unsupported statement"
//! class = "other"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::ToolchainConfig;
use crate::ga::GaParams;
use crate::probe::RuleSpec;
use crate::source::DepthFilter;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// GA settings as written in the file; unset sizes default to the gene
/// length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub crossover_rate: Option<f64>,
    pub mutation_rate: Option<f64>,
    pub seed: Option<u64>,
    pub elite_count: Option<usize>,
}

impl GaSection {
    pub fn resolve(&self, gene_length: usize) -> GaParams {
        GaParams {
            population: self.population.unwrap_or(gene_length.max(2)),
            generations: self.generations.unwrap_or(gene_length.max(1)),
            crossover_rate: self.crossover_rate.unwrap_or(0.9),
            mutation_rate: self.mutation_rate.unwrap_or(0.05),
            seed: self.seed.unwrap_or(0),
            elite_count: self.elite_count.unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainSection {
    pub compile_cmd: Option<String>,
    pub bench_cmd: Option<String>,
    pub time_regex: Option<String>,
    pub timeout_s: Option<f64>,
    pub compile_timeout_s: Option<f64>,
    pub probe_timeout_s: Option<f64>,
    pub jobs: Option<usize>,
    pub repetitions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub candidate_depth: DepthFilter,
    pub sim_model: Option<PathBuf>,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub toolchain: ToolchainSection,
    #[serde(default)]
    pub probe_rules: Vec<RuleSpec>,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("offload-run")
}

/// The evaluation backend a run will use.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Toolchain(ToolchainConfig),
    Sim(PathBuf),
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.source = self.source.as_deref().map(join);
        self.workdir = join(&self.workdir);
        self.sim_model = self.sim_model.as_deref().map(join);
    }

    pub fn compile_cmd(&self) -> Option<&str> {
        self.toolchain
            .compile_cmd
            .as_deref()
            .filter(|s| !s.trim().is_empty())
    }

    pub fn jobs(&self) -> usize {
        self.toolchain.jobs.unwrap_or(1).max(1)
    }

    pub fn probe_timeout_s(&self) -> f64 {
        self.toolchain.probe_timeout_s.unwrap_or(120.0)
    }

    /// Picks the evaluation backend; exactly one of the synthetic model and
    /// the benchmark toolchain is active.
    pub fn backend(&self) -> Result<BackendChoice, ConfigError> {
        if let Some(model) = &self.sim_model {
            return Ok(BackendChoice::Sim(model.clone()));
        }
        let compile_cmd = self.compile_cmd().ok_or_else(|| {
            ConfigError::Invalid("either sim_model or toolchain.compile_cmd is required".into())
        })?;
        if self.source.is_none() {
            return Err(ConfigError::Invalid("a toolchain run needs a source file".into()));
        }
        let d = ToolchainConfig::default();
        let t = &self.toolchain;
        let cfg = ToolchainConfig {
            compile_cmd: compile_cmd.to_string(),
            bench_cmd: t.bench_cmd.clone().unwrap_or(d.bench_cmd),
            time_regex: t.time_regex.clone(),
            timeout_s: t.timeout_s.unwrap_or(d.timeout_s),
            compile_timeout_s: t.compile_timeout_s.unwrap_or(d.compile_timeout_s),
            jobs: self.jobs(),
            repetitions: t.repetitions.unwrap_or(d.repetitions).max(1),
        };
        if !(cfg.timeout_s > 0.0 && cfg.compile_timeout_s > 0.0) {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        if let Some(re) = &cfg.time_regex {
            let compiled = regex::Regex::new(re)
                .map_err(|e| ConfigError::Invalid(format!("time_regex: {e}")))?;
            if compiled.captures_len() < 2 {
                return Err(ConfigError::Invalid("time_regex needs a capture group".into()));
            }
        }
        Ok(BackendChoice::Toolchain(cfg))
    }

    /// Checks what can be checked before the gene length is known.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.source.is_none() && self.sim_model.is_none() {
            return Err(ConfigError::Invalid("no source file configured".into()));
        }
        let ga = &self.ga;
        if ga.population.is_some_and(|m| m < 2) {
            return Err(ConfigError::Invalid("ga.population must be at least 2".into()));
        }
        if ga.generations == Some(0) {
            return Err(ConfigError::Invalid("ga.generations must be at least 1".into()));
        }
        for (name, rate) in [("crossover_rate", ga.crossover_rate), ("mutation_rate", ga.mutation_rate)] {
            if rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
                return Err(ConfigError::Invalid(format!("ga.{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }

    /// TOML of the configuration with every path absolute and every GA
    /// default filled in.
    pub fn resolved_toml(&self, ga: Option<&GaParams>) -> String {
        let mut cfg = self.clone();
        if let Some(p) = ga {
            cfg.ga = GaSection {
                population: Some(p.population),
                generations: Some(p.generations),
                crossover_rate: Some(p.crossover_rate),
                mutation_rate: Some(p.mutation_rate),
                seed: Some(p.seed),
                elite_count: Some(p.elite_count),
            };
        }
        let backend = if cfg.sim_model.is_some() { "sim" } else { "toolchain" };
        format!(
            "# backend = {backend}\n{}",
            toml::to_string_pretty(&cfg).expect("config serializes")
        )
    }
}
