//! Automatic GPU offload of C/C++ `for` loops.
//!
//! The pipeline scans a source file for `for` statements, probes which of
//! them compile with an OpenACC `#pragma acc kernels` directive, and then
//! searches the space of directive combinations with a Simple GA whose
//! fitness comes from measured benchmark times.

pub mod cli;
pub mod config;
pub mod eval;
pub mod ga;
pub mod probe;
pub mod runner;
pub mod sim;
pub mod source;

pub use eval::{EvaluationOutcome, Evaluator, OutcomeStatus, SyntheticBackend, ToolchainBackend};
pub use ga::{run_ga, GaParams, Genome, TuningResult};
pub use probe::{Prober, ProbeResult, RejectClass, Verdict};
pub use sim::CostModel;
pub use source::{scan_loops, CandidateSet, LoopSite, SourceUnit};
