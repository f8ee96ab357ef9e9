//! Synthetic offload timing and an exhaustive search over it.
//!
//! Time of a genome is
//! `serial + Σ_{off} compute_i + Σ_{on} (compute_i / speedup_i + transfer_i) + Σ_{i<j, both on} J_ij`.
//! Negative `J_ij` models two offloaded loops sharing a transfer, positive
//! `J_ij` a conflict between them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ga::Genome;

/// Largest gene length [`CostModel::exhaustive_best`] will enumerate.
pub const MAX_EXHAUSTIVE_GENES: usize = 20;
/// Up to this many genes every time is checked for positivity on load.
pub const MAX_VALIDATED_GENES: usize = 16;
const VALIDATION_SAMPLES: usize = 1 << 16;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("genome has {got} bits but the model has {expected} loops")]
    ModelGenomeMismatch { expected: usize, got: usize },
    #[error("genome {0} is in the model's fail set")]
    SimulatedCompileError(String),
    #[error("gene length {0} is too large to enumerate (max {MAX_EXHAUSTIVE_GENES})")]
    GeneLengthTooLarge(usize),
    #[error("every genome is in the fail set")]
    NoFeasibleGenome,
    #[error("invalid cost model: {0}")]
    Invalid(String),
    #[error("cost model {path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCost {
    pub compute_s: f64,
    pub speedup: f64,
    pub transfer_s: f64,
}

impl LoopCost {
    pub fn offloaded_s(&self) -> f64 {
        self.compute_s / self.speedup + self.transfer_s
    }
}

/// On-disk shape of a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    serial_s: f64,
    loops: Vec<LoopCost>,
    #[serde(default)]
    interactions: Vec<(usize, usize, f64)>,
    #[serde(default)]
    fail: Vec<Genome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    serial_s: f64,
    loops: Vec<LoopCost>,
    /// Keyed by `(i, j)` with `i < j`.
    interactions: BTreeMap<(usize, usize), f64>,
    fail: BTreeSet<Genome>,
}

impl CostModel {
    pub fn new(
        serial_s: f64,
        loops: Vec<LoopCost>,
        interactions: impl IntoIterator<Item = (usize, usize, f64)>,
        fail: impl IntoIterator<Item = Genome>,
    ) -> Result<Self, SimError> {
        let mut map = BTreeMap::new();
        for (i, j, v) in interactions {
            let key = (i.min(j), i.max(j));
            *map.entry(key).or_insert(0.0) += v;
        }
        let model = Self {
            serial_s,
            loops,
            interactions: map,
            fail: fail.into_iter().collect(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn separable(serial_s: f64, loops: Vec<LoopCost>) -> Result<Self, SimError> {
        Self::new(serial_s, loops, [], [])
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        Self::new(file.serial_s, file.loops, file.interactions, file.fail)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let load_err = |message: String| SimError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| load_err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            serial_s: self.serial_s,
            loops: self.loops.clone(),
            interactions: self.interactions.iter().map(|(&(i, j), &v)| (i, j, v)).collect(),
            fail: self.fail.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::Invalid(m));
        if !(self.serial_s >= 0.0 && self.serial_s.is_finite()) {
            return invalid(format!("serial_s must be non-negative, got {}", self.serial_s));
        }
        for (i, l) in self.loops.iter().enumerate() {
            if !(l.compute_s >= 0.0 && l.compute_s.is_finite()) {
                return invalid(format!("loop {i}: compute_s must be non-negative"));
            }
            if !(l.speedup >= 1.0 && l.speedup.is_finite()) {
                return invalid(format!("loop {i}: speedup must be at least 1"));
            }
            if !(l.transfer_s >= 0.0 && l.transfer_s.is_finite()) {
                return invalid(format!("loop {i}: transfer_s must be non-negative"));
            }
        }
        let a = self.loops.len();
        for (&(i, j), v) in &self.interactions {
            if i == j || j >= a {
                return invalid(format!("interaction ({i}, {j}) is not a pair of distinct loops"));
            }
            if !v.is_finite() {
                return invalid(format!("interaction ({i}, {j}) is not finite"));
            }
        }
        if let Some(g) = self.fail.iter().find(|g| g.len() != a) {
            return invalid(format!("fail genome {g} does not have {a} bits"));
        }
        if self.fail.contains(&Genome::zeros(a)) {
            return invalid("the all-zero genome cannot be in the fail set".into());
        }
        if self.baseline_s() <= 0.0 {
            return invalid("baseline time must be positive".into());
        }

        let check = |g: &Genome| -> Result<(), SimError> {
            let t = self.raw_time(g);
            if t > 0.0 && t.is_finite() {
                Ok(())
            } else {
                Err(SimError::Invalid(format!("time of genome {g} is {t}, must be positive")))
            }
        };
        if a <= MAX_VALIDATED_GENES {
            (0..1u64 << a).try_for_each(|v| check(&Genome::from_index(v, a)))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..VALIDATION_SAMPLES).try_for_each(|_| check(&Genome::random(a, &mut rng)))
        }
    }

    pub fn gene_length(&self) -> usize {
        self.loops.len()
    }

    pub fn loops(&self) -> &[LoopCost] {
        &self.loops
    }

    pub fn serial_s(&self) -> f64 {
        self.serial_s
    }

    pub fn interaction(&self, i: usize, j: usize) -> f64 {
        self.interactions
            .get(&(i.min(j), i.max(j)))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn is_separable(&self) -> bool {
        self.interactions.values().all(|&v| v == 0.0)
    }

    /// Time with nothing offloaded.
    pub fn baseline_s(&self) -> f64 {
        self.raw_time(&Genome::zeros(self.loops.len()))
    }

    fn raw_time(&self, genome: &Genome) -> f64 {
        let mut t = self.serial_s;
        for (l, on) in self.loops.iter().zip(genome.bits()) {
            t += if on { l.offloaded_s() } else { l.compute_s };
        }
        for (&(i, j), &v) in &self.interactions {
            if genome.get(i) && genome.get(j) {
                t += v;
            }
        }
        t
    }

    pub fn model_time(&self, genome: &Genome) -> Result<f64, SimError> {
        if genome.len() != self.loops.len() {
            return Err(SimError::ModelGenomeMismatch {
                expected: self.loops.len(),
                got: genome.len(),
            });
        }
        if self.fail.contains(genome) {
            return Err(SimError::SimulatedCompileError(genome.to_string()));
        }
        Ok(self.raw_time(genome))
    }

    /// Minimum over all `2^a` genomes outside the fail set; ties go to the
    /// lexicographically smallest genome.
    pub fn exhaustive_best(&self) -> Result<(Genome, f64), SimError> {
        let a = self.loops.len();
        if a > MAX_EXHAUSTIVE_GENES {
            return Err(SimError::GeneLengthTooLarge(a));
        }
        let mut best: Option<(Genome, f64)> = None;
        for v in 0..1u64 << a {
            let g = Genome::from_index(v, a);
            if self.fail.contains(&g) {
                continue;
            }
            let t = self.raw_time(&g);
            if best.as_ref().is_none_or(|(_, bt)| t < *bt) {
                best = Some((g, t));
            }
        }
        best.ok_or(SimError::NoFeasibleGenome)
    }
}

/// Models shipped with the crate.
pub mod fixtures {
    use super::CostModel;

    pub const SEPARABLE10: &str = include_str!("../fixtures/models/separable10.json");
    pub const INTERACT12: &str = include_str!("../fixtures/models/interact12.json");
    pub const MATRIX12: &str = include_str!("../fixtures/models/matrix12.json");

    /// Ten independent loops; the best choice for each loop is independent
    /// of the others.
    pub fn separable10() -> CostModel {
        CostModel::from_json(SEPARABLE10).expect("fixture is valid")
    }

    /// Twelve loops with strong pairwise effects, where turning on every
    /// loop that helps on its own is not optimal.
    pub fn interact12() -> CostModel {
        CostModel::from_json(INTERACT12).expect("fixture is valid")
    }

    /// The 12-loop matrix-multiply benchmark in milliseconds: 92.27 with
    /// everything on the CPU, 2.43 at the optimum.
    pub fn matrix12() -> CostModel {
        CostModel::from_json(MATRIX12).expect("fixture is valid")
    }

    pub fn all() -> Vec<(&'static str, CostModel)> {
        vec![
            ("separable10", separable10()),
            ("interact12", interact12()),
            ("matrix12", matrix12()),
        ]
    }
}
