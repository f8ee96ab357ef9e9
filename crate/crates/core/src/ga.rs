//! Simple GA over offload bitmaps.
//!
//! Flow per run: measure the all-zero baseline, draw a random initial
//! population, then for each of `T` generations evaluate, record stats and
//! breed the next population (elite copy, roulette selection, one-point
//! crossover, bit-flip mutation).
//!
//! A single seeded ChaCha8 generator drives every random choice, consumed in
//! this order: initial population (genome by genome, bit by bit); then per
//! generation all roulette draws, followed by each parent pair's crossover
//! coin, its cut point when crossing, and the mutation coins of the first
//! child's bits then the second child's bits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{EvalError, EvaluationOutcome, OutcomeStatus};

/// Fitness multiplier applied to the smallest observed fitness to score a
/// genome whose variant failed to compile or run.
pub const FAILURE_PENALTY: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum GaError {
    #[error("no parallelizable loops: nothing to tune")]
    NoCandidates,
    #[error("total population fitness is zero; every individual failed")]
    ZeroTotalFitness,
    #[error("invalid GA parameters: {0}")]
    InvalidParams(String),
    #[error("baseline (all-CPU) variant did not produce a time: {0:?}")]
    BaselineFailed(OutcomeStatus),
    #[error("genomes have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("fitness requires a positive time, got {0}")]
    NonPositiveTime(f64),
    #[error(transparent)]
    Evaluator(#[from] EvalError),
}

/// One offload pattern: bit `k` set means gene position `k` gets the
/// directive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome(Vec<bool>);

impl Genome {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        Self((0..len).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Genome whose bit `i` is bit `i` of `value` read most-significant
    /// first, so counting `value` upwards walks genomes in lexicographic
    /// order.
    pub fn from_index(value: u64, len: usize) -> Self {
        Self((0..len).map(|i| (value >> (len - 1 - i)) & 1 == 1).collect())
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("genome strings may only contain '0' and '1': {0:?}")]
pub struct ParseGenomeError(String);

impl FromStr for Genome {
    type Err = ParseGenomeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.bytes()
            .map(|b| match b {
                b'0' => Ok(false),
                b'1' => Ok(true),
                _ => Err(ParseGenomeError(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Genome)
    }
}

impl Serialize for Genome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndividualStatus {
    Unevaluated,
    Measured,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub status: IndividualStatus,
    pub time_seconds: Option<f64>,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn unevaluated(genome: Genome) -> Self {
        Self {
            genome,
            status: IndividualStatus::Unevaluated,
            time_seconds: None,
            fitness: None,
        }
    }

    pub fn measured(genome: Genome, time: f64) -> Result<Self, GaError> {
        Ok(Self {
            genome,
            status: IndividualStatus::Measured,
            time_seconds: Some(time),
            fitness: Some(fitness_from_time(time)?),
        })
    }

    pub fn failed(genome: Genome, penalty_fitness: f64) -> Self {
        Self {
            genome,
            status: IndividualStatus::Failed,
            time_seconds: None,
            fitness: Some(penalty_fitness),
        }
    }

    fn fitness_or_zero(&self) -> f64 {
        self.fitness.unwrap_or(0.0)
    }
}

/// `time^(-1/2)`.
pub fn fitness_from_time(t: f64) -> Result<f64, GaError> {
    if t > 0.0 && t.is_finite() {
        Ok(1.0 / t.sqrt())
    } else {
        Err(GaError::NonPositiveTime(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub seed: u64,
    pub elite_count: usize,
}

impl GaParams {
    /// The settings used for the 12-loop matrix-multiply experiment.
    pub fn matrix12(seed: u64) -> Self {
        Self {
            population: 12,
            generations: 12,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            seed,
            elite_count: 1,
        }
    }

    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |msg: String| Err(GaError::InvalidParams(msg));
        if self.population < 2 {
            return bad(format!("population must be at least 2, got {}", self.population));
        }
        if self.generations < 1 {
            return bad("generations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad(format!("crossover rate {} outside [0, 1]", self.crossover_rate));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad(format!("mutation rate {} outside [0, 1]", self.mutation_rate));
        }
        if self.elite_count < 1 || self.elite_count >= self.population {
            return bad(format!(
                "elite count must be in 1..{}, got {}",
                self.population, self.elite_count
            ));
        }
        Ok(())
    }
}

pub fn init_population(gene_length: usize, population: usize, rng: &mut impl Rng) -> Vec<Genome> {
    (0..population)
        .map(|_| Genome::random(gene_length, rng))
        .collect()
}

/// Fitness-proportional sampling with replacement.
pub fn roulette_select(
    population: &[Individual],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Genome>, GaError> {
    let cumulative: Vec<f64> = population
        .iter()
        .scan(0.0, |acc, ind| {
            *acc += ind.fitness_or_zero().max(0.0);
            Some(*acc)
        })
        .collect();
    let total = cumulative.last().copied().unwrap_or(0.0);
    if !(total > 0.0 && total.is_finite()) {
        return Err(GaError::ZeroTotalFitness);
    }
    Ok((0..count)
        .map(|_| {
            let spin = rng.gen::<f64>() * total;
            let i = cumulative.partition_point(|&c| c <= spin);
            // Rounding can put `spin` at the very top; fall back to the last
            // individual with nonzero weight.
            let i = if i < population.len() {
                i
            } else {
                population
                    .iter()
                    .rposition(|ind| ind.fitness_or_zero() > 0.0)
                    .unwrap_or(population.len() - 1)
            };
            population[i].genome.clone()
        })
        .collect())
}

pub fn crossover_at(p1: &Genome, p2: &Genome, cut: usize) -> (Genome, Genome) {
    let mut c1 = p1.0[..cut].to_vec();
    c1.extend_from_slice(&p2.0[cut..]);
    let mut c2 = p2.0[..cut].to_vec();
    c2.extend_from_slice(&p1.0[cut..]);
    (Genome(c1), Genome(c2))
}

/// One-point crossover with the cut drawn uniformly from `1..len`.
pub fn one_point_crossover(
    p1: &Genome,
    p2: &Genome,
    rng: &mut impl Rng,
) -> Result<(Genome, Genome), GaError> {
    if p1.len() != p2.len() {
        return Err(GaError::LengthMismatch(p1.len(), p2.len()));
    }
    if p1.len() < 2 {
        return Ok((p1.clone(), p2.clone()));
    }
    let cut = rng.gen_range(1..p1.len());
    Ok(crossover_at(p1, p2, cut))
}

pub fn mutate(genome: &Genome, rate: f64, rng: &mut impl Rng) -> Genome {
    Genome(genome.bits().map(|b| b ^ (rng.gen::<f64>() < rate)).collect())
}

/// Ordering used to pick the elite: higher fitness first, then lower time,
/// then the lexicographically smaller genome.
fn rank(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    b.fitness_or_zero()
        .total_cmp(&a.fitness_or_zero())
        .then_with(|| {
            let ta = a.time_seconds.unwrap_or(f64::INFINITY);
            let tb = b.time_seconds.unwrap_or(f64::INFINITY);
            ta.total_cmp(&tb)
        })
        .then_with(|| a.genome.cmp(&b.genome))
}

/// Produces the genomes of the next generation from an evaluated one:
/// `elite_count` unchanged copies of the top individuals followed by
/// offspring from roulette selection, crossover and mutation.
pub fn breed_next(
    population: &[Individual],
    params: &GaParams,
    rng: &mut impl Rng,
) -> Result<Vec<Genome>, GaError> {
    let mut ranked: Vec<&Individual> = population.iter().collect();
    ranked.sort_by(|a, b| rank(a, b));
    let elite = params.elite_count.min(params.population);
    let mut next: Vec<Genome> = ranked
        .iter()
        .take(elite)
        .map(|ind| ind.genome.clone())
        .collect();

    let offspring = params.population - next.len();
    let parents = roulette_select(population, offspring, rng)?;
    let mut pairs = parents.chunks_exact(2);
    for pair in pairs.by_ref() {
        let (c1, c2) = if rng.gen::<f64>() < params.crossover_rate {
            one_point_crossover(&pair[0], &pair[1], rng)?
        } else {
            (pair[0].clone(), pair[1].clone())
        };
        next.push(mutate(&c1, params.mutation_rate, rng));
        next.push(mutate(&c2, params.mutation_rate, rng));
    }
    if let [last] = pairs.remainder() {
        next.push(mutate(last, params.mutation_rate, rng));
    }
    Ok(next)
}

/// Anything that can turn a batch of genomes into measurements.
///
/// Implementations must return one outcome per distinct input genome and
/// must not depend on the order in which work completes.
pub trait BatchEvaluate {
    fn evaluate_batch(
        &self,
        genomes: &[Genome],
    ) -> Result<BTreeMap<Genome, EvaluationOutcome>, EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// 0 is the baseline row; 1..=T are GA generations.
    pub generation: usize,
    /// Best time measured so far in the run, baseline included.
    pub best_time: f64,
    pub best_genome: Genome,
    pub best_speedup: f64,
    /// Best time inside this generation's population.
    pub population_best_time: f64,
    pub mean_fitness: f64,
    pub distinct_evals: usize,
    pub cache_hits: usize,
}

pub const GENERATION_CSV_HEADER: &str =
    "generation,best_time_s,best_speedup,best_genome,mean_fitness,distinct_evals,cache_hits";

impl GenerationStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.generation,
            self.best_time,
            self.best_speedup,
            self.best_genome,
            self.mean_fitness,
            self.distinct_evals,
            self.cache_hits
        )
    }
}

pub fn generation_csv(stats: &[GenerationStats]) -> String {
    let mut out = String::from(GENERATION_CSV_HEADER);
    out.push('\n');
    for s in stats {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub baseline_time: f64,
    pub best_genome: Genome,
    pub best_time: f64,
    pub stats: Vec<GenerationStats>,
    /// Distinct genomes measured, baseline included.
    pub distinct_evals: usize,
    /// Individual evaluations answered from earlier measurements.
    pub cache_hits: usize,
    /// Every individual evaluation requested, baseline included.
    pub requests: usize,
    /// Sum of the evaluation cost of every distinct measurement.
    pub tuning_cost_s: f64,
    /// Final population, evaluated.
    pub final_population: Vec<Individual>,
}

impl TuningResult {
    pub fn speedup(&self) -> f64 {
        self.baseline_time / self.best_time
    }
}

/// Bookkeeping for one GA run: the duplicate-genotype memory, counters and
/// the running best.
struct RunState<'e, E: BatchEvaluate + ?Sized> {
    evaluator: &'e E,
    outcomes: BTreeMap<Genome, EvaluationOutcome>,
    seen: HashSet<Genome>,
    distinct: usize,
    hits: usize,
    min_fitness: Option<f64>,
    tuning_cost: f64,
    best: Option<(f64, Genome)>,
}

impl<'e, E: BatchEvaluate + ?Sized> RunState<'e, E> {
    fn new(evaluator: &'e E) -> Self {
        Self {
            evaluator,
            outcomes: BTreeMap::new(),
            seen: HashSet::new(),
            distinct: 0,
            hits: 0,
            min_fitness: None,
            tuning_cost: 0.0,
            best: None,
        }
    }

    fn evaluate(&mut self, genomes: &[Genome]) -> Result<Vec<Individual>, GaError> {
        let mut fresh = Vec::new();
        for g in genomes {
            if self.seen.contains(g) {
                self.hits += 1;
            } else {
                self.seen.insert(g.clone());
                self.distinct += 1;
                fresh.push(g.clone());
            }
        }
        if !fresh.is_empty() {
            let measured = self.evaluator.evaluate_batch(&fresh)?;
            for g in &fresh {
                let outcome = measured
                    .get(g)
                    .cloned()
                    .ok_or_else(|| EvalError::MissingOutcome(g.to_string()))?;
                self.tuning_cost += outcome.wall_cost;
                if let Some(t) = outcome.scored_time() {
                    let f = fitness_from_time(t)?;
                    self.min_fitness = Some(self.min_fitness.map_or(f, |m: f64| m.min(f)));
                }
                self.outcomes.insert(g.clone(), outcome);
            }
        }

        genomes
            .iter()
            .map(|g| {
                let outcome = &self.outcomes[g];
                match outcome.scored_time() {
                    Some(t) => {
                        let ind = Individual::measured(g.clone(), t)?;
                        let better = match &self.best {
                            None => true,
                            Some((bt, bg)) => t < *bt || (t == *bt && g < bg),
                        };
                        if better {
                            self.best = Some((t, g.clone()));
                        }
                        Ok(ind)
                    }
                    None => Ok(Individual::failed(
                        g.clone(),
                        FAILURE_PENALTY * self.min_fitness.unwrap_or(0.0),
                    )),
                }
            })
            .collect()
    }

    fn stats(&self, generation: usize, population: &[Individual], baseline: f64) -> GenerationStats {
        let (best_time, best_genome) = self.best.clone().expect("baseline measured first");
        let population_best_time = population
            .iter()
            .filter_map(|ind| ind.time_seconds)
            .fold(f64::INFINITY, f64::min);
        let mean_fitness = population.iter().map(Individual::fitness_or_zero).sum::<f64>()
            / population.len() as f64;
        GenerationStats {
            generation,
            best_time,
            best_genome,
            best_speedup: baseline / best_time,
            population_best_time,
            mean_fitness,
            distinct_evals: self.distinct,
            cache_hits: self.hits,
        }
    }
}

/// Runs the full GA: baseline, `T` generations, best genome ever measured.
pub fn run_ga<E: BatchEvaluate + ?Sized>(
    gene_length: usize,
    params: &GaParams,
    evaluator: &E,
) -> Result<TuningResult, GaError> {
    if gene_length == 0 {
        return Err(GaError::NoCandidates);
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = RunState::new(evaluator);

    let baseline_genome = Genome::zeros(gene_length);
    let baseline = state.evaluate(std::slice::from_ref(&baseline_genome))?;
    let baseline_time = match baseline[0].time_seconds {
        Some(t) if state.outcomes[&baseline_genome].status == OutcomeStatus::Ok => t,
        _ => {
            return Err(GaError::BaselineFailed(
                state.outcomes[&baseline_genome].status,
            ))
        }
    };
    let mut stats = vec![state.stats(0, &baseline, baseline_time)];

    let mut genomes = init_population(gene_length, params.population, &mut rng);
    let mut population = Vec::new();
    for generation in 1..=params.generations {
        population = state.evaluate(&genomes)?;
        stats.push(state.stats(generation, &population, baseline_time));
        log::debug!("{}", stats.last().unwrap().csv_row());
        if generation < params.generations {
            genomes = breed_next(&population, params, &mut rng)?;
        }
    }

    let (best_time, best_genome) = state.best.clone().expect("baseline measured");
    Ok(TuningResult {
        baseline_time,
        best_genome,
        best_time,
        stats,
        distinct_evals: state.distinct,
        cache_hits: state.hits,
        requests: 1 + params.population * params.generations,
        tuning_cost_s: state.tuning_cost,
        final_population: population,
    })
}
