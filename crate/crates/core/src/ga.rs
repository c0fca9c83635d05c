//! Genetic search over offload genes.
//!
//! Each generation is measured (duplicates once, through the cache), then the
//! next one is bred by keeping the elite, roulette-selecting parents, applying
//! single-point crossover and per-bit mutation. All randomness comes from one
//! seeded ChaCha stream consumed on the calling thread, so a seed reproduces a
//! run exactly regardless of how many evaluations run in parallel.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loop_model::{LoopId, LoopProgram};
use crate::measurement::{Evaluator, MeasureError, MeasurementCache, MeasurementResult, DEFAULT_BUDGET_S};
use crate::pattern::{Device, Gene, OffloadPattern, PatternError};
use crate::score::{fitness, ScoreConfig, ScoreError};
use crate::transfer_opt::{prepare, TransferReport};

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("program has no parallelizable loops to search over")]
    NoParallelLoops,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("evaluation of {pattern} aborted the search: {source}")]
    Evaluator {
        pattern: String,
        source: MeasureError,
    },
}

fn default_population() -> usize {
    12
}
fn default_generations() -> usize {
    12
}
fn default_crossover() -> f64 {
    0.9
}
fn default_mutation() -> f64 {
    0.05
}
fn default_elite() -> usize {
    1
}
fn default_budget() -> f64 {
    DEFAULT_BUDGET_S
}
fn default_retries() -> u32 {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_crossover")]
    pub crossover_rate: f64,
    #[serde(default = "default_mutation")]
    pub mutation_rate: f64,
    #[serde(default = "default_elite")]
    pub elite: usize,
    /// Measurement budget per pattern.
    #[serde(default = "default_budget")]
    pub budget_s: f64,
    /// Extra attempts for an evaluation that fails.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub hoist_transfers: bool,
    #[serde(default)]
    pub score: ScoreConfig,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: default_population(),
            generations: default_generations(),
            crossover_rate: default_crossover(),
            mutation_rate: default_mutation(),
            elite: default_elite(),
            budget_s: default_budget(),
            retries: default_retries(),
            seed: 0,
            hoist_transfers: true,
            score: ScoreConfig::default(),
        }
    }
}

impl GaConfig {
    /// Rejects unusable settings and returns warnings for legal but odd ones.
    pub fn validate(&self, gene_length: usize) -> Result<Vec<String>, GaError> {
        if self.population < 2 {
            return Err(GaError::Config(format!(
                "population must be at least 2, got {}",
                self.population
            )));
        }
        if self.generations == 0 {
            return Err(GaError::Config("generations must be at least 1".into()));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GaError::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.elite >= self.population && self.generations > 1 {
            return Err(GaError::Config(format!(
                "elite count {} leaves no room for offspring in a population of {}",
                self.elite, self.population
            )));
        }
        self.score.validate(self.budget_s)?;

        let mut warnings = Vec::new();
        if gene_length >= 2 && self.population > gene_length {
            warnings.push(format!(
                "population {} exceeds the {gene_length} parallelizable loops",
                self.population
            ));
        }
        if self.crossover_rate == 0.0 && self.mutation_rate == 0.0 {
            warnings.push("crossover and mutation are both disabled; later generations only recombine the first".into());
        }
        Ok(warnings)
    }
}

/// Picks an index with probability proportional to its fitness, or uniformly
/// when no fitness is positive.
pub fn roulette_select<R: Rng>(fitnesses: &[f64], rng: &mut R) -> usize {
    assert!(!fitnesses.is_empty(), "roulette over an empty population");
    let weight = |f: f64| if f.is_finite() && f > 0.0 { f } else { 0.0 };
    let total: f64 = fitnesses.iter().map(|f| weight(*f)).sum();
    if !(total > 0.0 && total.is_finite()) {
        return rng.gen_range(0..fitnesses.len());
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, f) in fitnesses.iter().enumerate() {
        let w = weight(*f);
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Swaps the tails of two genes starting at bit `cut`.
pub fn crossover_at(a: &Gene, b: &Gene, cut: usize) -> Result<(Gene, Gene), PatternError> {
    if a.len() != b.len() {
        return Err(PatternError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let cut = cut.min(a.len());
    let (ha, ta) = a.bits().split_at(cut);
    let (hb, tb) = b.bits().split_at(cut);
    Ok((Gene::new([ha, tb].concat()), Gene::new([hb, ta].concat())))
}

/// With probability `rate`, single-point crossover at a cut drawn from
/// `1..len`; otherwise the parents unchanged. Genes shorter than two bits
/// have no interior cut and are always returned unchanged.
pub fn crossover<R: Rng>(
    a: &Gene,
    b: &Gene,
    rng: &mut R,
    rate: f64,
) -> Result<(Gene, Gene), PatternError> {
    if a.len() != b.len() {
        return crossover_at(a, b, 0);
    }
    if a.len() < 2 || !rng.gen_bool(rate) {
        return Ok((a.clone(), b.clone()));
    }
    let cut = rng.gen_range(1..a.len());
    crossover_at(a, b, cut)
}

/// Flips each bit independently with probability `rate`.
pub fn mutate<R: Rng>(gene: &Gene, rng: &mut R, rate: f64) -> Gene {
    let mut out = gene.clone();
    for bit in out.bits_mut() {
        if rng.gen_bool(rate) {
            *bit = !*bit;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub gene: Gene,
    pub fitness: f64,
    pub time_s: f64,
    pub energy_ws: f64,
    pub timed_out: bool,
    /// Measurement reused from an earlier evaluation of the same gene.
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: usize,
    pub individuals: Vec<Individual>,
    pub best_gene: Gene,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPattern {
    pub gene: Gene,
    pub pattern_key: String,
    pub fitness: f64,
    pub time_s: f64,
    pub energy_ws: f64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub device: Device,
    pub program_digest: String,
    /// Loop ids addressed by the gene bits, in order.
    pub gene_loops: Vec<LoopId>,
    pub config: GaConfig,
    pub generations: Vec<Generation>,
    pub best: BestPattern,
    pub initial_best_fitness: f64,
    /// Whether the search beat the best of its first generation.
    pub improved: bool,
    /// Evaluator calls, retries included.
    pub evaluations: usize,
    pub cache_hits: usize,
    pub warnings: Vec<String>,
    pub transfer_reports: Vec<TransferReport>,
}

impl SearchHistory {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Ordering used for elitism and reporting: higher fitness first, then the
/// lexicographically smallest gene.
fn better(a: (&Gene, f64), b: (&Gene, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

struct Measured {
    result: MeasurementResult,
    fitness: f64,
}

/// How individual patterns are measured and scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub budget_s: f64,
    pub retries: u32,
    pub hoist_transfers: bool,
    pub score: ScoreConfig,
}

impl GaConfig {
    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            budget_s: self.budget_s,
            retries: self.retries,
            hoist_transfers: self.hoist_transfers,
            score: self.score.clone(),
        }
    }
}

/// Shared state of one search: the pattern cache plus call counters.
pub struct SearchContext<'a> {
    pub program: &'a LoopProgram,
    pub evaluator: &'a dyn Evaluator,
    pub device: Device,
    pub cache: &'a MeasurementCache,
    pub settings: EvalSettings,
    evaluations: AtomicUsize,
    cache_hits: AtomicUsize,
    reports: Mutex<BTreeMap<String, TransferReport>>,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        program: &'a LoopProgram,
        evaluator: &'a dyn Evaluator,
        device: Device,
        cache: &'a MeasurementCache,
        settings: EvalSettings,
    ) -> Self {
        Self {
            program,
            evaluator,
            device,
            cache,
            settings,
            evaluations: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            reports: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn transfer_reports(&self) -> Vec<TransferReport> {
        self.reports
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect()
    }

    pub fn pattern(&self, gene: &Gene) -> Result<OffloadPattern, PatternError> {
        let (pattern, report) = prepare(self.program, gene, self.device, self.settings.hoist_transfers)?;
        self.reports
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(report.pattern_key.clone())
            .or_insert(report);
        Ok(pattern)
    }

    fn score_of(&self, result: &MeasurementResult) -> f64 {
        fitness(result, &self.settings.score).unwrap_or_else(|_| self.settings.score.penalty())
    }

    /// Measures a pattern, retrying failures. Persistent failures become the
    /// timeout penalty annotated with the error.
    fn measure_uncached(&self, pattern: &OffloadPattern) -> Result<MeasurementResult, GaError> {
        let mut last_error = String::new();
        for _ in 0..=self.settings.retries {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            match self.evaluator.evaluate(pattern, self.settings.budget_s) {
                Ok(r) if !r.timed_out && !(r.time_s > 0.0 && r.energy_ws > 0.0) => {
                    last_error = format!(
                        "evaluator reported non-positive time {} s or energy {} Ws",
                        r.time_s, r.energy_ws
                    );
                }
                Ok(r) => return Ok(r),
                Err(e) if e.is_fatal() => {
                    return Err(GaError::Evaluator {
                        pattern: pattern.key(),
                        source: e,
                    })
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Ok(MeasurementResult::failed(last_error))
    }

    /// Measures a gene through the cache.
    pub fn measure(&self, gene: &Gene) -> Result<(MeasurementResult, f64, bool), GaError> {
        let pattern = self.pattern(gene)?;
        if let Some(hit) = self.cache.lookup(&pattern) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            let f = self.score_of(&hit);
            return Ok((hit, f, true));
        }
        let result = self.measure_uncached(&pattern)?;
        self.cache.store(&pattern, result.clone());
        let f = self.score_of(&result);
        Ok((result, f, false))
    }

    /// Measures distinct uncached genes on up to `evaluator.parallelism()`
    /// threads. Results come back in input order.
    fn measure_batch(&self, genes: &[Gene]) -> Result<Vec<Measured>, GaError> {
        let workers = self.evaluator.parallelism().clamp(1, genes.len().max(1));
        let patterns = genes
            .iter()
            .map(|g| self.pattern(g))
            .collect::<Result<Vec<_>, _>>()?;
        let slots: Vec<Mutex<Option<Result<MeasurementResult, GaError>>>> =
            patterns.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(pattern) = patterns.get(i) else { break };
                    let r = self.measure_uncached(pattern);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(patterns.len());
        for (pattern, slot) in patterns.iter().zip(slots) {
            let result = slot
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot is filled")?;
            self.cache.store(pattern, result.clone());
            let fitness = self.score_of(&result);
            out.push(Measured { result, fitness });
        }
        Ok(out)
    }

    /// Measures a list of genes: each distinct gene once, on up to the
    /// evaluator's parallelism, earlier measurements from the cache.
    pub fn measure_all(&self, genes: &[Gene]) -> Result<Vec<Individual>, GaError> {
        let mut known: BTreeMap<Gene, (MeasurementResult, f64)> = BTreeMap::new();
        let mut pending: Vec<Gene> = Vec::new();
        for g in genes {
            if known.contains_key(g) || pending.contains(g) {
                continue;
            }
            let pattern = self.pattern(g)?;
            match self.cache.lookup(&pattern) {
                Some(hit) => {
                    let f = self.score_of(&hit);
                    known.insert(g.clone(), (hit, f));
                }
                None => pending.push(g.clone()),
            }
        }
        let fresh: Vec<Gene> = pending.clone();
        for (g, m) in pending.into_iter().zip(self.measure_batch(&fresh)?) {
            known.insert(g, (m.result, m.fitness));
        }

        let mut first_seen: Vec<&Gene> = Vec::new();
        let mut individuals = Vec::with_capacity(genes.len());
        for g in genes {
            let (result, f) = &known[g];
            let measured_now = fresh.contains(g) && !first_seen.contains(&g);
            if measured_now {
                first_seen.push(g);
            } else {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
            }
            individuals.push(Individual {
                gene: g.clone(),
                fitness: *f,
                time_s: result.time_s,
                energy_ws: result.energy_ws,
                timed_out: result.timed_out,
                cached: !measured_now,
                error: result.error.clone(),
            });
        }
        Ok(individuals)
    }
}

fn best_of(individuals: &[Individual]) -> &Individual {
    individuals
        .iter()
        .reduce(|a, b| {
            if better((&b.gene, b.fitness), (&a.gene, a.fitness)) {
                b
            } else {
                a
            }
        })
        .expect("non-empty generation")
}

fn breed(
    current: &[Individual],
    config: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Gene> {
    let mut ranked: Vec<&Individual> = current.iter().collect();
    ranked.sort_by(|a, b| {
        b.fitness
            .total_cmp(&a.fitness)
            .then_with(|| a.gene.cmp(&b.gene))
    });
    let mut next: Vec<Gene> = ranked
        .iter()
        .take(config.elite)
        .map(|i| i.gene.clone())
        .collect();
    let fitnesses: Vec<f64> = current.iter().map(|i| i.fitness).collect();
    while next.len() < config.population {
        let a = &current[roulette_select(&fitnesses, rng)].gene;
        let b = &current[roulette_select(&fitnesses, rng)].gene;
        let (c1, c2) = crossover(a, b, rng, config.crossover_rate).expect("population genes share a length");
        let c1 = mutate(&c1, rng, config.mutation_rate);
        let c2 = mutate(&c2, rng, config.mutation_rate);
        next.push(c1);
        if next.len() < config.population {
            next.push(c2);
        }
    }
    next
}

/// Random initial population: each bit set with probability one half.
pub fn initial_population(gene_length: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Gene> {
    (0..size)
        .map(|_| Gene::new((0..gene_length).map(|_| rng.gen_bool(0.5)).collect()))
        .collect()
}

/// Runs the search and returns the best pattern found with the full history.
pub fn run_ga(
    program: &LoopProgram,
    evaluator: &dyn Evaluator,
    device: Device,
    config: &GaConfig,
) -> Result<(OffloadPattern, SearchHistory), GaError> {
    let cache = MeasurementCache::new();
    run_ga_with_cache(program, evaluator, device, config, &cache)
}

/// Same as [`run_ga`], sharing measurements through `cache`.
pub fn run_ga_with_cache(
    program: &LoopProgram,
    evaluator: &dyn Evaluator,
    device: Device,
    config: &GaConfig,
    cache: &MeasurementCache,
) -> Result<(OffloadPattern, SearchHistory), GaError> {
    let gene_loops = program.parallelizable_ids();
    if gene_loops.is_empty() {
        return Err(GaError::NoParallelLoops);
    }
    let warnings = config.validate(gene_loops.len())?;
    let ctx = SearchContext::new(program, evaluator, device, cache, config.eval_settings());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut genes = initial_population(gene_loops.len(), config.population, &mut rng);
    let mut generations: Vec<Generation> = Vec::with_capacity(config.generations);
    for index in 0..config.generations {
        let individuals = ctx.measure_all(&genes)?;
        let best = best_of(&individuals);
        generations.push(Generation {
            index,
            best_gene: best.gene.clone(),
            best_fitness: best.fitness,
            individuals: individuals.clone(),
        });
        if index + 1 < config.generations {
            genes = breed(&individuals, config, &mut rng);
        }
    }

    let overall = generations
        .iter()
        .flat_map(|g| &g.individuals)
        .reduce(|a, b| {
            if better((&b.gene, b.fitness), (&a.gene, a.fitness)) {
                b
            } else {
                a
            }
        })
        .expect("at least one generation");
    let initial_best_fitness = generations[0].best_fitness;
    let best = BestPattern {
        gene: overall.gene.clone(),
        pattern_key: crate::pattern::pattern_key(device, &overall.gene),
        fitness: overall.fitness,
        time_s: overall.time_s,
        energy_ws: overall.energy_ws,
        timed_out: overall.timed_out,
    };
    let best_pattern = ctx.pattern(&best.gene)?;
    let history = SearchHistory {
        device,
        program_digest: program.source_digest().to_string(),
        gene_loops,
        config: config.clone(),
        improved: best.fitness > initial_best_fitness,
        best,
        initial_best_fitness,
        generations,
        evaluations: ctx.evaluations(),
        cache_hits: ctx.cache_hits(),
        warnings,
        transfer_reports: ctx.transfer_reports(),
    };
    Ok((best_pattern, history))
}
