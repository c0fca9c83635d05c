//! FPGA candidate narrowing and the two-round measurement plan.
//!
//! FPGA builds are slow, so instead of a GA the search measures few patterns:
//! loops are narrowed by arithmetic intensity, trip count and an estimated
//! resource footprint; each survivor is measured alone; the ones that beat
//! the CPU baseline are then measured in combination.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ga::{EvalSettings, GaError, Individual, SearchContext};
use crate::loop_model::{arithmetic_intensity, LoopId, LoopProgram, LoopStatement};
use crate::measurement::{Evaluator, MeasurementCache, DEFAULT_BUDGET_S};
use crate::pattern::{Device, Gene, OffloadPattern};
use crate::score::ScoreConfig;
use crate::transfer_opt::TransferReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub flip_flops: u64,
    pub lookup_tables: u64,
}

/// Linear pre-compile estimate: `resource = per_op * ops_per_iter + base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceModel {
    pub ff_per_op: f64,
    pub ff_base: f64,
    pub lut_per_op: f64,
    pub lut_base: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        Self {
            ff_per_op: 8.0,
            ff_base: 100.0,
            lut_per_op: 12.0,
            lut_base: 200.0,
        }
    }
}

impl ResourceModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("ff_per_op", self.ff_per_op),
            ("ff_base", self.ff_base),
            ("lut_per_op", self.lut_per_op),
            ("lut_base", self.lut_base),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

pub fn estimate_resources(lp: &LoopStatement, model: &ResourceModel) -> ResourceEstimate {
    let linear = |per_op: f64, base: f64| (per_op * lp.ops_per_iter as f64 + base).round() as u64;
    ResourceEstimate {
        flip_flops: linear(model.ff_per_op, model.ff_base),
        lookup_tables: linear(model.lut_per_op, model.lut_base),
    }
}

fn four() -> usize {
    4
}
fn one() -> f64 {
    1.0
}
fn six() -> usize {
    6
}
fn max_ff() -> u64 {
    1_000_000
}
fn max_lut() -> u64 {
    500_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterThresholds {
    #[serde(default = "four")]
    pub intensity_top_k: usize,
    #[serde(default = "four")]
    pub trips_top_k: usize,
    #[serde(default = "max_ff")]
    pub max_ff: u64,
    #[serde(default = "max_lut")]
    pub max_lut: u64,
    /// Minimum score ratio over the baseline for a single-loop pattern to
    /// enter the combination round. Any strict improvement is required too.
    #[serde(default = "one")]
    pub improvement_min: f64,
    /// Above this many retained loops only pairs are combined.
    #[serde(default = "six")]
    pub combination_limit: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            intensity_top_k: four(),
            trips_top_k: four(),
            max_ff: max_ff(),
            max_lut: max_lut(),
            improvement_min: one(),
            combination_limit: six(),
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.intensity_top_k == 0 || self.trips_top_k == 0 {
            return Err("top-k thresholds must be at least 1".into());
        }
        if !(self.improvement_min.is_finite() && self.improvement_min >= 1.0) {
            return Err(format!(
                "improvement_min must be at least 1, got {}",
                self.improvement_min
            ));
        }
        if self.combination_limit < 2 {
            return Err("combination_limit must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub loop_id: LoopId,
    pub reason: String,
}

/// Outcome of the filter stages with a reason for every dropped loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrowing {
    pub candidates: Vec<LoopId>,
    pub excluded: Vec<Exclusion>,
}

fn by_intensity(program: &LoopProgram, a: LoopId, b: LoopId) -> std::cmp::Ordering {
    let (la, lb) = (&program.loops()[a], &program.loops()[b]);
    arithmetic_intensity(lb)
        .cmp(&arithmetic_intensity(la))
        .then(a.cmp(&b))
}

pub fn narrow_with_reasons(
    program: &LoopProgram,
    thresholds: &FilterThresholds,
    model: &ResourceModel,
) -> Narrowing {
    let parallel = program.parallelizable_ids();
    let mut by_int = parallel.clone();
    by_int.sort_by(|&a, &b| by_intensity(program, a, b));
    let mut by_trips = parallel.clone();
    by_trips.sort_by_key(|&id| (std::cmp::Reverse(program.entry_count(id) * program.loops()[id].trip_count), id));

    let stage1: BTreeSet<LoopId> = by_int
        .iter()
        .take(thresholds.intensity_top_k)
        .chain(by_trips.iter().take(thresholds.trips_top_k))
        .copied()
        .collect();

    let mut excluded = Vec::new();
    let mut candidates = Vec::new();
    for &id in &by_int {
        if !stage1.contains(&id) {
            excluded.push(Exclusion {
                loop_id: id,
                reason: "below the intensity and trip-count cutoffs".into(),
            });
            continue;
        }
        let est = estimate_resources(&program.loops()[id], model);
        if est.flip_flops > thresholds.max_ff || est.lookup_tables > thresholds.max_lut {
            excluded.push(Exclusion {
                loop_id: id,
                reason: format!(
                    "estimated {} FF / {} LUT exceeds the {} / {} limit",
                    est.flip_flops, est.lookup_tables, thresholds.max_ff, thresholds.max_lut
                ),
            });
            continue;
        }
        candidates.push(id);
    }
    excluded.sort_by_key(|e| e.loop_id);
    Narrowing {
        candidates,
        excluded,
    }
}

/// Parallelizable loops that survive the intensity/trip-count union and the
/// resource gate, by descending intensity then ascending id.
pub fn narrow_candidates(
    program: &LoopProgram,
    thresholds: &FilterThresholds,
    model: &ResourceModel,
) -> Vec<LoopId> {
    narrow_with_reasons(program, thresholds, model).candidates
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Baseline,
    Single,
    Combination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaMeasurement {
    pub round: Round,
    pub loops: Vec<LoopId>,
    pub pattern_key: String,
    pub time_s: f64,
    pub energy_ws: f64,
    pub score: f64,
    pub timed_out: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaReport {
    pub program_digest: String,
    pub candidates: Vec<LoopId>,
    pub excluded: Vec<Exclusion>,
    pub retained: Vec<LoopId>,
    /// Round 2 was limited to pairs because too many loops were retained.
    pub pairs_only: bool,
    pub measurements: Vec<FpgaMeasurement>,
    pub best: FpgaMeasurement,
    pub evaluations: usize,
    pub cache_hits: usize,
    pub transfer_reports: Vec<TransferReport>,
}

impl FpgaReport {
    pub fn baseline(&self) -> &FpgaMeasurement {
        &self.measurements[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
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

/// Everything the FPGA pipeline needs besides the program and evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpgaConfig {
    #[serde(default)]
    pub thresholds: FilterThresholds,
    #[serde(default)]
    pub resources: ResourceModel,
    #[serde(default = "default_budget")]
    pub budget_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_true")]
    pub hoist_transfers: bool,
    #[serde(default)]
    pub score: ScoreConfig,
}

impl Default for FpgaConfig {
    fn default() -> Self {
        Self {
            thresholds: FilterThresholds::default(),
            resources: ResourceModel::default(),
            budget_s: default_budget(),
            retries: default_retries(),
            hoist_transfers: true,
            score: ScoreConfig::default(),
        }
    }
}

impl FpgaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        self.thresholds.validate().map_err(GaError::Config)?;
        self.resources.validate().map_err(GaError::Config)?;
        self.score.validate(self.budget_s)?;
        Ok(())
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            budget_s: self.budget_s,
            retries: self.retries,
            hoist_transfers: self.hoist_transfers,
            score: self.score.clone(),
        }
    }
}

/// Subsets of `0..n` with at least two members, smaller subsets first, or
/// only the pairs when `pairs_only`.
fn combinations(n: usize, pairs_only: bool) -> Vec<Vec<usize>> {
    let max_size = if pairs_only { 2 } else { n };
    let mut out = Vec::new();
    for size in 2..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

fn gene_for(program: &LoopProgram, loops: &[LoopId]) -> Gene {
    let ids = program.parallelizable_ids();
    Gene::new(ids.iter().map(|id| loops.contains(id)).collect())
}

fn row(round: Round, loops: Vec<LoopId>, ind: &Individual) -> FpgaMeasurement {
    FpgaMeasurement {
        round,
        loops,
        pattern_key: crate::pattern::pattern_key(Device::Fpga, &ind.gene),
        time_s: ind.time_s,
        energy_ws: ind.energy_ws,
        score: ind.fitness,
        timed_out: ind.timed_out,
        error: ind.error.clone(),
    }
}

pub fn run_fpga_search(
    program: &LoopProgram,
    candidates: &[LoopId],
    evaluator: &dyn Evaluator,
    config: &FpgaConfig,
) -> Result<(OffloadPattern, FpgaReport), GaError> {
    let cache = MeasurementCache::new();
    run_fpga_search_with_cache(program, candidates, evaluator, config, &cache, Vec::new())
}

/// [`run_fpga_search`] sharing `cache`, with `excluded` carried into the
/// report.
pub fn run_fpga_search_with_cache(
    program: &LoopProgram,
    candidates: &[LoopId],
    evaluator: &dyn Evaluator,
    config: &FpgaConfig,
    cache: &MeasurementCache,
    excluded: Vec<Exclusion>,
) -> Result<(OffloadPattern, FpgaReport), GaError> {
    config.validate()?;
    let parallel = program.parallelizable_ids();
    if let Some(bad) = candidates.iter().find(|c| !parallel.contains(c)) {
        return Err(GaError::Config(format!("loop {bad} is not a parallelizable loop")));
    }
    let ctx = SearchContext::new(program, evaluator, Device::Fpga, cache, config.eval_settings());

    let mut genes = vec![Gene::zeros(parallel.len())];
    genes.extend(candidates.iter().map(|&c| gene_for(program, &[c])));
    let round1 = ctx.measure_all(&genes)?;
    let baseline = &round1[0];
    let mut measurements = vec![row(Round::Baseline, Vec::new(), baseline)];

    let mut retained = Vec::new();
    for (&c, ind) in candidates.iter().zip(&round1[1..]) {
        measurements.push(row(Round::Single, vec![c], ind));
        let ratio = ind.fitness / baseline.fitness;
        if ind.error.is_none() && !ind.timed_out && ratio > 1.0 && ratio >= config.thresholds.improvement_min {
            retained.push(c);
        }
    }

    let pairs_only = retained.len() > config.thresholds.combination_limit;
    let combos: Vec<Vec<LoopId>> = combinations(retained.len(), pairs_only)
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| retained[i]).collect())
        .collect();
    let combo_genes: Vec<Gene> = combos.iter().map(|c| gene_for(program, c)).collect();
    let round2 = ctx.measure_all(&combo_genes)?;
    for (loops, ind) in combos.into_iter().zip(&round2) {
        measurements.push(row(Round::Combination, loops, ind));
    }

    let best = measurements
        .iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("baseline is always measured")
        .clone();
    let best_gene = gene_for(program, &best.loops);
    let pattern = ctx.pattern(&best_gene)?;
    let report = FpgaReport {
        program_digest: program.source_digest().to_string(),
        candidates: candidates.to_vec(),
        excluded,
        retained,
        pairs_only,
        measurements,
        best,
        evaluations: ctx.evaluations(),
        cache_hits: ctx.cache_hits(),
        transfer_reports: ctx.transfer_reports(),
    };
    Ok((pattern, report))
}

/// Narrows the candidates and runs both measurement rounds.
pub fn fpga_pipeline(
    program: &LoopProgram,
    evaluator: &dyn Evaluator,
    config: &FpgaConfig,
    cache: &MeasurementCache,
) -> Result<(OffloadPattern, FpgaReport), GaError> {
    if program.parallelizable_ids().is_empty() {
        return Err(GaError::NoParallelLoops);
    }
    let narrowing = narrow_with_reasons(program, &config.thresholds, &config.resources);
    run_fpga_search_with_cache(
        program,
        &narrowing.candidates,
        evaluator,
        config,
        cache,
        narrowing.excluded,
    )
}
