mod common;

use common::{brute_force_optimum, model_fitness, random_profile, random_program};
use offload_core::fpga::{narrow_candidates, run_fpga_search, FilterThresholds, FpgaConfig, ResourceModel};
use offload_core::ga::{run_ga, GaConfig};
use offload_core::measurement::{integrate_energy, SimulatedEvaluator};
use offload_core::pattern::{hoist_transfers, materialize, transfer_count, Device, Gene};
use offload_core::score::ScoreConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generated_programs_match_their_rendering() {
    for seed in 0..200 {
        let (generated, program) = random_program(seed, usize::MAX);
        let pre = generated.preorder();
        assert_eq!(pre.len(), program.loops().len(), "seed {seed}");
        for (g, l) in pre.iter().zip(program.loops()) {
            assert_eq!(g.trips as u64, l.trip_count, "seed {seed}");
            assert_eq!(g.depth as u32, l.depth, "seed {seed}");
        }
    }
}

#[test]
fn parallel_loops_really_execute_independently() {
    let mut parallel = 0;
    let mut sequential_truth = 0;
    for seed in 0..500 {
        let (generated, program) = random_program(seed, usize::MAX);
        for lp in program.loops() {
            let truth = generated.executes_independently(lp.id);
            if lp.parallelizable {
                parallel += 1;
                assert!(truth, "seed {seed}: loop {} marked parallel\n{}", lp.id, generated.render());
            }
            if !truth {
                sequential_truth += 1;
                assert!(!lp.parallelizable);
            }
        }
    }
    assert!(parallel > 100 && sequential_truth > 100, "{parallel} / {sequential_truth}");
}

#[test]
fn elementwise_nests_are_recognized() {
    let (mut hits, mut total) = (0, 0);
    for seed in 0..500 {
        let (generated, program) = random_program(seed, usize::MAX);
        let pre = generated.preorder();
        for lp in program.loops() {
            let g = pre[lp.id];
            if !g.seq && g.trips > 1 && generated.executes_independently(lp.id) {
                total += 1;
                hits += usize::from(lp.parallelizable);
            }
        }
    }
    assert!(hits * 2 > total, "only {hits} of {total} independent loops recognized");
}

fn exhaustive_settings() -> offload_core::ga::EvalSettings {
    GaConfig::default().eval_settings()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hoisting_never_adds_transfers_and_is_idempotent(seed in any::<u64>(), bits in any::<u64>()) {
        let (_, program) = random_program(seed, 12);
        let n = program.parallelizable_ids().len();
        let gene = Gene::from_index(bits & ((1 << n) - 1), n);
        let naive = materialize(&program, &gene, Device::Gpu).unwrap();
        let hoisted = hoist_transfers(&program, &naive);
        prop_assert!(transfer_count(&program, &hoisted) <= transfer_count(&program, &naive));
        prop_assert_eq!(hoist_transfers(&program, &hoisted), hoisted.clone());
        let naive_vars: std::collections::BTreeSet<_> = naive.transfers.variables();
        prop_assert_eq!(hoisted.transfers.variables(), naive_vars);
    }

    #[test]
    fn simulated_energy_matches_its_traces(seed in any::<u64>(), bits in any::<u64>()) {
        let (_, program) = random_program(seed, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&program, Device::Gpu, &mut rng);
        let n = program.parallelizable_ids().len();
        let gene = Gene::from_index(bits & ((1 << n) - 1), n);
        let pattern = materialize(&program, &gene, Device::Gpu).unwrap();
        let r = offload_core::measurement::simulate::simulate_with_budget(&program, &pattern, &profile, 180.0);
        let (start, end) = r.window.unwrap();
        let integrated = integrate_energy(&r.traces, start, end).unwrap();
        // Traces carry fractional last samples, so the 1 Hz sum is exact.
        prop_assert!((integrated - r.energy_ws).abs() <= 1e-6 * r.energy_ws.max(1.0));
        prop_assert!(r.energy_ws > 0.0);
        if r.timed_out {
            prop_assert_eq!(r.time_s, 10_000.0);
        }
    }

    #[test]
    fn ga_never_measures_a_pattern_twice(seed in 0u64..10_000) {
        let (_, program) = random_program(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&program, Device::Gpu, &mut rng);
        let eval = SimulatedEvaluator::new(&program, profile).unwrap();
        let config = GaConfig { seed, ..GaConfig::default() };
        let (_, history) = run_ga(&program, &eval, Device::Gpu, &config).unwrap();
        let distinct: std::collections::BTreeSet<&Gene> = history
            .generations
            .iter()
            .flat_map(|g| g.individuals.iter().map(|i| &i.gene))
            .collect();
        prop_assert_eq!(history.evaluations, distinct.len());
        prop_assert_eq!(history.evaluations + history.cache_hits, config.population * config.generations);
    }

    #[test]
    fn scaling_power_keeps_the_search_path(seed in 0u64..10_000, factor in 0.1f64..10.0) {
        let (_, program) = random_program(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&program, Device::Gpu, &mut rng);
        let mut scaled = profile.clone();
        scaled.cpu_watts *= factor;
        scaled.base_watts *= factor;
        scaled.active_watts *= factor;
        let config = GaConfig {
            seed,
            score: ScoreConfig { timeout_energy_ws: Some(1e7 * factor), ..ScoreConfig::default() },
            ..GaConfig::default()
        };
        let a = run_ga(&program, &SimulatedEvaluator::new(&program, profile).unwrap(), Device::Gpu, &config).unwrap().1;
        let b = run_ga(&program, &SimulatedEvaluator::new(&program, scaled).unwrap(), Device::Gpu, &config).unwrap().1;
        let genes = |h: &offload_core::ga::SearchHistory| -> Vec<Gene> {
            h.generations.iter().flat_map(|g| g.individuals.iter().map(|i| i.gene.clone())).collect()
        };
        prop_assert_eq!(genes(&a), genes(&b));
        prop_assert_eq!(a.best.gene, b.best.gene);
    }

    #[test]
    fn ga_best_is_a_real_measurement_and_never_beats_the_optimum(seed in 0u64..10_000) {
        let (_, program) = random_program(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&program, Device::Gpu, &mut rng);
        let config = GaConfig { seed, ..GaConfig::default() };
        let settings = exhaustive_settings();
        let (optimum, _) = brute_force_optimum(&program, &profile, &settings);
        let eval = SimulatedEvaluator::new(&program, profile.clone()).unwrap();
        let (pattern, history) = run_ga(&program, &eval, Device::Gpu, &config).unwrap();
        prop_assert_eq!(&pattern.gene, &history.best.gene);
        prop_assert_eq!(history.best.fitness, model_fitness(&program, &profile, &settings, &pattern.gene));
        prop_assert!(history.best.fitness <= optimum);
    }

    #[test]
    fn narrowing_respects_the_resource_gate(seed in any::<u64>(), max_ff in 100u64..2000, max_lut in 100u64..3000) {
        let (_, program) = random_program(seed, 12);
        let model = ResourceModel::default();
        let thresholds = FilterThresholds { max_ff, max_lut, ..FilterThresholds::default() };
        for id in narrow_candidates(&program, &thresholds, &model) {
            let est = offload_core::fpga::estimate_resources(&program.loops()[id], &model);
            prop_assert!(est.flip_flops <= max_ff && est.lookup_tables <= max_lut);
            prop_assert!(program.loops()[id].parallelizable);
        }
    }

    #[test]
    fn fpga_best_is_never_below_baseline(seed in 0u64..10_000) {
        let (_, program) = random_program(seed, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&program, Device::Fpga, &mut rng);
        let eval = SimulatedEvaluator::new(&program, profile).unwrap();
        let config = FpgaConfig::default();
        let candidates = narrow_candidates(&program, &config.thresholds, &config.resources);
        let (_, report) = run_fpga_search(&program, &candidates, &eval, &config).unwrap();
        prop_assert!(report.best.score >= report.baseline().score);
        prop_assert!(report.evaluations <= 1 + candidates.len() + (1 << report.retained.len()));
    }
}
