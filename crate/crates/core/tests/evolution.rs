use baldwin::evolution::{
    generational_step, mutate, snes_sample, snes_update, steady_state_step, GenerationalConfig,
    Genome, GenomeId, GenomeIds, Hyperparams, MutationConfig, PopulationState, SearchDistribution,
    Selection, SteadyStateConfig,
};
use baldwin::net::{NetworkArch, ParamVector};
use baldwin::rng::rng_from;
use proptest::prelude::*;
use rand::Rng;

fn scored(fitness: &[f64]) -> PopulationState<f64> {
    let mut pop = PopulationState::new(fitness.to_vec(), 0);
    for m in &mut pop.members {
        m.fitness = Some(m.genome);
    }
    pop
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snes_update_ignores_fitness_offsets(seed in any::<u64>(), shift in -1e4f64..1e4, d in 1usize..40) {
        let mut rng = rng_from(&[seed]);
        let mu = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sigma = (0..d).map(|_| rng.random_range(0.01..2.0)).collect();
        let dist = SearchDistribution::new(mu, sigma).unwrap();
        let samples = snes_sample(&dist, 25, &mut rng);
        let f: Vec<f64> = (0..25).map(|_| rng.random_range(-5.0..5.0)).collect();
        let g: Vec<f64> = f.iter().map(|v| v + shift).collect();
        let a = snes_update(&dist, &samples, &f).unwrap();
        let b = snes_update(&dist, &samples, &g).unwrap();
        prop_assert_eq!(&a.mu, &b.mu);
        prop_assert_eq!(&a.sigma, &b.sigma);
        prop_assert!(a.sigma.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn generational_elitism_conserves_size_and_best(seed in any::<u64>(), n in 2usize..60, gens in 1usize..15) {
        let mut rng = rng_from(&[seed]);
        let fit: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut pop = scored(&fit);
        let cfg = GenerationalConfig { selection: Selection::LinearRanking { pressure: 1.5 }, ..GenerationalConfig::default() };
        let mut best = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..gens {
            pop = generational_step(&pop, &cfg, &mut rng, |p, _, r| p + r.random_range(-1.0..1.0)).unwrap();
            prop_assert_eq!(pop.len(), n);
            for m in &mut pop.members {
                m.fitness = Some(m.genome);
            }
            let now = pop.members.iter().map(|m| m.genome).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(now >= best);
            best = now;
        }
    }

    #[test]
    fn steady_state_conserves_size_and_max(seed in any::<u64>(), n in 3usize..40, steps in 1usize..60) {
        let mut rng = rng_from(&[seed]);
        let fit: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut pop = scored(&fit);
        let cfg = SteadyStateConfig { tournament_size: 2.min(n) };
        let mut best = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..steps {
            steady_state_step(&mut pop, &cfg, &mut rng, |p, r| p + r.random_range(-1.0..1.0), |c| *c).unwrap();
            prop_assert_eq!(pop.len(), n);
            let now = pop.members.iter().map(|m| m.fitness.unwrap()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(now >= best);
            best = now;
        }
    }

    #[test]
    fn mutated_hyperparams_stay_in_range(seed in any::<u64>(), log_std in 0.0f64..3.0) {
        let arch = NetworkArch::sine_regressor();
        let mut rng = rng_from(&[seed]);
        let ids = GenomeIds::default();
        let mut g = Genome::new(GenomeId(0), ParamVector::zeros(&arch), Hyperparams::sample_initial(&mut rng));
        let cfg = MutationConfig { hyper_log_std: log_std, ..MutationConfig::default() };
        for _ in 0..50 {
            g = mutate(&g, &cfg, &ids, &mut rng);
            prop_assert!(g.hyper.in_range());
        }
    }
}

#[test]
fn parameter_mutation_is_unbiased() {
    let arch = NetworkArch::sine_regressor();
    let parent = Genome::new(
        GenomeId(0),
        ParamVector::zeros(&arch),
        Hyperparams::default(),
    );
    let ids = GenomeIds::starting_at(1);
    let cfg = MutationConfig::default();
    let mut rng = rng_from(&[11]);
    let n = 400;
    let mut sum = 0.0;
    let mut count = 0usize;
    for _ in 0..n {
        let child = mutate(&parent, &cfg, &ids, &mut rng);
        sum += child.params.values.iter().sum::<f64>();
        count += child.params.len();
    }
    let mean = sum / count as f64;
    let se = cfg.param_std / (count as f64).sqrt();
    assert!(
        mean.abs() < 4.0 * se,
        "mean delta {mean} vs standard error {se}"
    );
}
