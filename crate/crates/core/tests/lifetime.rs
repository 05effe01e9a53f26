use baldwin::evolution::GenomeIds;
use baldwin::lifetime::{
    episode_rng, evaluate, inherit, EvalContext, EvalReport, Inheritance, InheritanceMode,
    InnerSteps, Learner,
};
use baldwin::needle::{first_crossing, run_needle_experiment, NeedleConfig};
use baldwin::rl::{
    initial_rl_genome, rl_fitness, task_list, A2cConfig, EnvConfig, RlLearner, RlTask, TaskFamily,
};
use baldwin::rng::rng_from;
use baldwin::sine::{initial_genome, sample_batch, sine_fitness, SineConfig, SineLearner};
use proptest::prelude::*;

fn short_learner() -> RlLearner {
    let env = EnvConfig {
        episode_steps: 80,
        ..EnvConfig::default()
    };
    RlLearner::surrogate(env, A2cConfig::default()).unwrap()
}

fn scores(r: &EvalReport) -> Vec<u64> {
    r.per_episode.iter().map(|e| e.score.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn baldwin_without_learning_is_darwin(seed in any::<u64>()) {
        let sine = SineLearner::default();
        let ids = GenomeIds::default();
        let mut rng = rng_from(&[seed]);
        let batch = sample_batch(&SineConfig::default(), &mut rng);
        let g = initial_genome(&sine.arch, 0.01, &ids, &mut rng);
        let ctx = EvalContext::sequential(seed);
        let zero = InnerSteps::fixed(0);
        let b = evaluate(&g, &batch.tasks, InheritanceMode::baldwin(), zero, &sine, &ctx).unwrap();
        let d = evaluate(&g, &batch.tasks, InheritanceMode::darwin(), zero, &sine, &ctx).unwrap();
        prop_assert_eq!(b.fitness.to_bits(), d.fitness.to_bits());

        let rl = short_learner();
        let g = initial_rl_genome(&rl.arch, 3, true, &ids, &mut rng);
        let b = rl_fitness(&g, TaskFamily::GoalVelocity, InheritanceMode::baldwin(), zero, &rl, &ctx).unwrap();
        let d = rl_fitness(&g, TaskFamily::GoalVelocity, InheritanceMode::darwin(), zero, &rl, &ctx).unwrap();
        prop_assert_eq!(scores(&b), scores(&d));
    }

    #[test]
    fn baldwin_inheritance_ignores_inner_steps(seed in any::<u64>(), n in 0usize..8) {
        let sine = SineLearner::default();
        let ids = GenomeIds::default();
        let mut rng = rng_from(&[seed]);
        let batch = sample_batch(&SineConfig::default(), &mut rng);
        let g = initial_genome(&sine.arch, 0.01, &ids, &mut rng);
        let r = evaluate(&g, &batch.tasks, InheritanceMode::baldwin(), InnerSteps::fixed(n), &sine, &EvalContext::sequential(seed)).unwrap();
        prop_assert_eq!(&inherit(&r, &g, InheritanceMode::baldwin()).params, &g.params);
        prop_assert_eq!(&r.post_params, &g.params);
    }

    #[test]
    fn fitness_is_the_episode_sum(seed in any::<u64>(), n in 0usize..6, lamarck in any::<bool>()) {
        let sine = SineLearner::default();
        let ids = GenomeIds::default();
        let mut rng = rng_from(&[seed]);
        let batch = sample_batch(&SineConfig::default(), &mut rng);
        let g = initial_genome(&sine.arch, 0.01, &ids, &mut rng);
        let mode = if lamarck { InheritanceMode::lamarck() } else { InheritanceMode::baldwin() };
        let r = evaluate(&g, &batch.tasks, mode, InnerSteps::fixed(n), &sine, &EvalContext::sequential(seed)).unwrap();
        let sum: f64 = r.per_episode.iter().map(|e| e.score).sum();
        prop_assert_eq!(sum.to_bits(), r.fitness.to_bits());
        prop_assert!(sine_fitness(&g, &batch, n).unwrap() <= 0.0);
    }

    #[test]
    fn permuting_tasks_permutes_episode_scores(seed in any::<u64>(), n in 0usize..4) {
        let sine = SineLearner::default();
        let ids = GenomeIds::default();
        let mut rng = rng_from(&[seed]);
        let batch = sample_batch(&SineConfig::default(), &mut rng);
        let g = initial_genome(&sine.arch, 0.01, &ids, &mut rng);
        let ctx = EvalContext::sequential(seed);
        let forward = evaluate(&g, &batch.tasks, InheritanceMode::baldwin(), InnerSteps::fixed(n), &sine, &ctx).unwrap();
        let mut reversed_tasks = batch.tasks.clone();
        reversed_tasks.reverse();
        let reversed = evaluate(&g, &reversed_tasks, InheritanceMode::baldwin(), InnerSteps::fixed(n), &sine, &ctx).unwrap();
        let mut back = scores(&reversed);
        back.reverse();
        prop_assert_eq!(scores(&forward), back);
    }
}

#[test]
fn rl_episodes_are_independent_under_baldwin() {
    let rl = short_learner();
    let ids = GenomeIds::default();
    let g = initial_rl_genome(&rl.arch, 3, true, &ids, &mut rng_from(&[4]));
    let ctx = EvalContext::sequential(17);
    let tasks = task_list(TaskFamily::GoalDirection);
    let r = evaluate(
        &g,
        &tasks,
        InheritanceMode::baldwin(),
        InnerSteps::fixed(2),
        &rl,
        &ctx,
    )
    .unwrap();
    for (i, task) in tasks.iter().enumerate() {
        let ep = rl.episode(&g, &g.params, task, 2, &mut episode_rng(17, g.id.0, i));
        assert_eq!(ep.score.to_bits(), r.per_episode[i].score.to_bits());
    }
}

#[test]
fn rewards_stay_within_bounds() {
    let env = EnvConfig::default();
    let v_max = env.v_max();
    let mut rng = rng_from(&[5]);
    for _ in 0..10_000 {
        let v = v_max * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0);
        for t in task_list(TaskFamily::GoalVelocity) {
            let r = t.reward(v);
            assert!((-2.0 - v_max..=0.0).contains(&r));
        }
        for t in task_list(TaskFamily::GoalDirection) {
            assert!((-v_max..=v_max).contains(&t.reward(v)));
        }
    }
    assert!(
        matches!(task_list(TaskFamily::GoalVelocity)[9], RlTask::GoalVelocity { target } if (target - 2.0).abs() < 1e-12)
    );
}

#[test]
fn needle_baldwin_dominates_darwin_and_accommodates() {
    let cfg = NeedleConfig::default();
    let (mut baldwin_best, mut darwin_best, mut trending_down, mut eligible) = (0.0, 0.0, 0, 0);
    for seed in 0..8 {
        let b = run_needle_experiment(&cfg, Inheritance::Baldwin, 400, 50, seed, false).unwrap();
        let d = run_needle_experiment(&cfg, Inheritance::Darwin, 400, 50, seed, false).unwrap();
        baldwin_best += b.iter().map(|r| r.best).fold(0.0, f64::max);
        darwin_best += d.iter().map(|r| r.best).fold(0.0, f64::max);
        if let Some(g) = first_crossing(&b, 10.0).filter(|g| g + 20 < b.len()) {
            eligible += 1;
            if b[g + 20].q_frequency <= b[g].q_frequency {
                trending_down += 1;
            }
        }
    }
    assert!(baldwin_best > darwin_best);
    assert!(
        eligible >= 6,
        "only {eligible} runs crossed fitness 10 early enough"
    );
    assert!(
        trending_down * 4 >= eligible * 3,
        "{trending_down}/{eligible} runs lost ? alleles after crossing"
    );
}
