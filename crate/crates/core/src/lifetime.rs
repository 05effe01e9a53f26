//! Scoring a genome over a batch of tasks under Baldwinian, Lamarckian or
//! Darwinian rules, and building the offspring template each rule inherits.
//!
//! * Baldwin: every episode starts from the genome's own parameters and the
//!   learned parameters are thrown away.
//! * Lamarck: episodes run in order on one parameter set that keeps learning;
//!   the final learned parameters are what offspring inherit.
//! * Darwin: no gradient steps at all.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evolution::{Genome, MutationConfig};
use crate::net::ParamVector;
use crate::rng::{rng_from, Rng64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inheritance {
    Baldwin,
    Lamarck,
    Darwin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InheritanceMode {
    pub kind: Inheritance,
    /// Lamarck only: `false` passes learned parameters on without mutation.
    pub lamarck_mutate_params: bool,
}

impl Default for InheritanceMode {
    fn default() -> Self {
        Self::baldwin()
    }
}

impl InheritanceMode {
    pub fn baldwin() -> Self {
        Self {
            kind: Inheritance::Baldwin,
            lamarck_mutate_params: true,
        }
    }

    pub fn lamarck() -> Self {
        Self {
            kind: Inheritance::Lamarck,
            lamarck_mutate_params: true,
        }
    }

    pub fn darwin() -> Self {
        Self {
            kind: Inheritance::Darwin,
            lamarck_mutate_params: true,
        }
    }

    /// The mutation settings offspring of this mode should use.
    pub fn mutation_config(&self, base: &MutationConfig) -> MutationConfig {
        let mut cfg = base.clone();
        if self.kind == Inheritance::Lamarck && !self.lamarck_mutate_params {
            cfg.mutate_params = false;
        }
        cfg
    }
}

/// How many gradient steps a lifetime gets per episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InnerSteps {
    Fixed {
        steps: usize,
    },
    /// Drawn once per lifetime, uniformly from `min..=max`.
    Uniform {
        min: usize,
        max: usize,
    },
}

impl InnerSteps {
    pub fn fixed(steps: usize) -> Self {
        InnerSteps::Fixed { steps }
    }

    fn max(&self) -> usize {
        match *self {
            InnerSteps::Fixed { steps } => steps,
            InnerSteps::Uniform { max, .. } => max,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            InnerSteps::Fixed { steps } => steps,
            InnerSteps::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    /// The step budget `evaluate` gives genome `genome_id` in run `run_seed`.
    pub fn steps_for(&self, run_seed: u64, genome_id: u64) -> usize {
        self.draw(&mut rng_from(&[run_seed, genome_id, u64::MAX]))
    }
}

/// Outcome of one episode of lifetime learning.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Episodic reward, or negated loss for regression.
    pub score: f64,
    pub params: ParamVector,
    pub gradient_steps: usize,
}

/// An inner learner: runs one episode on `task` starting from `start`, taking at
/// most `max_steps` gradient steps.
pub trait Learner: Sync {
    type Task: Sync;

    fn episode(
        &self,
        genome: &Genome,
        start: &ParamVector,
        task: &Self::Task,
        max_steps: usize,
        rng: &mut Rng64,
    ) -> Episode;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeScore {
    pub task_index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_episode: Vec<EpisodeScore>,
    /// Sum of the per-episode scores.
    pub fitness: f64,
    pub post_params: ParamVector,
    pub gradient_steps_taken: usize,
    /// Episodes whose outcome was non-finite and got the floor score.
    pub floored_episodes: usize,
}

/// Seeds and fallbacks shared by all evaluations of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalContext {
    pub run_seed: u64,
    /// Score recorded for an episode whose outcome is not finite.
    pub episode_floor: f64,
    /// Run independent episodes on the rayon pool.
    pub parallel: bool,
}

impl EvalContext {
    pub fn sequential(run_seed: u64) -> Self {
        Self {
            run_seed,
            episode_floor: DEFAULT_EPISODE_FLOOR,
            parallel: false,
        }
    }
}

/// Floor used before any population fitness has been observed.
pub const DEFAULT_EPISODE_FLOOR: f64 = -1.0e6;

/// Per-episode floor derived from the worst fitness seen in the current
/// population: 10% below it, split evenly over the episodes.
pub fn episode_floor_from_worst(worst_fitness: Option<f64>, n_episodes: usize) -> f64 {
    match worst_fitness {
        Some(w) if w.is_finite() => (w - 0.1 * w.abs()) / n_episodes.max(1) as f64,
        _ => DEFAULT_EPISODE_FLOOR,
    }
}

/// Stream for episode `task_index` of genome `genome_id` within a run.
pub fn episode_rng(run_seed: u64, genome_id: u64, task_index: usize) -> Rng64 {
    rng_from(&[run_seed, genome_id, task_index as u64])
}

fn finite_params(p: &ParamVector) -> bool {
    p.values.iter().all(|v| v.is_finite())
}

/// Scores `genome` on `tasks` under `mode`.
pub fn evaluate<L: Learner>(
    genome: &Genome,
    tasks: &[L::Task],
    mode: InheritanceMode,
    n_inner: InnerSteps,
    learner: &L,
    ctx: &EvalContext,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(contract("a lifetime needs at least one task"));
    }
    if mode.kind == Inheritance::Darwin && n_inner.max() != 0 {
        return Err(contract("Darwinian evaluation takes no gradient steps"));
    }
    genome.validate()?;
    let steps = n_inner.steps_for(ctx.run_seed, genome.id.0);

    let floor = |score: f64| -> (f64, bool) {
        if score.is_finite() {
            (score, false)
        } else {
            (ctx.episode_floor, true)
        }
    };

    match mode.kind {
        Inheritance::Baldwin | Inheritance::Darwin => {
            let run = |(i, task): (usize, &L::Task)| {
                let mut rng = episode_rng(ctx.run_seed, genome.id.0, i);
                let ep = learner.episode(genome, &genome.params, task, steps, &mut rng);
                (i, ep.score, ep.gradient_steps)
            };
            let results: Vec<(usize, f64, usize)> = if ctx.parallel {
                tasks.par_iter().enumerate().map(run).collect()
            } else {
                tasks.iter().enumerate().map(run).collect()
            };
            let mut per_episode = Vec::with_capacity(tasks.len());
            let mut floored = 0;
            let mut grad_steps = 0;
            for (i, score, g) in results {
                let (s, hit) = floor(score);
                floored += usize::from(hit);
                grad_steps += g;
                per_episode.push(EpisodeScore {
                    task_index: i,
                    score: s,
                });
            }
            Ok(EvalReport {
                fitness: per_episode.iter().map(|e| e.score).sum(),
                per_episode,
                post_params: genome.params.clone(),
                gradient_steps_taken: grad_steps,
                floored_episodes: floored,
            })
        }
        Inheritance::Lamarck => {
            let mut params = genome.params.clone();
            let mut per_episode = Vec::with_capacity(tasks.len());
            let mut floored = 0;
            let mut grad_steps = 0;
            for (i, task) in tasks.iter().enumerate() {
                let mut rng = episode_rng(ctx.run_seed, genome.id.0, i);
                let ep = learner.episode(genome, &params, task, steps, &mut rng);
                let (s, hit) = floor(ep.score);
                floored += usize::from(hit);
                grad_steps += ep.gradient_steps;
                if !hit && finite_params(&ep.params) {
                    params = ep.params;
                }
                per_episode.push(EpisodeScore {
                    task_index: i,
                    score: s,
                });
            }
            Ok(EvalReport {
                fitness: per_episode.iter().map(|e| e.score).sum(),
                per_episode,
                post_params: params,
                gradient_steps_taken: grad_steps,
                floored_episodes: floored,
            })
        }
    }
}

/// Offspring template before mutation: Lamarckian lineages carry the learned
/// parameters forward, the other modes carry the genome's own.
pub fn inherit(report: &EvalReport, genome: &Genome, mode: InheritanceMode) -> Genome {
    let mut child = genome.clone();
    if mode.kind == Inheritance::Lamarck {
        child.params = report.post_params.clone();
    }
    child
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{mutate, GenomeId, GenomeIds, Hyperparams};
    use crate::net::{Activation, Head, HeadActivation, NetworkArch};

    /// Minimises (b - target)^2 on the bias of a single unit; the score is the
    /// negated loss after learning.
    struct Quadratic;

    impl Learner for Quadratic {
        type Task = f64;

        fn episode(
            &self,
            genome: &Genome,
            start: &ParamVector,
            target: &f64,
            max_steps: usize,
            rng: &mut Rng64,
        ) -> Episode {
            let mut p = start.clone();
            for _ in 0..max_steps {
                let g = 2.0 * (p.values[1] - target);
                p.values[1] -= genome.hyper.learning_rate * 100.0 * g;
            }
            // a little episode noise so seeding matters
            let jitter = rng.random::<f64>() * 1e-3;
            Episode {
                score: -(p.values[1] - target).powi(2) - jitter,
                params: p,
                gradient_steps: max_steps,
            }
        }
    }

    fn genome() -> Genome {
        let arch = NetworkArch::new(
            vec![1],
            Activation::Identity,
            vec![Head {
                name: "out".into(),
                output_dim: 1,
                activation: HeadActivation::Identity,
            }],
        )
        .unwrap();
        Genome::new(
            GenomeId(7),
            ParamVector::from_values(&arch, vec![0.0, 0.0]).unwrap(),
            Hyperparams::default(),
        )
    }

    #[test]
    fn baldwin_without_steps_equals_darwin() {
        let g = genome();
        let tasks = [1.0, -2.0, 0.5];
        let ctx = EvalContext::sequential(11);
        let b = evaluate(
            &g,
            &tasks,
            InheritanceMode::baldwin(),
            InnerSteps::fixed(0),
            &Quadratic,
            &ctx,
        )
        .unwrap();
        let d = evaluate(
            &g,
            &tasks,
            InheritanceMode::darwin(),
            InnerSteps::fixed(0),
            &Quadratic,
            &ctx,
        )
        .unwrap();
        assert_eq!(b.fitness.to_bits(), d.fitness.to_bits());
    }

    #[test]
    fn darwin_rejects_learning() {
        let ctx = EvalContext::sequential(1);
        assert!(evaluate(
            &genome(),
            &[1.0],
            InheritanceMode::darwin(),
            InnerSteps::fixed(3),
            &Quadratic,
            &ctx
        )
        .is_err());
    }

    #[test]
    fn baldwin_keeps_inherited_params() {
        let g = genome();
        let ctx = EvalContext::sequential(2);
        for n in [0, 1, 5] {
            let r = evaluate(
                &g,
                &[1.0, 2.0],
                InheritanceMode::baldwin(),
                InnerSteps::fixed(n),
                &Quadratic,
                &ctx,
            )
            .unwrap();
            assert_eq!(r.post_params, g.params);
            assert_eq!(
                r.fitness,
                r.per_episode.iter().map(|e| e.score).sum::<f64>()
            );
        }
    }

    #[test]
    fn lamarck_carries_parameters_between_episodes() {
        let g = genome();
        let ctx = EvalContext::sequential(3);
        let one = evaluate(
            &g,
            &[1.0],
            InheritanceMode::lamarck(),
            InnerSteps::fixed(2),
            &Quadratic,
            &ctx,
        )
        .unwrap();
        let two = evaluate(
            &g,
            &[1.0, 1.0],
            InheritanceMode::lamarck(),
            InnerSteps::fixed(2),
            &Quadratic,
            &ctx,
        )
        .unwrap();
        // step factor 1 - 2 * 0.1 = 0.8 per step, so the bias after k steps is 1 - 0.8^k
        assert!((one.post_params.values[1] - (1.0 - 0.8f64.powi(2))).abs() < 1e-12);
        assert!((two.post_params.values[1] - (1.0 - 0.8f64.powi(4))).abs() < 1e-12);
    }

    #[test]
    fn non_finite_episode_gets_the_floor() {
        struct Broken;
        impl Learner for Broken {
            type Task = ();
            fn episode(
                &self,
                _: &Genome,
                start: &ParamVector,
                _: &(),
                _: usize,
                _: &mut Rng64,
            ) -> Episode {
                Episode {
                    score: f64::NAN,
                    params: start.clone(),
                    gradient_steps: 0,
                }
            }
        }
        let mut ctx = EvalContext::sequential(4);
        ctx.episode_floor = -50.0;
        let r = evaluate(
            &genome(),
            &[(), ()],
            InheritanceMode::lamarck(),
            InnerSteps::fixed(1),
            &Broken,
            &ctx,
        )
        .unwrap();
        assert_eq!(r.fitness, -100.0);
        assert_eq!(r.floored_episodes, 2);
    }

    #[test]
    fn floor_sits_below_the_worst_fitness() {
        assert_eq!(episode_floor_from_worst(Some(-100.0), 10), -11.0);
        assert_eq!(episode_floor_from_worst(None, 10), DEFAULT_EPISODE_FLOOR);
    }

    #[test]
    fn inheritance_templates() {
        let g = genome();
        let ctx = EvalContext::sequential(5);
        let ids = GenomeIds::starting_at(100);
        let mut rng = rng_from(&[0]);

        let r = evaluate(
            &g,
            &[1.0],
            InheritanceMode::baldwin(),
            InnerSteps::fixed(3),
            &Quadratic,
            &ctx,
        )
        .unwrap();
        let quiet = MutationConfig {
            param_std: 0.0,
            ..Default::default()
        };
        let child = mutate(
            &inherit(&r, &g, InheritanceMode::baldwin()),
            &quiet,
            &ids,
            &mut rng,
        );
        assert_eq!(child.params, g.params);

        let pbt = InheritanceMode {
            kind: Inheritance::Lamarck,
            lamarck_mutate_params: false,
        };
        let r = evaluate(&g, &[1.0], pbt, InnerSteps::fixed(3), &Quadratic, &ctx).unwrap();
        let cfg = pbt.mutation_config(&MutationConfig::default());
        let child = mutate(&inherit(&r, &g, pbt), &cfg, &ids, &mut rng);
        assert_eq!(child.params, r.post_params);
        assert_ne!(child.params, g.params);
    }

    #[test]
    fn stochastic_step_count_is_per_lifetime() {
        let g = genome();
        let ctx = EvalContext::sequential(6);
        let steps = InnerSteps::Uniform { min: 1, max: 4 };
        let r = evaluate(
            &g,
            &[1.0, 1.0, 1.0],
            InheritanceMode::baldwin(),
            steps,
            &Quadratic,
            &ctx,
        )
        .unwrap();
        assert_eq!(r.gradient_steps_taken % 3, 0);
        let per = r.gradient_steps_taken / 3;
        assert!((1..=4).contains(&per));
    }
}
