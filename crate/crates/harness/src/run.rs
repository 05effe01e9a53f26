//! Executes one experiment and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use baldwin::evolution::{
    draw_round, generational_step, mutate, snes_sample, snes_update, Genome, GenomeIds,
    Hyperparams, Member, PopulationState, SearchDistribution, LEARNING_RATE_RANGE,
};
use baldwin::lifetime::{episode_floor_from_worst, episode_rng, inherit, EvalContext, Inheritance};
use baldwin::maml::{maml_outer_step, pretrain_step, sine_split};
use baldwin::needle::{run_needle_population, sample_genome};
use baldwin::net::{NetworkArch, ParamVector};
use baldwin::rl::{initial_rl_genome, rl_fitness, task_list, RlLearner, RlTask};
use baldwin::rng::rng_from;
use baldwin::sine::{
    adaptation_curve, adapted_test_mse, initial_genome, sample_batch, sample_task,
    sample_task_data, sine_fitness_with, SineBatch, SineLearner, TaskData,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Preset};
use crate::error::HarnessError;
use crate::metrics::{generation_header, median, summarize_hyper, CsvLog, GenerationRecord};

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_HELD_OUT: u64 = 3;
const STREAM_EVOLVE: u64 = 4;
const STREAM_BASELINE: u64 = 5;

/// Inner steps shown in `adaptation.csv`.
pub const CURVE_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Score genomes (and MAML tasks) on the rayon pool.
    pub parallel: bool,
    /// Print a progress line per checkpoint to stderr.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            progress: false,
        }
    }
}

/// Median held-out test MSE after `k = 0..=10` inner steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub learning_rate: f64,
    pub model: Vec<f64>,
    /// A freshly initialized net adapted with the same learning rate.
    pub random_init: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Preset,
    pub seed: u64,
    pub mode: Option<String>,
    pub output_dir: PathBuf,
    pub generations: usize,
    pub evaluations: usize,
    pub best_history: Vec<f64>,
    pub median_history: Vec<f64>,
    pub lr_mean_history: Vec<f64>,
    pub q_frequency_history: Vec<f64>,
    pub held_out: Option<HeldOut>,
    pub elapsed_ms: u64,
}

struct Outputs {
    dir: PathBuf,
    generations: CsvLog,
    timing: CsvLog,
    adaptation: Option<CsvLog>,
    start: Instant,
    summary: RunSummary,
    progress: bool,
}

impl Outputs {
    fn create(cfg: &ExperimentConfig, dir: &Path, progress: bool) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let adaptation = if cfg.preset.is_sine() {
            Some(CsvLog::create(
                &dir.join("adaptation.csv"),
                &["generation", "model", "k", "mean_mse", "median_mse"],
            )?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            generations: CsvLog::create(&dir.join("generations.csv"), &generation_header())?,
            timing: CsvLog::create(&dir.join("timing.csv"), &["generation", "wall_ms"])?,
            adaptation,
            start: Instant::now(),
            summary: RunSummary {
                preset: cfg.preset,
                seed: cfg.seed,
                mode: cfg.mode_label().map(String::from),
                output_dir: dir.to_path_buf(),
                generations: 0,
                evaluations: 0,
                best_history: Vec::new(),
                median_history: Vec::new(),
                lr_mean_history: Vec::new(),
                q_frequency_history: Vec::new(),
                held_out: None,
                elapsed_ms: 0,
            },
            progress,
        })
    }

    fn record(&mut self, rec: &GenerationRecord) -> Result<(), HarnessError> {
        self.generations.write(&rec.to_row())?;
        let ms = self.start.elapsed().as_millis().to_string();
        self.timing.write(&[rec.generation.to_string(), ms])?;
        let s = &mut self.summary;
        s.generations = rec.generation + 1;
        s.evaluations = rec.evaluations;
        s.best_history.push(rec.best_fitness);
        s.median_history.push(rec.median_fitness);
        if let Some(h) = &rec.hyper {
            s.lr_mean_history.push(h.learning_rate.mean);
        }
        if let Some(q) = rec.q_frequency {
            s.q_frequency_history.push(q);
        }
        Ok(())
    }

    fn curve(
        &mut self,
        generation: usize,
        model: &str,
        curves: &[Vec<f64>],
    ) -> Result<Vec<f64>, HarnessError> {
        let mut medians = Vec::with_capacity(CURVE_STEPS + 1);
        for k in 0..=CURVE_STEPS {
            let at_k: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            let m = median(&at_k);
            medians.push(m);
            if let Some(log) = &mut self.adaptation {
                let mean = at_k.iter().sum::<f64>() / at_k.len() as f64;
                log.write(&[
                    generation.to_string(),
                    model.to_string(),
                    k.to_string(),
                    mean.to_string(),
                    m.to_string(),
                ])?;
            }
        }
        Ok(medians)
    }

    fn note(&self, msg: impl FnOnce() -> String) {
        if self.progress {
            eprintln!("[{:>7.1}s] {}", self.start.elapsed().as_secs_f64(), msg());
        }
    }

    fn finish(mut self) -> Result<RunSummary, HarnessError> {
        self.summary.elapsed_ms = self.start.elapsed().as_millis() as u64;
        write_json(&self.dir.join("summary.json"), &self.summary)?;
        Ok(self.summary)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

fn map_all<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Runs `cfg`, writing `run.json`, `generations.csv`, `timing.csv`,
/// `summary.json` and the preset's plot data into the output directory.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let dir = cfg.resolved_output_dir();
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(dir.clone());
    let mut out = Outputs::create(&resolved, &dir, opts.progress)?;
    fs::write(dir.join("run.json"), resolved.to_json() + "\n")
        .map_err(|e| HarnessError::io(dir.join("run.json"), e))?;
    match cfg.preset {
        Preset::SineGa => run_sine_ga(&resolved, opts, &mut out)?,
        Preset::SineSnes => run_sine_snes(&resolved, opts, &mut out)?,
        Preset::SineMaml | Preset::SinePretrained => run_sine_gradient(&resolved, opts, &mut out)?,
        Preset::RlGoalvel | Preset::RlGoaldir => run_rl(&resolved, opts, &mut out)?,
        Preset::Needle => run_needle(&resolved, opts, &mut out)?,
    }
    out.finish()
}

fn held_out_tasks(cfg: &ExperimentConfig) -> Vec<TaskData> {
    let mut rng = rng_from(&[cfg.seed, STREAM_HELD_OUT]);
    (0..cfg.held_out_tasks)
        .map(|_| {
            let t = sample_task(&cfg.sine, &mut rng);
            sample_task_data(t, &cfg.sine, &mut rng)
        })
        .collect()
}

fn curves(
    arch: &NetworkArch,
    params: &ParamVector,
    lr: f64,
    tasks: &[TaskData],
    parallel: bool,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    map_all(tasks, parallel, |t| {
        adaptation_curve(arch, params, lr, t, CURVE_STEPS, None)
    })
    .into_iter()
    .map(|r| r.map_err(HarnessError::from))
    .collect()
}

fn batch_for(cfg: &ExperimentConfig, generation: usize) -> SineBatch {
    sample_batch(
        &cfg.sine,
        &mut rng_from(&[cfg.seed, STREAM_BATCH, generation as u64]),
    )
}

/// Held-out curves of the final model and of a fresh N(0, init_std) net given
/// the same learning rate.
fn finish_sine(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
    generation: usize,
    params: &ParamVector,
    lr: f64,
    held: &[TaskData],
) -> Result<(), HarnessError> {
    let arch = NetworkArch::sine_regressor();
    let model = out.curve(
        generation,
        model_name(cfg.preset),
        &curves(&arch, params, lr, held, opts.parallel)?,
    )?;
    let fresh = ParamVector::gaussian(
        &arch,
        cfg.init_std,
        &mut rng_from(&[cfg.seed, STREAM_BASELINE]),
    );
    let random_init = out.curve(
        generation,
        "random-init",
        &curves(&arch, &fresh, lr, held, opts.parallel)?,
    )?;
    out.summary.held_out = Some(HeldOut {
        learning_rate: lr,
        model,
        random_init,
    });
    Ok(())
}

fn model_name(p: Preset) -> &'static str {
    match p {
        Preset::SineMaml => "maml",
        Preset::SinePretrained => "pretrained",
        _ => "evolved",
    }
}

fn is_checkpoint(cfg: &ExperimentConfig, g: usize) -> bool {
    g.is_multiple_of(cfg.checkpoint_every) && g + 1 < cfg.generations
}

fn run_sine_ga(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
) -> Result<(), HarnessError> {
    let arch = NetworkArch::sine_regressor();
    let learner = SineLearner { arch: arch.clone() };
    let ctx = EvalContext::sequential(cfg.seed);
    let ids = GenomeIds::default();
    let mut rng = rng_from(&[cfg.seed, STREAM_INIT]);
    let genomes = (0..cfg.population)
        .map(|_| initial_genome(&arch, cfg.init_std, &ids, &mut rng))
        .collect();
    let mut pop = PopulationState::new(genomes, cfg.seed);
    let mut rng = rng_from(&[cfg.seed, STREAM_EVOLVE]);
    let held = held_out_tasks(cfg);
    for g in 0..cfg.generations {
        let batch = batch_for(cfg, g);
        let fits = map_all(&pop.members, opts.parallel, |m| {
            sine_fitness_with(&learner, &m.genome, &batch, cfg.n_inner, &ctx)
        });
        for (m, f) in pop.members.iter_mut().zip(fits) {
            m.fitness = Some(f?);
        }
        let rec = population_record(&pop, g, (g + 1) * cfg.population, |m| m.hyper);
        out.record(&rec)?;
        let best = &pop.members[pop.best_index().expect("non-empty")].genome;
        if is_checkpoint(cfg, g) {
            let c = out.curve(
                g,
                "evolved",
                &curves(
                    &arch,
                    &best.params,
                    best.hyper.learning_rate,
                    &held,
                    opts.parallel,
                )?,
            )?;
            out.note(|| {
                format!(
                    "generation {g}: best {:.4} median {:.4} held-out 5-step {:.4}",
                    rec.best_fitness,
                    rec.median_fitness,
                    c[5.min(CURVE_STEPS)]
                )
            });
        }
        if g + 1 == cfg.generations {
            let (params, lr) = (best.params.clone(), best.hyper.learning_rate);
            return finish_sine(cfg, opts, out, g, &params, lr, &held);
        }
        pop = generational_step(&pop, &cfg.generational, &mut rng, |p, _, r| {
            mutate(p, &cfg.mutation, &ids, r)
        })?;
    }
    Ok(())
}

fn population_record<G>(
    pop: &PopulationState<G>,
    generation: usize,
    evaluations: usize,
    hyper: impl Fn(&G) -> Hyperparams,
) -> GenerationRecord {
    let f: Vec<f64> = pop
        .members
        .iter()
        .map(|m| m.fitness.unwrap_or(f64::NAN))
        .collect();
    let hs: Vec<Hyperparams> = pop.members.iter().map(|m| hyper(&m.genome)).collect();
    GenerationRecord {
        generation,
        evaluations,
        best_fitness: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        median_fitness: median(&f),
        hyper: Some(summarize_hyper(&hs)),
        q_frequency: None,
    }
}

fn lr_genome(id: u64, params: ParamVector, lr: f64) -> Genome {
    Genome::new(
        baldwin::evolution::GenomeId(id),
        params,
        Hyperparams {
            learning_rate: lr,
            ..Hyperparams::default()
        },
    )
}

fn run_sine_snes(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
) -> Result<(), HarnessError> {
    let arch = NetworkArch::sine_regressor();
    let learner = SineLearner { arch: arch.clone() };
    let ctx = EvalContext::sequential(cfg.seed);
    let mut rng = rng_from(&[cfg.seed, STREAM_INIT]);
    let template = ParamVector::gaussian(&arch, cfg.init_std, &mut rng);
    let n = template.len();
    let lr0 = Hyperparams::sample_initial(&mut rng).learning_rate;
    let mut mu = template.values.clone();
    mu.push(lr0.ln());
    let mut sigma = vec![cfg.snes.sigma_params; n];
    sigma.push(cfg.snes.sigma_log_lr);
    let mut dist = SearchDistribution::new(mu, sigma)?;
    let (lo, hi) = LEARNING_RATE_RANGE;
    let decode = |v: &[f64], id: u64| {
        lr_genome(
            id,
            template.with_values(v[..n].to_vec()),
            v[n].exp().clamp(lo, hi),
        )
    };
    let mut rng = rng_from(&[cfg.seed, STREAM_EVOLVE]);
    let held = held_out_tasks(cfg);
    let mut next_id = 0u64;
    for g in 0..cfg.generations {
        let batch = batch_for(cfg, g);
        let samples = snes_sample(&dist, cfg.population, &mut rng);
        let genomes: Vec<Genome> = samples
            .iter()
            .map(|s| {
                next_id += 1;
                decode(&s.theta, next_id)
            })
            .collect();
        let fits: Vec<f64> = map_all(&genomes, opts.parallel, |gn| {
            sine_fitness_with(&learner, gn, &batch, cfg.n_inner, &ctx)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let pop = PopulationState {
            members: genomes
                .into_iter()
                .zip(&fits)
                .map(|(genome, &f)| Member {
                    genome,
                    fitness: Some(f),
                })
                .collect(),
            generation: g as u64,
            rng_seed: cfg.seed,
        };
        let rec = population_record(&pop, g, (g + 1) * cfg.population, |m| m.hyper);
        out.record(&rec)?;
        dist = snes_update(&dist, &samples, &fits)?;
        let mean = decode(&dist.mu, 0);
        if is_checkpoint(cfg, g) {
            let c = out.curve(
                g,
                "evolved",
                &curves(
                    &arch,
                    &mean.params,
                    mean.hyper.learning_rate,
                    &held,
                    opts.parallel,
                )?,
            )?;
            out.note(|| {
                format!(
                    "generation {g}: best {:.4} median {:.4} held-out 5-step {:.4}",
                    rec.best_fitness,
                    rec.median_fitness,
                    c[5.min(CURVE_STEPS)]
                )
            });
        }
        if g + 1 == cfg.generations {
            return finish_sine(
                cfg,
                opts,
                out,
                g,
                &mean.params,
                mean.hyper.learning_rate,
                &held,
            );
        }
    }
    Ok(())
}

/// MAML and pooled pretraining: one network trained by gradient steps, scored
/// each step on that step's shared batch.
fn run_sine_gradient(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
) -> Result<(), HarnessError> {
    let arch = NetworkArch::sine_regressor();
    let mut theta =
        ParamVector::gaussian(&arch, cfg.init_std, &mut rng_from(&[cfg.seed, STREAM_INIT]));
    let mut rng = rng_from(&[cfg.seed, STREAM_EVOLVE]);
    let held = held_out_tasks(cfg);
    let alpha = cfg.maml.alpha;
    let steps = cfg.maml.n_inner_eval;
    let per_step = match cfg.preset {
        Preset::SineMaml => cfg.maml.points_per_step(),
        _ => cfg.pretrain.meta_batch * 2 * cfg.pretrain.k_shot,
    };
    let hyper = Hyperparams {
        learning_rate: alpha,
        ..Hyperparams::default()
    };
    for g in 0..cfg.generations {
        let batch = batch_for(cfg, g);
        let mses: Vec<f64> = map_all(&batch.tasks, opts.parallel, |t| {
            adapted_test_mse(&arch, &theta, alpha, t, steps, None)
        })
        .into_iter()
        .map(|r| r.map(|(m, _)| m))
        .collect::<Result<_, _>>()?;
        let fitness = -mses.iter().sum::<f64>() / mses.len() as f64;
        let rec = GenerationRecord {
            generation: g,
            evaluations: (g + 1) * per_step,
            best_fitness: fitness,
            median_fitness: fitness,
            hyper: Some(summarize_hyper(&[hyper])),
            q_frequency: None,
        };
        out.record(&rec)?;
        if is_checkpoint(cfg, g) {
            let c = out.curve(
                g,
                model_name(cfg.preset),
                &curves(&arch, &theta, alpha, &held, opts.parallel)?,
            )?;
            out.note(|| {
                format!(
                    "step {g}: batch fitness {fitness:.4} held-out 5-step {:.4}",
                    c[5.min(CURVE_STEPS)]
                )
            });
        }
        if g + 1 == cfg.generations {
            return finish_sine(cfg, opts, out, g, &theta, alpha, &held);
        }
        theta = match cfg.preset {
            Preset::SineMaml => maml_outer_step(
                &arch,
                &theta,
                &cfg.maml,
                |r| sine_split(&cfg.sine, cfg.maml.k_shot, r),
                &mut rng,
                opts.parallel,
            )?,
            _ => pretrain_step(&arch, &theta, &cfg.pretrain, &cfg.sine, &mut rng)?,
        };
    }
    Ok(())
}

fn run_rl(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
) -> Result<(), HarnessError> {
    let family = cfg.preset.task_family().expect("RL preset");
    let learner = RlLearner::surrogate(cfg.env.clone(), cfg.a2c.clone())?;
    let mutation = cfg.mode.mutation_config(&cfg.mutation);
    let ids = GenomeIds::default();
    let mut rng = rng_from(&[cfg.seed, STREAM_INIT]);
    let initial: Vec<Genome> = (0..cfg.population)
        .map(|_| {
            initial_rl_genome(
                &learner.arch,
                cfg.env.actuators(),
                cfg.mask_enabled,
                &ids,
                &mut rng,
            )
        })
        .collect();

    let score = |genomes: &[Genome], floor: f64| -> Result<Vec<(Genome, f64)>, HarnessError> {
        let ctx = EvalContext {
            run_seed: cfg.seed,
            episode_floor: floor,
            parallel: false,
        };
        map_all(genomes, opts.parallel, |g| {
            let report = rl_fitness(g, family, cfg.mode, cfg.n_inner, &learner, &ctx)?;
            Ok((inherit(&report, g, cfg.mode), report.fitness))
        })
        .into_iter()
        .collect()
    };

    let floor = episode_floor_from_worst(None, task_list(family).len());
    let mut pop = PopulationState::new(Vec::new(), cfg.seed);
    for (genome, f) in score(&initial, floor)? {
        pop.members.push(Member {
            genome,
            fitness: Some(f),
        });
    }
    let mut evaluations = cfg.population;
    let mut generation = 0;
    let rec = population_record(&pop, generation, evaluations, |g| g.hyper);
    out.record(&rec)?;
    let mut rng = rng_from(&[cfg.seed, STREAM_EVOLVE]);
    while evaluations < cfg.evaluations {
        let k = cfg.round_size.min(cfg.evaluations - evaluations);
        let worst = pop
            .members
            .iter()
            .filter_map(|m| m.fitness)
            .fold(f64::INFINITY, f64::min);
        let floor = episode_floor_from_worst(Some(worst), task_list(family).len());
        let round = draw_round(&pop, &cfg.steady_state, k, &mut rng)?;
        let children: Vec<Genome> = round
            .iter()
            .map(|t| mutate(&pop.members[t.winner].genome, &mutation, &ids, &mut rng))
            .collect();
        for (t, (genome, f)) in round.iter().zip(score(&children, floor)?) {
            pop.members[t.loser] = Member {
                genome,
                fitness: Some(f),
            };
        }
        let before = evaluations / cfg.population;
        evaluations += k;
        if evaluations / cfg.population > before || evaluations == cfg.evaluations {
            generation += 1;
            let rec = population_record(&pop, generation, evaluations, |g| g.hyper);
            out.record(&rec)?;
            if generation % cfg.checkpoint_every == 0 {
                out.note(|| {
                    format!(
                        "{evaluations} evaluations: best {:.2} median {:.2}",
                        rec.best_fitness, rec.median_fitness
                    )
                });
            }
        }
    }
    let best = &pop.members[pop.best_index().expect("non-empty")].genome;
    velocity_trace(cfg, &learner, best, &out.dir)
}

/// Replays the best genome's evaluation episodes, recording velocity per step.
fn velocity_trace(
    cfg: &ExperimentConfig,
    learner: &RlLearner,
    best: &Genome,
    dir: &Path,
) -> Result<(), HarnessError> {
    let mut log = CsvLog::create(
        &dir.join("velocity_trace.csv"),
        &["episode", "task", "step", "velocity"],
    )?;
    let steps = cfg.n_inner.steps_for(cfg.seed, best.id.0);
    let mut params = best.params.clone();
    let family = cfg.preset.task_family().expect("RL preset");
    for (i, task) in task_list(family).iter().enumerate() {
        let mut rng = episode_rng(cfg.seed, best.id.0, i);
        let (ep, trace) = learner.run_episode(best, &params, task, steps, &mut rng, true);
        let label = match task {
            RlTask::GoalVelocity { target } => format!("velocity:{target}"),
            RlTask::GoalDirection { sign } => format!("direction:{sign}"),
        };
        for (s, v) in trace.velocities.iter().enumerate() {
            log.write(&[i.to_string(), label.clone(), s.to_string(), v.to_string()])?;
        }
        if cfg.mode.kind == Inheritance::Lamarck
            && ep.score.is_finite()
            && ep.params.values.iter().all(|v| v.is_finite())
        {
            params = ep.params;
        }
    }
    Ok(())
}

fn run_needle(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out: &mut Outputs,
) -> Result<(), HarnessError> {
    let mut rng = rng_from(&[cfg.seed, STREAM_INIT]);
    let initial = (0..cfg.population)
        .map(|_| sample_genome(&cfg.needle, &mut rng))
        .collect();
    let mut failure = None;
    run_needle_population(
        initial,
        &cfg.needle,
        cfg.mode.kind,
        cfg.generations,
        cfg.seed,
        opts.parallel,
        |r| {
            if failure.is_some() {
                return;
            }
            let rec = GenerationRecord {
                generation: r.generation,
                evaluations: r.evaluations,
                best_fitness: r.best,
                median_fitness: r.median,
                hyper: None,
                q_frequency: Some(r.q_frequency),
            };
            if let Err(e) = out.record(&rec) {
                failure = Some(e);
            } else if r.generation % cfg.checkpoint_every == 0 {
                out.note(|| {
                    format!(
                        "generation {}: best {:.3} ? frequency {:.3}",
                        r.generation, r.best, r.q_frequency
                    )
                });
            }
        },
    )?;
    failure.map_or(Ok(()), Err)
}
