//! Sinusoid regression: the task distribution, few-shot adaptation and the
//! fitness the evolutionary optimizers maximise.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::{Genome, GenomeIds, Hyperparams};
use crate::lifetime::{evaluate, Episode, EvalContext, InheritanceMode, InnerSteps, Learner};
use crate::net::{backward, forward_batch, mse_on, sgd_step, Mask, NetworkArch, ParamVector};
use crate::rng::Rng64;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineConfig {
    pub n_tasks: usize,
    pub k_shot: usize,
    pub amplitude_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SineConfig {
    fn default() -> Self {
        Self {
            n_tasks: 25,
            k_shot: 10,
            amplitude_range: (0.1, 5.0),
            phase_range: (0.0, PI),
            x_range: (-5.0, 5.0),
        }
    }
}

/// One task with its K-shot train and test samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task: SineTask,
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
}

/// The data every genome of one generation is scored on.
#[derive(Clone, Debug, PartialEq)]
pub struct SineBatch {
    pub tasks: Vec<TaskData>,
}

impl SineBatch {
    /// Number of labelled points in the batch.
    pub fn points(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| t.train_x.len() + t.test_x.len())
            .sum()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

pub fn sample_task<R: Rng + ?Sized>(cfg: &SineConfig, rng: &mut R) -> SineTask {
    SineTask {
        amplitude: uniform(rng, cfg.amplitude_range),
        phase: uniform(rng, cfg.phase_range),
    }
}

/// `k` inputs drawn uniformly from the configured range, labelled by `task`.
pub fn sample_points<R: Rng + ?Sized>(
    task: &SineTask,
    k: usize,
    cfg: &SineConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..k).map(|_| uniform(rng, cfg.x_range)).collect();
    let ys = xs.iter().map(|&x| task.eval(x)).collect();
    (xs, ys)
}

pub fn sample_task_data<R: Rng + ?Sized>(
    task: SineTask,
    cfg: &SineConfig,
    rng: &mut R,
) -> TaskData {
    let (train_x, train_y) = sample_points(&task, cfg.k_shot, cfg, rng);
    let (test_x, test_y) = sample_points(&task, cfg.k_shot, cfg, rng);
    TaskData {
        task,
        train_x,
        train_y,
        test_x,
        test_y,
    }
}

pub fn sample_batch<R: Rng + ?Sized>(cfg: &SineConfig, rng: &mut R) -> SineBatch {
    let tasks = (0..cfg.n_tasks)
        .map(|_| {
            let task = sample_task(cfg, rng);
            sample_task_data(task, cfg, rng)
        })
        .collect();
    SineBatch { tasks }
}

/// Mean squared error of the network's predictions on `(xs, ys)`.
pub fn regression_mse(
    arch: &NetworkArch,
    params: &ParamVector,
    xs: &[f64],
    ys: &[f64],
) -> Result<f64> {
    let rec = forward_batch(arch, params, &Matrix::column(xs))?;
    let pred = rec.tape.value(rec.heads[0].out).data();
    Ok(pred
        .iter()
        .zip(ys)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / ys.len().max(1) as f64)
}

/// One plain SGD step on the training MSE.
pub fn train_step(
    arch: &NetworkArch,
    params: &ParamVector,
    xs: &[f64],
    ys: &[f64],
    lr: f64,
    mask: Option<&Mask>,
) -> Result<ParamVector> {
    let mut rec = forward_batch(arch, params, &Matrix::column(xs))?;
    let out = rec.heads[0].out;
    let loss = mse_on(&mut rec.tape, out, ys)?;
    let grad = backward(&mut rec, loss)?;
    sgd_step(params, &grad, lr, mask)
}

/// Test MSE after `k = 0..=max_steps` SGD steps on the training split.
pub fn adaptation_curve(
    arch: &NetworkArch,
    params: &ParamVector,
    lr: f64,
    data: &TaskData,
    max_steps: usize,
    mask: Option<&Mask>,
) -> Result<Vec<f64>> {
    let mut p = params.clone();
    let mut curve = Vec::with_capacity(max_steps + 1);
    curve.push(regression_mse(arch, &p, &data.test_x, &data.test_y)?);
    for _ in 0..max_steps {
        p = train_step(arch, &p, &data.train_x, &data.train_y, lr, mask)?;
        curve.push(regression_mse(arch, &p, &data.test_x, &data.test_y)?);
    }
    Ok(curve)
}

/// Test MSE after exactly `n_steps` SGD steps on the training split.
pub fn adapted_test_mse(
    arch: &NetworkArch,
    params: &ParamVector,
    lr: f64,
    data: &TaskData,
    n_steps: usize,
    mask: Option<&Mask>,
) -> Result<(f64, ParamVector)> {
    let mut p = params.clone();
    for _ in 0..n_steps {
        p = train_step(arch, &p, &data.train_x, &data.train_y, lr, mask)?;
    }
    Ok((regression_mse(arch, &p, &data.test_x, &data.test_y)?, p))
}

/// Few-shot regression lifetime: SGD at the genome's learning rate, scored by
/// negated test MSE.
#[derive(Clone, Debug)]
pub struct SineLearner {
    pub arch: NetworkArch,
}

impl Default for SineLearner {
    fn default() -> Self {
        Self {
            arch: NetworkArch::sine_regressor(),
        }
    }
}

impl Learner for SineLearner {
    type Task = TaskData;

    fn episode(
        &self,
        genome: &Genome,
        start: &ParamVector,
        task: &TaskData,
        max_steps: usize,
        _rng: &mut Rng64,
    ) -> Episode {
        match adapted_test_mse(
            &self.arch,
            start,
            genome.hyper.learning_rate,
            task,
            max_steps,
            genome.mask.as_ref(),
        ) {
            Ok((mse, params)) => Episode {
                score: -mse,
                params,
                gradient_steps: max_steps,
            },
            Err(_) => Episode {
                score: f64::NAN,
                params: start.clone(),
                gradient_steps: 0,
            },
        }
    }
}

/// Negated mean post-adaptation test MSE over the batch, with the genome's own
/// parameters left untouched.
pub fn sine_fitness(genome: &Genome, batch: &SineBatch, n_inner: usize) -> Result<f64> {
    sine_fitness_with(
        &SineLearner::default(),
        genome,
        batch,
        InnerSteps::fixed(n_inner),
        &EvalContext::sequential(0),
    )
}

pub fn sine_fitness_with<L: Learner<Task = TaskData>>(
    learner: &L,
    genome: &Genome,
    batch: &SineBatch,
    n_inner: InnerSteps,
    ctx: &EvalContext,
) -> Result<f64> {
    let report = evaluate(
        genome,
        &batch.tasks,
        InheritanceMode::baldwin(),
        n_inner,
        learner,
        ctx,
    )?;
    Ok(report.fitness / batch.tasks.len() as f64)
}

/// Generation-0 genome: every weight and bias `N(0, init_std)`, learning rate
/// log-uniform over its range.
pub fn initial_genome<R: Rng + ?Sized>(
    arch: &NetworkArch,
    init_std: f64,
    ids: &GenomeIds,
    rng: &mut R,
) -> Genome {
    let params = ParamVector::gaussian(arch, init_std, rng);
    let hyper = Hyperparams::sample_initial(rng);
    Genome::new(ids.next_id(), params, hyper)
}
