//! A one-dimensional locomotion surrogate, its goal-velocity and
//! goal-direction task families, and an advantage actor-critic inner learner
//! acting through evolvable macro-actions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evolution::{Genome, GenomeIds, Hyperparams};
use crate::lifetime::{
    evaluate, Episode, EvalContext, EvalReport, InheritanceMode, InnerSteps, Learner,
};
use crate::net::{
    backward, forward_batch, infer_into, sgd_step, InferBuffers, Mask, NetworkArch, ParamVector,
};
use crate::rng::Rng64;
use crate::tensor::Matrix;

pub const N_ACTIONS: usize = 12;
pub const OBS_DIM: usize = 3;
pub const EPISODES_PER_EVALUATION: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Actuator gains; their count is the number of torques per action.
    pub gains: Vec<f64>,
    pub damping: f64,
    pub dt: f64,
    pub episode_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            gains: vec![1.5, 1.0, 0.5],
            damping: 0.01,
            dt: 0.01,
            episode_steps: 3000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() || self.gains.iter().any(|g| !g.is_finite()) {
            return Err(contract("gains must be a non-empty list of finite values"));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(contract(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.episode_steps == 0 {
            return Err(contract("dt and episode_steps must be positive"));
        }
        Ok(())
    }

    pub fn actuators(&self) -> usize {
        self.gains.len()
    }

    /// Fixed point of the velocity recursion under full drive; no reachable
    /// velocity exceeds it in magnitude.
    pub fn v_max(&self) -> f64 {
        self.dt * self.gains.iter().map(|g| g.abs()).sum::<f64>() * 1f64.tanh() / self.damping
    }
}

/// Anything an episode can be rolled out in.
pub trait Environment: Clone + Send + Sync {
    fn reset(&mut self);
    fn actuators(&self) -> usize;
    fn observe(&self, out: &mut [f64; OBS_DIM]);
    /// Applies `torques` for one step and returns the new velocity.
    fn step(&mut self, torques: &[f64]) -> f64;
    fn velocity(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEnv {
    pub cfg: EnvConfig,
    pub position: f64,
    pub velocity: f64,
    pub step_count: usize,
    /// Torques that arrived non-finite and were zeroed.
    pub bad_torques: usize,
}

impl SurrogateEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            position: 0.0,
            velocity: 0.0,
            step_count: 0,
            bad_torques: 0,
        })
    }
}

impl Environment for SurrogateEnv {
    fn reset(&mut self) {
        self.position = 0.0;
        self.velocity = 0.0;
        self.step_count = 0;
        self.bad_torques = 0;
    }

    fn actuators(&self) -> usize {
        self.cfg.gains.len()
    }

    fn observe(&self, out: &mut [f64; OBS_DIM]) {
        out[0] = (self.position / 10.0).tanh();
        out[1] = self.velocity / 2.0;
        out[2] = self.step_count as f64 / self.cfg.episode_steps as f64;
    }

    fn step(&mut self, torques: &[f64]) -> f64 {
        let mut drive = 0.0;
        for (w, &t) in self.cfg.gains.iter().zip(torques) {
            let t = if t.is_finite() {
                t.clamp(-1.0, 1.0)
            } else {
                self.bad_torques += 1;
                0.0
            };
            drive += w * t.tanh();
        }
        self.velocity = self.velocity * (1.0 - self.cfg.damping) + self.cfg.dt * drive;
        self.position += self.cfg.dt * self.velocity;
        self.step_count += 1;
        self.velocity
    }

    fn velocity(&self) -> f64 {
        self.velocity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    GoalVelocity,
    GoalDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RlTask {
    GoalVelocity { target: f64 },
    GoalDirection { sign: f64 },
}

impl RlTask {
    pub fn reward(&self, velocity: f64) -> f64 {
        match *self {
            RlTask::GoalVelocity { target } => -(velocity - target).abs(),
            RlTask::GoalDirection { sign } => sign * velocity,
        }
    }
}

/// The episodes of one fitness evaluation: targets 0.2 to 2.0 ascending, or
/// directions alternating forward and backward.
pub fn task_list(family: TaskFamily) -> Vec<RlTask> {
    (0..EPISODES_PER_EVALUATION)
        .map(|i| match family {
            TaskFamily::GoalVelocity => RlTask::GoalVelocity {
                target: 0.2 * (i + 1) as f64,
            },
            TaskFamily::GoalDirection => RlTask::GoalDirection {
                sign: if i % 2 == 0 { 1.0 } else { -1.0 },
            },
        })
        .collect()
}

/// Samples an action from `policy` and returns it with its clamped macro row.
pub fn select_action<R: Rng + ?Sized>(
    policy: &[f64],
    macros: &Matrix,
    rng: &mut R,
    torques: &mut Vec<f64>,
) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut action = policy.len() - 1;
    for (i, p) in policy.iter().enumerate() {
        acc += p;
        if u < acc {
            action = i;
            break;
        }
    }
    torques.clear();
    torques.extend(macros.row_slice(action).iter().map(|t| t.clamp(-1.0, 1.0)));
    action
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cConfig {
    pub rollout_len: usize,
    pub value_loss_coeff: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            rollout_len: 40,
            value_loss_coeff: 0.5,
        }
    }
}

/// One rollout segment. `bootstrap` is the value estimate of the state after
/// the last step, or 0 when the episode ended there.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub observations: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub bootstrap: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.rewards.clear();
        self.bootstrap = 0.0;
    }
}

/// Discounted returns `R_t = r_t + gamma R_{t+1}` with `R_T = bootstrap`.
pub fn n_step_returns(rewards: &[f64], bootstrap: f64, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        out[t] = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct A2cStats {
    pub loss: f64,
    /// Mean policy entropy per step.
    pub entropy: f64,
    pub applied: bool,
}

/// One SGD step on the summed actor-critic loss of `rollout`. A non-finite
/// loss or gradient leaves the parameters unchanged with `applied = false`.
pub fn a2c_update(
    arch: &NetworkArch,
    params: &ParamVector,
    rollout: &Rollout,
    hyper: &Hyperparams,
    cfg: &A2cConfig,
    mask: Option<&Mask>,
) -> Result<(ParamVector, A2cStats)> {
    let t_len = rollout.len();
    if t_len == 0 || rollout.observations.len() != t_len || rollout.rewards.len() != t_len {
        return Err(contract(
            "rollout needs matching, non-empty observations, actions and rewards",
        ));
    }
    let (pi_head, v_head) = match (arch.head_index("policy"), arch.head_index("value")) {
        (Some(p), Some(v)) => (p, v),
        _ => {
            return Err(contract(
                "actor-critic network needs `policy` and `value` heads",
            ))
        }
    };
    let n_actions = arch.heads[pi_head].output_dim;
    if let Some(&bad) = rollout.actions.iter().find(|&&a| a >= n_actions) {
        return Err(contract(format!("action {bad} outside 0..{n_actions}")));
    }

    let obs: Vec<f64> = rollout.observations.iter().flatten().copied().collect();
    let mut rec = forward_batch(arch, params, &Matrix::new(t_len, OBS_DIM, obs)?)?;
    let returns = n_step_returns(&rollout.rewards, rollout.bootstrap, hyper.discount);
    let values = rec.tape.value(rec.heads[v_head].out).data().to_vec();

    let mut weights = vec![0.0; t_len * n_actions];
    for t in 0..t_len {
        weights[t * n_actions + rollout.actions[t]] = returns[t] - values[t];
    }
    let tape = &mut rec.tape;
    let logp = tape.log_softmax(rec.heads[pi_head].pre);
    let w = tape.leaf(Matrix::new(t_len, n_actions, weights)?);
    let weighted = tape.mul(logp, w)?;
    let pg = tape.sum_all(weighted);

    let r = tape.leaf(Matrix::column(&returns));
    let diff = tape.sub(rec.heads[v_head].out, r)?;
    let sq = tape.mul(diff, diff)?;
    let value_loss = tape.sum_all(sq);

    let probs = tape.exp(logp);
    let plogp = tape.mul(probs, logp)?;
    let neg_entropy = tape.sum_all(plogp);

    let a = tape.scale(pg, -1.0);
    let b = tape.scale(value_loss, cfg.value_loss_coeff);
    let c = tape.scale(neg_entropy, hyper.entropy_scale);
    let ab = tape.add(a, b)?;
    let loss = tape.add(ab, c)?;

    let loss_value = tape.value(loss).data()[0];
    let entropy = -tape.value(neg_entropy).data()[0] / t_len as f64;
    let skipped = |loss| A2cStats {
        loss,
        entropy,
        applied: false,
    };
    if !loss_value.is_finite() {
        return Ok((params.clone(), skipped(loss_value)));
    }
    let grad = backward(&mut rec, loss)?;
    match sgd_step(params, &grad, hyper.learning_rate, mask) {
        Ok(next) => Ok((
            next,
            A2cStats {
                loss: loss_value,
                entropy,
                applied: true,
            },
        )),
        Err(crate::Error::NonFinite { .. }) => Ok((params.clone(), skipped(loss_value))),
        Err(e) => Err(e),
    }
}

/// Per-episode bookkeeping beyond the score.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub env_steps: usize,
    pub updates: usize,
    pub skipped_updates: usize,
    pub velocities: Vec<f64>,
}

/// A2C lifetime in environment `E`: one update per rollout, at most
/// `max_steps` updates per episode.
#[derive(Clone, Debug)]
pub struct RlLearner<E: Environment = SurrogateEnv> {
    pub arch: NetworkArch,
    pub env: E,
    pub a2c: A2cConfig,
    pub episode_steps: usize,
}

impl RlLearner<SurrogateEnv> {
    pub fn surrogate(env: EnvConfig, a2c: A2cConfig) -> Result<Self> {
        if a2c.rollout_len == 0 || !env.episode_steps.is_multiple_of(a2c.rollout_len) {
            return Err(contract(format!(
                "rollout length {} must divide the episode length {}",
                a2c.rollout_len, env.episode_steps
            )));
        }
        Ok(Self {
            arch: NetworkArch::actor_critic(OBS_DIM, N_ACTIONS),
            episode_steps: env.episode_steps,
            env: SurrogateEnv::new(env)?,
            a2c,
        })
    }
}

impl<E: Environment> RlLearner<E> {
    /// Updates per episode when learning is unrestricted.
    pub fn updates_per_episode(&self) -> usize {
        self.episode_steps / self.a2c.rollout_len
    }

    /// Runs one episode; records velocities when `record_velocity` is set.
    pub fn run_episode(
        &self,
        genome: &Genome,
        start: &ParamVector,
        task: &RlTask,
        max_updates: usize,
        rng: &mut Rng64,
        record_velocity: bool,
    ) -> (Episode, EpisodeTrace) {
        let macros = match &genome.macro_actions {
            Some(m) => m.clone(),
            None => Matrix::zeros(N_ACTIONS, self.env.actuators()),
        };
        let pi_head = self.arch.head_index("policy").unwrap_or(0);
        let v_head = self.arch.head_index("value").unwrap_or(1);
        let mut env = self.env.clone();
        env.reset();
        let mut params = start.clone();
        let mut buf = InferBuffers::default();
        let mut obs = [0.0; OBS_DIM];
        let mut torques = Vec::with_capacity(self.env.actuators());
        let mut rollout = Rollout::default();
        let mut trace = EpisodeTrace::default();
        let mut total = 0.0;

        for step in 0..self.episode_steps {
            env.observe(&mut obs);
            infer_into(&self.arch, &params, &obs, &mut buf);
            let action = select_action(&buf.heads[pi_head], &macros, rng, &mut torques);
            let v = env.step(&torques);
            let r = task.reward(v);
            total += r;
            trace.env_steps += 1;
            if record_velocity {
                trace.velocities.push(v);
            }
            if trace.updates >= max_updates {
                continue;
            }
            rollout.observations.push(obs);
            rollout.actions.push(action);
            rollout.rewards.push(r);
            if rollout.len() == self.a2c.rollout_len {
                rollout.bootstrap = if step + 1 == self.episode_steps {
                    0.0
                } else {
                    env.observe(&mut obs);
                    infer_into(&self.arch, &params, &obs, &mut buf);
                    buf.heads[v_head][0]
                };
                match a2c_update(
                    &self.arch,
                    &params,
                    &rollout,
                    &genome.hyper,
                    &self.a2c,
                    genome.mask.as_ref(),
                ) {
                    Ok((next, stats)) => {
                        params = next;
                        if !stats.applied {
                            trace.skipped_updates += 1;
                        }
                    }
                    Err(_) => trace.skipped_updates += 1,
                }
                trace.updates += 1;
                rollout.clear();
            }
        }
        (
            Episode {
                score: total,
                params,
                gradient_steps: trace.updates,
            },
            trace,
        )
    }
}

impl<E: Environment> Learner for RlLearner<E> {
    type Task = RlTask;

    fn episode(
        &self,
        genome: &Genome,
        start: &ParamVector,
        task: &RlTask,
        max_steps: usize,
        rng: &mut Rng64,
    ) -> Episode {
        self.run_episode(genome, start, task, max_steps, rng, false)
            .0
    }
}

/// Sum of episode rewards over the family's ten tasks.
pub fn rl_fitness<E: Environment>(
    genome: &Genome,
    family: TaskFamily,
    mode: InheritanceMode,
    n_inner: InnerSteps,
    learner: &RlLearner<E>,
    ctx: &EvalContext,
) -> Result<EvalReport> {
    evaluate(genome, &task_list(family), mode, n_inner, learner, ctx)
}

/// Generation-0 RL genome: He-normal network, log-uniform hyperparameters,
/// macro-actions uniform in [-1, 1], and optionally a fully plastic mask.
pub fn initial_rl_genome<R: Rng + ?Sized>(
    arch: &NetworkArch,
    actuators: usize,
    with_mask: bool,
    ids: &GenomeIds,
    rng: &mut R,
) -> Genome {
    let params = ParamVector::he_normal(arch, rng);
    let hyper = Hyperparams::sample_initial(rng);
    let macros: Vec<f64> = (0..N_ACTIONS * actuators)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let mut g = Genome::new(ids.next_id(), params, hyper);
    g.macro_actions = Some(Matrix::new(N_ACTIONS, actuators, macros).expect("sized above"));
    if with_mask {
        g.mask = Some(Mask::all(arch.param_count(), true));
    }
    g
}
