use std::fmt;
use std::path::PathBuf;

use baldwin::evolution::{GenerationalConfig, MutationConfig, Selection, SteadyStateConfig};
use baldwin::lifetime::{Inheritance, InheritanceMode, InnerSteps};
use baldwin::maml::{MamlConfig, PretrainConfig};
use baldwin::needle::NeedleConfig;
use baldwin::rl::{A2cConfig, EnvConfig, TaskFamily};
use baldwin::sine::SineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    SineGa,
    SineSnes,
    SineMaml,
    SinePretrained,
    RlGoalvel,
    RlGoaldir,
    Needle,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::SineGa,
        Preset::SineSnes,
        Preset::SineMaml,
        Preset::SinePretrained,
        Preset::RlGoalvel,
        Preset::RlGoaldir,
        Preset::Needle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SineGa => "sine-ga",
            Preset::SineSnes => "sine-snes",
            Preset::SineMaml => "sine-maml",
            Preset::SinePretrained => "sine-pretrained",
            Preset::RlGoalvel => "rl-goalvel",
            Preset::RlGoaldir => "rl-goaldir",
            Preset::Needle => "needle",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Preset::SineGa => {
                "generational GA (pop 100, rank selection) evolving sine-net init and learning rate"
            }
            Preset::SineSnes => "separable NES (pop 25) over sine-net init and log learning rate",
            Preset::SineMaml => "MAML with plain gradient-descent outer loop on the sine family",
            Preset::SinePretrained => "pooled-SGD regression across sine tasks, no meta-objective",
            Preset::RlGoalvel => "steady-state GA over A2C learners on the goal-velocity surrogate",
            Preset::RlGoaldir => {
                "steady-state GA over A2C learners on the goal-direction surrogate"
            }
            Preset::Needle => "20-allele needle search, learning versus no learning",
        }
    }

    /// Runs are comparable only within a family.
    pub fn family(self) -> &'static str {
        match self {
            Preset::SineGa | Preset::SineSnes | Preset::SineMaml | Preset::SinePretrained => "sine",
            Preset::RlGoalvel => "rl-goalvel",
            Preset::RlGoaldir => "rl-goaldir",
            Preset::Needle => "needle",
        }
    }

    pub fn is_sine(self) -> bool {
        self.family() == "sine"
    }

    pub fn task_family(self) -> Option<TaskFamily> {
        match self {
            Preset::RlGoalvel => Some(TaskFamily::GoalVelocity),
            Preset::RlGoaldir => Some(TaskFamily::GoalDirection),
            _ => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnesSettings {
    /// Initial per-coordinate std of the network parameters.
    pub sigma_params: f64,
    /// Initial std of the log learning rate.
    pub sigma_log_lr: f64,
}

impl Default for SnesSettings {
    fn default() -> Self {
        Self {
            sigma_params: 0.1,
            sigma_log_lr: 0.2,
        }
    }
}

/// A complete experiment description. Every field has a preset-dependent
/// default; a config file only needs `preset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub mode: InheritanceMode,
    pub mask_enabled: bool,
    /// Generations for GA, SNES and needle runs; outer steps for MAML and
    /// pretraining.
    pub generations: usize,
    /// Evaluation budget of the steady-state RL runs.
    pub evaluations: usize,
    pub population: usize,
    pub n_inner: InnerSteps,
    /// Std of the generation-0 sine-net weights.
    pub init_std: f64,
    pub held_out_tasks: usize,
    /// Generations between adaptation-curve checkpoints.
    pub checkpoint_every: usize,
    /// Offspring scored together per steady-state round.
    pub round_size: usize,
    /// Defaults to `runs/<preset>[-<mode>]-seed<seed>`.
    pub output_dir: Option<PathBuf>,
    pub snes: SnesSettings,
    pub sine: SineConfig,
    pub mutation: MutationConfig,
    pub generational: GenerationalConfig,
    pub steady_state: SteadyStateConfig,
    pub maml: MamlConfig,
    pub pretrain: PretrainConfig,
    pub env: EnvConfig,
    pub a2c: A2cConfig,
    pub needle: NeedleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::SineGa,
            seed: 0,
            mode: InheritanceMode::baldwin(),
            mask_enabled: false,
            generations: 2000,
            evaluations: 20_000,
            population: 100,
            n_inner: InnerSteps::fixed(5),
            init_std: 0.01,
            held_out_tasks: 20,
            checkpoint_every: 200,
            round_size: 10,
            output_dir: None,
            snes: SnesSettings::default(),
            sine: SineConfig::default(),
            mutation: MutationConfig::default(),
            generational: GenerationalConfig::default(),
            steady_state: SteadyStateConfig::default(),
            maml: MamlConfig::default(),
            pretrain: PretrainConfig::default(),
            env: EnvConfig::default(),
            a2c: A2cConfig::default(),
            needle: NeedleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `preset`; `mode` matters for the RL and needle presets.
    pub fn preset(preset: Preset, mode: InheritanceMode) -> Self {
        let mut c = Self {
            preset,
            mode,
            ..Self::default()
        };
        match preset {
            Preset::SineGa => {
                c.generational = GenerationalConfig {
                    selection: Selection::LinearRanking { pressure: 1.5 },
                    ..GenerationalConfig::default()
                };
            }
            Preset::SineSnes => c.population = 25,
            Preset::SineMaml | Preset::SinePretrained => {
                c.population = 1;
                c.maml.beta = 0.05;
                c.pretrain.lr = 0.01;
            }
            Preset::RlGoalvel | Preset::RlGoaldir => {
                c.n_inner = InnerSteps::fixed(if mode.kind == Inheritance::Darwin {
                    0
                } else {
                    c.env.episode_steps / c.a2c.rollout_len
                });
                c.checkpoint_every = 20;
            }
            Preset::Needle => {
                c.generations = 50;
                c.population = 1000;
                c.n_inner = InnerSteps::fixed(0);
                c.checkpoint_every = 10;
            }
        }
        c
    }

    /// Parses a JSON config: unknown keys are rejected with their path, then
    /// the given keys are laid over the preset's defaults.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("invalid JSON: {e}")))?;
        if !user.is_object() {
            return Err(HarnessError::Config("config must be a JSON object".into()));
        }
        if user.get("preset").is_none() {
            return Err(HarnessError::Config(
                "missing required field `preset`".into(),
            ));
        }
        let probe: Self = serde_path_to_error::deserialize(user.clone())
            .map_err(|e| HarnessError::Config(format!("field `{}`: {}", e.path(), e.inner())))?;
        let mut merged = serde_json::to_value(Self::preset(probe.preset, probe.mode))
            .expect("config serializes");
        overlay(&mut merged, &user);
        let cfg: Self = serde_path_to_error::deserialize(merged)
            .map_err(|e| HarnessError::Config(format!("field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn mode_label(&self) -> Option<&'static str> {
        match self.preset {
            Preset::RlGoalvel | Preset::RlGoaldir | Preset::Needle => Some(match self.mode.kind {
                Inheritance::Baldwin => "baldwin",
                Inheritance::Lamarck => "lamarck",
                Inheritance::Darwin => "darwin",
            }),
            _ => None,
        }
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        match &self.output_dir {
            Some(p) => p.clone(),
            None => {
                let mode = self
                    .mode_label()
                    .map(|m| format!("-{m}"))
                    .unwrap_or_default();
                PathBuf::from("runs").join(format!("{}{mode}-seed{}", self.preset, self.seed))
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad =
            |field: &str, msg: String| Err(HarnessError::Config(format!("field `{field}`: {msg}")));
        let core = |field: &str, r: baldwin::Result<()>| {
            r.map_err(|e| HarnessError::Config(format!("field `{field}`: {e}")))
        };
        if self.generations == 0 {
            return bad("generations", "must be positive".into());
        }
        if self.population == 0 {
            return bad("population", "must be positive".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(
                "init_std",
                format!("must be a non-negative number, got {}", self.init_std),
            );
        }
        if self.held_out_tasks == 0 || self.checkpoint_every == 0 {
            return bad(
                "held_out_tasks",
                "held_out_tasks and checkpoint_every must be positive".into(),
            );
        }
        let lo_hi = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !lo_hi(self.sine.amplitude_range)
            || !lo_hi(self.sine.phase_range)
            || !lo_hi(self.sine.x_range)
        {
            return bad("sine", "ranges must be finite with low <= high".into());
        }
        if self.sine.n_tasks == 0 || self.sine.k_shot == 0 {
            return bad("sine", "n_tasks and k_shot must be positive".into());
        }
        let learning = !matches!(self.n_inner, InnerSteps::Fixed { steps: 0 });
        if let InnerSteps::Uniform { min, max } = self.n_inner {
            if min > max {
                return bad("n_inner", format!("min {min} exceeds max {max}"));
            }
        }
        match self.preset {
            Preset::SineGa | Preset::SineSnes | Preset::SineMaml | Preset::SinePretrained => {
                if self.mode.kind != Inheritance::Baldwin {
                    return bad(
                        "mode",
                        format!(
                            "sine presets are Baldwinian; `{}` does not apply",
                            self.preset
                        ),
                    );
                }
                if self.preset == Preset::SineGa && self.population < 2 {
                    return bad("population", "a GA needs at least two members".into());
                }
                if self.preset == Preset::SineSnes && self.population < 2 {
                    return bad("population", "SNES needs at least two samples".into());
                }
                if !(self.snes.sigma_params > 0.0 && self.snes.sigma_log_lr > 0.0) {
                    return bad("snes", "initial sigmas must be positive".into());
                }
                core("maml", self.maml.validate())?;
                if self.pretrain.lr.is_nan()
                    || self.pretrain.lr <= 0.0
                    || self.pretrain.meta_batch == 0
                    || self.pretrain.k_shot == 0
                {
                    return bad(
                        "pretrain",
                        "lr, meta_batch and k_shot must be positive".into(),
                    );
                }
            }
            Preset::RlGoalvel | Preset::RlGoaldir => {
                core("env", self.env.validate())?;
                if self.a2c.rollout_len == 0
                    || !self.env.episode_steps.is_multiple_of(self.a2c.rollout_len)
                {
                    return bad(
                        "a2c.rollout_len",
                        format!(
                            "{} must divide env.episode_steps {}",
                            self.a2c.rollout_len, self.env.episode_steps
                        ),
                    );
                }
                if self.mode.kind == Inheritance::Darwin && learning {
                    return bad(
                        "n_inner",
                        "Darwinian runs take no gradient steps; set it to 0".into(),
                    );
                }
                if self.population < self.steady_state.tournament_size {
                    return bad(
                        "population",
                        format!(
                            "{} is smaller than the tournament size {}",
                            self.population, self.steady_state.tournament_size
                        ),
                    );
                }
                if self.round_size == 0 || 2 * self.round_size > self.population {
                    return bad(
                        "round_size",
                        format!("must lie in 1..={}", self.population / 2),
                    );
                }
                if self.evaluations < self.population {
                    return bad(
                        "evaluations",
                        "budget must cover the initial population".into(),
                    );
                }
            }
            Preset::Needle => {
                core("needle", self.needle.validate())?;
                if self.mode.kind == Inheritance::Lamarck {
                    return bad(
                        "mode",
                        "the needle task has no learned state to inherit".into(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn overlay(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
