//! MAML on the sinusoid family, and the pooled-SGD "pretrained" reference.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::net::{
    meta_grad, sgd_step, NetworkArch, ParamVector, RegressionSplit, Unroll, DEFAULT_UNROLL_LIMIT,
};
use crate::sine::{
    adapted_test_mse, sample_points, sample_task, train_step, SineConfig, SineTask, TaskData,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamlConfig {
    /// Inner SGD step size.
    pub alpha: f64,
    /// Outer gradient-descent step size.
    pub beta: f64,
    pub meta_batch: usize,
    pub k_shot: usize,
    pub n_inner_train: usize,
    pub n_inner_eval: usize,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.001,
            meta_batch: 25,
            k_shot: 10,
            n_inner_train: 1,
            n_inner_eval: 5,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(contract(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(contract(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.meta_batch == 0
            || self.k_shot == 0
            || self.n_inner_train == 0
            || self.n_inner_eval == 0
        {
            return Err(contract(
                "meta_batch, k_shot and inner step counts must be positive",
            ));
        }
        if self.n_inner_train > DEFAULT_UNROLL_LIMIT {
            return Err(contract(format!(
                "n_inner_train {} exceeds the unroll limit of {DEFAULT_UNROLL_LIMIT}",
                self.n_inner_train
            )));
        }
        Ok(())
    }

    /// Labelled points one outer step consumes.
    pub fn points_per_step(&self) -> usize {
        self.meta_batch * 2 * self.k_shot
    }
}

/// Fresh sine task with K training and K validation points.
pub fn sine_split<R: Rng + ?Sized>(
    sine: &SineConfig,
    k_shot: usize,
    rng: &mut R,
) -> RegressionSplit {
    let task = sample_task(sine, rng);
    let (train_x, train_y) = sample_points(&task, k_shot, sine, rng);
    let (val_x, val_y) = sample_points(&task, k_shot, sine, rng);
    RegressionSplit {
        train_x,
        train_y,
        val_x,
        val_y,
    }
}

/// Mean meta-gradient over `splits`, summed in task order whatever the
/// scheduling.
pub fn batch_meta_grad(
    arch: &NetworkArch,
    theta: &ParamVector,
    splits: &[RegressionSplit],
    unroll: Unroll,
    parallel: bool,
) -> Result<ParamVector> {
    if !parallel {
        return meta_grad(arch, theta, splits, unroll);
    }
    if splits.is_empty() {
        return Err(contract("meta-gradient needs at least one task"));
    }
    let per_task: Vec<ParamVector> = splits
        .par_iter()
        .map(|s| meta_grad(arch, theta, std::slice::from_ref(s), unroll))
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; theta.len()];
    for g in &per_task {
        for (t, v) in total.iter_mut().zip(&g.values) {
            *t += v;
        }
    }
    let n = splits.len() as f64;
    Ok(theta.with_values(total.into_iter().map(|v| v / n).collect()))
}

/// One outer update on `cfg.meta_batch` tasks drawn from `sampler`; per-task
/// meta-gradients run on the rayon pool when `parallel` is set.
pub fn maml_outer_step<R, S>(
    arch: &NetworkArch,
    theta: &ParamVector,
    cfg: &MamlConfig,
    mut sampler: S,
    rng: &mut R,
    parallel: bool,
) -> Result<ParamVector>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> RegressionSplit,
{
    cfg.validate()?;
    let splits: Vec<RegressionSplit> = (0..cfg.meta_batch).map(|_| sampler(rng)).collect();
    let g = batch_meta_grad(
        arch,
        theta,
        &splits,
        Unroll::new(cfg.alpha, cfg.n_inner_train),
        parallel,
    )?;
    sgd_step(theta, &g, cfg.beta, None)
}

/// Test MSE on fresh K-point samples of `task` after `n_steps` SGD steps from
/// `theta` on fresh K-point training data.
#[allow(clippy::too_many_arguments)]
pub fn adapt_and_eval<R: Rng + ?Sized>(
    arch: &NetworkArch,
    theta: &ParamVector,
    task: SineTask,
    k_shot: usize,
    n_steps: usize,
    alpha: f64,
    sine: &SineConfig,
    rng: &mut R,
) -> Result<f64> {
    let (train_x, train_y) = sample_points(&task, k_shot, sine, rng);
    let (test_x, test_y) = sample_points(&task, k_shot, sine, rng);
    let data = TaskData {
        task,
        train_x,
        train_y,
        test_x,
        test_y,
    };
    Ok(adapted_test_mse(arch, theta, alpha, &data, n_steps, None)?.0)
}

/// Pooled regression without a meta-objective: each step fits the union of a
/// fresh batch of tasks' points with one SGD step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub meta_batch: usize,
    pub k_shot: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            meta_batch: 25,
            k_shot: 10,
        }
    }
}

pub fn pretrain_step<R: Rng + ?Sized>(
    arch: &NetworkArch,
    theta: &ParamVector,
    cfg: &PretrainConfig,
    sine: &SineConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    let mut xs = Vec::with_capacity(cfg.meta_batch * 2 * cfg.k_shot);
    let mut ys = Vec::with_capacity(xs.capacity());
    for _ in 0..cfg.meta_batch {
        let task = sample_task(sine, rng);
        let (x, y) = sample_points(&task, 2 * cfg.k_shot, sine, rng);
        xs.extend(x);
        ys.extend(y);
    }
    train_step(arch, theta, &xs, &ys, cfg.lr, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Head, HeadActivation};
    use crate::rng::rng_from;
    use crate::sine::regression_mse;

    fn scalar_arch() -> NetworkArch {
        NetworkArch::new(
            vec![1],
            Activation::Identity,
            vec![Head {
                name: "out".into(),
                output_dim: 1,
                activation: HeadActivation::Identity,
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_beta_keeps_theta() {
        let arch = NetworkArch::sine_regressor();
        let mut rng = rng_from(&[1]);
        let theta = ParamVector::he_normal(&arch, &mut rng);
        let cfg = MamlConfig {
            beta: 0.0,
            meta_batch: 3,
            ..MamlConfig::default()
        };
        let sine = SineConfig::default();
        let next = maml_outer_step(
            &arch,
            &theta,
            &cfg,
            |r| sine_split(&sine, 10, r),
            &mut rng,
            false,
        )
        .unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn quadratic_tasks_match_closed_form() {
        // With x = 0 the scalar model predicts its bias b, so each task is (b - c)^2.
        let arch = scalar_arch();
        let (alpha, beta, b0) = (0.1, 0.05, 0.7);
        let theta = ParamVector::from_values(&arch, vec![0.3, b0]).unwrap();
        let cs = [1.5, -0.4, 2.0];
        let mut i = 0;
        let cfg = MamlConfig {
            alpha,
            beta,
            meta_batch: cs.len(),
            ..MamlConfig::default()
        };
        let next = maml_outer_step(
            &arch,
            &theta,
            &cfg,
            |_| {
                let c = cs[i];
                i += 1;
                RegressionSplit {
                    train_x: vec![0.0],
                    train_y: vec![c],
                    val_x: vec![0.0],
                    val_y: vec![c],
                }
            },
            &mut rng_from(&[0]),
            false,
        )
        .unwrap();
        let mean: f64 = cs
            .iter()
            .map(|c| 2.0 * (1.0 - 2.0 * alpha).powi(2) * (b0 - c))
            .sum::<f64>()
            / cs.len() as f64;
        assert!((next.values[1] - (b0 - beta * mean)).abs() < 1e-12);
        assert_eq!(next.values[0], 0.3);
    }

    #[test]
    fn single_task_step_is_meta_grad() {
        let arch = NetworkArch::sine_regressor();
        let mut rng = rng_from(&[2]);
        let theta = ParamVector::he_normal(&arch, &mut rng);
        let sine = SineConfig::default();
        let split = sine_split(&sine, 10, &mut rng);
        let cfg = MamlConfig {
            beta: 1.0,
            meta_batch: 1,
            ..MamlConfig::default()
        };
        let next =
            maml_outer_step(&arch, &theta, &cfg, |_| split.clone(), &mut rng, false).unwrap();
        let g = meta_grad(
            &arch,
            &theta,
            std::slice::from_ref(&split),
            Unroll::new(0.01, 1),
        )
        .unwrap();
        for ((n, t), g) in next.values.iter().zip(&theta.values).zip(&g.values) {
            assert_eq!(*n, t - g);
        }
    }

    #[test]
    fn parallel_batch_matches_sequential() {
        let arch = NetworkArch::sine_regressor();
        let mut rng = rng_from(&[3]);
        let theta = ParamVector::he_normal(&arch, &mut rng);
        let splits: Vec<_> = (0..4)
            .map(|_| sine_split(&SineConfig::default(), 10, &mut rng))
            .collect();
        let u = Unroll::new(0.01, 2);
        let a = batch_meta_grad(&arch, &theta, &splits, u, false).unwrap();
        let b = batch_meta_grad(&arch, &theta, &splits, u, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adapt_and_eval_oracles() {
        let arch = NetworkArch::sine_regressor();
        let sine = SineConfig::default();
        let task = SineTask {
            amplitude: 2.0,
            phase: 0.5,
        };
        let zero = ParamVector::zeros(&arch);
        let mse =
            adapt_and_eval(&arch, &zero, task, 10, 0, 0.01, &sine, &mut rng_from(&[4])).unwrap();
        let mut rng = rng_from(&[4]);
        let _ = sample_points(&task, 10, &sine, &mut rng);
        let (xs, _) = sample_points(&task, 10, &sine, &mut rng);
        let expected = xs
            .iter()
            .map(|&x| 4.0 * (x + 0.5).sin().powi(2))
            .sum::<f64>()
            / 10.0;
        assert!((mse - expected).abs() < 1e-12);

        let theta = ParamVector::he_normal(&arch, &mut rng_from(&[5]));
        let before = theta.clone();
        let mse =
            adapt_and_eval(&arch, &theta, task, 10, 0, 0.01, &sine, &mut rng_from(&[6])).unwrap();
        let mut rng = rng_from(&[6]);
        let _ = sample_points(&task, 10, &sine, &mut rng);
        let (xs, ys) = sample_points(&task, 10, &sine, &mut rng);
        assert_eq!(mse, regression_mse(&arch, &theta, &xs, &ys).unwrap());
        adapt_and_eval(&arch, &theta, task, 10, 5, 0.01, &sine, &mut rng_from(&[6])).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn first_inner_step_descends() {
        let arch = NetworkArch::sine_regressor();
        let sine = SineConfig::default();
        let mut rng = rng_from(&[7]);
        let mut down = 0;
        for _ in 0..200 {
            let theta = ParamVector::gaussian(&arch, 0.01, &mut rng);
            let s = sine_split(&sine, 10, &mut rng);
            let before = regression_mse(&arch, &theta, &s.train_x, &s.train_y).unwrap();
            let after = train_step(&arch, &theta, &s.train_x, &s.train_y, 0.01, None).unwrap();
            if regression_mse(&arch, &after, &s.train_x, &s.train_y).unwrap() <= before {
                down += 1;
            }
        }
        assert!(down >= 190, "{down}/200");
    }

    #[test]
    fn outer_step_data_budget() {
        let cfg = MamlConfig::default();
        assert_eq!(cfg.points_per_step(), 500);
        let sine = SineConfig::default();
        let mut points = 0;
        let arch = NetworkArch::sine_regressor();
        let theta = ParamVector::he_normal(&arch, &mut rng_from(&[8]));
        maml_outer_step(
            &arch,
            &theta,
            &cfg,
            |r| {
                let s = sine_split(&sine, cfg.k_shot, r);
                points += s.train_x.len() + s.val_x.len();
                s
            },
            &mut rng_from(&[9]),
            false,
        )
        .unwrap();
        assert_eq!(points, 500);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MamlConfig {
            n_inner_train: 11,
            ..MamlConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(MamlConfig {
            alpha: 0.0,
            ..MamlConfig::default()
        }
        .validate()
        .is_err());
    }
}
