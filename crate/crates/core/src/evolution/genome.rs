use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::net::{Mask, ParamVector};
use crate::tensor::Matrix;

pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-5, 1e-2);
pub const ENTROPY_SCALE_RANGE: (f64, f64) = (1e-4, 1.0);
pub const DISCOUNT_RANGE: (f64, f64) = (0.92, 0.9999);

/// Learning-algorithm hyperparameters carried by every genome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub entropy_scale: f64,
    pub discount: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            entropy_scale: 1e-2,
            discount: 0.99,
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

impl Hyperparams {
    /// Learning rate and entropy scale log-uniform over their ranges, discount
    /// uniform.
    pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let (dlo, dhi) = DISCOUNT_RANGE;
        Self {
            learning_rate: log_uniform(rng, LEARNING_RATE_RANGE),
            entropy_scale: log_uniform(rng, ENTROPY_SCALE_RANGE),
            discount: dlo + rng.random::<f64>() * (dhi - dlo),
        }
    }

    pub fn clamped(self) -> Self {
        let clamp = |v: f64, (lo, hi): (f64, f64)| if v.is_nan() { lo } else { v.clamp(lo, hi) };
        Self {
            learning_rate: clamp(self.learning_rate, LEARNING_RATE_RANGE),
            entropy_scale: clamp(self.entropy_scale, ENTROPY_SCALE_RANGE),
            discount: clamp(self.discount, DISCOUNT_RANGE),
        }
    }

    pub fn in_range(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        inside(self.learning_rate, LEARNING_RATE_RANGE)
            && inside(self.entropy_scale, ENTROPY_SCALE_RANGE)
            && inside(self.discount, DISCOUNT_RANGE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GenomeId(pub u64);

/// Hands out unique, monotonically increasing genome ids.
#[derive(Debug, Default)]
pub struct GenomeIds(AtomicU64);

impl GenomeIds {
    pub fn starting_at(first: u64) -> Self {
        Self(AtomicU64::new(first))
    }

    pub fn next_id(&self) -> GenomeId {
        GenomeId(self.0.fetch_add(1, Ordering::Relaxed))
    }
}

/// The unit of inheritance.
#[derive(Clone, Debug, PartialEq)]
pub struct Genome {
    pub id: GenomeId,
    pub parent_id: Option<GenomeId>,
    pub params: ParamVector,
    pub hyper: Hyperparams,
    pub mask: Option<Mask>,
    /// One row of actuator torques per discrete action.
    pub macro_actions: Option<Matrix>,
}

impl Genome {
    pub fn new(id: GenomeId, params: ParamVector, hyper: Hyperparams) -> Self {
        Self {
            id,
            parent_id: None,
            params,
            hyper,
            mask: None,
            macro_actions: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(mask) = &self.mask {
            if mask.len() != self.params.len() {
                return Err(contract(format!(
                    "mask has {} bits for {} parameters",
                    mask.len(),
                    self.params.len()
                )));
            }
        }
        if let Some(m) = &self.macro_actions {
            if m.data().iter().any(|v| !v.is_finite()) {
                return Err(contract("macro-action matrix has non-finite entries"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationConfig {
    /// Std of the Gaussian noise added to every weight and bias.
    pub param_std: f64,
    /// Log-std of the multiplicative noise on learning rate, entropy scale and
    /// the discount horizon `1 - discount`.
    pub hyper_log_std: f64,
    pub macro_std: f64,
    /// Per-bit flip probability; `None` means `1 / mask length`.
    pub mask_flip_prob: Option<f64>,
    /// `false` leaves parameters untouched (inheritance of learned weights
    /// without perturbation).
    pub mutate_params: bool,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            param_std: 0.02,
            hyper_log_std: 0.2,
            macro_std: 0.02,
            mask_flip_prob: None,
            mutate_params: true,
        }
    }
}

/// Mutated copy of `parent` with a fresh id.
pub fn mutate<R: Rng + ?Sized>(
    parent: &Genome,
    cfg: &MutationConfig,
    ids: &GenomeIds,
    rng: &mut R,
) -> Genome {
    let mut child = parent.clone();
    child.id = ids.next_id();
    child.parent_id = Some(parent.id);

    if cfg.mutate_params && cfg.param_std > 0.0 {
        let normal = Normal::new(0.0, cfg.param_std).expect("finite std");
        for v in &mut child.params.values {
            *v += normal.sample(rng);
        }
    }

    if cfg.hyper_log_std > 0.0 {
        let mut factor = || (cfg.hyper_log_std * rng.sample::<f64, _>(StandardNormal)).exp();
        let h = child.hyper;
        child.hyper = Hyperparams {
            learning_rate: h.learning_rate * factor(),
            entropy_scale: h.entropy_scale * factor(),
            discount: 1.0 - (1.0 - h.discount) * factor(),
        }
        .clamped();
    }

    if let Some(mask) = &mut child.mask {
        let p = cfg.mask_flip_prob.unwrap_or(1.0 / mask.len().max(1) as f64);
        for bit in &mut mask.0 {
            if rng.random::<f64>() < p {
                *bit = !*bit;
            }
        }
    }

    if let Some(m) = child.macro_actions.as_mut() {
        if cfg.macro_std > 0.0 {
            let normal = Normal::new(0.0, cfg.macro_std).expect("finite std");
            let data = m.data().iter().map(|v| v + normal.sample(rng)).collect();
            *m = Matrix::new(m.rows(), m.cols(), data).expect("same shape");
        }
    }
    child
}
