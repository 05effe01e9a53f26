use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Result};

/// Diagonal Gaussian search distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eta_mu: f64,
    pub eta_sigma: f64,
}

impl SearchDistribution {
    /// Uses the usual separable-NES step sizes: `eta_mu = 1`,
    /// `eta_sigma = (3 + ln d) / (5 sqrt d)`.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(contract("mu and sigma must have the same length"));
        }
        if mu.is_empty() {
            return Err(contract("search distribution needs at least one dimension"));
        }
        if sigma.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(contract("sigma must be strictly positive and finite"));
        }
        let d = mu.len() as f64;
        Ok(Self {
            mu,
            sigma,
            eta_mu: 1.0,
            eta_sigma: (3.0 + d.ln()) / (5.0 * d.sqrt()),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Rank-based fitness shaping. Utilities sum to zero, the best sample gets the
/// largest weight, tied fitnesses share their weights equally and non-finite
/// fitnesses are ranked last.
pub fn rank_utilities(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let raw: Vec<f64> = (1..=n)
        .map(|k| ((nf / 2.0 + 1.0).ln() - (k as f64).ln()).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    let by_rank: Vec<f64> = raw.iter().map(|r| r / total - 1.0 / nf).collect();

    let key = |f: f64| if f.is_finite() { f } else { f64::NEG_INFINITY };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(fitness[b]).total_cmp(&key(fitness[a])));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let f = key(fitness[order[start]]);
        let mut end = start + 1;
        while end < n && key(fitness[order[end]]) == f {
            end += 1;
        }
        let shared = by_rank[start..end].iter().sum::<f64>() / (end - start) as f64;
        for &i in &order[start..end] {
            out[i] = shared;
        }
        start = end;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnesSample {
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Draws `theta = mu + sigma * z` with standard normal `z`.
pub fn snes_sample<R: Rng + ?Sized>(
    dist: &SearchDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<SnesSample> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..dist.dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let theta = dist
                .mu
                .iter()
                .zip(&dist.sigma)
                .zip(&z)
                .map(|((m, s), z)| m + s * z)
                .collect();
            SnesSample { z, theta }
        })
        .collect()
}

/// Natural-gradient update of `dist` from scored samples.
pub fn snes_update(
    dist: &SearchDistribution,
    samples: &[SnesSample],
    fitness: &[f64],
) -> Result<SearchDistribution> {
    if samples.len() != fitness.len() || samples.is_empty() {
        return Err(contract("need one fitness per sample"));
    }
    let u = rank_utilities(fitness);
    let d = dist.dim();
    let mut grad_mu = vec![0.0; d];
    let mut grad_sigma = vec![0.0; d];
    for (s, &ui) in samples.iter().zip(&u) {
        if ui == 0.0 {
            continue;
        }
        for j in 0..d {
            grad_mu[j] += ui * s.z[j];
            grad_sigma[j] += ui * (s.z[j] * s.z[j] - 1.0);
        }
    }
    let mut next = dist.clone();
    for j in 0..d {
        next.mu[j] += dist.eta_mu * dist.sigma[j] * grad_mu[j];
        next.sigma[j] =
            (dist.sigma[j] * (0.5 * dist.eta_sigma * grad_sigma[j]).exp()).max(f64::MIN_POSITIVE);
    }
    Ok(next)
}

/// Samples `pop_size` candidates, scores them with `evaluate` and updates the
/// distribution. Returns the new distribution and the sample fitnesses.
pub fn snes_step<R, E>(
    dist: &SearchDistribution,
    rng: &mut R,
    mut evaluate: E,
    pop_size: usize,
) -> Result<(SearchDistribution, Vec<f64>)>
where
    R: Rng + ?Sized,
    E: FnMut(&[f64]) -> f64,
{
    if pop_size < 2 {
        return Err(contract("population must hold at least two samples"));
    }
    let samples = snes_sample(dist, pop_size, rng);
    let fitness: Vec<f64> = samples.iter().map(|s| evaluate(&s.theta)).collect();
    Ok((snes_update(dist, &samples, &fitness)?, fitness))
}
