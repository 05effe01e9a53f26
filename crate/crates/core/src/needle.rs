//! Needle-in-a-haystack search over 20 alleles, where `?` loci are guessed
//! afresh on every lifetime trial.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evolution::{generational_step, GenerationalConfig, Member, PopulationState, Selection};
use crate::lifetime::Inheritance;
use crate::rng::{rng_from, Rng64};

pub const GENOME_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Allele {
    Zero,
    One,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlleleGenome {
    pub alleles: [Allele; GENOME_LEN],
}

impl AlleleGenome {
    pub fn uniform(a: Allele) -> Self {
        Self {
            alleles: [a; GENOME_LEN],
        }
    }

    pub fn unknowns(&self) -> usize {
        self.alleles
            .iter()
            .filter(|&&a| a == Allele::Unknown)
            .count()
    }

    /// True when no fixed locus contradicts `target`.
    pub fn admits(&self, target: &[bool; GENOME_LEN]) -> bool {
        self.alleles.iter().zip(target).all(|(a, &t)| match a {
            Allele::Unknown => true,
            Allele::One => t,
            Allele::Zero => !t,
        })
    }

    pub fn is_exactly(&self, target: &[bool; GENOME_LEN]) -> bool {
        self.unknowns() == 0 && self.admits(target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleConfig {
    pub p1: f64,
    pub p0: f64,
    pub pq: f64,
    pub trials: usize,
    pub target: [bool; GENOME_LEN],
    /// Per-locus probability of resampling from the initial priors.
    pub mutation_rate: f64,
    pub selection: Selection,
    pub crossover_rate: f64,
    pub elitism: usize,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            p1: 0.25,
            p0: 0.25,
            pq: 0.5,
            trials: 1000,
            target: [true; GENOME_LEN],
            mutation_rate: 1.0 / GENOME_LEN as f64,
            selection: Selection::FitnessProportional,
            crossover_rate: 1.0,
            elitism: 1,
        }
    }
}

impl NeedleConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p1, self.p0, self.pq];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p))
            || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(contract(format!(
                "allele priors must be probabilities summing to 1, got p1={} p0={} pq={}",
                self.p1, self.p0, self.pq
            )));
        }
        if self.trials == 0 {
            return Err(contract("trials must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate)
        {
            return Err(contract(
                "mutation_rate and crossover_rate must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    fn generational(&self) -> GenerationalConfig {
        GenerationalConfig {
            selection: self.selection,
            elitism: self.elitism,
            crossover_rate: self.crossover_rate,
        }
    }
}

pub fn sample_allele<R: Rng + ?Sized>(cfg: &NeedleConfig, rng: &mut R) -> Allele {
    let u = rng.random::<f64>();
    if u < cfg.p1 {
        Allele::One
    } else if u < cfg.p1 + cfg.p0 {
        Allele::Zero
    } else {
        Allele::Unknown
    }
}

pub fn sample_genome<R: Rng + ?Sized>(cfg: &NeedleConfig, rng: &mut R) -> AlleleGenome {
    let mut g = AlleleGenome::uniform(Allele::Unknown);
    for a in &mut g.alleles {
        *a = sample_allele(cfg, rng);
    }
    g
}

/// Trial (1-based) at which random guessing of the `?` loci first hits the
/// target, if within `trials`.
pub fn first_match<R: Rng + ?Sized>(
    genome: &AlleleGenome,
    target: &[bool; GENOME_LEN],
    trials: usize,
    rng: &mut R,
) -> Option<usize> {
    if !genome.admits(target) {
        return None;
    }
    // Each trial guesses every `?` locus with one random bit; the guess is
    // right for a locus with probability 1/2 whatever its target value.
    let q = genome.unknowns();
    let need: u32 = if q == 0 { 0 } else { u32::MAX >> (32 - q) };
    (1..=trials).find(|_| rng.random::<u32>() & need == need)
}

/// Score of one lifetime: 1 when the needle is never found, rising linearly to
/// 20 the earlier it is found.
pub fn needle_lifetime<R: Rng + ?Sized>(
    genome: &AlleleGenome,
    cfg: &NeedleConfig,
    rng: &mut R,
) -> f64 {
    match first_match(genome, &cfg.target, cfg.trials, rng) {
        Some(g) => 1.0 + 19.0 * (cfg.trials - g) as f64 / cfg.trials as f64,
        None => 1.0,
    }
}

/// Score without learning: 20 for the exact target, 1 otherwise.
pub fn needle_darwin(genome: &AlleleGenome, cfg: &NeedleConfig) -> f64 {
    if genome.is_exactly(&cfg.target) {
        20.0
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best: f64,
    pub median: f64,
    pub mean: f64,
    /// Fraction of `?` loci over the whole population.
    pub q_frequency: f64,
    pub one_frequency: f64,
}

fn breed<R: Rng + ?Sized>(
    parent: &AlleleGenome,
    mate: Option<&AlleleGenome>,
    cfg: &NeedleConfig,
    rng: &mut R,
) -> AlleleGenome {
    let mut child = *parent;
    if let Some(m) = mate {
        let cut = rng.random_range(1..GENOME_LEN);
        child.alleles[cut..].copy_from_slice(&m.alleles[cut..]);
    }
    for a in &mut child.alleles {
        if rng.random::<f64>() < cfg.mutation_rate {
            *a = sample_allele(cfg, rng);
        }
    }
    child
}

fn score(
    pop: &mut PopulationState<AlleleGenome>,
    cfg: &NeedleConfig,
    mode: Inheritance,
    seed: u64,
    parallel: bool,
) {
    let generation = pop.generation;
    let eval = |(i, m): (usize, &mut Member<AlleleGenome>)| {
        m.fitness = Some(match mode {
            Inheritance::Darwin => needle_darwin(&m.genome, cfg),
            _ => {
                let mut rng: Rng64 = rng_from(&[seed, generation, i as u64]);
                needle_lifetime(&m.genome, cfg, &mut rng)
            }
        });
    };
    if parallel {
        pop.members.par_iter_mut().enumerate().for_each(eval);
    } else {
        pop.members.iter_mut().enumerate().for_each(eval);
    }
}

fn record(pop: &PopulationState<AlleleGenome>, evaluations: usize) -> NeedleRecord {
    let mut f: Vec<f64> = pop.members.iter().filter_map(|m| m.fitness).collect();
    f.sort_by(f64::total_cmp);
    let n = f.len();
    let median = if n % 2 == 1 {
        f[n / 2]
    } else {
        0.5 * (f[n / 2 - 1] + f[n / 2])
    };
    let loci = (pop.len() * GENOME_LEN) as f64;
    let count = |a: Allele| {
        pop.members
            .iter()
            .map(|m| m.genome.alleles.iter().filter(|&&x| x == a).count())
            .sum::<usize>() as f64
            / loci
    };
    NeedleRecord {
        generation: pop.generation as usize,
        evaluations,
        best: f[n - 1],
        median,
        mean: f.iter().sum::<f64>() / n as f64,
        q_frequency: count(Allele::Unknown),
        one_frequency: count(Allele::One),
    }
}

/// Evolves `initial` for `generations` scored generations, calling
/// `on_generation` after each one is scored.
pub fn run_needle_population(
    initial: Vec<AlleleGenome>,
    cfg: &NeedleConfig,
    mode: Inheritance,
    generations: usize,
    seed: u64,
    parallel: bool,
    mut on_generation: impl FnMut(&NeedleRecord),
) -> Result<Vec<NeedleRecord>> {
    cfg.validate()?;
    if mode == Inheritance::Lamarck {
        return Err(contract("the needle task has no learned state to inherit"));
    }
    if initial.is_empty() {
        return Err(contract("population must not be empty"));
    }
    let gcfg = cfg.generational();
    let mut rng = rng_from(&[seed, u64::MAX]);
    let mut pop = PopulationState::new(initial, seed);
    let mut history = Vec::with_capacity(generations);
    let mut evaluations = 0;
    for g in 0..generations {
        score(&mut pop, cfg, mode, seed, parallel);
        evaluations += pop.len();
        let rec = record(&pop, evaluations);
        on_generation(&rec);
        history.push(rec);
        if g + 1 < generations {
            pop = generational_step(&pop, &gcfg, &mut rng, |p, m, r| breed(p, m, cfg, r))?;
        }
    }
    Ok(history)
}

pub fn run_needle_experiment(
    cfg: &NeedleConfig,
    mode: Inheritance,
    pop_size: usize,
    generations: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<NeedleRecord>> {
    cfg.validate()?;
    let mut rng = rng_from(&[seed, 0]);
    let initial = (0..pop_size)
        .map(|_| sample_genome(cfg, &mut rng))
        .collect();
    run_needle_population(initial, cfg, mode, generations, seed, parallel, |_| {})
}

/// Generation at which the best fitness first exceeds `level`.
pub fn first_crossing(history: &[NeedleRecord], level: f64) -> Option<usize> {
    history.iter().position(|r| r.best > level)
}
