use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Member<G> {
    pub genome: G,
    /// `None` until the member has been scored.
    pub fitness: Option<f64>,
}

impl<G> Member<G> {
    pub fn unevaluated(genome: G) -> Self {
        Self {
            genome,
            fitness: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState<G> {
    pub members: Vec<Member<G>>,
    pub generation: u64,
    pub rng_seed: u64,
}

impl<G> PopulationState<G> {
    pub fn new(genomes: Vec<G>, rng_seed: u64) -> Self {
        Self {
            members: genomes.into_iter().map(Member::unevaluated).collect(),
            generation: 0,
            rng_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Fitness of every member, failing on the first unevaluated one.
    pub fn fitnesses(&self) -> Result<Vec<f64>> {
        self.members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.fitness
                    .ok_or_else(|| contract(format!("member {i} has not been evaluated")))
            })
            .collect()
    }

    /// Index of the fittest member; non-finite scores lose.
    pub fn best_index(&self) -> Option<usize> {
        let key = |m: &Member<G>| sortable(m.fitness.unwrap_or(f64::NEG_INFINITY));
        (0..self.members.len()).max_by(|&a, &b| {
            key(&self.members[a])
                .total_cmp(&key(&self.members[b]))
                .then(b.cmp(&a))
        })
    }
}

/// NaN sorts below everything.
fn sortable(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Selection {
    /// Linear ranking; the best rank is drawn with probability `pressure / N`.
    LinearRanking { pressure: f64 },
    /// Roulette wheel on fitness shifted to be non-negative.
    FitnessProportional,
}

impl Default for Selection {
    fn default() -> Self {
        Selection::LinearRanking { pressure: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationalConfig {
    pub selection: Selection,
    /// Best members copied into the next generation unmutated.
    pub elitism: usize,
    /// Chance that an offspring gets a second parent for recombination.
    pub crossover_rate: f64,
}

impl Default for GenerationalConfig {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            elitism: 1,
            crossover_rate: 0.0,
        }
    }
}

/// Probability of drawing each member as a parent. Tied fitnesses share their
/// rank probabilities equally.
pub fn selection_probabilities(fitness: &[f64], selection: Selection) -> Result<Vec<f64>> {
    let n = fitness.len();
    if n == 0 {
        return Err(contract("cannot select from an empty population"));
    }
    match selection {
        Selection::LinearRanking { pressure } => {
            if !(1.0..=2.0).contains(&pressure) {
                return Err(contract(format!(
                    "linear ranking pressure must be in [1, 2], got {pressure}"
                )));
            }
            if n == 1 {
                return Ok(vec![1.0]);
            }
            let nf = n as f64;
            let rank_prob = |r: usize| {
                (2.0 - pressure) / nf + 2.0 * r as f64 * (pressure - 1.0) / (nf * (nf - 1.0))
            };
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sortable(fitness[a]).total_cmp(&sortable(fitness[b])));
            let mut probs = vec![0.0; n];
            let mut start = 0;
            while start < n {
                let f = sortable(fitness[order[start]]);
                let mut end = start + 1;
                while end < n && sortable(fitness[order[end]]) == f {
                    end += 1;
                }
                let shared = (start..end).map(rank_prob).sum::<f64>() / (end - start) as f64;
                for &i in &order[start..end] {
                    probs[i] = shared;
                }
                start = end;
            }
            Ok(probs)
        }
        Selection::FitnessProportional => {
            let finite: Vec<f64> = fitness
                .iter()
                .map(|&f| if f.is_finite() { f } else { f64::NAN })
                .collect();
            let min = finite
                .iter()
                .copied()
                .filter(|f| !f.is_nan())
                .fold(f64::INFINITY, f64::min);
            let shift = if min < 0.0 { -min } else { 0.0 };
            let weights: Vec<f64> = finite
                .iter()
                .map(|&f| if f.is_nan() { 0.0 } else { f + shift })
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 || !total.is_finite() {
                return Ok(vec![1.0 / n as f64; n]);
            }
            Ok(weights.iter().map(|w| w / total).collect())
        }
    }
}

fn draw<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let u = rng.random::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

/// One generation of selection and reproduction.
///
/// `breed(parent, mate, rng)` builds a child; `mate` is `Some` when recombination
/// is chosen. The top `cfg.elitism` members are copied through unchanged. All new
/// members come back unevaluated.
pub fn generational_step<G, R, F>(
    pop: &PopulationState<G>,
    cfg: &GenerationalConfig,
    rng: &mut R,
    mut breed: F,
) -> Result<PopulationState<G>>
where
    G: Clone,
    R: Rng + ?Sized,
    F: FnMut(&G, Option<&G>, &mut R) -> G,
{
    let fitness = pop.fitnesses()?;
    let probs = selection_probabilities(&fitness, cfg.selection)?;
    let cumulative: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let n = pop.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sortable(fitness[b])
            .total_cmp(&sortable(fitness[a]))
            .then(a.cmp(&b))
    });
    let mut members = Vec::with_capacity(n);
    for &i in order.iter().take(cfg.elitism.min(n)) {
        members.push(Member::unevaluated(pop.members[i].genome.clone()));
    }
    while members.len() < n {
        let parent = &pop.members[draw(&cumulative, rng)].genome;
        let child = if cfg.crossover_rate > 0.0 && rng.random::<f64>() < cfg.crossover_rate {
            let mate = &pop.members[draw(&cumulative, rng)].genome;
            breed(parent, Some(mate), rng)
        } else {
            breed(parent, None, rng)
        };
        members.push(Member::unevaluated(child));
    }
    Ok(PopulationState {
        members,
        generation: pop.generation + 1,
        rng_seed: pop.rng_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyStateConfig {
    pub tournament_size: usize,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self {
            tournament_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tournament {
    pub entrants: Vec<usize>,
    pub winner: usize,
    pub loser: usize,
}

/// Draws `size` distinct members uniformly and names the fittest and the least
/// fit of them.
pub fn draw_tournament<G, R: Rng + ?Sized>(
    pop: &PopulationState<G>,
    size: usize,
    rng: &mut R,
) -> Result<Tournament> {
    if size < 2 {
        return Err(contract("tournament needs at least two entrants"));
    }
    if pop.len() < size {
        return Err(contract(format!(
            "population of {} is smaller than the tournament size {size}",
            pop.len()
        )));
    }
    let entrants: Vec<usize> = sample(rng, pop.len(), size).into_vec();
    let fit = |i: usize| -> Result<f64> {
        pop.members[i]
            .fitness
            .map(sortable)
            .ok_or_else(|| contract(format!("member {i} has not been evaluated")))
    };
    let mut winner = entrants[0];
    for &i in &entrants[1..] {
        if fit(i)? > fit(winner)? {
            winner = i;
        }
    }
    let mut loser = None;
    for &i in &entrants {
        if i == winner {
            continue;
        }
        match loser {
            None => loser = Some(i),
            Some(l) if fit(i)? < fit(l)? => loser = Some(i),
            _ => {}
        }
    }
    Ok(Tournament {
        entrants,
        winner,
        loser: loser.expect("size >= 2"),
    })
}

/// One tournament: the winner's offspring is scored and takes the loser's slot.
pub fn steady_state_step<G, R, B, E>(
    pop: &mut PopulationState<G>,
    cfg: &SteadyStateConfig,
    rng: &mut R,
    mut breed: B,
    mut evaluate: E,
) -> Result<Tournament>
where
    R: Rng + ?Sized,
    B: FnMut(&G, &mut R) -> G,
    E: FnMut(&G) -> f64,
{
    pop.fitnesses()?;
    let t = draw_tournament(pop, cfg.tournament_size, rng)?;
    let child = breed(&pop.members[t.winner].genome, rng);
    let fitness = evaluate(&child);
    pop.members[t.loser] = Member {
        genome: child,
        fitness: Some(fitness),
    };
    Ok(t)
}

/// Draws `count` tournaments whose losers are all distinct, so their offspring
/// can be scored together and slotted in afterwards in draw order.
pub fn draw_round<G, R: Rng + ?Sized>(
    pop: &PopulationState<G>,
    cfg: &SteadyStateConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Tournament>> {
    if count == 0 || 2 * count > pop.len() {
        return Err(contract(format!(
            "a round of {count} tournaments needs a population of at least {}",
            2 * count.max(1)
        )));
    }
    let mut round: Vec<Tournament> = Vec::with_capacity(count);
    while round.len() < count {
        let t = draw_tournament(pop, cfg.tournament_size, rng)?;
        if round.iter().all(|r| r.loser != t.loser) {
            round.push(t);
        }
    }
    Ok(round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn scored(fitness: &[f64]) -> PopulationState<f64> {
        PopulationState {
            members: fitness
                .iter()
                .map(|&f| Member {
                    genome: f,
                    fitness: Some(f),
                })
                .collect(),
            generation: 0,
            rng_seed: 0,
        }
    }

    #[test]
    fn linear_ranking_best_probability() {
        let fitness: Vec<f64> = (0..100).map(f64::from).collect();
        let p = selection_probabilities(&fitness, Selection::default()).unwrap();
        assert!((p[99] - 0.015).abs() < 1e-12);
        assert!((p[0] - 0.005).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_fitness_selects_uniformly() {
        let pop = scored(&[3.0; 10]);
        let probs =
            selection_probabilities(&pop.fitnesses().unwrap(), Selection::default()).unwrap();
        assert!(probs.iter().all(|p| (p - 0.1).abs() < 1e-12));
        let cumulative: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let mut counts = [0usize; 10];
        let mut rng = rng_from(&[9]);
        for _ in 0..10_000 {
            counts[draw(&cumulative, &mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0)
            .sum();
        // chi-square, 9 dof, p = 0.01 critical value
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn elitism_keeps_the_best_unchanged() {
        let pop = scored(&[1.0, 5.0, 2.0, 4.0]);
        let mut rng = rng_from(&[1]);
        let next = generational_step(&pop, &GenerationalConfig::default(), &mut rng, |g, _, _| {
            g + 0.5
        })
        .unwrap();
        assert_eq!(next.len(), 4);
        assert_eq!(next.members[0].genome, 5.0);
        assert!(next.members.iter().all(|m| m.fitness.is_none()));
        assert!(next.members[1..].iter().all(|m| m.genome.fract() == 0.5));
    }

    #[test]
    fn unevaluated_member_is_rejected() {
        let mut pop = scored(&[1.0, 2.0]);
        pop.members[1].fitness = None;
        let mut rng = rng_from(&[1]);
        assert!(
            generational_step(&pop, &GenerationalConfig::default(), &mut rng, |g, _, _| *g)
                .is_err()
        );
    }

    #[test]
    fn tournament_winner_and_loser() {
        let fitness: Vec<f64> = (0..10).map(f64::from).collect();
        let pop = scored(&fitness);
        let t = draw_tournament(&pop, 10, &mut rng_from(&[2])).unwrap();
        assert_eq!(t.winner, 9);
        assert_eq!(t.loser, 0);
        assert!(draw_tournament(&pop, 11, &mut rng_from(&[2])).is_err());
    }

    #[test]
    fn steady_state_mean_never_drops_under_static_fitness() {
        let mut rng = rng_from(&[3]);
        let fitness: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let mut pop = scored(&fitness);
        let cfg = SteadyStateConfig::default();
        let mean =
            |p: &PopulationState<f64>| p.members.iter().map(|m| m.genome).sum::<f64>() / 50.0;
        let mut last = mean(&pop);
        let best = fitness.iter().copied().fold(f64::MIN, f64::max);
        for _ in 0..5000 {
            steady_state_step(&mut pop, &cfg, &mut rng, |g, _| *g, |g| *g).unwrap();
            let m = mean(&pop);
            assert!(m >= last - 1e-12);
            last = m;
            assert_eq!(pop.len(), 50);
        }
        assert!(pop.members.iter().any(|m| m.genome == best));
    }

    #[test]
    fn round_losers_are_distinct() {
        let pop = scored(&(0..30).map(f64::from).collect::<Vec<_>>());
        let cfg = SteadyStateConfig { tournament_size: 5 };
        let mut rng = rng_from(&[21]);
        for _ in 0..50 {
            let round = draw_round(&pop, &cfg, 10, &mut rng).unwrap();
            let mut losers: Vec<usize> = round.iter().map(|t| t.loser).collect();
            losers.sort_unstable();
            losers.dedup();
            assert_eq!(losers.len(), 10);
        }
        assert!(draw_round(&pop, &cfg, 16, &mut rng).is_err());
    }
}
