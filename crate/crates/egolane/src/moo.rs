//! Two-objective optimization of trigger parameters.
//!
//! Cost functions over per-sequence outcomes (availability, accuracy,
//! earliness), fast non-dominated sorting, hypervolume against the (1, 1)
//! reference point, the NSGA-II loop with simulated binary crossover and
//! polynomial mutation, and operating-point selection from a Pareto front.
//!
//! The optimizer keeps an archive of every nondominated point it has
//! evaluated; the returned front is the final archive, whose hypervolume is
//! nondecreasing generation over generation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trigger::TriggerParams;

/// Outcome of running one sequence under a trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceOutcome {
    /// Time step of the decision and whether it named the true hypothesis;
    /// `None` when no prediction was made within the sequence.
    pub decision: Option<(usize, bool)>,
    /// Total sequence length in frames.
    pub length: usize,
}

/// Fraction of predicted sequences whose prediction was wrong. Zero when
/// nothing was predicted: the availability cost carries that penalty.
pub fn cost_accuracy(outcomes: &[SequenceOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Data("cost over an empty outcome set".into()));
    }
    let predicted = outcomes.iter().filter(|o| o.decision.is_some()).count();
    if predicted == 0 {
        return Ok(0.0);
    }
    let wrong = outcomes
        .iter()
        .filter(|o| matches!(o.decision, Some((_, correct)) if !correct))
        .count();
    Ok(wrong as f64 / predicted as f64)
}

/// Mean decision-time ratio t*/L over all sequences; an unpredicted sequence
/// contributes the worst realizable ratio, 1.
pub fn cost_earliness(outcomes: &[SequenceOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Data("cost over an empty outcome set".into()));
    }
    let total: f64 = outcomes
        .iter()
        .map(|o| match o.decision {
            Some((t_star, _)) => t_star as f64 / o.length as f64,
            None => 1.0,
        })
        .sum();
    Ok(total / outcomes.len() as f64)
}

/// Non-prediction rate.
pub fn cost_availability(outcomes: &[SequenceOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Data("cost over an empty outcome set".into()));
    }
    let unpredicted = outcomes.iter().filter(|o| o.decision.is_none()).count();
    Ok(unpredicted as f64 / outcomes.len() as f64)
}

/// One evaluated parameter vector with its costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub c_av: f64,
    pub c_ac: f64,
    pub c_ea: f64,
    #[serde(flatten)]
    pub params: TriggerParams,
}

/// A set of mutually nondominated cost points with their hypervolume against
/// the (1, 1) reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<CostPoint>,
    pub reference: (f64, f64),
    pub hypervolume: f64,
}

fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Deb's fast non-dominated sort (minimization in both coordinates).
/// Returns fronts of indices; front 0 is the nondominated set.
pub fn non_dominated_sort(points: &[(f64, f64)]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut fronts: Vec<Vec<usize>> = vec![Vec::new()];

    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(points[i], points[j]) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(points[j], points[i]) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
        if domination_count[i] == 0 {
            fronts[0].push(i);
        }
    }

    let mut current = 0;
    while !fronts[current].is_empty() {
        let mut next = Vec::new();
        for &p in &fronts[current] {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        fronts.push(next);
        current += 1;
    }
    fronts
}

/// Dominated area between a minimization front and the reference point
/// (1, 1), computed by a sorted sweep. Errors if any point leaves the unit
/// square.
pub fn hypervolume(points: &[(f64, f64)]) -> Result<f64> {
    for &(x, y) in points {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("front point ({x}, {y}) outside the unit square")));
        }
    }
    Ok(hypervolume_clipped(points))
}

/// As [`hypervolume`], silently clipping points to the unit square so that
/// anything at or beyond the reference contributes nothing. Used for
/// generation-progress tracking where early populations may be arbitrarily
/// bad.
pub fn hypervolume_clipped(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    let mut best_y = f64::INFINITY;
    let mut staircase: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (x, y) in pts {
        if y < best_y {
            staircase.push((x, y));
            best_y = y;
        }
    }
    for (i, &(x, y)) in staircase.iter().enumerate() {
        let next_x = staircase.get(i + 1).map_or(1.0, |p| p.0);
        area += (next_x - x) * (1.0 - y);
    }
    area
}

/// The front point minimizing c_av + c_ac; ties pick the lower c_ac.
pub fn select_operating_point(front: &ParetoFront) -> Result<&CostPoint> {
    select_operating_index(front).map(|i| &front.points[i])
}

/// Index form of [`select_operating_point`].
pub fn select_operating_index(front: &ParetoFront) -> Result<usize> {
    if front.points.is_empty() {
        return Err(Error::Data("operating point of an empty front".into()));
    }
    let mut best = 0usize;
    for (i, p) in front.points.iter().enumerate().skip(1) {
        let (bs, bc) = (front.points[best].c_av + front.points[best].c_ac, front.points[best].c_ac);
        let (s, c) = (p.c_av + p.c_ac, p.c_ac);
        if s < bs || (s == bs && c < bc) {
            best = i;
        }
    }
    Ok(best)
}

/// NSGA-II settings. Population and termination match small-budget tuning;
/// operator parameters are the usual library defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NsgaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_eta: f64,
    pub crossover_rate: f64,
    pub mutation_eta: f64,
    /// Per-gene mutation probability; `None` means 1/k.
    pub mutation_rate: Option<f64>,
    pub seed: u64,
}

impl Default for NsgaConfig {
    fn default() -> Self {
        NsgaConfig {
            population: 8,
            generations: 16,
            crossover_eta: 15.0,
            crossover_rate: 0.9,
            mutation_eta: 20.0,
            mutation_rate: None,
            seed: 0,
        }
    }
}

impl NsgaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::config("population", format!("{} must be even and >= 4", self.population)));
        }
        if self.generations < 1 {
            return Err(Error::config("generations", "must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// A genome with its two objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<f64>,
    pub objectives: (f64, f64),
}

/// Result of one NSGA-II run: the archive of all nondominated evaluated
/// points and the archive hypervolume recorded after the initial population
/// and after each generation.
#[derive(Debug, Clone)]
pub struct NsgaOutcome {
    pub front: Vec<Individual>,
    pub generation_hypervolume: Vec<f64>,
}

const GENE_LO: f64 = -1.0;
const GENE_HI: f64 = 1.0;

fn crowding_distance(front: &[usize], objs: &[(f64, f64)]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0f64; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for dim in 0..2 {
        let key = |i: usize| if dim == 0 { objs[front[i]].0 } else { objs[front[i]].1 };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
        let min = key(order[0]);
        let max = key(order[n - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if max > min {
            for w in 1..n - 1 {
                dist[order[w]] += (key(order[w + 1]) - key(order[w - 1])) / (max - min);
            }
        }
    }
    dist
}

fn sbx_crossover(a: f64, b: f64, eta: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if (a - b).abs() < 1e-14 {
        return (a, b);
    }
    let (y1, y2) = if a < b { (a, b) } else { (b, a) };
    let u: f64 = rng.gen();
    let spread = |bound_term: f64| -> f64 {
        let beta = 1.0 + 2.0 * bound_term / (y2 - y1);
        let alpha = 2.0 - beta.powf(-(eta + 1.0));
        if u <= 1.0 / alpha {
            (u * alpha).powf(1.0 / (eta + 1.0))
        } else {
            (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
        }
    };
    let betaq1 = spread(y1 - GENE_LO);
    let c1 = 0.5 * ((y1 + y2) - betaq1 * (y2 - y1));
    let betaq2 = spread(GENE_HI - y2);
    let c2 = 0.5 * ((y1 + y2) + betaq2 * (y2 - y1));
    (c1.clamp(GENE_LO, GENE_HI), c2.clamp(GENE_LO, GENE_HI))
}

fn polynomial_mutation(y: f64, eta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen();
    let span = GENE_HI - GENE_LO;
    let pow = 1.0 / (eta + 1.0);
    let deltaq = if u < 0.5 {
        let delta = (y - GENE_LO) / span;
        let val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta).powf(eta + 1.0);
        val.powf(pow) - 1.0
    } else {
        let delta = (GENE_HI - y) / span;
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta).powf(eta + 1.0);
        1.0 - val.powf(pow)
    };
    (y + deltaq * span).clamp(GENE_LO, GENE_HI)
}

/// Insert into the nondominated archive; drops the candidate if dominated or
/// an exact objective duplicate, and evicts archive members it dominates.
fn archive_insert(archive: &mut Vec<Individual>, candidate: &Individual) {
    for kept in archive.iter() {
        if dominates(kept.objectives, candidate.objectives) || kept.objectives == candidate.objectives {
            return;
        }
    }
    archive.retain(|kept| !dominates(candidate.objectives, kept.objectives));
    archive.push(candidate.clone());
}

/// Run NSGA-II over the box [-1, 1]^gene_count against a deterministic
/// two-objective function (minimization).
pub fn nsga2<F>(config: &NsgaConfig, gene_count: usize, mut objective: F) -> Result<NsgaOutcome>
where
    F: FnMut(&[f64]) -> (f64, f64),
{
    config.validate()?;
    assert!(gene_count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mutation_rate = config.mutation_rate.unwrap_or(1.0 / gene_count as f64);

    let mut archive: Vec<Individual> = Vec::new();
    let mut evaluate = |genes: Vec<f64>, archive: &mut Vec<Individual>| -> Individual {
        let objectives = objective(&genes);
        let individual = Individual { genes, objectives };
        archive_insert(archive, &individual);
        individual
    };

    let mut population: Vec<Individual> = (0..config.population)
        .map(|_| {
            let genes = (0..gene_count).map(|_| rng.gen_range(GENE_LO..=GENE_HI)).collect();
            evaluate(genes, &mut archive)
        })
        .collect();

    let mut generation_hypervolume = Vec::with_capacity(config.generations + 1);
    let archive_hv =
        |archive: &[Individual]| hypervolume_clipped(&archive.iter().map(|i| i.objectives).collect::<Vec<_>>());
    generation_hypervolume.push(archive_hv(&archive));

    for _gen in 0..config.generations {
        let objs: Vec<(f64, f64)> = population.iter().map(|i| i.objectives).collect();
        let fronts = non_dominated_sort(&objs);
        let mut rank = vec![0usize; population.len()];
        let mut crowd = vec![0.0f64; population.len()];
        for (r, front) in fronts.iter().enumerate() {
            let dist = crowding_distance(front, &objs);
            for (&idx, &d) in front.iter().zip(&dist) {
                rank[idx] = r;
                crowd[idx] = d;
            }
        }

        // Binary tournament on (rank, crowding distance); ties keep the
        // first contender so selection is deterministic under the seed.
        let mut tournament = |rng: &mut ChaCha8Rng| -> usize {
            let a = rng.gen_range(0..population.len());
            let b = rng.gen_range(0..population.len());
            if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
                b
            } else {
                a
            }
        };

        let mut offspring = Vec::with_capacity(config.population);
        while offspring.len() < config.population {
            let p1 = tournament(&mut rng);
            let p2 = tournament(&mut rng);
            let mut g1 = population[p1].genes.clone();
            let mut g2 = population[p2].genes.clone();
            if rng.gen::<f64>() <= config.crossover_rate {
                for k in 0..gene_count {
                    if rng.gen::<f64>() <= 0.5 {
                        let (c1, c2) = sbx_crossover(g1[k], g2[k], config.crossover_eta, &mut rng);
                        if rng.gen::<f64>() <= 0.5 {
                            g1[k] = c2;
                            g2[k] = c1;
                        } else {
                            g1[k] = c1;
                            g2[k] = c2;
                        }
                    }
                }
            }
            for genes in [&mut g1, &mut g2] {
                for k in 0..gene_count {
                    if rng.gen::<f64>() <= mutation_rate {
                        genes[k] = polynomial_mutation(genes[k], config.mutation_eta, &mut rng);
                    }
                }
            }
            offspring.push(evaluate(g1, &mut archive));
            if offspring.len() < config.population {
                offspring.push(evaluate(g2, &mut archive));
            }
        }

        // Elitist environmental selection over parents + offspring.
        let mut pool = population;
        pool.extend(offspring);
        let pool_objs: Vec<(f64, f64)> = pool.iter().map(|i| i.objectives).collect();
        let pool_fronts = non_dominated_sort(&pool_objs);
        let mut next: Vec<Individual> = Vec::with_capacity(config.population);
        for front in &pool_fronts {
            if next.len() == config.population {
                break;
            }
            if next.len() + front.len() <= config.population {
                next.extend(front.iter().map(|&i| pool[i].clone()));
            } else {
                let dist = crowding_distance(front, &pool_objs);
                let mut order: Vec<usize> = (0..front.len()).collect();
                order.sort_by(|&a, &b| {
                    dist[b].partial_cmp(&dist[a]).unwrap().then(front[a].cmp(&front[b]))
                });
                for &w in &order {
                    if next.len() == config.population {
                        break;
                    }
                    next.push(pool[front[w]].clone());
                }
            }
        }
        population = next;
        generation_hypervolume.push(archive_hv(&archive));
    }

    // Deterministic front order: by objectives.
    archive.sort_by(|a, b| a.objectives.partial_cmp(&b.objectives).unwrap());
    Ok(NsgaOutcome { front: archive, generation_hypervolume })
}
