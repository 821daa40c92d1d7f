//! Genetic search over tag configurations.
//!
//! A chromosome holds one gene per (phase, slot) pair in phase-major blocks.
//! Gene `0` means no tag, gene `i > 0` selects the `i`-th tag size. Genes at
//! infeasible pairs are kept at zero and every phase respects the tag budget;
//! [`repair`] restores both after each operator.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::valuation::Valuation;

/// Maps (phase, slot) pairs to gene positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneLayout {
    pub n_phases: usize,
    pub n_slots: usize,
}

impl GeneLayout {
    pub fn new(n_phases: usize, n_slots: usize) -> Self {
        GeneLayout { n_phases, n_slots }
    }

    pub fn len(&self) -> usize {
        self.n_phases * self.n_slots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, phase: usize, slot: usize) -> usize {
        phase * self.n_slots + slot
    }

    pub fn phase_range(&self, phase: usize) -> std::ops::Range<usize> {
        phase * self.n_slots..(phase + 1) * self.n_slots
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<u8>,
}

impl Chromosome {
    pub fn new(genes: Vec<u8>) -> Self {
        Chromosome { genes }
    }

    pub fn zeros(len: usize) -> Self {
        Chromosome { genes: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn active_count(&self, range: std::ops::Range<usize>) -> usize {
        self.genes[range].iter().filter(|g| **g != 0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverKind {
    #[default]
    SinglePoint,
    TwoPoint,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    #[default]
    Flip,
    Shuffle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub max_iters: usize,
    pub crossover: CrossoverKind,
    pub mutation: MutationKind,
    /// Per-gene mutation probability; `None` means `1 / genes`.
    pub mutation_rate: Option<f64>,
    pub elitism: usize,
    /// Stop after this many generations without improvement.
    pub stall_window: Option<usize>,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 50,
            max_iters: 5000,
            crossover: CrossoverKind::SinglePoint,
            mutation: MutationKind::Flip,
            mutation_rate: None,
            elitism: 2,
            stall_window: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid GA configuration: {0}")]
pub struct GaConfigError(pub String);

impl GaParams {
    pub fn validate(&self) -> Result<(), GaConfigError> {
        let bad = |m: &str| Err(GaConfigError(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.elitism >= self.population {
            return bad("elitism must be smaller than the population");
        }
        if (self.population - self.elitism) % 2 != 0 {
            return bad("population minus elitism must be even");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        if self.stall_window == Some(0) {
            return bad("stall_window must be at least 1");
        }
        Ok(())
    }
}

/// Zeroes infeasible genes, then randomly drops actives in any phase over budget.
pub fn repair(
    mut c: Chromosome,
    mask: &[bool],
    layout: &GeneLayout,
    max_tags_per_phase: usize,
    rng: &mut impl Rng,
) -> Chromosome {
    for (g, &ok) in c.genes.iter_mut().zip(mask) {
        if !ok {
            *g = 0;
        }
    }
    for phase in 0..layout.n_phases {
        let range = layout.phase_range(phase);
        let active: Vec<usize> = range.clone().filter(|&i| c.genes[i] != 0).collect();
        if active.len() > max_tags_per_phase {
            let excess = active.len() - max_tags_per_phase;
            for k in sample(rng, active.len(), excess) {
                c.genes[active[k]] = 0;
            }
        }
    }
    c
}

/// Random chromosomes: each gene is empty with probability 1/2, otherwise a
/// uniformly chosen size. Repaired before returning.
pub fn random_population(
    mask: &[bool],
    layout: &GeneLayout,
    n_sizes: usize,
    max_tags_per_phase: usize,
    size: usize,
    rng: &mut impl Rng,
) -> Vec<Chromosome> {
    (0..size)
        .map(|_| {
            let genes = (0..layout.len())
                .map(|_| {
                    if rng.random_bool(0.5) {
                        0
                    } else {
                        rng.random_range(1..=n_sizes) as u8
                    }
                })
                .collect();
            repair(Chromosome::new(genes), mask, layout, max_tags_per_phase, rng)
        })
        .collect()
}

/// Roulette wheel over scores shifted to be positive.
pub fn select_pair<'a>(
    population: &'a [Chromosome],
    scores: &[f64],
    rng: &mut impl Rng,
) -> (&'a Chromosome, &'a Chromosome) {
    assert!(population.len() >= 2 && population.len() == scores.len());
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = 1e-9 * (max - min + 1.0);
    let weights: Vec<f64> = scores.iter().map(|s| s - min + delta).collect();
    let total: f64 = weights.iter().sum();
    let draw = |rng: &mut dyn rand::RngCore| {
        let mut x = rng.random_range(0.0..total);
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        weights.len() - 1
    };
    let a = draw(rng);
    let b = draw(rng);
    (&population[a], &population[b])
}

/// Recombines two parents. Children are not repaired.
pub fn crossover(
    a: &Chromosome,
    b: &Chromosome,
    kind: CrossoverKind,
    rng: &mut impl Rng,
) -> (Chromosome, Chromosome) {
    assert_eq!(a.len(), b.len(), "parents must have equal length");
    let n = a.len();
    let mut x = a.clone();
    let mut y = b.clone();
    let swap_range = |x: &mut Chromosome, y: &mut Chromosome, r: std::ops::Range<usize>| {
        x.genes[r.clone()].swap_with_slice(&mut y.genes[r]);
    };
    match kind {
        CrossoverKind::SinglePoint => {
            let cut = rng.random_range(0..=n);
            swap_range(&mut x, &mut y, cut..n);
        }
        CrossoverKind::TwoPoint => {
            let i = rng.random_range(0..=n);
            let j = rng.random_range(0..=n);
            swap_range(&mut x, &mut y, i.min(j)..i.max(j));
        }
        CrossoverKind::Uniform => {
            for k in 0..n {
                if rng.random_bool(0.5) {
                    std::mem::swap(&mut x.genes[k], &mut y.genes[k]);
                }
            }
        }
    }
    (x, y)
}

/// Longest window permuted by shuffle mutation.
pub const SHUFFLE_WINDOW: usize = 8;

/// Random tweak of one chromosome. The result is not repaired.
///
/// Flip resamples each gene with probability `rate` to a different value
/// in `0..=n_sizes`; shuffle permutes one random window of at most
/// [`SHUFFLE_WINDOW`] genes with probability `min(1, rate * len)`.
pub fn mutate(
    mut c: Chromosome,
    kind: MutationKind,
    rate: f64,
    n_sizes: usize,
    rng: &mut impl Rng,
) -> Chromosome {
    if rate <= 0.0 || c.is_empty() {
        return c;
    }
    match kind {
        MutationKind::Flip => {
            for g in &mut c.genes {
                if rng.random_bool(rate) {
                    // uniform over the n_sizes other values
                    let mut v = rng.random_range(0..n_sizes as u8);
                    if v >= *g {
                        v += 1;
                    }
                    *g = v;
                }
            }
        }
        MutationKind::Shuffle => {
            let p = (rate * c.len() as f64).min(1.0);
            if c.len() >= 2 && rng.random_bool(p) {
                let w = rng.random_range(2..=SHUFFLE_WINDOW.min(c.len()));
                let start = rng.random_range(0..=c.len() - w);
                c.genes[start..start + w].shuffle(rng);
            }
        }
    }
    c
}

/// One generation of the search history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub best: f64,
    pub mean: f64,
    /// Cumulative number of distinct fitness evaluations.
    pub evaluations: usize,
    /// Fraction of lookup-table column requests served from cache so far.
    pub cache_hit_rate: f64,
}

#[derive(Clone, Debug)]
pub struct GaResult {
    pub best: Chromosome,
    pub best_score: f64,
    pub history: Vec<HistoryRecord>,
}

/// Mutation rate used when none is configured.
pub fn default_mutation_rate(n_genes: usize) -> f64 {
    1.0 / n_genes.max(1) as f64
}

/// Runs the generational loop with elitism.
///
/// Fitness is evaluated in parallel; all random draws happen on the calling
/// thread, so results do not depend on the worker count.
pub fn run(valuation: &Valuation<'_>, params: &GaParams) -> Result<GaResult, GaConfigError> {
    params.validate()?;
    let problem = valuation.problem;
    let mask = &problem.feasible;
    let layout = &problem.layout;
    let n_sizes = problem.n_sizes();
    let budget = problem.params.max_tags_per_phase;
    let rate = params
        .mutation_rate
        .unwrap_or_else(|| default_mutation_rate(mask.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut population = random_population(mask, layout, n_sizes, budget, params.population, &mut rng);
    let mut history = Vec::new();
    let mut evaluations = 0usize;
    let mut memo: HashMap<Chromosome, f64> = HashMap::new();
    let mut best: Option<(Chromosome, f64)> = None;
    let mut stalled = 0usize;

    for iteration in 0..params.max_iters {
        let missing: Vec<&Chromosome> = {
            let mut seen = std::collections::HashSet::new();
            population
                .iter()
                .filter(|c| !memo.contains_key(*c) && seen.insert(*c))
                .collect()
        };
        let fresh: Vec<f64> = missing.par_iter().map(|c| valuation.score(c)).collect();
        evaluations += fresh.len();
        let mut next_memo: HashMap<Chromosome, f64> = missing.into_iter().cloned().zip(fresh).collect();
        for c in &population {
            if !next_memo.contains_key(c) {
                next_memo.insert(c.clone(), memo[c]);
            }
        }
        memo = next_memo;
        let scores: Vec<f64> = population.iter().map(|c| memo[c]).collect();

        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&i, &j| {
            scores[j]
                .total_cmp(&scores[i])
                .then_with(|| population[i].genes.cmp(&population[j].genes))
        });
        let gen_best = scores[order[0]];
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let (requests, misses) = valuation.table.request_stats();
        history.push(HistoryRecord {
            iteration,
            best: gen_best,
            mean,
            evaluations,
            cache_hit_rate: if requests == 0 {
                0.0
            } else {
                (requests - misses) as f64 / requests as f64
            },
        });
        match &best {
            Some((_, s)) if gen_best <= *s => stalled += 1,
            _ => {
                best = Some((population[order[0]].clone(), gen_best));
                stalled = 0;
            }
        }
        if iteration + 1 == params.max_iters || params.stall_window.is_some_and(|w| stalled >= w) {
            break;
        }

        let mut next: Vec<Chromosome> = order[..params.elitism]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        while next.len() < params.population {
            let (a, b) = select_pair(&population, &scores, &mut rng);
            let (x, y) = crossover(a, b, params.crossover, &mut rng);
            for child in [x, y] {
                let child = repair(child, mask, layout, budget, &mut rng);
                let child = mutate(child, params.mutation, rate, n_sizes, &mut rng);
                next.push(repair(child, mask, layout, budget, &mut rng));
            }
        }
        population = next;
    }
    let (best, best_score) = best.expect("at least one generation is evaluated");
    Ok(GaResult {
        best,
        best_score,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn layout_is_phase_major() {
        let l = GeneLayout::new(3, 10);
        assert_eq!(l.len(), 30);
        assert_eq!(l.index(0, 4), 4);
        assert_eq!(l.index(2, 1), 21);
        assert_eq!(l.phase_range(1), 10..20);
    }

    #[test]
    fn population_is_deterministic_and_sized() {
        let layout = GeneLayout::new(2, 20);
        let mask = vec![true; 40];
        let a = random_population(&mask, &layout, 3, 32, 50, &mut rng(9));
        let b = random_population(&mask, &layout, 3, 32, 50, &mut rng(9));
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|c| &c.genes).all(|g| *g <= 3));
        let none = vec![false; 40];
        let z = random_population(&none, &layout, 3, 32, 10, &mut rng(9));
        assert!(z.iter().all(|c| c.genes.iter().all(|g| *g == 0)));
    }

    #[test]
    fn repair_examples() {
        let layout = GeneLayout::new(1, 50);
        let mask = vec![true; 50];
        let mut genes = vec![0u8; 50];
        for g in genes.iter_mut().take(10) {
            *g = 1;
        }
        let c = Chromosome::new(genes);
        assert_eq!(repair(c.clone(), &mask, &layout, 32, &mut rng(1)), c);

        let c = Chromosome::new((0..50).map(|i| u8::from(i < 40)).collect());
        let r = repair(c, &mask, &layout, 32, &mut rng(1));
        assert_eq!(r.active_count(0..50), 32);

        let mut mask = vec![true; 50];
        mask[3] = false;
        let mut genes = vec![0u8; 50];
        genes[3] = 2;
        let r = repair(Chromosome::new(genes), &mask, &layout, 32, &mut rng(1));
        assert_eq!(r.genes[3], 0);
    }

    #[test]
    fn selection_handles_negative_scores() {
        let pop: Vec<Chromosome> = (0..3).map(|i| Chromosome::new(vec![i])).collect();
        let scores = [-5.0, -3.0, -10.0];
        let mut r = rng(2);
        for _ in 0..100 {
            let (a, b) = select_pair(&pop, &scores, &mut r);
            assert!(a.genes[0] < 3 && b.genes[0] < 3);
        }
    }

    #[test]
    fn crossover_boundaries_and_identity() {
        let a = Chromosome::new(vec![1, 2, 3, 0, 1]);
        for kind in [CrossoverKind::SinglePoint, CrossoverKind::TwoPoint, CrossoverKind::Uniform] {
            let (x, y) = crossover(&a, &a, kind, &mut rng(3));
            assert_eq!(x, a);
            assert_eq!(y, a);
        }
        let b = Chromosome::new(vec![0, 0, 0, 2, 2]);
        for seed in 0..50 {
            let (x, y) = crossover(&a, &b, CrossoverKind::SinglePoint, &mut rng(seed));
            for k in 0..5 {
                let pair = (x.genes[k], y.genes[k]);
                assert!(pair == (a.genes[k], b.genes[k]) || pair == (b.genes[k], a.genes[k]));
            }
            // a single cut: once swapped, stays swapped
            let swapped: Vec<bool> = (0..5).map(|k| x.genes[k] != a.genes[k]).collect();
            let first = swapped.iter().position(|s| *s).unwrap_or(5);
            assert!(swapped[first..].iter().zip(first..).all(|(s, k)| *s || a.genes[k] == b.genes[k]));
        }
    }

    #[test]
    fn mutation_rate_extremes() {
        let c = Chromosome::new(vec![0, 1, 1, 0, 1, 0]);
        assert_eq!(mutate(c.clone(), MutationKind::Flip, 0.0, 1, &mut rng(4)), c);
        assert_eq!(mutate(c.clone(), MutationKind::Shuffle, 0.0, 1, &mut rng(4)), c);
        let flipped = mutate(c.clone(), MutationKind::Flip, 1.0, 1, &mut rng(4));
        assert_eq!(flipped.genes, vec![1, 0, 0, 1, 0, 1]);
        let mut r = rng(5);
        for _ in 0..100 {
            let m = mutate(Chromosome::new(vec![2; 8]), MutationKind::Flip, 1.0, 3, &mut r);
            assert!(m.genes.iter().all(|g| *g != 2 && *g <= 3));
        }
    }

    #[test]
    fn shuffle_preserves_gene_multiset() {
        let c = Chromosome::new((0..30).map(|i| (i % 4) as u8).collect());
        let mut r = rng(6);
        for _ in 0..100 {
            let m = mutate(c.clone(), MutationKind::Shuffle, 1.0, 3, &mut r);
            let mut a = m.genes.clone();
            let mut b = c.genes.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            let changed: Vec<usize> = (0..30).filter(|&k| m.genes[k] != c.genes[k]).collect();
            if let (Some(f), Some(l)) = (changed.first(), changed.last()) {
                assert!(l - f < SHUFFLE_WINDOW);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaParams::default().validate().is_ok());
        let bad = GaParams { population: 51, ..GaParams::default() };
        assert!(bad.validate().is_err());
        let bad = GaParams { elitism: 50, ..GaParams::default() };
        assert!(bad.validate().is_err());
        let bad = GaParams { population: 1, elitism: 0, ..GaParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equal_scores_select_uniformly() {
        let pop: Vec<Chromosome> = (0..5).map(|i| Chromosome::new(vec![i])).collect();
        let scores = [2.0; 5];
        let mut counts = [0usize; 5];
        let mut r = rng(10);
        for _ in 0..5000 {
            let (a, b) = select_pair(&pop, &scores, &mut r);
            counts[a.genes[0] as usize] += 1;
            counts[b.genes[0] as usize] += 1;
        }
        let expected = 10_000.0 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 4 degrees of freedom, p = 0.01
        assert!(chi2 < 13.277, "chi2 = {chi2}");
    }

    #[test]
    fn dominant_score_is_picked() {
        let pop: Vec<Chromosome> = (0..3).map(|i| Chromosome::new(vec![i])).collect();
        // shifted weights about 0 : 1 : 1001
        let scores = [-1.0, 0.0, 1000.0];
        let mut r = rng(11);
        let mut dom = 0;
        for _ in 0..10_000 {
            let (a, _) = select_pair(&pop, &scores, &mut r);
            dom += usize::from(a.genes[0] == 2);
        }
        assert!(dom > 9900, "{dom}");
    }

    #[test]
    fn crossover_conserves_genes() {
        let mut r = rng(12);
        for kind in [CrossoverKind::SinglePoint, CrossoverKind::TwoPoint, CrossoverKind::Uniform] {
            for _ in 0..200 {
                let a = Chromosome::new((0..40).map(|_| r.random_range(0..4u8)).collect());
                let b = Chromosome::new((0..40).map(|_| r.random_range(0..4u8)).collect());
                let (x, y) = crossover(&a, &b, kind, &mut r);
                let mut before: Vec<(usize, u8)> = a.genes.iter().chain(&b.genes).copied().enumerate().map(|(i, g)| (i % 40, g)).collect();
                let mut after: Vec<(usize, u8)> = x.genes.iter().chain(&y.genes).copied().enumerate().map(|(i, g)| (i % 40, g)).collect();
                before.sort();
                after.sort();
                assert_eq!(before, after, "{kind:?}");
            }
        }
    }

    #[test]
    fn flip_count_follows_binomial() {
        let len = 200;
        let rate = 0.05;
        let mut r = rng(13);
        let trials = 1000;
        let total: usize = (0..trials)
            .map(|_| {
                let c = Chromosome::zeros(len);
                let m = mutate(c, MutationKind::Flip, rate, 2, &mut r);
                m.genes.iter().filter(|g| **g != 0).count()
            })
            .sum();
        let mean = total as f64 / trials as f64;
        let expected = rate * len as f64;
        let sd = (len as f64 * rate * (1.0 - rate) / trials as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd, "{mean} vs {expected}");
    }

    fn tiny_run(seed: u64) -> GaResult {
        let p = crate::test_support::pillar_problem(1, vec![0.23]);
        let v_table = crate::valuation::FimTable::new(&p);
        let v = Valuation::new(&p, &v_table, crate::valuation::CostParams::default()).unwrap();
        run(
            &v,
            &GaParams {
                population: 20,
                max_iters: 40,
                seed,
                ..GaParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn runs_are_deterministic_and_monotone() {
        let a = tiny_run(5);
        let b = tiny_run(5);
        assert_eq!(a.best, b.best);
        assert_eq!(a.best_score, b.best_score);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 40);
        for w in a.history.windows(2) {
            assert!(w[1].best >= w[0].best);
        }
        assert_eq!(a.best_score, a.history.last().unwrap().best);
    }

    #[test]
    fn best_reproduces_its_score() {
        let p = crate::test_support::pillar_problem(2, vec![0.23]);
        let v_table = crate::valuation::FimTable::new(&p);
        let v = Valuation::new(&p, &v_table, crate::valuation::CostParams::default()).unwrap();
        let res = run(&v, &GaParams { population: 10, max_iters: 15, seed: 1, stall_window: Some(5), ..GaParams::default() }).unwrap();
        assert_eq!(v.score(&res.best), res.best_score);
        assert!(res.history.len() <= 15);
        let l = &p.layout;
        for ph in 0..l.n_phases {
            assert!(res.best.active_count(l.phase_range(ph)) <= p.params.max_tags_per_phase);
        }
    }
}
