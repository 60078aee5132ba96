//! Cooperative synapse neuroevolution over a population matrix.
//!
//! Each row of the matrix is one genome and each column one weight. A
//! generation evaluates and sorts the rows, replaces the bottom three
//! quarters with offspring of the top quarter, then shuffles a
//! fitness-dependent subset of every column.
//!
//! All randomness is derived from the master seed and the generation
//! counter, so a run can be resumed from a [`Checkpoint`] bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{apply_prune, init_genome, ArchSpec, Genome};
use crate::seed::{derive_seed, rng_for, tags, SimRng};

/// Lower end of the shifted fitness range used for permutation.
pub const FITNESS_SHIFT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub p_mut: f64,
    pub sigma_mut: f64,
    /// Disable to run crossover and mutation only.
    pub permute: bool,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            p_mut: 0.5,
            sigma_mut: 0.6,
            permute: true,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::ParamOutOfRange(format!(
                "population {} must be at least 4",
                self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.p_mut) {
            return Err(Error::ParamOutOfRange(format!("p_mut {} outside [0, 1]", self.p_mut)));
        }
        if !(self.sigma_mut >= 0.0 && self.sigma_mut.is_finite()) {
            return Err(Error::ParamOutOfRange(format!("sigma_mut {} must be ≥ 0", self.sigma_mut)));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        self.population / 4
    }

    pub fn offspring(&self) -> usize {
        self.population - self.elites()
    }
}

/// Fitness of a genome. Must be deterministic given `seed`.
pub trait FitnessFn: Sync {
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<f64>;
}

impl<F> FitnessFn for F
where
    F: Fn(&Genome, u64) -> Result<f64> + Sync,
{
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<f64> {
        self(genome, seed)
    }
}

/// The population matrix with per-row masks and fitness values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    arch: ArchSpec,
    rows: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
    fitness: Vec<Option<f64>>,
}

impl Population {
    pub fn new(arch: ArchSpec, rows: Vec<Vec<f64>>, masks: Vec<Vec<bool>>) -> Result<Self> {
        arch.validate()?;
        let n = arch.num_weights();
        if rows.len() != masks.len() || rows.is_empty() {
            return Err(Error::ShapeMismatch("population needs matching rows and masks".into()));
        }
        if rows.iter().any(|r| r.len() != n) || masks.iter().any(|m| m.len() != n) {
            return Err(Error::ShapeMismatch(format!("every row must hold {n} genes")));
        }
        let fitness = vec![None; rows.len()];
        Ok(Self { arch, rows, masks, fitness })
    }

    /// Random population; row `l` is drawn from its own stream.
    pub fn random(arch: &ArchSpec, size: usize, seed: u64) -> Result<Self> {
        let genomes = (0..size)
            .map(|l| init_genome(arch, &mut rng_for(seed, &[tags::INIT, l as u64])))
            .collect::<Result<Vec<_>>>()?;
        Self::from_genomes(&genomes)
    }

    pub fn from_genomes(genomes: &[Genome]) -> Result<Self> {
        let arch = genomes
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty population".into()))?
            .arch()
            .clone();
        if genomes.iter().any(|g| g.arch() != &arch) {
            return Err(Error::ShapeMismatch("all rows must share one architecture".into()));
        }
        Self::new(
            arch,
            genomes.iter().map(|g| g.weights().to_vec()).collect(),
            genomes.iter().map(|g| g.mask().to_vec()).collect(),
        )
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    pub fn mask(&self, l: usize) -> &[bool] {
        &self.masks[l]
    }

    pub fn fitness(&self) -> &[Option<f64>] {
        &self.fitness
    }

    pub fn genome(&self, l: usize) -> Genome {
        Genome::new(self.arch.clone(), self.rows[l].clone(), self.masks[l].clone())
            .expect("population rows always match the architecture")
    }

    /// Column `m` of the matrix.
    pub fn column(&self, m: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[m]).collect()
    }

    /// Fitness of every row, failing if any row is unevaluated.
    pub fn fitness_values(&self) -> Result<Vec<f64>> {
        self.fitness
            .iter()
            .enumerate()
            .map(|(l, f)| {
                f.ok_or_else(|| Error::ShapeMismatch(format!("row {l} has not been evaluated")))
            })
            .collect()
    }
}

fn evaluate_rows(
    pop: &Population,
    fit: &dyn FitnessFn,
    seed: u64,
    prune: Option<f64>,
) -> Vec<Result<(Genome, f64)>> {
    let eval = |l: usize| -> Result<(Genome, f64)> {
        let mut genome = pop.genome(l);
        if let Some(p) = prune {
            genome = apply_prune(&genome, p)?;
        }
        let f = fit
            .evaluate(&genome, derive_seed(seed, &[l as u64]))
            .and_then(|f| {
                if f.is_nan() {
                    Err(Error::InvalidDistribution("fitness is NaN".into()))
                } else {
                    Ok(f)
                }
            })
            .map_err(|e| Error::EvaluationFailed { row: l, source: Box::new(e) })?;
        Ok((genome, f))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..pop.len()).into_par_iter().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..pop.len()).map(eval).collect()
    }
}

fn evaluate_with(
    pop: &Population,
    fit: &dyn FitnessFn,
    seed: u64,
    prune: Option<f64>,
) -> Result<Population> {
    let results = evaluate_rows(pop, fit, seed, prune)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].1.total_cmp(&results[a].1));
    let mut out = pop.clone();
    for (dst, &src) in order.iter().enumerate() {
        let (genome, f) = &results[src];
        out.rows[dst] = genome.weights().to_vec();
        out.masks[dst] = genome.mask().to_vec();
        out.fitness[dst] = Some(*f);
    }
    Ok(out)
}

/// Evaluate every row (row `l` with seed `derive_seed(seed, [l])`) and sort
/// by descending fitness. Ties keep their relative order.
pub fn evaluate_and_sort(pop: &Population, fit: &dyn FitnessFn, seed: u64) -> Result<Population> {
    evaluate_with(pop, fit, seed, None)
}

/// Keep the top quarter and overwrite the rest with mutated uniform
/// crossovers of two distinct elite parents. Offspring masks are the AND of
/// the parent masks and only unmasked genes mutate.
pub fn breed(pop: &Population, cfg: &EvolutionConfig, rng: &mut SimRng) -> Result<Population> {
    cfg.validate()?;
    if pop.len() != cfg.population {
        return Err(Error::ShapeMismatch(format!(
            "population has {} rows, config expects {}",
            pop.len(),
            cfg.population
        )));
    }
    let elites = cfg.elites();
    let n = pop.num_weights();
    let mut out = pop.clone();
    for l in elites..pop.len() {
        let p1 = rng.random_range(0..elites);
        let p2 = if elites > 1 {
            let other = rng.random_range(0..elites - 1);
            if other >= p1 {
                other + 1
            } else {
                other
            }
        } else {
            p1
        };
        let (r1, r2) = (&pop.rows[p1], &pop.rows[p2]);
        let (m1, m2) = (&pop.masks[p1], &pop.masks[p2]);
        let mut row = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for j in 0..n {
            let from_first: bool = rng.random();
            let live = m1[j] && m2[j];
            let mut gene = if from_first { r1[j] } else { r2[j] };
            if !live {
                gene = 0.0;
            } else if cfg.p_mut > 0.0 && rng.random::<f64>() < cfg.p_mut {
                let z: f64 = rng.sample(StandardNormal);
                gene += cfg.sigma_mut * z;
            }
            row.push(gene);
            mask.push(live);
        }
        out.rows[l] = row;
        out.masks[l] = mask;
        out.fitness[l] = None;
    }
    Ok(out)
}

/// Affine map of `fitness` onto `[FITNESS_SHIFT_FLOOR, 1]`. A constant
/// vector maps to all ones.
pub fn shift_fitness(fitness: &[f64]) -> Vec<f64> {
    let max = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = fitness.iter().copied().fold(f64::INFINITY, f64::min);
    let span = max - min;
    fitness
        .iter()
        .map(|&f| {
            if span > 0.0 {
                FITNESS_SHIFT_FLOOR + (1.0 - FITNESS_SHIFT_FLOOR) * (f - min) / span
            } else {
                1.0
            }
        })
        .collect()
}

/// `1 − ratio^(1/N_w)` for a shifted fitness ratio in `(0, 1]`.
pub fn permutation_probability(ratio: f64, num_weights: usize) -> f64 {
    -(ratio.ln() / num_weights as f64).exp_m1()
}

/// Mark each gene of row `l` with the permutation probability derived from
/// `fitness[l]`, then shuffle the marked genes of each column among
/// themselves. Genes whose mask bit is 0 are never marked.
pub fn permute_columns(pop: &Population, fitness: &[f64], rng: &mut SimRng) -> Result<Population> {
    if fitness.len() != pop.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} fitness values for {} rows",
            fitness.len(),
            pop.len()
        )));
    }
    let n = pop.num_weights();
    let shifted = shift_fitness(fitness);
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = shifted.iter().map(|f| permutation_probability(f / max, n)).collect();
    let mut out = pop.clone();
    let mut marked = Vec::with_capacity(pop.len());
    let mut values = Vec::with_capacity(pop.len());
    for j in 0..n {
        marked.clear();
        for (l, &p) in probs.iter().enumerate() {
            if pop.masks[l][j] && rng.random::<f64>() < p {
                marked.push(l);
            }
        }
        if marked.len() < 2 {
            continue;
        }
        values.clear();
        values.extend(marked.iter().map(|&l| pop.rows[l][j]));
        values.shuffle(rng);
        for (&l, &v) in marked.iter().zip(&values) {
            out.rows[l][j] = v;
        }
    }
    Ok(out)
}

/// One point of the fitness curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub generation: usize,
    /// Best fitness in this generation's evaluation.
    pub best: f64,
    pub mean: f64,
    pub best_ever: f64,
}

/// Resumable state of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub generation: usize,
    pub config: EvolutionConfig,
    pub prune: Option<f64>,
    pub population: Population,
    pub best_weights: Vec<f64>,
    pub best_mask: Vec<bool>,
    pub best_fitness: f64,
    pub curve: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// An evolution run advanced one generation at a time.
pub struct Evolution<'a> {
    cfg: EvolutionConfig,
    fit: &'a dyn FitnessFn,
    prune: Option<f64>,
    pop: Population,
    generation: usize,
    best: Genome,
    best_fitness: f64,
    curve: Vec<CurvePoint>,
}

impl<'a> Evolution<'a> {
    /// Random initial population, evaluated as generation 0.
    pub fn new(arch: &ArchSpec, cfg: EvolutionConfig, fit: &'a dyn FitnessFn) -> Result<Self> {
        cfg.validate()?;
        let pop = Population::random(arch, cfg.population, cfg.seed)?;
        Self::from_population(pop, cfg, fit, None)
    }

    /// Start from an explicit population. With `prune = Some(p)` every row
    /// is pruned by `p` right before each evaluation and keeps the result.
    pub fn from_population(
        pop: Population,
        cfg: EvolutionConfig,
        fit: &'a dyn FitnessFn,
        prune: Option<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pop.len() != cfg.population {
            return Err(Error::ShapeMismatch(format!(
                "population has {} rows, config expects {}",
                pop.len(),
                cfg.population
            )));
        }
        let pop = evaluate_with(&pop, fit, eval_seed(cfg.seed, 0), prune)?;
        let best = pop.genome(0);
        let best_fitness = pop.fitness[0].expect("evaluated");
        let mut run = Self {
            cfg,
            fit,
            prune,
            pop,
            generation: 0,
            best,
            best_fitness,
            curve: Vec::new(),
        };
        run.record();
        Ok(run)
    }

    pub fn resume(checkpoint: Checkpoint, fit: &'a dyn FitnessFn) -> Result<Self> {
        checkpoint.config.validate()?;
        let best = Genome::new(
            checkpoint.population.arch.clone(),
            checkpoint.best_weights,
            checkpoint.best_mask,
        )?;
        checkpoint.population.fitness_values()?;
        Ok(Self {
            cfg: checkpoint.config,
            fit,
            prune: checkpoint.prune,
            pop: checkpoint.population,
            generation: checkpoint.generation,
            best,
            best_fitness: checkpoint.best_fitness,
            curve: checkpoint.curve,
        })
    }

    fn record(&mut self) {
        let values: Vec<f64> = self.pop.fitness.iter().map(|f| f.expect("evaluated")).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        self.curve.push(CurvePoint {
            generation: self.generation,
            best: values[0],
            mean,
            best_ever: self.best_fitness,
        });
    }

    /// Breed, permute and evaluate one more generation.
    pub fn step(&mut self) -> Result<()> {
        let g = self.generation as u64 + 1;
        let ranks = self.pop.fitness_values()?;
        let mut next = breed(&self.pop, &self.cfg, &mut rng_for(self.cfg.seed, &[tags::BREED, g]))?;
        if self.cfg.permute {
            next = permute_columns(&next, &ranks, &mut rng_for(self.cfg.seed, &[tags::PERMUTE, g]))?;
        }
        self.pop = evaluate_with(&next, self.fit, eval_seed(self.cfg.seed, g), self.prune)?;
        self.generation += 1;
        let top = self.pop.fitness[0].expect("evaluated");
        if top > self.best_fitness {
            self.best_fitness = top;
            self.best = self.pop.genome(0);
        }
        self.record();
        log::debug!(
            "generation {}: best {:.6}, best-ever {:.6}",
            self.generation,
            top,
            self.best_fitness
        );
        Ok(())
    }

    /// Step until the configured number of generations is reached.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.generation >= self.cfg.generations
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn best(&self) -> (&Genome, f64) {
        (&self.best, self.best_fitness)
    }

    /// Top row of the latest evaluated generation.
    pub fn current_best(&self) -> (Genome, f64) {
        (self.pop.genome(0), self.pop.fitness[0].expect("evaluated"))
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generation: self.generation,
            config: self.cfg.clone(),
            prune: self.prune,
            population: self.pop.clone(),
            best_weights: self.best.weights().to_vec(),
            best_mask: self.best.mask().to_vec(),
            best_fitness: self.best_fitness,
            curve: self.curve.clone(),
        }
    }
}

fn eval_seed(seed: u64, generation: u64) -> u64 {
    derive_seed(seed, &[tags::EVAL, generation])
}

/// Full run: returns the best-ever genome and the per-generation curve.
pub fn run_evolution(
    arch: &ArchSpec,
    cfg: &EvolutionConfig,
    fit: &dyn FitnessFn,
) -> Result<(Genome, Vec<CurvePoint>)> {
    let mut run = Evolution::new(arch, cfg.clone(), fit)?;
    run.run_to_end()?;
    let (best, _) = run.best();
    Ok((best.clone(), run.curve().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn arch10() -> ArchSpec {
        ArchSpec::single(4, vec![], 2)
    }

    fn sphere(target: Vec<f64>) -> impl Fn(&Genome, u64) -> Result<f64> + Sync {
        move |g: &Genome, _| Ok(-g.weights().iter().zip(&target).map(|(w, t)| (w - t).powi(2)).sum::<f64>())
    }

    #[test]
    fn elite_and_offspring_counts() {
        let cfg = EvolutionConfig::default();
        assert_eq!((cfg.elites(), cfg.offspring()), (12, 38));
    }

    #[test]
    fn constant_fitness_keeps_order() {
        let pop = Population::random(&arch10(), 8, 1).unwrap();
        let sorted = evaluate_and_sort(&pop, &|_: &Genome, _| Ok(1.0), 0).unwrap();
        for l in 0..8 {
            assert_eq!(sorted.row(l), pop.row(l));
        }
    }

    #[test]
    fn sorting_restores_canonical_order() {
        // Fitness = −(original index), recovered from gene 0.
        let rows: Vec<Vec<f64>> = [3, 0, 5, 1, 4, 2]
            .iter()
            .map(|&i| {
                let mut r = vec![0.0; 10];
                r[0] = i as f64;
                r
            })
            .collect();
        let pop = Population::new(arch10(), rows, vec![vec![true; 10]; 6]).unwrap();
        let sorted = evaluate_and_sort(&pop, &|g: &Genome, _| Ok(-g.weights()[0]), 0).unwrap();
        let order: Vec<f64> = (0..6).map(|l| sorted.row(l)[0]).collect();
        assert_eq!(order, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(sorted.fitness_values().unwrap(), vec![-0.0, -1.0, -2.0, -3.0, -4.0, -5.0]);
    }

    #[test]
    fn failures_carry_row_index() {
        let pop = Population::random(&arch10(), 5, 1).unwrap();
        let bad = pop.row(3)[0];
        let fail = move |g: &Genome, _| {
            if g.weights()[0] == bad {
                Err(Error::ZeroLikelihood)
            } else {
                Ok(0.0)
            }
        };
        match evaluate_and_sort(&pop, &fail, 0) {
            Err(Error::EvaluationFailed { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn elites_survive_and_offspring_inherit() {
        let cfg = EvolutionConfig { population: 20, p_mut: 0.0, ..Default::default() };
        let pop = evaluate_and_sort(
            &Population::random(&arch10(), 20, 4).unwrap(),
            &sphere(vec![0.0; 10]),
            0,
        )
        .unwrap();
        let bred = breed(&pop, &cfg, &mut SimRng::seed_from_u64(1)).unwrap();
        for l in 0..5 {
            assert_eq!(bred.row(l), pop.row(l));
            assert_eq!(bred.fitness()[l], pop.fitness()[l]);
        }
        for l in 5..20 {
            assert!(bred.fitness()[l].is_none());
            for j in 0..10 {
                let g = bred.row(l)[j];
                assert!((0..5).any(|p| pop.row(p)[j].to_bits() == g.to_bits()));
            }
        }
    }

    #[test]
    fn identical_parents_without_mutation_copy_exactly() {
        let g = init_genome(&arch10(), &mut SimRng::seed_from_u64(2)).unwrap();
        let pop = Population::from_genomes(&vec![g.clone(); 8]).unwrap();
        let cfg = EvolutionConfig { population: 8, p_mut: 0.0, ..Default::default() };
        let bred = breed(&pop, &cfg, &mut SimRng::seed_from_u64(3)).unwrap();
        for l in 0..8 {
            assert_eq!(bred.row(l), g.weights());
        }
    }

    #[test]
    fn offspring_masks_are_parent_and() {
        let arch = arch10();
        let mut r = SimRng::seed_from_u64(5);
        let genomes: Vec<Genome> = (0..8)
            .map(|_| apply_prune(&init_genome(&arch, &mut r).unwrap(), 0.3).unwrap())
            .collect();
        let pop = Population::from_genomes(&genomes).unwrap();
        let cfg = EvolutionConfig { population: 8, p_mut: 1.0, ..Default::default() };
        let bred = breed(&pop, &cfg, &mut SimRng::seed_from_u64(6)).unwrap();
        for l in 2..8 {
            for j in 0..10 {
                if !bred.mask(l)[j] {
                    assert_eq!(bred.row(l)[j], 0.0);
                }
                // Only elite rows 0 and 1 are parents; the AND cannot revive.
                if bred.mask(l)[j] {
                    assert!(pop.mask(0)[j] && pop.mask(1)[j]);
                }
            }
        }
    }

    #[test]
    fn permutation_probability_values() {
        assert_eq!(permutation_probability(1.0, 100), 0.0);
        let p = permutation_probability(0.5, 100);
        assert!((p - (1.0 - 0.5f64.powf(0.01))).abs() < 1e-15);
        assert!((p - 0.00691).abs() < 1e-5);
    }

    #[test]
    fn shift_maps_to_unit_range() {
        let s = shift_fitness(&[-0.75, 0.05, -0.2]);
        assert_eq!(s[1], 1.0);
        assert_eq!(s[0], FITNESS_SHIFT_FLOOR);
        assert!(s[2] > s[0] && s[2] < 1.0);
        assert_eq!(shift_fitness(&[2.0, 2.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn best_row_is_never_permuted() {
        // Three genes, so the lower rows are marked with high probability.
        let arch = ArchSpec::single(2, vec![], 1);
        let pop = Population::random(&arch, 8, 3).unwrap();
        let fitness: Vec<f64> = (0..8).map(|l| -(l as f64)).collect();
        let mut changed = false;
        for seed in 0..20 {
            let out = permute_columns(&pop, &fitness, &mut SimRng::seed_from_u64(seed)).unwrap();
            assert_eq!(out.row(0), pop.row(0));
            changed |= out != pop;
        }
        assert!(changed);
    }

    proptest! {
        #[test]
        fn permutation_preserves_column_multisets(seed in any::<u64>(), prune in 0.0f64..0.6) {
            let arch = ArchSpec::single(3, vec![4], 2);
            let mut r = SimRng::seed_from_u64(seed);
            let genomes: Vec<Genome> = (0..12)
                .map(|_| {
                    let g = init_genome(&arch, &mut r).unwrap();
                    if prune > 0.05 { apply_prune(&g, prune).unwrap() } else { g }
                })
                .collect();
            let pop = Population::from_genomes(&genomes).unwrap();
            let fitness: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
            let out = permute_columns(&pop, &fitness, &mut r).unwrap();
            for j in 0..pop.num_weights() {
                let mut a: Vec<u64> = pop.column(j).iter().map(|v| v.to_bits()).collect();
                let mut b: Vec<u64> = out.column(j).iter().map(|v| v.to_bits()).collect();
                a.sort_unstable();
                b.sort_unstable();
                prop_assert_eq!(a, b);
                for l in 0..12 {
                    if !pop.mask(l)[j] {
                        prop_assert_eq!(out.row(l)[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_generations_returns_initial_best() {
        let cfg = EvolutionConfig { population: 8, generations: 0, ..Default::default() };
        let fit = sphere(vec![0.0; 10]);
        let (best, curve) = run_evolution(&arch10(), &cfg, &fit).unwrap();
        assert_eq!(curve.len(), 1);
        let pop = evaluate_and_sort(&Population::random(&arch10(), 8, 0).unwrap(), &fit, 0).unwrap();
        assert_eq!(best.weights(), pop.row(0));
    }

    #[test]
    fn sphere_converges_and_best_ever_is_monotone() {
        let target: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 5.0).collect();
        let cfg = EvolutionConfig { generations: 200, seed: 17, ..Default::default() };
        let fit = sphere(target.clone());
        let (best, curve) = run_evolution(&arch10(), &cfg, &fit).unwrap();
        assert_eq!(curve.len(), 201);
        for w in curve.windows(2) {
            assert!(w[1].best_ever >= w[0].best_ever);
        }
        let last = curve.last().unwrap().best_ever;
        assert!(last >= -0.1, "best-ever {last}");
        assert_eq!(fit(&best, 0).unwrap(), last);
    }

    #[test]
    fn runs_are_reproducible_and_resumable() {
        let fit = sphere(vec![0.3; 10]);
        let cfg = EvolutionConfig { population: 12, generations: 6, seed: 9, ..Default::default() };
        let (_, a) = run_evolution(&arch10(), &cfg, &fit).unwrap();
        let (_, b) = run_evolution(&arch10(), &cfg, &fit).unwrap();
        assert_eq!(a, b);

        let mut run = Evolution::new(&arch10(), cfg.clone(), &fit).unwrap();
        for _ in 0..3 {
            run.step().unwrap();
        }
        let text = serde_json::to_string(&run.checkpoint()).unwrap();
        let mut resumed = Evolution::resume(serde_json::from_str(&text).unwrap(), &fit).unwrap();
        resumed.run_to_end().unwrap();
        assert_eq!(resumed.curve(), &a[..]);
    }
}
