//! Two-step sparse training: evolution with per-evaluation magnitude
//! pruning, then fine-tuning of the best sparse network with its structure
//! frozen.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cosyne::{CurvePoint, Evolution, EvolutionConfig, FitnessFn, Population};
use crate::error::{Error, Result};
use crate::net::{perturb_nonzero, ArchSpec, Genome};
use crate::seed::{rng_for, tags};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Fraction of live parameters removed per layer before every evaluation.
    pub p_i: f64,
    /// Variance of the noise added to the copies of the sparse network.
    pub sigma2: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { p_i: 0.2, sigma2: 0.01 }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_i > 0.0 && self.p_i < 1.0) {
            return Err(Error::ParamOutOfRange(format!("p_i {} outside (0, 1)", self.p_i)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::ParamOutOfRange(format!("sigma2 {} must be ≥ 0", self.sigma2)));
        }
        Ok(())
    }
}

/// Step 1. Every row is pruned right before each evaluation and keeps the
/// pruned weights. Returns the best row of the final generation.
pub fn evolve_with_pruning(
    arch: &ArchSpec,
    cfg: &EvolutionConfig,
    prune: &PruneConfig,
    fit: &dyn FitnessFn,
) -> Result<(Genome, Vec<CurvePoint>)> {
    prune.validate()?;
    let pop = Population::random(arch, cfg.population, cfg.seed)?;
    let mut run = Evolution::from_population(pop, cfg.clone(), fit, Some(prune.p_i))?;
    run.run_to_end()?;
    Ok((run.current_best().0, run.curve().to_vec()))
}

/// Initial population of step 2: row 0 is an exact copy of `sparse`, the
/// others add `N(0, σ²)` to its live weights.
pub fn finetune_population(sparse: &Genome, cfg: &EvolutionConfig, prune: &PruneConfig) -> Result<Population> {
    prune.validate()?;
    let sigma = prune.sigma2.sqrt();
    let mut rows = vec![sparse.clone()];
    for l in 1..cfg.population {
        rows.push(perturb_nonzero(sparse, sigma, &mut rng_for(cfg.seed, &[tags::FINETUNE, l as u64]))?);
    }
    Population::from_genomes(&rows)
}

/// Step 2. CoSyNE restricted to the live positions of `sparse`; the mask
/// never changes. Returns the best-ever genome.
pub fn finetune_pruned(
    sparse: &Genome,
    cfg: &EvolutionConfig,
    prune: &PruneConfig,
    fit: &dyn FitnessFn,
) -> Result<(Genome, Vec<CurvePoint>)> {
    let pop = finetune_population(sparse, cfg, prune)?;
    let mut run = Evolution::from_population(pop, cfg.clone(), fit, None)?;
    run.run_to_end()?;
    let (best, _) = run.best();
    Ok((best.clone(), run.curve().to_vec()))
}

/// Live parameter count of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub params: usize,
    pub nonzeros: usize,
    pub sparsity: f64,
}

pub fn sparsity_report(genome: &Genome) -> Vec<LayerSparsity> {
    genome
        .arch()
        .layers()
        .iter()
        .enumerate()
        .map(|(layer, slot)| {
            let nonzeros = genome.mask()[slot.range()].iter().filter(|&&m| m).count();
            LayerSparsity {
                layer,
                params: slot.len(),
                nonzeros,
                sparsity: 1.0 - nonzeros as f64 / slot.len() as f64,
            }
        })
        .collect()
}

/// Per-layer rows followed by a `global` row.
pub fn write_sparsity_csv(genome: &Genome, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "params", "nonzeros", "sparsity"])?;
    let report = sparsity_report(genome);
    for r in &report {
        w.write_record([
            r.layer.to_string(),
            r.params.to_string(),
            r.nonzeros.to_string(),
            r.sparsity.to_string(),
        ])?;
    }
    let params: usize = report.iter().map(|r| r.params).sum();
    let nonzeros: usize = report.iter().map(|r| r.nonzeros).sum();
    w.write_record([
        "global".to_string(),
        params.to_string(),
        nonzeros.to_string(),
        genome.sparsity().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
