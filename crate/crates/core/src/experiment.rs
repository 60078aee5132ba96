//! Experiment configuration and the end-to-end pipelines driven by it:
//! training (with optional pruning), evaluation, robustness runs, dataset
//! export and hyperparameter sweeps.
//!
//! The master seed is split into three sub-seeds with
//! `derive_seed(seed, [1])` for training, `[2]` for evaluation and
//! `[3, env.seed]` for the random parameters of the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::belief::ErrorThresholds;
use crate::cosyne::{Checkpoint, CurvePoint, Evolution, EvolutionConfig, Population};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::harness::{self, EvalSettings, Evaluation, PolicySource, Scenario};
use crate::model::ActionId;
use crate::net::{ActionMode, ArchSpec, Genome};
use crate::prune::{finetune_population, PruneConfig};
use crate::rollout::{
    export_eve_dataset, shared_action_sets, split_action_sets, CommSpec, EahtFitness, EpisodeLimits,
    RolloutSpec, TeamSpec,
};
use crate::seed::{derive_seed, tags};

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.into(), reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemMode {
    Centralized,
    Decentralized,
}

/// How the actions are distributed over the agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionSetChoice {
    /// `"split"` (sensor halves) or `"shared"` (every agent gets all).
    Named(String),
    Explicit(Vec<Vec<ActionId>>),
}

fn default_agents() -> usize {
    2
}

fn default_horizon() -> usize {
    200
}

fn default_action_sets() -> ActionSetChoice {
    ActionSetChoice::Named("split".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: ProblemMode,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "comm_default")]
    pub comm: CommSpec,
    #[serde(default = "default_action_sets")]
    pub action_sets: ActionSetChoice,
    /// Legitimate error threshold.
    #[serde(rename = "L")]
    pub legit: f64,
    /// Eavesdropper error threshold.
    #[serde(rename = "E")]
    pub eve: f64,
    /// Horizon.
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: usize,
}

fn comm_default() -> CommSpec {
    CommSpec::FullyConnected
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub population: usize,
    pub generations: usize,
    pub p_mut: f64,
    pub sigma_mut: f64,
    pub permute: bool,
    /// Episodes per fitness evaluation.
    pub episodes: usize,
    /// Hidden sizes of the centralized network.
    pub hidden: Vec<usize>,
    pub extractor_hidden: Vec<usize>,
    pub branch_hidden: Vec<usize>,
    /// Enables the two-step sparse pipeline.
    pub prune: Option<PruneConfig>,
    /// Action selection during fitness evaluation.
    pub action_mode: ActionMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let evo = EvolutionConfig::default();
        Self {
            population: evo.population,
            generations: evo.generations,
            p_mut: evo.p_mut,
            sigma_mut: evo.sigma_mut,
            permute: evo.permute,
            episodes: 100,
            hidden: vec![200, 200],
            extractor_hidden: vec![300, 300],
            branch_hidden: vec![300, 300],
            prune: None,
            action_mode: ActionMode::Stochastic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    /// Scenario names run by `robust` when none are given on the command line.
    pub scenarios: Vec<String>,
    /// Action selection of genome policies.
    pub action_mode: ActionMode,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { episodes: 2000, scenarios: Vec::new(), action_mode: ActionMode::Stochastic }
    }
}

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "p_mut")]
    PMut,
    #[serde(rename = "sigma_mut")]
    SigmaMut,
    #[serde(rename = "n_h")]
    HiddenSize,
    #[serde(rename = "n_f")]
    ExtractorSize,
    #[serde(rename = "n_b")]
    BranchSize,
    #[serde(rename = "sensors")]
    Sensors,
    #[serde(rename = "E")]
    EveThreshold,
    #[serde(rename = "l_r")]
    LossRate,
    #[serde(rename = "sigma_e2")]
    EveVariance,
    #[serde(rename = "noise_power")]
    NoisePower,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::PMut => "p_mut",
            SweepParam::SigmaMut => "sigma_mut",
            SweepParam::HiddenSize => "n_h",
            SweepParam::ExtractorSize => "n_f",
            SweepParam::BranchSize => "n_b",
            SweepParam::Sensors => "sensors",
            SweepParam::EveThreshold => "E",
            SweepParam::LossRate => "l_r",
            SweepParam::EveVariance => "sigma_e2",
            SweepParam::NoisePower => "noise_power",
        }
    }
}

fn default_repetitions() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Training seeds per grid point.
    #[serde(default = "default_repetitions")]
    pub seeds: usize,
}

/// One JSON document describing a full experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub environment: EnvConfig,
    pub problem: ProblemConfig,
    pub optimizer: OptimizerConfig,
    pub evaluation: EvaluationConfig,
    pub sweep: Option<SweepSpec>,
}

const TOP_LEVEL: [&str; 7] = ["seed", "output_dir", "environment", "problem", "optimizer", "evaluation", "sweep"];

/// Deserialize one block, reporting missing or unknown keys by their full
/// path.
fn block<T: DeserializeOwned>(name: &str, value: &Value) -> Result<T> {
    serde_json::from_value(value.clone()).map_err(|e| {
        let msg = e.to_string();
        let key = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|p| msg.strip_prefix(p))
            .and_then(|rest| rest.split('`').next());
        let field = match key {
            Some(k) => format!("{name}.{k}"),
            None => name.to_string(),
        };
        invalid(&field, msg)
    })
}

impl ExperimentConfig {
    /// Parse and validate a configuration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| invalid("<document>", e.to_string()))?;
        let obj = root.as_object().ok_or_else(|| invalid("<document>", "expected a JSON object"))?;
        if let Some(key) = obj.keys().find(|k| !TOP_LEVEL.contains(&k.as_str())) {
            return Err(invalid(key, "unknown field"));
        }
        let required = |name: &str| obj.get(name).ok_or_else(|| invalid(name, "missing field"));
        let optional = |name: &str| obj.get(name).cloned().unwrap_or(Value::Object(Default::default()));
        let cfg = ExperimentConfig {
            seed: match obj.get("seed") {
                Some(v) => v.as_u64().ok_or_else(|| invalid("seed", "expected an unsigned integer"))?,
                None => 0,
            },
            output_dir: match obj.get("output_dir") {
                Some(v) => PathBuf::from(v.as_str().ok_or_else(|| invalid("output_dir", "expected a string"))?),
                None => PathBuf::from("out"),
            },
            environment: block("environment", required("environment")?)?,
            problem: block("problem", required("problem")?)?,
            optimizer: block("optimizer", &optional("optimizer"))?,
            evaluation: block("evaluation", &optional("evaluation"))?,
            sweep: match obj.get("sweep") {
                Some(Value::Null) | None => None,
                Some(v) => Some(block("sweep", v)?),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Check the cross-block constraints.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        ErrorThresholds::new(p.legit, 0.5).map_err(|e| invalid("problem.L", e.to_string()))?;
        ErrorThresholds::new(0.5, p.eve).map_err(|e| invalid("problem.E", e.to_string()))?;
        if p.horizon == 0 {
            return Err(invalid("problem.T", "must be ≥ 1"));
        }
        if p.agents == 0 {
            return Err(invalid("problem.agents", "must be ≥ 1"));
        }
        p.comm.validate().map_err(|e| invalid("problem.comm", e.to_string()))?;
        match &p.action_sets {
            ActionSetChoice::Named(name) if name != "split" && name != "shared" => {
                return Err(invalid("problem.action_sets", format!("unknown layout '{name}'")));
            }
            ActionSetChoice::Explicit(sets) if p.mode == ProblemMode::Decentralized && sets.len() != p.agents => {
                return Err(invalid(
                    "problem.action_sets",
                    format!("{} sets for {} agents", sets.len(), p.agents),
                ));
            }
            _ => {}
        }
        self.evolution_config(0).validate().map_err(|e| invalid("optimizer", e.to_string()))?;
        let o = &self.optimizer;
        if o.episodes == 0 {
            return Err(invalid("optimizer.episodes", "must be ≥ 1"));
        }
        for (name, sizes) in [
            ("optimizer.hidden", &o.hidden),
            ("optimizer.extractor_hidden", &o.extractor_hidden),
            ("optimizer.branch_hidden", &o.branch_hidden),
        ] {
            if sizes.contains(&0) {
                return Err(invalid(name, "hidden sizes must be ≥ 1"));
            }
        }
        if let Some(prune) = &o.prune {
            prune.validate().map_err(|e| invalid("optimizer.prune", e.to_string()))?;
        }
        if self.evaluation.episodes == 0 {
            return Err(invalid("evaluation.episodes", "must be ≥ 1"));
        }
        for s in &self.evaluation.scenarios {
            s.parse::<Scenario>().map_err(|e| invalid("evaluation.scenarios", e.to_string()))?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values", "grid must not be empty"));
            }
            if sweep.seeds == 0 {
                return Err(invalid("sweep.seeds", "must be ≥ 1"));
            }
        }
        Ok(())
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, &[tags::TRAIN])
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, &[tags::EVALUATION])
    }

    pub fn evolution_config(&self, seed: u64) -> EvolutionConfig {
        let o = &self.optimizer;
        EvolutionConfig {
            population: o.population,
            generations: o.generations,
            p_mut: o.p_mut,
            sigma_mut: o.sigma_mut,
            permute: o.permute,
            seed,
        }
    }

    /// The environment with its random parameters drawn from the
    /// environment sub-seed.
    pub fn build_env(&self) -> Result<Environment> {
        let mut env = self.environment.clone();
        match &mut env {
            EnvConfig::Ricean(p) => p.seed = derive_seed(self.seed, &[tags::ENVIRONMENT, p.seed]),
            EnvConfig::Radar(p) => p.seed = derive_seed(self.seed, &[tags::ENVIRONMENT, p.seed]),
            _ => {}
        }
        env.build().map_err(|e| invalid("environment", e.to_string()))
    }

    /// Copy of this configuration with one hyperparameter replaced.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let size = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid("sweep.values", format!("{v} is not a positive integer")))
            }
        };
        let o = &mut cfg.optimizer;
        match param {
            SweepParam::PMut => o.p_mut = value,
            SweepParam::SigmaMut => o.sigma_mut = value,
            SweepParam::HiddenSize => {
                let s = size(value)?;
                o.hidden.iter_mut().for_each(|h| *h = s);
            }
            SweepParam::ExtractorSize => {
                let s = size(value)?;
                o.extractor_hidden.iter_mut().for_each(|h| *h = s);
            }
            SweepParam::BranchSize => {
                let s = size(value)?;
                o.branch_hidden.iter_mut().for_each(|h| *h = s);
            }
            SweepParam::Sensors => {
                let s = size(value)?;
                match &mut cfg.environment {
                    EnvConfig::Binomial { sensors, .. } | EnvConfig::Gaussian { sensors, .. } => *sensors = s,
                    EnvConfig::Ricean(p) => p.sensors = s,
                    EnvConfig::Radar(_) => return Err(invalid("sweep.param", "radar has no sensor count")),
                }
            }
            SweepParam::EveThreshold => cfg.problem.eve = value,
            SweepParam::LossRate => cfg.problem.comm = CommSpec::LossyBroadcast { loss_rate: value },
            SweepParam::EveVariance => match &mut cfg.environment {
                EnvConfig::Radar(p) => p.sigma_e2 = value,
                _ => return Err(invalid("sweep.param", "sigma_e2 applies to the radar environment")),
            },
            SweepParam::NoisePower => match &mut cfg.environment {
                EnvConfig::Ricean(p) => p.noise_power_db = value,
                _ => return Err(invalid("sweep.param", "noise_power applies to the ricean environment")),
            },
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which phase of training a checkpoint belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Plain evolution, or step 1 of the sparse pipeline.
    Evolve,
    /// Step 2: fine-tuning with a frozen mask.
    Finetune,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Evolve => "evolve",
            Stage::Finetune => "finetune",
        }
    }
}

/// Resumable training state written after every generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    pub checkpoint: Checkpoint,
    /// Curve of the finished first stage, when in the second.
    pub evolve_curve: Vec<CurvePoint>,
    /// Output of the first stage, when in the second.
    pub sparse: Option<Genome>,
}

impl TrainState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final policy genome.
    pub genome: Genome,
    pub fitness: f64,
    pub curve: Vec<(Stage, CurvePoint)>,
    /// Sparse network found by the first stage of the pruning pipeline.
    pub sparse: Option<Genome>,
}

/// A validated configuration with its environment built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub team: TeamSpec,
    pub thresholds: ErrorThresholds,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = config.build_env()?;
        let p = &config.problem;
        let team = match p.mode {
            ProblemMode::Centralized => TeamSpec::Centralized,
            ProblemMode::Decentralized => {
                let action_sets = match &p.action_sets {
                    ActionSetChoice::Named(n) if n == "shared" => shared_action_sets(&env, p.agents),
                    ActionSetChoice::Named(_) => split_action_sets(&env, p.agents),
                    ActionSetChoice::Explicit(sets) => {
                        if sets.iter().flatten().any(|&a| a >= env.num_actions()) {
                            return Err(invalid(
                                "problem.action_sets",
                                format!("action ids must be below {}", env.num_actions()),
                            ));
                        }
                        sets.clone()
                    }
                };
                TeamSpec::Decentralized { action_sets, comm: p.comm }
            }
        };
        let thresholds = ErrorThresholds::new(p.legit, p.eve)?;
        Ok(Self { config, env, team, thresholds })
    }

    pub fn arch(&self) -> ArchSpec {
        let o = &self.config.optimizer;
        self.team.arch(&self.env, o.hidden.clone(), o.extractor_hidden.clone(), o.branch_hidden.clone())
    }

    pub fn fitness(&self) -> EahtFitness {
        let limits = EpisodeLimits { horizon: self.config.problem.horizon, episodes: self.config.optimizer.episodes };
        let mut fit = EahtFitness::new(self.env.clone(), self.team.clone(), self.thresholds, limits);
        fit.mode = self.config.optimizer.action_mode;
        fit
    }

    /// Run the configured training pipeline. With `state_path`, the state
    /// is saved after every generation; with `resume` as well, training
    /// continues from the saved state and ends with the same result as an
    /// uninterrupted run.
    pub fn train(&self, state_path: Option<&Path>, resume: bool) -> Result<TrainOutcome> {
        let fit = self.fitness();
        let prune = self.config.optimizer.prune;
        let step1 = self.evolution_config(self.config.train_seed());
        let step2 = self.evolution_config(derive_seed(self.config.train_seed(), &[tags::FINETUNE]));

        let saved = match (state_path, resume) {
            (Some(path), true) if path.exists() => Some(TrainState::load(path)?),
            _ => None,
        };
        let save = |stage, run: &Evolution<'_>, evolve_curve: &[CurvePoint], sparse: Option<&Genome>| {
            state_path.map_or(Ok(()), |path| {
                TrainState {
                    stage,
                    checkpoint: run.checkpoint(),
                    evolve_curve: evolve_curve.to_vec(),
                    sparse: sparse.cloned(),
                }
                .save(path)
            })
        };
        let log_generation = |stage: Stage, run: &Evolution<'_>| {
            if let Some(p) = run.curve().last() {
                log::info!(
                    "{} generation {}: best {:.6} mean {:.6} best-ever {:.6}",
                    stage.name(),
                    p.generation,
                    p.best,
                    p.mean,
                    p.best_ever
                );
            }
        };

        let (evolve_curve, sparse, mut finetune) = match saved {
            Some(TrainState { stage: Stage::Finetune, checkpoint, evolve_curve, sparse }) => {
                (evolve_curve, sparse, Some(Evolution::resume(checkpoint, &fit)?))
            }
            other => {
                let mut run = match other {
                    Some(state) => Evolution::resume(state.checkpoint, &fit)?,
                    None => {
                        let pop = Population::random(&self.arch(), step1.population, step1.seed)?;
                        Evolution::from_population(pop, step1.clone(), &fit, prune.map(|p| p.p_i))?
                    }
                };
                log_generation(Stage::Evolve, &run);
                save(Stage::Evolve, &run, &[], None)?;
                while !run.finished() {
                    run.step()?;
                    log_generation(Stage::Evolve, &run);
                    save(Stage::Evolve, &run, &[], None)?;
                }
                match prune {
                    None => {
                        let (best, fitness) = run.best();
                        let curve = run.curve().iter().map(|p| (Stage::Evolve, *p)).collect();
                        return Ok(TrainOutcome { genome: best.clone(), fitness, curve, sparse: None });
                    }
                    Some(prune) => {
                        let sparse = run.current_best().0;
                        let pop = finetune_population(&sparse, &step2, &prune)?;
                        let ft = Evolution::from_population(pop, step2.clone(), &fit, None)?;
                        log_generation(Stage::Finetune, &ft);
                        save(Stage::Finetune, &ft, run.curve(), Some(&sparse))?;
                        (run.curve().to_vec(), Some(sparse), Some(ft))
                    }
                }
            }
        };

        let run = finetune.as_mut().expect("second stage is set");
        while !run.finished() {
            run.step()?;
            log_generation(Stage::Finetune, run);
            save(Stage::Finetune, run, &evolve_curve, sparse.as_ref())?;
        }
        let (best, fitness) = run.best();
        let curve = evolve_curve
            .iter()
            .map(|p| (Stage::Evolve, *p))
            .chain(run.curve().iter().map(|p| (Stage::Finetune, *p)))
            .collect();
        Ok(TrainOutcome { genome: best.clone(), fitness, curve, sparse })
    }

    fn evolution_config(&self, seed: u64) -> EvolutionConfig {
        self.config.evolution_config(seed)
    }

    /// Load a genome and check that it fits this experiment.
    pub fn load_genome(&self, path: &Path) -> Result<Genome> {
        let genome = Genome::load(path)?;
        self.team.policy(&genome, &self.env, ActionMode::Greedy)?;
        Ok(genome)
    }

    /// Evaluation settings with the evaluation seed and, unless given,
    /// the configured episode count.
    pub fn eval_settings(&self, episodes: Option<usize>) -> EvalSettings {
        EvalSettings {
            thresholds: self.thresholds,
            horizon: self.config.problem.horizon,
            episodes: episodes.unwrap_or(self.config.evaluation.episodes),
            seed: self.config.eval_seed(),
            mode: self.config.evaluation.action_mode,
        }
    }

    /// Evaluation on the nominal environment.
    pub fn evaluate(&self, source: &PolicySource, episodes: Option<usize>) -> Result<Evaluation> {
        harness::evaluate_policy(source, &self.env, &self.eval_settings(episodes))
    }

    pub fn robust(&self, genome: &Genome, scenario: Scenario, episodes: Option<usize>) -> Result<Evaluation> {
        harness::robustness_suite(genome, &self.team, scenario, &self.env, &self.eval_settings(episodes))
    }

    /// Roll out the policy and write the eavesdropper dataset.
    pub fn export_eve(&self, genome: &Genome, episodes: usize, path: &Path) -> Result<usize> {
        let policy = self.team.policy(genome, &self.env, self.config.evaluation.action_mode)?;
        let spec = RolloutSpec {
            env: &self.env,
            thresholds: self.thresholds,
            horizon: self.config.problem.horizon,
            comm: self.team.comm(),
            record: false,
        };
        let traces = harness::run_episodes(&policy, &spec, episodes, self.config.eval_seed())?;
        export_eve_dataset(&traces, path)
    }
}

/// Columns `stage,generation,best,mean,best_ever`.
pub fn write_fitness_curve_csv(curve: &[(Stage, CurvePoint)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "generation", "best", "mean", "best_ever"])?;
    for (stage, p) in curve {
        w.write_record([
            stage.name().to_string(),
            p.generation.to_string(),
            p.best.to_string(),
            p.mean.to_string(),
            p.best_ever.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 11] = [
    "param",
    "value",
    "seed",
    "fitness",
    "legit_error",
    "eve_error_min",
    "a_e",
    "mean_tau",
    "tau_cv",
    "legit_ok",
    "eve_ok",
];

/// One trained and evaluated sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub fitness: f64,
    pub legit_error: f64,
    pub eve_error_min: f64,
    pub a_e: f64,
    pub mean_tau: f64,
    pub tau_cv: f64,
    pub legit_ok: bool,
    pub eve_ok: bool,
}

/// Spread of `mean_tau` across the seeds of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub param: String,
    pub value: f64,
    pub seeds: usize,
    pub mean_tau: f64,
    pub mean_tau_std: f64,
    pub mean_tau_cv: f64,
    pub constraints_met: usize,
}

/// Coefficient of variation with the population standard deviation.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if mean > 0.0 {
        std / mean
    } else {
        0.0
    }
}

/// Per grid point statistics, in grid order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: BTreeMap<u64, (usize, Vec<&SweepRow>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups.entry(r.value.to_bits()).or_insert_with(|| (i, Vec::new())).1.push(r);
    }
    let mut out: Vec<(usize, SweepSummary)> = groups
        .into_values()
        .map(|(first, group)| {
            let taus: Vec<f64> = group.iter().map(|r| r.mean_tau).collect();
            let n = taus.len() as f64;
            let mean = taus.iter().sum::<f64>() / n;
            let std = (taus.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (
                first,
                SweepSummary {
                    param: group[0].param.clone(),
                    value: group[0].value,
                    seeds: group.len(),
                    mean_tau: mean,
                    mean_tau_std: std,
                    mean_tau_cv: coefficient_of_variation(&taus),
                    constraints_met: group.iter().filter(|r| r.legit_ok && r.eve_ok).count(),
                },
            )
        })
        .collect();
    out.sort_by_key(|(first, _)| *first);
    out.into_iter().map(|(_, s)| s).collect()
}

/// Seed of repetition `rep` of a sweep based on master seed `seed`.
pub fn sweep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

fn read_sweep_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_COLUMNS {
        return Err(invalid("sweep", format!("{} has an unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Retrain and evaluate the base configuration at every grid point for
/// every seed. Finished cells are appended to `dir/sweep.csv` right away
/// and skipped when the sweep is run again; the per point summary goes to
/// `dir/sweep_cv.csv`.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec, dir: &Path) -> Result<Vec<SweepSummary>> {
    if spec.values.is_empty() || spec.seeds == 0 {
        return Err(invalid("sweep", "grid and seed count must be non-empty"));
    }
    let path = dir.join("sweep.csv");
    let mut rows = read_sweep_rows(&path)?;
    let fresh = rows.is_empty();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(SWEEP_COLUMNS)?;
        w.flush()?;
    }
    for &value in &spec.values {
        for rep in 0..spec.seeds {
            let seed = sweep_seed(base.seed, rep);
            let done = rows.iter().any(|r| r.param == spec.param.name() && r.value == value && r.seed == seed);
            if done {
                continue;
            }
            let mut cfg = base.with_param(spec.param, value)?;
            cfg.seed = seed;
            let exp = Experiment::new(cfg)?;
            let outcome = exp.train(None, false)?;
            let source = PolicySource::Genome { genome: outcome.genome, team: exp.team.clone() };
            let report = exp.evaluate(&source, None)?.report;
            log::info!("{} = {value}, seed {seed}: mean τ {:.3}", spec.param.name(), report.mean_tau);
            let row = SweepRow {
                param: spec.param.name().into(),
                value,
                seed,
                fitness: outcome.fitness,
                legit_error: report.legit_error,
                eve_error_min: report.eve_error_min,
                a_e: report.a_e,
                mean_tau: report.mean_tau,
                tau_cv: report.tau_cv,
                legit_ok: report.legit_ok,
                eve_ok: report.eve_ok,
            };
            w.serialize(&row)?;
            w.flush()?;
            rows.push(row);
        }
    }
    let wanted: Vec<SweepRow> = rows
        .into_iter()
        .filter(|r| r.param == spec.param.name() && spec.values.contains(&r.value))
        .collect();
    let summary = summarize_sweep(&wanted);
    let mut w = csv::Writer::from_path(dir.join("sweep_cv.csv"))?;
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "seed": 3,
        "output_dir": "out",
        "environment": {"kind": "binomial", "sensors": 2},
        "problem": {"mode": "centralized", "L": 0.1, "E": 0.3, "T": 40},
        "optimizer": {"population": 6, "generations": 2, "episodes": 5, "hidden": [6]},
        "evaluation": {"episodes": 30}
    }"#;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_json(BASE).unwrap()
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::ConfigInvalid { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_threshold_is_named() {
        let text = BASE.replace(r#""L": 0.1, "#, "");
        assert_eq!(field_of(&text), "problem.L");
        assert_eq!(field_of(&BASE.replace(r#""mode": "centralized", "#, "")), "problem.mode");
        assert_eq!(field_of(&BASE.replace(r#""hidden": [6]"#, r#""hiden": [6]"#)), "optimizer.hiden");
        assert_eq!(field_of(&BASE.replace(r#""E": 0.3"#, r#""E": 1.3"#)), "problem.E");
        assert_eq!(field_of(&BASE.replace(r#""seed": 3,"#, r#""seeds": 3,"#)), "seeds");
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let o = OptimizerConfig::default();
        assert_eq!((o.population, o.generations, o.episodes), (50, 50, 100));
        assert_eq!((o.p_mut, o.sigma_mut), (0.5, 0.6));
        assert_eq!(o.hidden, vec![200, 200]);
        assert_eq!(o.extractor_hidden, vec![300, 300]);
        assert_eq!(EvaluationConfig::default().episodes, 2000);
        assert_eq!(base().problem.agents, 2);
    }

    #[test]
    fn seeds_split_by_purpose() {
        let cfg = base();
        assert_ne!(cfg.train_seed(), cfg.eval_seed());
        assert_eq!(cfg.train_seed(), derive_seed(3, &[1]));
    }

    #[test]
    fn explicit_action_sets_must_match_agents() {
        let text = BASE.replace(
            r#""mode": "centralized""#,
            r#""mode": "decentralized", "agents": 3, "action_sets": [[0, 1], [2]]"#,
        );
        assert_eq!(field_of(&text), "problem.action_sets");
    }

    #[test]
    fn training_is_reproducible_and_resumable() {
        let exp = Experiment::new(base()).unwrap();
        let a = exp.train(None, false).unwrap();
        let b = exp.train(None, false).unwrap();
        assert_eq!(a.genome, b.genome);
        assert_eq!(a.curve.len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("checkpoint.json");
        exp.train(Some(&state), false).unwrap();
        // Roll the saved state back one generation and resume.
        let mut partial = exp.clone();
        partial.config.optimizer.generations = 1;
        partial.train(Some(&state), false).unwrap();
        let mut saved = TrainState::load(&state).unwrap();
        saved.checkpoint.config.generations = 2;
        saved.save(&state).unwrap();
        let resumed = exp.train(Some(&state), true).unwrap();
        assert_eq!(resumed.genome, a.genome);
        assert_eq!(resumed.curve, a.curve);
    }

    #[test]
    fn pruned_pipeline_resumes_in_the_second_stage() {
        let mut cfg = base();
        cfg.optimizer.prune = Some(PruneConfig::default());
        let exp = Experiment::new(cfg).unwrap();
        let full = exp.train(None, false).unwrap();
        let sparse = full.sparse.clone().unwrap();
        assert_eq!(full.genome.mask(), sparse.mask());
        assert_eq!(full.curve.iter().filter(|(s, _)| *s == Stage::Finetune).count(), 3);

        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("checkpoint.json");
        exp.train(Some(&state), false).unwrap();
        let mut saved = TrainState::load(&state).unwrap();
        assert_eq!(saved.stage, Stage::Finetune);
        // Rebuild a second-stage state stopped after one generation.
        let fit = exp.fitness();
        let step2 = exp.evolution_config(derive_seed(exp.config.train_seed(), &[tags::FINETUNE]));
        let pop = finetune_population(&sparse, &step2, &PruneConfig::default()).unwrap();
        let mut run = Evolution::from_population(pop, step2, &fit, None).unwrap();
        run.step().unwrap();
        saved.checkpoint = run.checkpoint();
        saved.save(&state).unwrap();
        let resumed = exp.train(Some(&state), true).unwrap();
        assert_eq!(resumed.genome, full.genome);
        assert_eq!(resumed.curve, full.curve);
    }

    #[test]
    fn sweep_params_edit_the_right_field() {
        let cfg = base();
        assert_eq!(cfg.with_param(SweepParam::PMut, 0.3).unwrap().optimizer.p_mut, 0.3);
        assert_eq!(cfg.with_param(SweepParam::HiddenSize, 9.0).unwrap().optimizer.hidden, vec![9]);
        assert!(cfg.with_param(SweepParam::HiddenSize, 2.5).is_err());
        assert!(cfg.with_param(SweepParam::NoisePower, -50.0).is_err());
        match cfg.with_param(SweepParam::Sensors, 3.0).unwrap().environment {
            EnvConfig::Binomial { sensors, .. } => assert_eq!(sensors, 3),
            _ => unreachable!(),
        }
    }

    #[test]
    fn identical_reports_have_zero_cv() {
        let row = |seed| SweepRow {
            param: "p_mut".into(),
            value: 0.5,
            seed,
            fitness: 0.1,
            legit_error: 0.0,
            eve_error_min: 0.4,
            a_e: 0.5,
            mean_tau: 10.0,
            tau_cv: 0.2,
            legit_ok: true,
            eve_ok: true,
        };
        let s = summarize_sweep(&[row(0), row(1), row(2)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_tau_cv, 0.0);
        assert_eq!(s[0].constraints_met, 3);
    }

    #[test]
    fn sweep_single_cell_and_resume() {
        let spec = SweepSpec { param: SweepParam::PMut, values: vec![0.4], seeds: 1 };
        let dir = tempfile::tempdir().unwrap();
        let s = run_sweep(&base(), &spec, dir.path()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_tau_cv, 0.0);
        let first = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(first.lines().count(), 2);
        assert!(first.starts_with(&SWEEP_COLUMNS.join(",")));

        // One cell matches a plain training run.
        let mut cfg = base().with_param(SweepParam::PMut, 0.4).unwrap();
        cfg.seed = sweep_seed(3, 0);
        let exp = Experiment::new(cfg).unwrap();
        let outcome = exp.train(None, false).unwrap();
        assert!(first.lines().nth(1).unwrap().contains(&format!(",{},", outcome.fitness)));

        // A second run with a larger grid only adds the missing cells.
        let more = SweepSpec { seeds: 2, ..spec };
        let s = run_sweep(&base(), &more, dir.path()).unwrap();
        assert_eq!(s[0].seeds, 2);
        let second = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(second.starts_with(&first));
        assert_eq!(second.lines().count(), 3);
    }
}
