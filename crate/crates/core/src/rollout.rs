//! Episode rollouts and the evasion-aware fitness.
//!
//! A rollout draws the true hypothesis from the prior and lets every active
//! agent pick an action from its own belief. Sensed pairs are delivered to
//! teammates according to the communication topology, while the
//! eavesdropper taps every sensed pair directly. An agent leaves once its
//! MAP error drops to `L`; the episode ends when the last agent leaves or
//! the horizon is reached.
//!
//! A centralized problem is the one-agent case whose policy never idles.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{map_error, reached_threshold, update_belief_multi, Belief, ErrorThresholds};
use crate::cosyne::FitnessFn;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::model::{ActionId, HypothesisId, Observation};
use crate::net::{ActionMode, ArchSpec, Genome, PolicyNet};
use crate::seed::{derive_seed, rng_for, tags, SimRng};

/// Horizon and Monte Carlo budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLimits {
    pub horizon: usize,
    pub episodes: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { horizon: 200, episodes: 100 }
    }
}

impl EpisodeLimits {
    pub fn new(horizon: usize, episodes: usize) -> Result<Self> {
        if horizon == 0 || episodes == 0 {
            return Err(Error::ParamOutOfRange("horizon and episode count must be ≥ 1".into()));
        }
        Ok(Self { horizon, episodes })
    }
}

/// Which teammates receive an agent's `(action, observation)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommSpec {
    FullyConnected,
    Independent,
    /// Every message is dropped independently with probability `loss_rate`.
    LossyBroadcast { loss_rate: f64 },
}

impl CommSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CommSpec::LossyBroadcast { loss_rate } if !(0.0..1.0).contains(loss_rate) => {
                Err(Error::ParamOutOfRange(format!("loss rate {loss_rate} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Action selection for one or more agents.
pub trait Policy: Sync {
    fn agents(&self) -> usize;

    /// Global action of `agent`, or `None` for the no-sensing action.
    fn choose(&self, agent: usize, belief: &Belief, rng: &mut SimRng) -> Result<Option<ActionId>>;
}

/// Split the sensors of `env` into two halves and assign agent `k` of `K`
/// to half `⌊2k/K⌋`. Environments with a single sensor, or a single agent,
/// give every agent all actions.
pub fn split_action_sets(env: &Environment, agents: usize) -> Vec<Vec<ActionId>> {
    let sensors = env.sensors();
    if agents < 2 || sensors < 2 {
        return shared_action_sets(env, agents);
    }
    let half = sensors.div_ceil(2);
    (0..agents)
        .map(|k| {
            let group = 2 * k / agents;
            (0..env.num_actions())
                .filter(|&a| (env.action_info(a).sensor >= half) == (group == 1))
                .collect()
        })
        .collect()
}

/// Every agent may use every action.
pub fn shared_action_sets(env: &Environment, agents: usize) -> Vec<Vec<ActionId>> {
    vec![(0..env.num_actions()).collect(); agents.max(1)]
}

/// Network input and output sizes for `env`.
pub fn centralized_arch(env: &Environment, hidden: Vec<usize>) -> ArchSpec {
    ArchSpec::single(env.num_hypotheses(), hidden, env.num_actions())
}

pub fn decentralized_arch(
    env: &Environment,
    action_sets: &[Vec<ActionId>],
    extractor_hidden: Vec<usize>,
    branch_hidden: Vec<usize>,
) -> ArchSpec {
    ArchSpec::multi(
        env.num_hypotheses(),
        extractor_hidden,
        branch_hidden,
        action_sets.iter().map(|s| s.len() + 1).collect(),
    )
}

/// A genome acting through its network. Multi-agent networks map local
/// branch outputs to global actions through per-agent action sets; the last
/// branch output is the no-sensing action.
#[derive(Clone, Debug)]
pub struct GenomePolicy {
    net: PolicyNet,
    action_sets: Vec<Vec<ActionId>>,
    mode: ActionMode,
}

fn arch_mismatch(expected: &str, found: &ArchSpec) -> Error {
    Error::GenomeArchMismatch { expected: expected.to_string(), found: found.describe() }
}

impl GenomePolicy {
    /// Single-agent policy over all actions of `env`.
    pub fn centralized(genome: &Genome, env: &Environment, mode: ActionMode) -> Result<Self> {
        match genome.arch() {
            ArchSpec::SingleAgent { input, output, .. }
                if *input == env.num_hypotheses() && *output == env.num_actions() => {}
            other => {
                return Err(arch_mismatch(
                    &format!(
                        "single-agent {} -> .. -> {}",
                        env.num_hypotheses(),
                        env.num_actions()
                    ),
                    other,
                ))
            }
        }
        Ok(Self {
            net: PolicyNet::new(genome),
            action_sets: vec![(0..env.num_actions()).collect()],
            mode,
        })
    }

    /// Team policy; branch `k` must have `action_sets[k].len() + 1` outputs.
    pub fn decentralized(
        genome: &Genome,
        env: &Environment,
        action_sets: Vec<Vec<ActionId>>,
        mode: ActionMode,
    ) -> Result<Self> {
        let expected: Vec<usize> = action_sets.iter().map(|s| s.len() + 1).collect();
        match genome.arch() {
            ArchSpec::MultiAgent { input, branch_outputs, .. }
                if *input == env.num_hypotheses() && *branch_outputs == expected => {}
            other => {
                return Err(arch_mismatch(
                    &format!("multi-agent {} -> .. -> {expected:?}", env.num_hypotheses()),
                    other,
                ))
            }
        }
        if let Some(&a) = action_sets.iter().flatten().find(|&&a| a >= env.num_actions()) {
            return Err(Error::InvalidAction { action: a, actions: env.num_actions() });
        }
        Ok(Self { net: PolicyNet::new(genome), action_sets, mode })
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn action_sets(&self) -> &[Vec<ActionId>] {
        &self.action_sets
    }
}

impl Policy for GenomePolicy {
    fn agents(&self) -> usize {
        self.action_sets.len()
    }

    fn choose(&self, agent: usize, belief: &Belief, rng: &mut SimRng) -> Result<Option<ActionId>> {
        if self.net.arch().is_multi() {
            let local = self.net.act_multi(agent, belief, rng, self.mode)?;
            Ok(self.action_sets[agent].get(local).copied())
        } else {
            self.net.act_single(belief, rng, self.mode).map(Some)
        }
    }
}

/// Everything observed in one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Per agent: `None` when idle or already exited.
    pub actions: Vec<Option<ActionId>>,
    pub y: Vec<Option<Observation>>,
    pub z: Vec<Option<Observation>>,
    /// Per-agent MAP error after the update (frozen after exit).
    pub legit_error: Vec<f64>,
    pub eve_error: f64,
    /// Running max of the eavesdropper's largest posterior entry.
    pub eve_max: f64,
    /// Per-agent beliefs after the update.
    pub beliefs: Vec<Belief>,
    pub eve_belief: Belief,
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub hypothesis: HypothesisId,
    /// Last exit time, or the horizon.
    pub tau: usize,
    pub agent_tau: Vec<usize>,
    /// Whether each agent stopped before the horizon.
    pub exited: Vec<bool>,
    pub decisions: Vec<HypothesisId>,
    pub final_legit_error: Vec<f64>,
    pub eve_decision: HypothesisId,
    /// `max_t max_x ρ_t^E(x)` over `t = 0..=τ`.
    pub eve_max: f64,
    /// Mean over agents of the MAP error after each step `1..=τ`.
    pub legit_curve: Vec<f64>,
    /// Eavesdropper MAP error after each step `1..=τ`.
    pub eve_curve: Vec<f64>,
    /// Every sensed pair, in order: `(t, agent, action, z)`.
    pub eve_pairs: Vec<(usize, usize, ActionId, Observation)>,
    /// Full per-step records, when requested.
    pub steps: Option<Vec<StepRecord>>,
}

/// Fixed inputs of a rollout.
#[derive(Clone, Copy, Debug)]
pub struct RolloutSpec<'a> {
    pub env: &'a Environment,
    pub thresholds: ErrorThresholds,
    pub horizon: usize,
    pub comm: CommSpec,
    pub record: bool,
}

/// Independent random streams of one episode.
struct Streams {
    main: SimRng,
    perturb: SimRng,
    channel: SimRng,
    policy: SimRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            main: rng_for(seed, &[0]),
            perturb: rng_for(seed, &[1]),
            channel: rng_for(seed, &[2]),
            policy: rng_for(seed, &[3]),
        }
    }
}

/// Simulate one episode with every random stream derived from `seed`.
pub fn rollout(policy: &dyn Policy, spec: &RolloutSpec<'_>, seed: u64) -> Result<EpisodeTrace> {
    spec.comm.validate()?;
    if spec.horizon == 0 {
        return Err(Error::ParamOutOfRange("horizon must be ≥ 1".into()));
    }
    let env = spec.env;
    let k_agents = policy.agents();
    if k_agents == 0 {
        return Err(Error::ParamOutOfRange("policy has no agents".into()));
    }
    let mut s = Streams::new(seed);
    let x = env.space().sample(&mut s.main);
    let prior = env.space().initial_belief();
    let mut beliefs = vec![prior.clone(); k_agents];
    let mut eve = prior.clone();
    let mut eve_max = eve.max_prob();
    let mut active = vec![true; k_agents];
    let mut agent_tau = vec![spec.horizon; k_agents];
    let mut exited = vec![false; k_agents];
    let mut legit_curve = Vec::new();
    let mut eve_curve = Vec::new();
    let mut eve_pairs = Vec::new();
    let mut steps = spec.record.then(Vec::new);

    let mut actions: Vec<Option<ActionId>> = vec![None; k_agents];
    let mut ys: Vec<Option<Observation>> = vec![None; k_agents];
    let mut zs: Vec<Option<Observation>> = vec![None; k_agents];
    let mut tau = spec.horizon;
    for t in 1..=spec.horizon {
        for k in 0..k_agents {
            actions[k] = if active[k] {
                let a = policy.choose(k, &beliefs[k], &mut s.policy)?;
                if let Some(a) = a {
                    if a >= env.num_actions() {
                        return Err(Error::InvalidAction { action: a, actions: env.num_actions() });
                    }
                }
                a
            } else {
                None
            };
        }
        let mut eve_batch = Vec::with_capacity(k_agents);
        for k in 0..k_agents {
            match actions[k] {
                Some(a) => {
                    let y = env.sample_legit(a, x, &mut s.main, &mut s.perturb);
                    let z = env.sample_eve(a, x, &mut s.main, &mut s.perturb);
                    ys[k] = Some(y);
                    zs[k] = Some(z);
                    eve_batch.push((a, z));
                    eve_pairs.push((t, k, a, z));
                }
                None => {
                    ys[k] = None;
                    zs[k] = None;
                }
            }
        }
        eve = update_belief_multi(&eve, env.eve_model(), &eve_batch)?;
        eve_max = eve_max.max(eve.max_prob());

        let before = active.clone();
        let mut batch = Vec::with_capacity(k_agents);
        for k in 0..k_agents {
            if !before[k] {
                continue;
            }
            batch.clear();
            for j in 0..k_agents {
                let (Some(a), Some(y)) = (actions[j], ys[j]) else { continue };
                let delivered = j == k
                    || match spec.comm {
                        CommSpec::FullyConnected => true,
                        CommSpec::Independent => false,
                        CommSpec::LossyBroadcast { loss_rate } => {
                            s.channel.random::<f64>() >= loss_rate
                        }
                    };
                if delivered {
                    batch.push((a, y));
                }
            }
            beliefs[k] = update_belief_multi(&beliefs[k], env.legit_model(), &batch)?;
            if reached_threshold(&beliefs[k], &spec.thresholds) {
                active[k] = false;
                exited[k] = true;
                agent_tau[k] = t;
            }
        }

        let errors: Vec<f64> = beliefs.iter().map(map_error).collect();
        legit_curve.push(errors.iter().sum::<f64>() / k_agents as f64);
        eve_curve.push(map_error(&eve));
        if let Some(steps) = steps.as_mut() {
            steps.push(StepRecord {
                t,
                actions: actions.clone(),
                y: ys.clone(),
                z: zs.clone(),
                legit_error: errors,
                eve_error: map_error(&eve),
                eve_max,
                beliefs: beliefs.clone(),
                eve_belief: eve.clone(),
            });
        }
        if active.iter().all(|a| !a) {
            tau = t;
            break;
        }
    }

    Ok(EpisodeTrace {
        hypothesis: x,
        tau,
        agent_tau,
        exited,
        decisions: beliefs.iter().map(|b| b.map_decision()).collect(),
        final_legit_error: beliefs.iter().map(map_error).collect(),
        eve_decision: eve.map_decision(),
        eve_max,
        legit_curve,
        eve_curve,
        eve_pairs,
        steps,
    })
}

/// Summary of a fitness call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessResult {
    pub fitness: f64,
    pub a_e: f64,
    pub mean_tau: f64,
    /// True when the evasion statistic breaks the threshold.
    pub evasion_violated: bool,
}

/// `−A_E` when `A_E ≥ 1 − E`, otherwise `1 / mean τ`.
pub fn fitness_from_stats(a_e: f64, mean_tau: f64, thresholds: &ErrorThresholds) -> FitnessResult {
    let violated = a_e >= 1.0 - thresholds.eve;
    FitnessResult {
        fitness: if violated { -a_e } else { 1.0 / mean_tau },
        a_e,
        mean_tau,
        evasion_violated: violated,
    }
}

/// Fitness statistics of a set of finished episodes.
pub fn fitness_from_traces(traces: &[EpisodeTrace], thresholds: &ErrorThresholds) -> FitnessResult {
    let n = traces.len() as f64;
    let a_e = traces.iter().map(|t| t.eve_max).sum::<f64>() / n;
    let mean_tau = traces.iter().map(|t| t.tau as f64).sum::<f64>() / n;
    fitness_from_stats(a_e, mean_tau, thresholds)
}

/// Seed of episode `i` under a fitness or evaluation seed.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[tags::EPISODE, i as u64])
}

/// Run `limits.episodes` rollouts serially and compute the fitness.
pub fn policy_fitness(
    policy: &dyn Policy,
    spec: &RolloutSpec<'_>,
    episodes: usize,
    seed: u64,
) -> Result<FitnessResult> {
    let mut a_e = 0.0;
    let mut tau = 0.0;
    for i in 0..episodes {
        let trace = rollout(policy, spec, episode_seed(seed, i))?;
        a_e += trace.eve_max;
        tau += trace.tau as f64;
    }
    let n = episodes as f64;
    Ok(fitness_from_stats(a_e / n, tau / n, &spec.thresholds))
}

pub fn fitness_centralized(
    genome: &Genome,
    env: &Environment,
    thresholds: ErrorThresholds,
    limits: EpisodeLimits,
    seed: u64,
) -> Result<FitnessResult> {
    let policy = GenomePolicy::centralized(genome, env, ActionMode::Stochastic)?;
    let spec = RolloutSpec {
        env,
        thresholds,
        horizon: limits.horizon,
        comm: CommSpec::FullyConnected,
        record: false,
    };
    policy_fitness(&policy, &spec, limits.episodes, seed)
}

pub fn fitness_decentralized(
    genome: &Genome,
    env: &Environment,
    action_sets: Vec<Vec<ActionId>>,
    comm: CommSpec,
    thresholds: ErrorThresholds,
    limits: EpisodeLimits,
    seed: u64,
) -> Result<FitnessResult> {
    let policy = GenomePolicy::decentralized(genome, env, action_sets, ActionMode::Stochastic)?;
    let spec = RolloutSpec { env, thresholds, horizon: limits.horizon, comm, record: false };
    policy_fitness(&policy, &spec, limits.episodes, seed)
}

/// Centralized or decentralized team layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TeamSpec {
    Centralized,
    Decentralized { action_sets: Vec<Vec<ActionId>>, comm: CommSpec },
}

impl TeamSpec {
    pub fn agents(&self) -> usize {
        match self {
            TeamSpec::Centralized => 1,
            TeamSpec::Decentralized { action_sets, .. } => action_sets.len(),
        }
    }

    pub fn comm(&self) -> CommSpec {
        match self {
            TeamSpec::Centralized => CommSpec::FullyConnected,
            TeamSpec::Decentralized { comm, .. } => *comm,
        }
    }

    pub fn with_comm(&self, comm: CommSpec) -> Self {
        match self {
            TeamSpec::Centralized => TeamSpec::Centralized,
            TeamSpec::Decentralized { action_sets, .. } => {
                TeamSpec::Decentralized { action_sets: action_sets.clone(), comm }
            }
        }
    }

    /// Network shape this team needs on `env`.
    pub fn arch(&self, env: &Environment, single_hidden: Vec<usize>, extractor: Vec<usize>, branch: Vec<usize>) -> ArchSpec {
        match self {
            TeamSpec::Centralized => centralized_arch(env, single_hidden),
            TeamSpec::Decentralized { action_sets, .. } => {
                decentralized_arch(env, action_sets, extractor, branch)
            }
        }
    }

    pub fn policy(&self, genome: &Genome, env: &Environment, mode: ActionMode) -> Result<GenomePolicy> {
        match self {
            TeamSpec::Centralized => GenomePolicy::centralized(genome, env, mode),
            TeamSpec::Decentralized { action_sets, .. } => {
                GenomePolicy::decentralized(genome, env, action_sets.clone(), mode)
            }
        }
    }
}

/// The training objective for a fixed environment and team.
#[derive(Clone, Debug)]
pub struct EahtFitness {
    pub env: Environment,
    pub team: TeamSpec,
    pub thresholds: ErrorThresholds,
    pub limits: EpisodeLimits,
    pub mode: ActionMode,
}

impl EahtFitness {
    pub fn new(env: Environment, team: TeamSpec, thresholds: ErrorThresholds, limits: EpisodeLimits) -> Self {
        Self { env, team, thresholds, limits, mode: ActionMode::Stochastic }
    }

    pub fn evaluate_full(&self, genome: &Genome, seed: u64) -> Result<FitnessResult> {
        let policy = self.team.policy(genome, &self.env, self.mode)?;
        let spec = RolloutSpec {
            env: &self.env,
            thresholds: self.thresholds,
            horizon: self.limits.horizon,
            comm: self.team.comm(),
            record: false,
        };
        policy_fitness(&policy, &spec, self.limits.episodes, seed)
    }
}

impl FitnessFn for EahtFitness {
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<f64> {
        self.evaluate_full(genome, seed).map(|r| r.fitness)
    }
}

/// One line of the eavesdropper dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EveRecord {
    pub actions: Vec<ActionId>,
    pub z: Vec<f64>,
    pub label: HypothesisId,
}

impl From<&EpisodeTrace> for EveRecord {
    fn from(trace: &EpisodeTrace) -> Self {
        EveRecord {
            actions: trace.eve_pairs.iter().map(|p| p.2).collect(),
            z: trace.eve_pairs.iter().map(|p| p.3.as_f64()).collect(),
            label: trace.hypothesis,
        }
    }
}

/// Write one JSON line per episode with the sensed actions, the
/// eavesdropper's observations and the true hypothesis.
pub fn export_eve_dataset(traces: &[EpisodeTrace], path: &Path) -> Result<usize> {
    if traces.is_empty() {
        return Err(Error::ParamOutOfRange("no traces to export".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for trace in traces {
        serde_json::to_writer(&mut out, &EveRecord::from(trace))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(traces.len())
}
