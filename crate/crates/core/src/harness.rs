//! Monte Carlo evaluation of trained and baseline policies, robustness
//! scenarios and the CSV reports built from them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BaselinePolicy};
use crate::belief::ErrorThresholds;
use crate::env::{apply_mismatch, Environment, KernelMismatchSpec};
use crate::error::{Error, Result};
use crate::net::{ActionMode, Genome};
use crate::rollout::{episode_seed, rollout, CommSpec, EpisodeTrace, Policy, RolloutSpec, TeamSpec};

/// Column order of `report.csv`.
pub const REPORT_COLUMNS: [&str; 19] = [
    "policy",
    "scenario",
    "episodes",
    "seed",
    "legit_error",
    "legit_error_se",
    "legit_posterior_error",
    "eve_error_min",
    "eve_error_min_se",
    "eve_error_min_t",
    "eve_error_final",
    "a_e",
    "mean_tau",
    "tau_std",
    "tau_cv",
    "agent_tau",
    "horizon_hits",
    "legit_ok",
    "eve_ok",
];

/// Aggregated statistics of one batch of evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub scenario: String,
    pub episodes: usize,
    pub seed: u64,
    /// Fraction of wrong final MAP decisions, averaged over agents.
    pub legit_error: f64,
    pub legit_error_se: f64,
    /// Mean final MAP error `γ^L` of the agents.
    pub legit_posterior_error: f64,
    /// Smallest point of the mean eavesdropper error curve.
    pub eve_error_min: f64,
    /// Standard error of the curve at its minimum.
    pub eve_error_min_se: f64,
    /// Step (1-based) at which the minimum is reached.
    pub eve_error_min_t: usize,
    /// Mean eavesdropper error at the end of the episode.
    pub eve_error_final: f64,
    pub a_e: f64,
    pub mean_tau: f64,
    pub tau_std: f64,
    pub tau_cv: f64,
    /// Mean exit time of each agent.
    pub agent_tau: Vec<f64>,
    /// Episodes in which some agent never reached the threshold.
    pub horizon_hits: usize,
    pub legit_ok: bool,
    pub eve_ok: bool,
    /// Mean `γ^L` after steps `1..=max τ`; finished episodes carry their
    /// last value forward.
    pub legit_curve: Vec<f64>,
    /// Mean `γ^E`, carried forward in the same way.
    pub eve_curve: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Value of a per-step curve at step index `t`, holding the last value.
fn carried(curve: &[f64], t: usize) -> f64 {
    curve[t.min(curve.len() - 1)]
}

impl EvalReport {
    /// Summarize `traces` against `thresholds`.
    pub fn from_traces(
        policy: impl Into<String>,
        scenario: impl Into<String>,
        seed: u64,
        traces: &[EpisodeTrace],
        thresholds: &ErrorThresholds,
    ) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::ParamOutOfRange("no episodes to summarize".into()));
        }
        let n = traces.len() as f64;
        let agents = traces[0].decisions.len();

        let wrong = traces.iter().map(|t| {
            t.decisions.iter().filter(|&&d| d != t.hypothesis).count() as f64 / agents as f64
        });
        let (legit_error, legit_sd) = mean_std(wrong);
        let legit_posterior_error = traces
            .iter()
            .map(|t| t.final_legit_error.iter().sum::<f64>() / agents as f64)
            .sum::<f64>()
            / n;

        let len = traces.iter().map(|t| t.eve_curve.len()).max().unwrap_or(0);
        let mut legit_curve = vec![0.0; len];
        let mut eve_curve = vec![0.0; len];
        for t in traces {
            for s in 0..len {
                legit_curve[s] += carried(&t.legit_curve, s);
                eve_curve[s] += carried(&t.eve_curve, s);
            }
        }
        legit_curve.iter_mut().for_each(|v| *v /= n);
        eve_curve.iter_mut().for_each(|v| *v /= n);

        let (min_idx, eve_error_min) = eve_curve
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
        let (_, min_sd) = mean_std(traces.iter().map(|t| carried(&t.eve_curve, min_idx)));
        let eve_error_final = traces.iter().map(|t| *t.eve_curve.last().unwrap()).sum::<f64>() / n;

        let a_e = traces.iter().map(|t| t.eve_max).sum::<f64>() / n;
        let (mean_tau, tau_std) = mean_std(traces.iter().map(|t| t.tau as f64));
        let agent_tau = (0..agents)
            .map(|k| traces.iter().map(|t| t.agent_tau[k] as f64).sum::<f64>() / n)
            .collect();
        let horizon_hits = traces.iter().filter(|t| t.exited.iter().any(|e| !e)).count();

        Ok(Self {
            policy: policy.into(),
            scenario: scenario.into(),
            episodes: traces.len(),
            seed,
            legit_error,
            legit_error_se: legit_sd / n.sqrt(),
            legit_posterior_error,
            eve_error_min,
            eve_error_min_se: min_sd / n.sqrt(),
            eve_error_min_t: min_idx + 1,
            eve_error_final,
            a_e,
            mean_tau,
            tau_std,
            tau_cv: if mean_tau > 0.0 { tau_std / mean_tau } else { 0.0 },
            agent_tau,
            horizon_hits,
            legit_ok: legit_error <= thresholds.legit,
            eve_ok: eve_error_min >= thresholds.eve,
            legit_curve,
            eve_curve,
        })
    }

    /// Fields in [`REPORT_COLUMNS`] order.
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.policy.clone(),
            self.scenario.clone(),
            self.episodes.to_string(),
            self.seed.to_string(),
            self.legit_error.to_string(),
            self.legit_error_se.to_string(),
            self.legit_posterior_error.to_string(),
            self.eve_error_min.to_string(),
            self.eve_error_min_se.to_string(),
            self.eve_error_min_t.to_string(),
            self.eve_error_final.to_string(),
            self.a_e.to_string(),
            self.mean_tau.to_string(),
            self.tau_std.to_string(),
            self.tau_cv.to_string(),
            self.agent_tau.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            self.horizon_hits.to_string(),
            self.legit_ok.to_string(),
            self.eve_ok.to_string(),
        ]
    }
}

/// Run `episodes` rollouts with seeds `episode_seed(seed, i)`. Results are
/// returned in episode order whatever the thread count.
pub fn run_episodes(
    policy: &dyn Policy,
    spec: &RolloutSpec<'_>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    if episodes == 0 {
        return Err(Error::ParamOutOfRange("episode count must be ≥ 1".into()));
    }
    let one = |i: usize| rollout(policy, spec, episode_seed(seed, i));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..episodes).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..episodes).map(one).collect()
    }
}

/// A report together with the traces it was computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub traces: Vec<EpisodeTrace>,
}

/// Policy under evaluation.
#[derive(Clone, Debug)]
pub enum PolicySource {
    Genome { genome: Genome, team: TeamSpec },
    Baseline(BaselineKind),
}

impl PolicySource {
    pub fn label(&self) -> String {
        match self {
            PolicySource::Genome { .. } => "cosyne".into(),
            PolicySource::Baseline(kind) => kind.name().into(),
        }
    }

    /// Policy for `env`. Baselines always act as a single agent that knows
    /// the legitimate kernels; `mode` only affects genomes.
    pub fn build(&self, env: &Environment, mode: ActionMode) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicySource::Genome { genome, team } => Box::new(team.policy(genome, env, mode)?),
            PolicySource::Baseline(kind) => Box::new(BaselinePolicy::new(*kind, env.legit_model())),
        })
    }

    fn comm(&self) -> CommSpec {
        match self {
            PolicySource::Genome { team, .. } => team.comm(),
            PolicySource::Baseline(_) => CommSpec::FullyConnected,
        }
    }
}

/// Roll out `policy` on `env` and summarize it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with(
    policy: &dyn Policy,
    label: &str,
    scenario: &str,
    env: &Environment,
    comm: CommSpec,
    thresholds: ErrorThresholds,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    let spec = RolloutSpec { env, thresholds, horizon, comm, record: false };
    let traces = run_episodes(policy, &spec, episodes, seed)?;
    let report = EvalReport::from_traces(label, scenario, seed, &traces, &thresholds)?;
    Ok(Evaluation { report, traces })
}

/// Fixed inputs of an evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub thresholds: ErrorThresholds,
    pub horizon: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Action selection of genome policies.
    pub mode: ActionMode,
}

/// Evaluation of a genome or baseline on the nominal environment.
pub fn evaluate_policy(source: &PolicySource, env: &Environment, settings: &EvalSettings) -> Result<Evaluation> {
    let policy = source.build(env, settings.mode)?;
    evaluate_with(
        policy.as_ref(),
        &source.label(),
        "nominal",
        env,
        source.comm(),
        settings.thresholds,
        settings.horizon,
        settings.episodes,
        settings.seed,
    )
}

/// Test-time change applied to a policy trained on the nominal setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scenario {
    Nominal,
    Mismatch(KernelMismatchSpec),
    MessageLoss(f64),
    Independent,
}

impl Scenario {
    /// Short name used in file names and report rows.
    pub fn label(&self) -> String {
        match self {
            Scenario::Nominal => "nominal".into(),
            Scenario::Mismatch(_) => "mismatch".into(),
            Scenario::MessageLoss(l) => format!("loss_{l}"),
            Scenario::Independent => "independent".into(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::MessageLoss(l) => write!(f, "loss:{l}"),
            other => f.write_str(&other.label()),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// `nominal`, `mismatch`, `independent` or `loss:<rate>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParamOutOfRange(format!("unknown scenario '{s}'"));
        match s {
            "nominal" => Ok(Scenario::Nominal),
            "mismatch" => Ok(Scenario::Mismatch(KernelMismatchSpec::default())),
            "independent" => Ok(Scenario::Independent),
            _ => {
                let rate: f64 = s.strip_prefix("loss:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                CommSpec::LossyBroadcast { loss_rate: rate }.validate()?;
                Ok(Scenario::MessageLoss(rate))
            }
        }
    }
}

/// Evaluate a frozen genome under `scenario` without retraining. The same
/// `seed` gives paired episodes across scenarios.
pub fn robustness_suite(
    genome: &Genome,
    team: &TeamSpec,
    scenario: Scenario,
    env: &Environment,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let (env, team) = match scenario {
        Scenario::Nominal => (env.clone(), team.clone()),
        Scenario::Mismatch(spec) => (apply_mismatch(env, spec)?, team.clone()),
        Scenario::MessageLoss(loss_rate) => (env.clone(), team.with_comm(CommSpec::LossyBroadcast { loss_rate })),
        Scenario::Independent => (env.clone(), team.with_comm(CommSpec::Independent)),
    };
    if !matches!(scenario, Scenario::Nominal | Scenario::Mismatch(_)) && team.agents() < 2 {
        return Err(Error::ParamOutOfRange(format!(
            "scenario '{scenario}' needs a decentralized team"
        )));
    }
    // The policy itself filters with the nominal kernels.
    let policy = team.policy(genome, &env, settings.mode)?;
    evaluate_with(
        &policy,
        "cosyne",
        &scenario.label(),
        &env,
        team.comm(),
        settings.thresholds,
        settings.horizon,
        settings.episodes,
        settings.seed,
    )
}

/// Share of sensing actions that used each access mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFrequency {
    pub mode: usize,
    pub count: usize,
    pub frequency: f64,
}

/// Count the sensed actions of `traces` by access mode. Frequencies are all
/// zero when nothing was sensed.
pub fn action_frequency(traces: &[EpisodeTrace], env: &Environment) -> Vec<ModeFrequency> {
    let mut counts = vec![0usize; env.modes()];
    for trace in traces {
        for &(_, _, a, _) in &trace.eve_pairs {
            counts[env.action_info(a).mode] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .into_iter()
        .enumerate()
        .map(|(mode, count)| ModeFrequency {
            mode,
            count,
            frequency: if total > 0 { count as f64 / total as f64 } else { 0.0 },
        })
        .collect()
}

pub fn write_report_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t,legit_error,eve_error`, starting with the prior at `t = 0`.
pub fn write_curve_csv(report: &EvalReport, prior_error: f64, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "legit_error", "eve_error"])?;
    w.write_record(["0".to_string(), prior_error.to_string(), prior_error.to_string()])?;
    for (i, (l, e)) in report.legit_curve.iter().zip(&report.eve_curve).enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `mode,count,frequency`.
pub fn write_freq_csv(freqs: &[ModeFrequency], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "count", "frequency"])?;
    for f in freqs {
        w.write_record([f.mode.to_string(), f.count.to_string(), f.frequency.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
