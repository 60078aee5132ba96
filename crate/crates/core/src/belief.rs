//! Hypothesis spaces, Bayesian belief filtering and MAP decisions.
//!
//! Updates run in the log domain: the unnormalized log-posterior is shifted
//! by its maximum before exponentiating, so long traces never underflow.
//! Entries that fall below [`BELIEF_FLOOR`] after the shift are set to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActionId, HypothesisId, Observation, ObservationModel};
use crate::seed::SimRng;

/// Unnormalized weights below this are floored at zero.
pub const BELIEF_FLOOR: f64 = 1e-300;

/// Tolerance used when validating probability vectors.
pub const PRIOR_TOLERANCE: f64 = 1e-12;

/// Finite hypothesis set with its prior `π₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpace {
    prior: Vec<f64>,
}

impl HypothesisSpace {
    pub fn new(prior: Vec<f64>) -> Result<Self> {
        if prior.len() < 2 {
            return Err(Error::InvalidDistribution(
                "a hypothesis space needs at least two hypotheses".into(),
            ));
        }
        let sum: f64 = prior.iter().sum();
        if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "prior must be non-negative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self { prior })
    }

    pub fn uniform(count: usize) -> Result<Self> {
        Self::new(vec![1.0 / count as f64; count])
    }

    pub fn count(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn initial_belief(&self) -> Belief {
        Belief(self.prior.clone())
    }

    /// Draw the true hypothesis `x ~ π₀`.
    pub fn sample(&self, rng: &mut SimRng) -> HypothesisId {
        crate::model::sample_categorical(&self.prior, rng)
    }
}

/// Posterior probability vector over hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidDistribution(format!("{probs:?}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(count: usize) -> Self {
        Self(vec![1.0 / count as f64; count])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// MAP error probability `1 − max_x π(x)`.
    pub fn map_error(&self) -> f64 {
        map_error(self)
    }

    pub fn map_decision(&self) -> HypothesisId {
        map_decision(self)
    }
}

/// Posterior after observing `obs` in response to `action`.
pub fn update_belief(
    belief: &Belief,
    model: &ObservationModel,
    action: ActionId,
    obs: &Observation,
) -> Result<Belief> {
    update_belief_multi(belief, model, &[(action, *obs)])
}

/// Posterior after a batch of (action, observation) pairs received in one
/// round. An empty batch returns the belief unchanged.
pub fn update_belief_multi(
    belief: &Belief,
    model: &ObservationModel,
    pairs: &[(ActionId, Observation)],
) -> Result<Belief> {
    if pairs.is_empty() {
        return Ok(belief.clone());
    }
    let mut log_w: Vec<f64> = belief.0.iter().map(|p| p.ln()).collect();
    for (action, obs) in pairs {
        model.accumulate_log_likelihoods(*action, obs, &mut log_w)?;
    }
    normalize_log_weights(log_w).map(Belief)
}

/// Normalize unnormalized log-weights into a probability vector.
pub(crate) fn normalize_log_weights(mut log_w: Vec<f64>) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroLikelihood);
    }
    let mut total = 0.0;
    for w in log_w.iter_mut() {
        let v = (*w - max).exp();
        *w = if v < BELIEF_FLOOR { 0.0 } else { v };
        total += *w;
    }
    for w in log_w.iter_mut() {
        *w /= total;
    }
    Ok(log_w)
}

/// `γ = 1 − max_x π(x)`.
pub fn map_error(belief: &Belief) -> f64 {
    (1.0 - belief.max_prob()).max(0.0)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn map_decision(belief: &Belief) -> HypothesisId {
    let mut best = 0;
    for (i, &p) in belief.0.iter().enumerate() {
        if p > belief.0[best] {
            best = i;
        }
    }
    best
}

/// Legitimate and eavesdropper error thresholds `(L, E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorThresholds {
    pub legit: f64,
    pub eve: f64,
}

impl ErrorThresholds {
    pub fn new(legit: f64, eve: f64) -> Result<Self> {
        for (name, v) in [("L", legit), ("E", eve)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::ParamOutOfRange(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(Self { legit, eve })
    }
}

/// Strict stopping test `γ < L`.
pub fn should_stop(belief: &Belief, thresholds: &ErrorThresholds) -> bool {
    map_error(belief) < thresholds.legit
}

/// Stopping test used inside rollouts, `γ ≤ L`.
pub(crate) fn reached_threshold(belief: &Belief, thresholds: &ErrorThresholds) -> bool {
    map_error(belief) <= thresholds.legit
}
