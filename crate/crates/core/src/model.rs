//! Observation kernels `P[· | a, x]` (legitimate side) and `Q[· | a, x]`
//! (eavesdropper side).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;

pub type ActionId = usize;
pub type HypothesisId = usize;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A single sensor reading: a symbol of a finite alphabet or a real value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Symbol(usize),
    Real(f64),
}

impl Observation {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Observation::Symbol(s) => s as f64,
            Observation::Real(v) => v,
        }
    }
}

/// Probability tables over a finite alphabet, one row per (action, hypothesis).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteModel {
    actions: usize,
    hypotheses: usize,
    symbols: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl DiscreteModel {
    /// Build from a row function; every row must be a probability vector.
    pub fn from_fn(
        actions: usize,
        hypotheses: usize,
        symbols: usize,
        mut row: impl FnMut(ActionId, HypothesisId) -> Vec<f64>,
    ) -> Result<Self> {
        if actions == 0 || hypotheses == 0 || symbols == 0 {
            return Err(Error::ShapeMismatch("empty discrete model".into()));
        }
        let mut probs = Vec::with_capacity(actions * hypotheses * symbols);
        for a in 0..actions {
            for x in 0..hypotheses {
                let r = row(a, x);
                if r.len() != symbols {
                    return Err(Error::ShapeMismatch(format!(
                        "row ({a}, {x}) has {} symbols, expected {symbols}",
                        r.len()
                    )));
                }
                let sum: f64 = r.iter().sum();
                if r.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidDistribution(format!(
                        "row ({a}, {x}) = {r:?} is not a probability vector"
                    )));
                }
                probs.extend_from_slice(&r);
            }
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            actions,
            hypotheses,
            symbols,
            probs,
            log_probs,
        })
    }

    /// Build from nested tables indexed `[action][hypothesis][symbol]`.
    pub fn from_tables(tables: &[Vec<Vec<f64>>]) -> Result<Self> {
        let actions = tables.len();
        let hypotheses = tables.first().map_or(0, Vec::len);
        let symbols = tables
            .first()
            .and_then(|t| t.first())
            .map_or(0, Vec::len);
        if tables.iter().any(|t| t.len() != hypotheses) {
            return Err(Error::ShapeMismatch("ragged hypothesis dimension".into()));
        }
        Self::from_fn(actions, hypotheses, symbols, |a, x| tables[a][x].clone())
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn row(&self, action: ActionId, hypothesis: HypothesisId) -> &[f64] {
        let start = (action * self.hypotheses + hypothesis) * self.symbols;
        &self.probs[start..start + self.symbols]
    }

    fn log_prob(&self, action: ActionId, hypothesis: HypothesisId, symbol: usize) -> f64 {
        self.log_probs[(action * self.hypotheses + hypothesis) * self.symbols + symbol]
    }
}

/// Gaussian observation laws `N(mean(a, x), var(a, x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    actions: usize,
    hypotheses: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianModel {
    pub fn from_fn(
        actions: usize,
        hypotheses: usize,
        mut params: impl FnMut(ActionId, HypothesisId) -> (f64, f64),
    ) -> Result<Self> {
        if actions == 0 || hypotheses == 0 {
            return Err(Error::ShapeMismatch("empty gaussian model".into()));
        }
        let mut means = Vec::with_capacity(actions * hypotheses);
        let mut variances = Vec::with_capacity(actions * hypotheses);
        for a in 0..actions {
            for x in 0..hypotheses {
                let (m, v) = params(a, x);
                if !m.is_finite() || !(v.is_finite() && v > 0.0) {
                    return Err(Error::ParamOutOfRange(format!(
                        "gaussian kernel ({a}, {x}) has mean {m} and variance {v}"
                    )));
                }
                means.push(m);
                variances.push(v);
            }
        }
        Ok(Self {
            actions,
            hypotheses,
            means,
            variances,
        })
    }

    /// `(mean, variance)` of the kernel for `(action, hypothesis)`.
    pub fn params(&self, action: ActionId, hypothesis: HypothesisId) -> (f64, f64) {
        let i = action * self.hypotheses + hypothesis;
        (self.means[i], self.variances[i])
    }

    pub fn log_density(&self, action: ActionId, hypothesis: HypothesisId, y: f64) -> f64 {
        let (m, v) = self.params(action, hypothesis);
        gaussian_log_density(y, m, v)
    }
}

pub fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// An observation law for every (action, hypothesis) pair.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationModel {
    Discrete(DiscreteModel),
    Continuous(GaussianModel),
}

impl ObservationModel {
    pub fn num_actions(&self) -> usize {
        match self {
            ObservationModel::Discrete(m) => m.actions,
            ObservationModel::Continuous(m) => m.actions,
        }
    }

    pub fn num_hypotheses(&self) -> usize {
        match self {
            ObservationModel::Discrete(m) => m.hypotheses,
            ObservationModel::Continuous(m) => m.hypotheses,
        }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteModel> {
        match self {
            ObservationModel::Discrete(m) => Some(m),
            ObservationModel::Continuous(_) => None,
        }
    }

    fn check(&self, action: ActionId, obs: &Observation) -> Result<()> {
        if action >= self.num_actions() {
            return Err(Error::InvalidAction {
                action,
                actions: self.num_actions(),
            });
        }
        match (self, obs) {
            (ObservationModel::Discrete(m), Observation::Symbol(s)) if *s < m.symbols => Ok(()),
            (ObservationModel::Continuous(_), Observation::Real(v)) if v.is_finite() => Ok(()),
            _ => Err(Error::InvalidObservation(format!("{obs:?}"))),
        }
    }

    /// `ln P[obs | action, hypothesis]` (log-density for continuous models).
    pub fn log_likelihood(
        &self,
        action: ActionId,
        hypothesis: HypothesisId,
        obs: &Observation,
    ) -> Result<f64> {
        self.check(action, obs)?;
        if hypothesis >= self.num_hypotheses() {
            return Err(Error::ShapeMismatch(format!(
                "hypothesis {hypothesis} out of range"
            )));
        }
        Ok(self.log_likelihood_unchecked(action, hypothesis, obs))
    }

    /// Accumulate `ln P[obs | action, x]` for every hypothesis into `acc`.
    pub fn accumulate_log_likelihoods(
        &self,
        action: ActionId,
        obs: &Observation,
        acc: &mut [f64],
    ) -> Result<()> {
        self.check(action, obs)?;
        if acc.len() != self.num_hypotheses() {
            return Err(Error::ShapeMismatch(format!(
                "belief has {} entries, model has {} hypotheses",
                acc.len(),
                self.num_hypotheses()
            )));
        }
        for (x, slot) in acc.iter_mut().enumerate() {
            *slot += self.log_likelihood_unchecked(action, x, obs);
        }
        Ok(())
    }

    fn log_likelihood_unchecked(&self, action: ActionId, x: HypothesisId, obs: &Observation) -> f64 {
        match (self, obs) {
            (ObservationModel::Discrete(m), Observation::Symbol(s)) => m.log_prob(action, x, *s),
            (ObservationModel::Continuous(m), Observation::Real(v)) => m.log_density(action, x, *v),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Draw an observation for `(action, hypothesis)`.
    pub fn sample(&self, action: ActionId, hypothesis: HypothesisId, rng: &mut SimRng) -> Observation {
        match self {
            ObservationModel::Discrete(m) => {
                Observation::Symbol(sample_categorical(m.row(action, hypothesis), rng))
            }
            ObservationModel::Continuous(m) => {
                let (mean, var) = m.params(action, hypothesis);
                let z: f64 = rng.sample(StandardNormal);
                Observation::Real(mean + var.sqrt() * z)
            }
        }
    }

    /// True when the two kernels for `action` under `x` and `x2` are identical.
    pub fn same_kernel(&self, action: ActionId, x: HypothesisId, x2: HypothesisId) -> bool {
        match self {
            ObservationModel::Discrete(m) => m.row(action, x) == m.row(action, x2),
            ObservationModel::Continuous(m) => m.params(action, x) == m.params(action, x2),
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Row `[P(0), P(1)]` of a binary symmetric channel carrying bit `state`.
pub fn binary_row(state: usize, flip: f64) -> Vec<f64> {
    if state == 1 {
        vec![flip, 1.0 - flip]
    } else {
        vec![1.0 - flip, flip]
    }
}
