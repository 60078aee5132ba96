use serde::{Deserialize, Serialize};

use super::{sensor_state, ActionInfo, Environment, SensorGridSpec};
use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::model::{binary_row, DiscreteModel, ObservationModel};

/// Flipping probabilities of one access mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipPair {
    pub legit: f64,
    pub eve: f64,
}

/// Per-mode flipping probabilities of the binary sensor model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialParams {
    pub modes: Vec<FlipPair>,
}

impl Default for BinomialParams {
    fn default() -> Self {
        Self {
            modes: vec![
                FlipPair { legit: 0.125, eve: 0.125 },
                FlipPair { legit: 0.2, eve: 0.4 },
                FlipPair { legit: 0.25, eve: 0.45 },
            ],
        }
    }
}

impl BinomialParams {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::ParamOutOfRange("at least one access mode is required".into()));
        }
        for (m, pair) in self.modes.iter().enumerate() {
            for p in [pair.legit, pair.eve] {
                if !(p > 0.0 && p <= 0.5) {
                    return Err(Error::ParamOutOfRange(format!(
                        "mode {m}: flipping probability {p} outside (0, 0.5]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Binary sensors read through a binary symmetric channel whose flipping
/// probability depends on the access mode.
pub fn build_binomial_env(spec: SensorGridSpec, params: &BinomialParams) -> Result<Environment> {
    params.validate()?;
    let modes = params.modes.len();
    let actions: Vec<ActionInfo> = (0..spec.sensors)
        .flat_map(|sensor| (0..modes).map(move |mode| ActionInfo { sensor, mode }))
        .collect();
    let h = spec.hypotheses();
    let kernel = |pick: fn(&FlipPair) -> f64| {
        DiscreteModel::from_fn(actions.len(), h, 2, |a, x| {
            let info = actions[a];
            binary_row(sensor_state(x, info.sensor), pick(&params.modes[info.mode]))
        })
        .map(ObservationModel::Discrete)
    };
    let legit = kernel(|p| p.legit)?;
    let eve = kernel(|p| p.eve)?;
    Environment::new(
        format!("binomial-s{}", spec.sensors),
        HypothesisSpace::uniform(h)?,
        legit,
        eve,
        actions,
    )
}
