use serde::{Deserialize, Serialize};

use super::{sensor_state, ActionInfo, Environment, SensorGridSpec};
use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::model::{GaussianModel, ObservationModel};

/// Observation variances of one access mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub legit: f64,
    pub eve: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub modes: Vec<VariancePair>,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            modes: vec![
                VariancePair { legit: 0.25, eve: 0.25 },
                VariancePair { legit: 0.5, eve: 1.25 },
                VariancePair { legit: 1.0, eve: 2.5 },
            ],
        }
    }
}

/// Sensors return `N(1, σ²)` near an anomaly and `N(0, σ²)` otherwise.
pub fn build_gaussian_env(spec: SensorGridSpec, params: &GaussianParams) -> Result<Environment> {
    if params.modes.is_empty() {
        return Err(Error::ParamOutOfRange("at least one access mode is required".into()));
    }
    for (m, pair) in params.modes.iter().enumerate() {
        if !(pair.legit > 0.0 && pair.eve > 0.0) || !pair.legit.is_finite() || !pair.eve.is_finite() {
            return Err(Error::ParamOutOfRange(format!("mode {m}: variances must be positive")));
        }
    }
    let modes = params.modes.len();
    let actions: Vec<ActionInfo> = (0..spec.sensors)
        .flat_map(|sensor| (0..modes).map(move |mode| ActionInfo { sensor, mode }))
        .collect();
    let h = spec.hypotheses();
    let kernel = |pick: fn(&VariancePair) -> f64| {
        GaussianModel::from_fn(actions.len(), h, |a, x| {
            let info = actions[a];
            (sensor_state(x, info.sensor) as f64, pick(&params.modes[info.mode]))
        })
        .map(ObservationModel::Continuous)
    };
    let legit = kernel(|p| p.legit)?;
    let eve = kernel(|p| p.eve)?;
    Environment::new(
        format!("gaussian-s{}", spec.sensors),
        HypothesisSpace::uniform(h)?,
        legit,
        eve,
        actions,
    )
}
