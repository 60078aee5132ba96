//! Strong-or-weak radar returns. Hypothesis 0 is the empty scene and
//! hypothesis `ν + 1` means target `ν` is present. Action `w` transmits the
//! waveform matched to target `w`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionInfo, Environment};
use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::model::{GaussianModel, ObservationModel};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarParams {
    pub targets: usize,
    pub strong_range: (f64, f64),
    pub weak_range: (f64, f64),
    pub sigma_l2: f64,
    pub sigma_e2: f64,
    /// Prior over the `targets + 1` hypotheses; uniform when absent.
    pub prior: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            targets: 5,
            strong_range: (1.0, 2.0),
            weak_range: (0.1, 0.5),
            sigma_l2: 1.0,
            sigma_e2: 1.5,
            prior: None,
            seed: 0,
        }
    }
}

/// Strong and weak return means, drawn once per seed.
pub fn radar_means(params: &RadarParams) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_for(params.seed, &[0x5241_4441]);
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let strong: Vec<f64> = (0..params.targets).map(|_| draw(params.strong_range)).collect();
    let weak: Vec<f64> = (0..params.targets).map(|_| draw(params.weak_range)).collect();
    (strong, weak)
}

pub fn build_radar_env(params: &RadarParams) -> Result<Environment> {
    if params.targets == 0 {
        return Err(Error::ParamOutOfRange("radar needs at least one target".into()));
    }
    if !(params.sigma_l2 > 0.0 && params.sigma_e2 > params.sigma_l2) {
        return Err(Error::ParamOutOfRange(format!(
            "variances must satisfy 0 < σ_L² < σ_E² (got {} and {})",
            params.sigma_l2, params.sigma_e2
        )));
    }
    for (lo, hi) in [params.strong_range, params.weak_range] {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::ParamOutOfRange(format!("bad mean range [{lo}, {hi}]")));
        }
    }
    let (strong, weak) = radar_means(params);
    let h = params.targets + 1;
    let mean = |w: usize, x: usize| match x {
        0 => 0.0,
        x if x - 1 == w => strong[x - 1],
        x => weak[x - 1],
    };
    let legit = GaussianModel::from_fn(params.targets, h, |w, x| (mean(w, x), params.sigma_l2))?;
    let eve = GaussianModel::from_fn(params.targets, h, |w, x| (mean(w, x), params.sigma_e2))?;
    let space = match &params.prior {
        Some(p) => HypothesisSpace::new(p.clone())?,
        None => HypothesisSpace::uniform(h)?,
    };
    let actions = (0..params.targets).map(|w| ActionInfo { sensor: 0, mode: w }).collect();
    Environment::new(
        format!("radar-n{}", params.targets),
        space,
        ObservationModel::Continuous(legit),
        ObservationModel::Continuous(eve),
        actions,
    )
}
