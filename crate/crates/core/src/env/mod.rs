//! Sensing environments: hypothesis structure, the legitimate and
//! eavesdropper kernels, and per-step samplers.
//!
//! Sensor-grid environments encode a hypothesis as a bitmask over the `S`
//! sensors (bit `i` set means sensor `i` is near an anomaly), so there are
//! `2^S` hypotheses. Action ids are `sensor * modes + mode`.

mod binomial;
mod gaussian;
mod mismatch;
mod radar;
mod ricean;

pub use binomial::{build_binomial_env, BinomialParams, FlipPair};
pub use gaussian::{build_gaussian_env, GaussianParams, VariancePair};
pub use mismatch::{apply_mismatch, KernelMismatchSpec};
pub use radar::{build_radar_env, RadarParams};
pub use ricean::{build_ricean_env, calibrate_flip_probabilities, RiceanParams};

use serde::{Deserialize, Serialize};

use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::model::{ActionId, HypothesisId, Observation, ObservationModel};
use crate::seed::SimRng;

/// Largest sensor count accepted by the grid environments.
pub const MAX_SENSORS: usize = 16;

/// Sensor grid: `S` sensors, every subset of them may be anomalous.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGridSpec {
    pub sensors: usize,
}

impl SensorGridSpec {
    pub fn new(sensors: usize) -> Result<Self> {
        if sensors == 0 || sensors > MAX_SENSORS {
            return Err(Error::ParamOutOfRange(format!(
                "sensor count {sensors} must lie in 1..={MAX_SENSORS}"
            )));
        }
        Ok(Self { sensors })
    }

    pub fn hypotheses(&self) -> usize {
        1 << self.sensors
    }
}

/// Whether sensor `sensor` is anomalous under hypothesis `x`.
pub fn sensor_state(x: HypothesisId, sensor: usize) -> usize {
    (x >> sensor) & 1
}

/// What an action does: which sensor it probes and with which access mode
/// (power level for the Ricean link, waveform for the radar).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionInfo {
    pub sensor: usize,
    pub mode: usize,
}

/// A complete EAHT environment.
#[derive(Clone, Debug)]
pub struct Environment {
    label: String,
    space: HypothesisSpace,
    legit: ObservationModel,
    eve: ObservationModel,
    actions: Vec<ActionInfo>,
    sensors: usize,
    modes: usize,
    mismatch: Option<KernelMismatchSpec>,
}

impl Environment {
    pub fn new(
        label: impl Into<String>,
        space: HypothesisSpace,
        legit: ObservationModel,
        eve: ObservationModel,
        actions: Vec<ActionInfo>,
    ) -> Result<Self> {
        let h = space.count();
        if legit.num_hypotheses() != h || eve.num_hypotheses() != h {
            return Err(Error::ShapeMismatch(format!(
                "kernels cover {} / {} hypotheses, prior has {h}",
                legit.num_hypotheses(),
                eve.num_hypotheses()
            )));
        }
        if legit.num_actions() != actions.len() || eve.num_actions() != actions.len() {
            return Err(Error::ShapeMismatch(format!(
                "kernels cover {} / {} actions, expected {}",
                legit.num_actions(),
                eve.num_actions(),
                actions.len()
            )));
        }
        let sensors = actions.iter().map(|a| a.sensor + 1).max().unwrap_or(0);
        let modes = actions.iter().map(|a| a.mode + 1).max().unwrap_or(0);
        Ok(Self {
            label: label.into(),
            space,
            legit,
            eve,
            actions,
            sensors,
            modes,
            mismatch: None,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    pub fn num_hypotheses(&self) -> usize {
        self.space.count()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn action_info(&self, action: ActionId) -> ActionInfo {
        self.actions[action]
    }

    pub fn actions(&self) -> &[ActionInfo] {
        &self.actions
    }

    /// Kernel used by the legitimate agents for filtering.
    pub fn legit_model(&self) -> &ObservationModel {
        &self.legit
    }

    /// Kernel used by the eavesdropper for filtering.
    pub fn eve_model(&self) -> &ObservationModel {
        &self.eve
    }

    pub fn mismatch(&self) -> Option<&KernelMismatchSpec> {
        self.mismatch.as_ref()
    }

    pub fn into_parts(self) -> (HypothesisSpace, ObservationModel, ObservationModel) {
        (self.space, self.legit, self.eve)
    }

    /// Replace the prior (kernels unchanged).
    pub fn with_prior(mut self, space: HypothesisSpace) -> Result<Self> {
        if space.count() != self.space.count() {
            return Err(Error::ShapeMismatch("prior size differs from the environment".into()));
        }
        self.space = space;
        Ok(self)
    }

    /// Sample the legitimate observation `y ~ P_true[· | a, x]`.
    ///
    /// `perturb` feeds only the kernel perturbation of a mismatched
    /// environment; the observation itself is drawn from `rng`.
    pub fn sample_legit(
        &self,
        action: ActionId,
        x: HypothesisId,
        rng: &mut SimRng,
        perturb: &mut SimRng,
    ) -> Observation {
        match &self.mismatch {
            Some(spec) => mismatch::sample_perturbed(&self.legit, action, x, spec.legit_range, rng, perturb),
            None => self.legit.sample(action, x, rng),
        }
    }

    /// Sample the eavesdropper observation `z ~ Q_true[· | a, x]`.
    pub fn sample_eve(
        &self,
        action: ActionId,
        x: HypothesisId,
        rng: &mut SimRng,
        perturb: &mut SimRng,
    ) -> Observation {
        match &self.mismatch {
            Some(spec) => mismatch::sample_perturbed(&self.eve, action, x, spec.eve_range, rng, perturb),
            None => self.eve.sample(action, x, rng),
        }
    }
}

/// Serializable environment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Binomial {
        sensors: usize,
        #[serde(default)]
        params: BinomialParams,
    },
    Gaussian {
        sensors: usize,
        #[serde(default)]
        params: GaussianParams,
    },
    Ricean(RiceanParams),
    Radar(RadarParams),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Environment> {
        match self {
            EnvConfig::Binomial { sensors, params } => {
                build_binomial_env(SensorGridSpec::new(*sensors)?, params)
            }
            EnvConfig::Gaussian { sensors, params } => {
                build_gaussian_env(SensorGridSpec::new(*sensors)?, params)
            }
            EnvConfig::Ricean(params) => build_ricean_env(params),
            EnvConfig::Radar(params) => build_radar_env(params),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
