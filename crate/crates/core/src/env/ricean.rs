//! Sensors that transmit BPSK symbols over Ricean fading links.
//!
//! The receiver hard-decides `y = 1` iff `Re(√P·h·x + n) > 0`, so the link
//! reduces to a binary symmetric channel. Its flipping probability per power
//! level is estimated offline by Monte Carlo over fades and noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sensor_state, ActionInfo, Environment, SensorGridSpec};
use crate::belief::HypothesisSpace;
use crate::error::{Error, Result};
use crate::model::{binary_row, DiscreteModel, ObservationModel};
use crate::seed::{rng_for, SimRng};

/// Smallest accepted calibration sample count.
pub const MIN_CALIBRATION_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiceanParams {
    pub sensors: usize,
    /// Ricean K-factor of the legitimate link, dB.
    pub kappa_l_db: f64,
    /// Ricean K-factor of the eavesdropper link, dB.
    pub kappa_e_db: f64,
    pub power_levels_db: Vec<f64>,
    pub noise_power_db: f64,
    pub calibration_episodes: usize,
    pub seed: u64,
}

impl Default for RiceanParams {
    fn default() -> Self {
        Self {
            sensors: 3,
            kappa_l_db: 5.0,
            kappa_e_db: -2.0,
            power_levels_db: vec![-20.0, -10.0, 0.0],
            noise_power_db: -60.0,
            calibration_episodes: 100_000,
            seed: 0,
        }
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Monte Carlo estimate of the hard-decision flipping probability for each
/// power level, sharing one set of fades and noise draws across levels.
///
/// Estimates are made non-increasing in transmit power by pooling adjacent
/// violators, since the exact flipping probability is monotone in power.
pub fn calibrate_flip_probabilities(
    kappa_db: f64,
    powers_db: &[f64],
    noise_db: f64,
    samples: usize,
    rng: &mut SimRng,
) -> Vec<f64> {
    let k = db_to_linear(kappa_db);
    let los = (k / (k + 1.0)).sqrt();
    let scatter_sd = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let noise_sd = (db_to_linear(noise_db) / 2.0).sqrt();
    let amplitudes: Vec<f64> = powers_db.iter().map(|p| db_to_linear(*p).sqrt()).collect();
    let mut flips = vec![0usize; powers_db.len()];
    for _ in 0..samples {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        // Symbol +1 is sent; symbol −1 is symmetric.
        let re_h = los + scatter_sd * g1;
        let re_n = noise_sd * g2;
        for (count, amp) in flips.iter_mut().zip(&amplitudes) {
            if amp * re_h + re_n <= 0.0 {
                *count += 1;
            }
        }
    }
    let raw: Vec<f64> = flips.iter().map(|c| *c as f64 / samples as f64).collect();
    monotone_in_power(&raw, powers_db)
}

/// Pool-adjacent-violators projection onto sequences non-increasing in power.
fn monotone_in_power(raw: &[f64], powers_db: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| powers_db[a].total_cmp(&powers_db[b]));
    // Blocks of (sum, count), kept non-increasing.
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &i in &order {
        blocks.push((raw[i], 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s0 / c0 as f64 {
                blocks.pop();
                blocks.pop();
                blocks.push((s0 + s1, c0 + c1));
            } else {
                break;
            }
        }
    }
    let mut out = vec![0.0; raw.len()];
    let mut pos = 0;
    for (sum, count) in blocks {
        for &i in &order[pos..pos + count] {
            out[i] = sum / count as f64;
        }
        pos += count;
    }
    out
}

/// Ricean sensing links wrapped as a discrete model whose actions are
/// (sensor, power level) pairs.
pub fn build_ricean_env(params: &RiceanParams) -> Result<Environment> {
    let spec = SensorGridSpec::new(params.sensors)?;
    if params.calibration_episodes < MIN_CALIBRATION_SAMPLES {
        return Err(Error::ParamOutOfRange(format!(
            "calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {}",
            params.calibration_episodes
        )));
    }
    if params.power_levels_db.is_empty() {
        return Err(Error::ParamOutOfRange("power level set is empty".into()));
    }
    let finite = params.power_levels_db.iter().all(|p| p.is_finite())
        && params.noise_power_db.is_finite()
        && params.kappa_l_db.is_finite()
        && params.kappa_e_db.is_finite();
    if !finite {
        return Err(Error::ParamOutOfRange("ricean parameters must be finite".into()));
    }
    let levels = &params.power_levels_db;
    let legit_flips = calibrate_flip_probabilities(
        params.kappa_l_db,
        levels,
        params.noise_power_db,
        params.calibration_episodes,
        &mut rng_for(params.seed, &[1]),
    );
    let eve_flips = calibrate_flip_probabilities(
        params.kappa_e_db,
        levels,
        params.noise_power_db,
        params.calibration_episodes,
        &mut rng_for(params.seed, &[2]),
    );
    let top = (0..levels.len())
        .max_by(|&a, &b| levels[a].total_cmp(&levels[b]))
        .unwrap_or(0);
    if legit_flips[top] >= 0.5 {
        return Err(Error::CalibrationDiverged { flip: legit_flips[top] });
    }
    let actions: Vec<ActionInfo> = (0..spec.sensors)
        .flat_map(|sensor| (0..levels.len()).map(move |mode| ActionInfo { sensor, mode }))
        .collect();
    let h = spec.hypotheses();
    let kernel = |flips: &[f64]| {
        DiscreteModel::from_fn(actions.len(), h, 2, |a, x| {
            let info = actions[a];
            binary_row(sensor_state(x, info.sensor), flips[info.mode])
        })
        .map(ObservationModel::Discrete)
    };
    let legit = kernel(&legit_flips)?;
    let eve = kernel(&eve_flips)?;
    Environment::new(
        format!("ricean-s{}", spec.sensors),
        HypothesisSpace::uniform(h)?,
        legit,
        eve,
        actions,
    )
}
