//! Kernel mismatch: the testing environment draws a fresh flipping
//! probability every step while the agents and the eavesdropper keep
//! filtering with the nominal kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::model::{binary_row, sample_categorical, ActionId, HypothesisId, Observation, ObservationModel};
use crate::seed::SimRng;

/// Multiplicative uniform intervals applied to the nominal flipping
/// probabilities at every step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMismatchSpec {
    pub legit_range: (f64, f64),
    pub eve_range: (f64, f64),
}

impl Default for KernelMismatchSpec {
    fn default() -> Self {
        Self {
            legit_range: (0.85, 1.15),
            eve_range: (0.7, 0.9),
        }
    }
}

impl KernelMismatchSpec {
    pub fn identity() -> Self {
        Self {
            legit_range: (1.0, 1.0),
            eve_range: (1.0, 1.0),
        }
    }
}

/// `(correct symbol, flipping probability)` of a binary symmetric row.
fn split_row(row: &[f64]) -> (usize, f64) {
    let correct = usize::from(row[1] > row[0]);
    (correct, row[1 - correct])
}

fn check_model(model: &ObservationModel, (lo, hi): (f64, f64), side: &str) -> Result<()> {
    let d = model
        .as_discrete()
        .filter(|d| d.symbols() == 2)
        .ok_or_else(|| Error::ParamOutOfRange(format!("{side} kernel is not a binary channel")))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::ParamOutOfRange(format!("{side} interval [{lo}, {hi}] is invalid")));
    }
    for a in 0..model.num_actions() {
        for x in 0..model.num_hypotheses() {
            let (_, flip) = split_row(d.row(a, x));
            if flip > 0.0 && !(lo * flip > 0.0 && hi * flip < 1.0) {
                return Err(Error::ParamOutOfRange(format!(
                    "{side} flip {flip} scaled by [{lo}, {hi}] leaves (0, 1)"
                )));
            }
        }
    }
    Ok(())
}

/// Testing environment whose true kernels are perturbed per step.
pub fn apply_mismatch(env: &Environment, spec: KernelMismatchSpec) -> Result<Environment> {
    check_model(env.legit_model(), spec.legit_range, "legitimate")?;
    check_model(env.eve_model(), spec.eve_range, "eavesdropper")?;
    let mut out = env.clone();
    out.mismatch = Some(spec);
    Ok(out)
}

pub(super) fn sample_perturbed(
    model: &ObservationModel,
    action: ActionId,
    x: HypothesisId,
    (lo, hi): (f64, f64),
    rng: &mut SimRng,
    perturb: &mut SimRng,
) -> Observation {
    let scale = lo + (hi - lo) * perturb.random::<f64>();
    match model.as_discrete() {
        Some(d) => {
            let (correct, flip) = split_row(d.row(action, x));
            Observation::Symbol(sample_categorical(&binary_row(correct, flip * scale), rng))
        }
        None => model.sample(action, x, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_binomial_env, build_gaussian_env, BinomialParams, GaussianParams, SensorGridSpec};
    use rand::SeedableRng;

    fn env() -> Environment {
        build_binomial_env(SensorGridSpec::new(2).unwrap(), &BinomialParams::default()).unwrap()
    }

    #[test]
    fn identity_spec_reproduces_nominal_draws() {
        let nominal = env();
        let mismatched = apply_mismatch(&nominal, KernelMismatchSpec::identity()).unwrap();
        let (mut r1, mut r2) = (SimRng::seed_from_u64(3), SimRng::seed_from_u64(3));
        let (mut p1, mut p2) = (SimRng::seed_from_u64(4), SimRng::seed_from_u64(99));
        for i in 0..5000 {
            let (a, x) = (i % 6, i % 4);
            assert_eq!(
                nominal.sample_legit(a, x, &mut r1, &mut p1),
                mismatched.sample_legit(a, x, &mut r2, &mut p2)
            );
            assert_eq!(
                nominal.sample_eve(a, x, &mut r1, &mut p1),
                mismatched.sample_eve(a, x, &mut r2, &mut p2)
            );
        }
    }

    #[test]
    fn perturbed_flip_intervals() {
        // Interval arithmetic: [0.85, 1.15] * 0.125 and [0.7, 0.9] * 0.45.
        let spec = KernelMismatchSpec::default();
        let lo = spec.legit_range.0 * 0.125;
        let hi = spec.legit_range.1 * 0.125;
        assert!((lo - 0.10625).abs() < 1e-15 && (hi - 0.14375).abs() < 1e-15);
        let elo = spec.eve_range.0 * 0.45;
        let ehi = spec.eve_range.1 * 0.45;
        assert!((elo - 0.315).abs() < 1e-12 && (ehi - 0.405).abs() < 1e-12);
    }

    #[test]
    fn eavesdropper_flip_frequency_matches_interval_mean() {
        let env = apply_mismatch(&env(), KernelMismatchSpec::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(8);
        let mut perturb = SimRng::seed_from_u64(9);
        let n = 100_000;
        // Sensor 1 (normal under x = 0), mode 3: nominal flip 0.45, true mean 0.8 * 0.45.
        let flips = (0..n)
            .filter(|_| env.sample_eve(5, 0, &mut rng, &mut perturb) == Observation::Symbol(1))
            .count();
        let freq = flips as f64 / n as f64;
        let p = 0.8 * 0.45;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "{freq}");
        // Filtering kernels stay nominal.
        assert_eq!(env.eve_model().as_discrete().unwrap().row(5, 0)[1], 0.45);
    }

    #[test]
    fn out_of_range_perturbation_rejected() {
        let spec = KernelMismatchSpec { legit_range: (1.0, 9.0), eve_range: (1.0, 1.0) };
        assert!(matches!(apply_mismatch(&env(), spec), Err(Error::ParamOutOfRange(_))));
    }

    #[test]
    fn continuous_env_rejected() {
        let g = build_gaussian_env(SensorGridSpec::new(1).unwrap(), &GaussianParams::default()).unwrap();
        assert!(apply_mismatch(&g, KernelMismatchSpec::default()).is_err());
    }
}
