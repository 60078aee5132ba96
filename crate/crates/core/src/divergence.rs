//! Kullback-Leibler divergences between observation kernels.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{gaussian_log_density, ActionId, HypothesisId, ObservationModel};
use crate::seed::SimRng;

/// Value used in place of an infinite divergence.
pub const KL_CAP: f64 = 1e6;

/// `D(p ‖ q)` in nats for probability vectors, capped at [`KL_CAP`].
pub fn kl_discrete(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return KL_CAP;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total.clamp(0.0, KL_CAP)
}

/// `D(N(m1, v1) ‖ N(m2, v2))` in nats.
pub fn kl_gaussian(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    (0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)).min(KL_CAP)
}

/// Monte Carlo estimate of the Gaussian divergence from `n` draws of the
/// first law. Returns `(mean, standard error)`.
pub fn kl_gaussian_monte_carlo(
    m1: f64,
    v1: f64,
    m2: f64,
    v2: f64,
    n: usize,
    rng: &mut SimRng,
) -> (f64, f64) {
    let sd = v1.sqrt();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let y = m1 + sd * z;
        let d = gaussian_log_density(y, m1, v1) - gaussian_log_density(y, m2, v2);
        sum += d;
        sum_sq += d * d;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

/// `D(P[·|a, x] ‖ P[·|a, x2])`.
pub fn kernel_kl(model: &ObservationModel, action: ActionId, x: HypothesisId, x2: HypothesisId) -> f64 {
    match model {
        ObservationModel::Discrete(m) => kl_discrete(m.row(action, x), m.row(action, x2)),
        ObservationModel::Continuous(m) => {
            let (m1, v1) = m.params(action, x);
            let (m2, v2) = m.params(action, x2);
            kl_gaussian(m1, v1, m2, v2)
        }
    }
}
