//! Classical active hypothesis testing policies that ignore the
//! eavesdropper: the Chernoff test, myopic extrinsic Jensen-Shannon
//! maximization, and uniformly random sensing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::divergence::{kernel_kl, kl_discrete, KL_CAP};
use crate::error::Result;
use crate::model::{gaussian_log_density, ActionId, ObservationModel};
use crate::rollout::Policy;
use crate::seed::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Chernoff,
    Ejs,
    UniformRandom,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Chernoff => "chernoff",
            BaselineKind::Ejs => "ejs",
            BaselineKind::UniformRandom => "random",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "chernoff" => Some(BaselineKind::Chernoff),
            "ejs" => Some(BaselineKind::Ejs),
            "random" | "uniform" | "uniform_random" => Some(BaselineKind::UniformRandom),
            _ => None,
        }
    }
}

/// Optimal mixed strategy of the row player in `max_q min_j (qᵀM)_j`, and
/// the game value.
///
/// Solved as `max Σu s.t. M'u ≤ 1, u ≥ 0` with `M' = M + c > 0`, by a dense
/// simplex with Bland's rule. The row strategy is read from the dual prices
/// of the constraints.
pub fn solve_matrix_game(m: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    if cols == 0 {
        let mut q = vec![0.0; rows];
        q[0] = 1.0;
        return (q, f64::INFINITY);
    }
    let min = m.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;
    let width = cols + rows + 1;
    let mut tab = vec![vec![0.0; width]; rows + 1];
    for i in 0..rows {
        for j in 0..cols {
            tab[i][j] = m[i][j] + shift;
        }
        tab[i][cols + i] = 1.0;
        tab[i][width - 1] = 1.0;
    }
    for cell in tab[rows].iter_mut().take(cols) {
        *cell = -1.0;
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let eps = 1e-12;
    while let Some(enter) = (0..cols + rows).find(|&j| tab[rows][j] < -eps) {
        let mut leave: Option<usize> = None;
        for i in 0..rows {
            if tab[i][enter] > eps {
                let ratio = tab[i][width - 1] / tab[i][enter];
                leave = match leave {
                    None => Some(i),
                    Some(l) => {
                        let best = tab[l][width - 1] / tab[l][enter];
                        if ratio < best - eps || (ratio <= best + eps && basis[i] < basis[l]) {
                            Some(i)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        let Some(pivot_row) = leave else { break };
        let pivot = tab[pivot_row][enter];
        for v in tab[pivot_row].iter_mut() {
            *v /= pivot;
        }
        let pr = tab[pivot_row].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i != pivot_row {
                let factor = row[enter];
                if factor != 0.0 {
                    for (v, p) in row.iter_mut().zip(&pr) {
                        *v -= factor * p;
                    }
                }
            }
        }
        basis[pivot_row] = enter;
    }
    let prices: Vec<f64> = (0..rows).map(|i| tab[rows][cols + i].max(0.0)).collect();
    let total: f64 = prices.iter().sum();
    let q: Vec<f64> = prices.iter().map(|p| p / total).collect();
    (q, 1.0 / total - shift)
}

/// Chernoff sensing strategy for one MAP hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub enum ChernoffStrategy {
    Pure(ActionId),
    Mixed(Vec<f64>),
}

/// Divergence matrix `M[a][j] = D(P[·|a, x̂] ‖ P[·|a, x_j])` over the
/// alternatives `x_j ≠ x̂`.
fn chernoff_matrix(model: &ObservationModel, x_hat: usize) -> Vec<Vec<f64>> {
    (0..model.num_actions())
        .map(|a| {
            (0..model.num_hypotheses())
                .filter(|&x| x != x_hat)
                .map(|x| kernel_kl(model, a, x_hat, x))
                .collect()
        })
        .collect()
}

/// Strategy maximizing the worst-case divergence from `x̂`. A pure action
/// is used whenever one attains the game value, the lowest index first.
pub fn chernoff_strategy(model: &ObservationModel, x_hat: usize) -> ChernoffStrategy {
    let m = chernoff_matrix(model, x_hat);
    let worst = |row: &Vec<f64>| row.iter().copied().fold(f64::INFINITY, f64::min);
    let pure_values: Vec<f64> = m.iter().map(worst).collect();
    let best_pure = pure_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (q, value) = solve_matrix_game(&m);
    let tol = 1e-9 * value.abs().max(1.0);
    if !value.is_finite() || best_pure >= value - tol {
        let a = pure_values.iter().position(|&v| v >= best_pure).unwrap_or(0);
        ChernoffStrategy::Pure(a)
    } else {
        ChernoffStrategy::Mixed(q)
    }
}

fn draw(strategy: &ChernoffStrategy, rng: &mut SimRng) -> ActionId {
    match strategy {
        ChernoffStrategy::Pure(a) => *a,
        ChernoffStrategy::Mixed(q) => crate::model::sample_categorical(q, rng),
    }
}

/// Chernoff action for the current MAP hypothesis.
pub fn chernoff_action(belief: &Belief, model: &ObservationModel, rng: &mut SimRng) -> ActionId {
    draw(&chernoff_strategy(model, belief.map_decision()), rng)
}

const EJS_GRID: usize = 4001;

/// Distinct kernels of `action` and the kernel index of every hypothesis.
fn kernel_classes(model: &ObservationModel, action: ActionId) -> (Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut class = Vec::with_capacity(model.num_hypotheses());
    for x in 0..model.num_hypotheses() {
        match reps.iter().position(|&r| model.same_kernel(action, r, x)) {
            Some(c) => class.push(c),
            None => {
                class.push(reps.len());
                reps.push(x);
            }
        }
    }
    (reps, class)
}

/// `Σ_x π(x) D(P_x ‖ Σ_{x'≠x} π(x')/(1−π(x)) P_{x'})` for one action.
pub fn ejs_score(belief: &Belief, model: &ObservationModel, action: ActionId) -> f64 {
    let pi = belief.probs();
    let (reps, class) = kernel_classes(model, action);
    let mut weights = vec![0.0; reps.len()];
    for (x, &c) in class.iter().enumerate() {
        weights[c] += pi[x];
    }
    match model {
        ObservationModel::Discrete(d) => {
            let rows: Vec<&[f64]> = reps.iter().map(|&r| d.row(action, r)).collect();
            let symbols = d.symbols();
            let mut score = 0.0;
            let mut mix = vec![0.0; symbols];
            for (x, &c) in class.iter().enumerate() {
                if pi[x] <= 0.0 || pi[x] >= 1.0 {
                    continue;
                }
                for (y, slot) in mix.iter_mut().enumerate() {
                    let total: f64 = rows.iter().zip(&weights).map(|(r, w)| w * r[y]).sum();
                    *slot = ((total - pi[x] * rows[c][y]) / (1.0 - pi[x])).max(0.0);
                }
                score += pi[x] * kl_discrete(rows[c], &mix);
            }
            score
        }
        ObservationModel::Continuous(g) => {
            let params: Vec<(f64, f64)> = reps.iter().map(|&r| g.params(action, r)).collect();
            let lo = params.iter().map(|(m, v)| m - 10.0 * v.sqrt()).fold(f64::INFINITY, f64::min);
            let hi = params.iter().map(|(m, v)| m + 10.0 * v.sqrt()).fold(f64::NEG_INFINITY, f64::max);
            let h = (hi - lo) / (EJS_GRID - 1) as f64;
            let dens: Vec<Vec<f64>> = params
                .iter()
                .map(|&(m, v)| {
                    (0..EJS_GRID)
                        .map(|i| gaussian_log_density(lo + h * i as f64, m, v).exp())
                        .collect()
                })
                .collect();
            let total: Vec<f64> = (0..EJS_GRID)
                .map(|i| dens.iter().zip(&weights).map(|(d, w)| w * d[i]).sum())
                .collect();
            let mut score = 0.0;
            for (x, &c) in class.iter().enumerate() {
                if pi[x] <= 0.0 || pi[x] >= 1.0 {
                    continue;
                }
                let mut integral = 0.0;
                for i in 0..EJS_GRID {
                    let p = dens[c][i];
                    if p <= 0.0 {
                        continue;
                    }
                    let m = (total[i] - pi[x] * p) / (1.0 - pi[x]);
                    let term = if m > 0.0 { p * (p / m).ln() } else { p * KL_CAP };
                    let wgt = if i == 0 || i == EJS_GRID - 1 { 0.5 } else { 1.0 };
                    integral += wgt * term;
                }
                score += pi[x] * (integral * h).clamp(0.0, KL_CAP);
            }
            score
        }
    }
}

/// Action maximizing the EJS score (lowest index on ties). A belief with a
/// unit entry short-circuits to action 0.
pub fn ejs_action(belief: &Belief, model: &ObservationModel) -> ActionId {
    if belief.probs().iter().any(|&p| p >= 1.0) {
        return 0;
    }
    let scores: Vec<f64> = (0..model.num_actions()).map(|a| ejs_score(belief, model, a)).collect();
    crate::net::argmax(&scores)
}

/// A baseline acting as a single agent on the legitimate model.
#[derive(Clone, Debug)]
pub struct BaselinePolicy {
    kind: BaselineKind,
    model: ObservationModel,
    chernoff: Vec<ChernoffStrategy>,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, model: &ObservationModel) -> Self {
        let chernoff = if kind == BaselineKind::Chernoff {
            (0..model.num_hypotheses()).map(|x| chernoff_strategy(model, x)).collect()
        } else {
            Vec::new()
        };
        Self { kind, model: model.clone(), chernoff }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }
}

impl Policy for BaselinePolicy {
    fn agents(&self) -> usize {
        1
    }

    fn choose(&self, _agent: usize, belief: &Belief, rng: &mut SimRng) -> Result<Option<ActionId>> {
        Ok(Some(match self.kind {
            BaselineKind::Chernoff => draw(&self.chernoff[belief.map_decision()], rng),
            BaselineKind::Ejs => ejs_action(belief, &self.model),
            BaselineKind::UniformRandom => rng.random_range(0..self.model.num_actions()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_binomial_env, build_gaussian_env, BinomialParams, FlipPair, GaussianParams, SensorGridSpec};
    use crate::model::DiscreteModel;
    use rand::SeedableRng;

    fn binary_kl(a: f64, b: f64) -> f64 {
        a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
    }

    #[test]
    fn matching_pennies() {
        let (q, v) = solve_matrix_game(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn game_value_against_grid_search() {
        let m = vec![vec![3.0, 0.0, 1.0], vec![0.0, 2.0, 1.5], vec![1.0, 1.0, 0.2]];
        let (q, v) = solve_matrix_game(&m);
        let value = |q: &[f64]| {
            (0..3).map(|j| (0..3).map(|i| q[i] * m[i][j]).sum::<f64>()).fold(f64::INFINITY, f64::min)
        };
        assert!((value(&q) - v).abs() < 1e-9);
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let p = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                assert!(value(&p) <= v + 1e-9);
            }
        }
    }

    #[test]
    fn chernoff_prefers_the_cleaner_mode() {
        let env = build_binomial_env(
            SensorGridSpec::new(1).unwrap(),
            &BinomialParams { modes: vec![FlipPair { legit: 0.125, eve: 0.125 }, FlipPair { legit: 0.25, eve: 0.45 }] },
        )
        .unwrap();
        assert!(binary_kl(0.875, 0.125) > binary_kl(0.75, 0.25));
        let mut rng = SimRng::seed_from_u64(0);
        for p in [0.3, 0.5, 0.9] {
            let b = Belief::new(vec![p, 1.0 - p]).unwrap();
            assert_eq!(chernoff_action(&b, env.legit_model(), &mut rng), 0);
        }
    }

    #[test]
    fn chernoff_ties_and_degenerate_kernels() {
        let same = DiscreteModel::from_fn(3, 2, 2, |_, _| vec![0.3, 0.7]).unwrap();
        let model = ObservationModel::Discrete(same);
        let b = Belief::new(vec![1.0, 0.0]).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(chernoff_action(&b, &model, &mut rng), 0);
        let equal = DiscreteModel::from_fn(3, 2, 2, |_, x| if x == 0 { vec![0.2, 0.8] } else { vec![0.8, 0.2] }).unwrap();
        assert_eq!(chernoff_action(&b, &ObservationModel::Discrete(equal), &mut rng), 0);
    }

    #[test]
    fn chernoff_mixes_sensors_on_a_grid() {
        let env = build_binomial_env(SensorGridSpec::new(2).unwrap(), &BinomialParams::default()).unwrap();
        match chernoff_strategy(env.legit_model(), 0b01) {
            ChernoffStrategy::Mixed(q) => {
                // Only the cleanest mode of each sensor carries weight.
                assert!(q[0] > 0.1 && q[3] > 0.1);
                assert!((q[0] + q[3] - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chernoff_is_scale_invariant() {
        let m = vec![vec![0.4, 0.0], vec![0.0, 0.9], vec![0.1, 0.1]];
        let scaled: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect();
        let (q1, v1) = solve_matrix_game(&m);
        let (q2, v2) = solve_matrix_game(&scaled);
        for (a, b) in q1.iter().zip(&q2) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((v2 - 7.5 * v1).abs() < 1e-9);
    }

    #[test]
    fn ejs_two_point_evaluation() {
        // Uniform belief over two hypotheses with symmetric kernels: the
        // mixture is the other hypothesis' row.
        let env = build_binomial_env(SensorGridSpec::new(1).unwrap(), &BinomialParams::default()).unwrap();
        let b = Belief::uniform(2);
        for (a, flip) in [(0, 0.125), (1, 0.2), (2, 0.25)] {
            let expected = binary_kl(1.0 - flip, flip);
            assert!((ejs_score(&b, env.legit_model(), a) - expected).abs() < 1e-12);
        }
        assert!(ejs_score(&b, env.legit_model(), 2) < ejs_score(&b, env.legit_model(), 0));
        assert_eq!(ejs_action(&b, env.legit_model()), 0);
        assert_eq!(ejs_action(&Belief::new(vec![1.0, 0.0]).unwrap(), env.legit_model()), 0);
    }

    #[test]
    fn ejs_brute_force_on_three_hypotheses() {
        let model = ObservationModel::Discrete(
            DiscreteModel::from_tables(&[vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]]]).unwrap(),
        );
        let pi: [f64; 3] = [0.5, 0.3, 0.2];
        let rows: [[f64; 3]; 3] = [[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.1, 0.8]];
        let mut expected = 0.0;
        for x in 0..3 {
            let mut mix = [0.0; 3];
            for x2 in (0..3).filter(|&x2| x2 != x) {
                for y in 0..3 {
                    mix[y] += pi[x2] / (1.0 - pi[x]) * rows[x2][y];
                }
            }
            expected += pi[x] * (0..3).map(|y| rows[x][y] * (rows[x][y] / mix[y]).ln()).sum::<f64>();
        }
        let got = ejs_score(&Belief::new(pi.to_vec()).unwrap(), &model, 0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ejs_gaussian_quadrature_matches_closed_form() {
        // Two hypotheses: the mixture is a single Gaussian, so the score is
        // the closed-form divergence.
        let env = build_gaussian_env(SensorGridSpec::new(1).unwrap(), &GaussianParams::default()).unwrap();
        let b = Belief::new(vec![0.3, 0.7]).unwrap();
        for a in 0..3 {
            let expected = 0.3 * kernel_kl(env.legit_model(), a, 0, 1) + 0.7 * kernel_kl(env.legit_model(), a, 1, 0);
            assert!((ejs_score(&b, env.legit_model(), a) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_action_duplicates_score_and_scores_are_nonnegative() {
        let rows = vec![vec![0.6, 0.4], vec![0.1, 0.9], vec![0.5, 0.5]];
        let model = ObservationModel::Discrete(DiscreteModel::from_tables(&[rows.clone(), rows]).unwrap());
        let b = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(ejs_score(&b, &model, 0), ejs_score(&b, &model, 1));
        assert!(ejs_score(&b, &model, 0) >= 0.0);
    }

    #[test]
    fn actions_ignore_the_eavesdropper_model() {
        let a = build_binomial_env(SensorGridSpec::new(2).unwrap(), &BinomialParams::default()).unwrap();
        let mut params = BinomialParams::default();
        for m in &mut params.modes {
            m.eve = 0.5;
        }
        let b = build_binomial_env(SensorGridSpec::new(2).unwrap(), &params).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for kind in [BaselineKind::Chernoff, BaselineKind::Ejs] {
            let pa = BaselinePolicy::new(kind, a.legit_model());
            let pb = BaselinePolicy::new(kind, b.legit_model());
            for i in 0..20 {
                let mut p = vec![1.0 + i as f64, 2.0, 3.0, 0.5];
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                let belief = Belief::new(p).unwrap();
                let (mut r1, mut r2) = (SimRng::seed_from_u64(i), SimRng::seed_from_u64(i));
                assert_eq!(pa.choose(0, &belief, &mut r1).unwrap(), pb.choose(0, &belief, &mut r2).unwrap());
            }
        }
        let _ = &mut rng;
    }
}
