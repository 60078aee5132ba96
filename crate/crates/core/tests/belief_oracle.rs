//! Sequential belief updates against brute-force joint posteriors.

use eaht::belief::{update_belief, Belief, ErrorThresholds, HypothesisSpace};
use eaht::env::{build_binomial_env, ActionInfo, BinomialParams, Environment, SensorGridSpec};
use eaht::model::{sample_categorical, ActionId, DiscreteModel, Observation, ObservationModel};
use eaht::rollout::{rollout, split_action_sets, CommSpec, Policy, RolloutSpec};
use eaht::seed::{rng_for, SimRng};
use rand::Rng;

fn random_simplex(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[test]
fn sequential_updates_match_joint_posterior() {
    for case in 0..100u64 {
        let mut rng = rng_for(case, &[]);
        let h = rng.random_range(2..=8);
        let actions = rng.random_range(1..=4);
        let symbols = rng.random_range(2..=4);
        let tables: Vec<Vec<Vec<f64>>> = (0..actions)
            .map(|_| (0..h).map(|_| random_simplex(symbols, &mut rng)).collect())
            .collect();
        let model = ObservationModel::Discrete(DiscreteModel::from_tables(&tables).unwrap());
        let prior = random_simplex(h, &mut rng);
        let x = sample_categorical(&prior, &mut rng);
        let steps = rng.random_range(1..=10);

        let mut belief = Belief::new(prior.clone()).unwrap();
        let mut joint = prior.clone();
        for _ in 0..steps {
            let a = rng.random_range(0..actions);
            let y = sample_categorical(&tables[a][x], &mut rng);
            belief = update_belief(&belief, &model, a, &Observation::Symbol(y)).unwrap();
            for (hx, w) in joint.iter_mut().enumerate() {
                *w *= tables[a][hx][y];
            }
        }
        let total: f64 = joint.iter().sum();
        for (p, w) in belief.probs().iter().zip(&joint) {
            assert!((p - w / total).abs() < 1e-12, "case {case}: {p} vs {}", w / total);
        }
    }
}

#[test]
fn custom_environment_round_trip() {
    let model = ObservationModel::Discrete(
        DiscreteModel::from_tables(&[vec![vec![0.9, 0.1], vec![0.2, 0.8]]]).unwrap(),
    );
    let env = Environment::new(
        "pair",
        HypothesisSpace::new(vec![0.3, 0.7]).unwrap(),
        model.clone(),
        model,
        vec![ActionInfo { sensor: 0, mode: 0 }],
    )
    .unwrap();
    let b = update_belief(&env.space().initial_belief(), env.legit_model(), 0, &Observation::Symbol(0)).unwrap();
    // 0.3·0.9 / (0.3·0.9 + 0.7·0.2)
    assert!((b.probs()[0] - 0.27 / 0.41).abs() < 1e-15);
}

/// Draws a uniformly random action from each agent's own set.
struct RandomSensing(Vec<Vec<ActionId>>);

impl Policy for RandomSensing {
    fn agents(&self) -> usize {
        self.0.len()
    }

    fn choose(&self, agent: usize, _: &Belief, rng: &mut SimRng) -> eaht::Result<Option<ActionId>> {
        let set = &self.0[agent];
        Ok(Some(set[rng.random_range(0..set.len())]))
    }
}

#[test]
fn broadcast_beliefs_equal_pooled_centralized_belief() {
    let env = build_binomial_env(SensorGridSpec::new(3).unwrap(), &BinomialParams::default()).unwrap();
    let policy = RandomSensing(split_action_sets(&env, 2));
    // No agent can get this sure in ten steps, so nobody exits.
    let spec = RolloutSpec {
        env: &env,
        thresholds: ErrorThresholds::new(1e-12, 0.3).unwrap(),
        horizon: 10,
        comm: CommSpec::FullyConnected,
        record: true,
    };
    for episode in 0..50 {
        let trace = rollout(&policy, &spec, episode).unwrap();
        assert!(trace.exited.iter().all(|e| !e));
        let mut pooled = env.space().initial_belief();
        for step in trace.steps.unwrap() {
            for (a, y) in step.actions.iter().zip(&step.y) {
                pooled = update_belief(&pooled, env.legit_model(), a.unwrap(), &y.unwrap()).unwrap();
            }
            for agent in &step.beliefs {
                for (p, q) in agent.probs().iter().zip(pooled.probs()) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }
}
