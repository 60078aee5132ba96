//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every entry point takes and returns JSON strings so the page needs no
//! generated glue beyond what `wasm-bindgen` emits.

use eaht::baselines::BaselineKind;
use eaht::cosyne::{Checkpoint, Evolution};
use eaht::env::calibrate_flip_probabilities;
use eaht::experiment::{Experiment, ExperimentConfig};
use eaht::harness::PolicySource;
use eaht::rollout::EahtFitness;
use eaht::seed::rng_for;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Evaluate a baseline on the experiment described by `config`.
///
/// Returns the report together with its mean error curves.
pub fn baseline_report(config: &str, baseline: &str, episodes: usize) -> eaht::Result<serde_json::Value> {
    let exp = Experiment::new(ExperimentConfig::from_json(config)?)?;
    let kind = BaselineKind::parse(baseline).ok_or_else(|| eaht::Error::ConfigInvalid {
        field: "baseline".into(),
        reason: format!("unknown baseline '{baseline}'"),
    })?;
    let ev = exp.evaluate(&PolicySource::Baseline(kind), Some(episodes))?;
    Ok(serde_json::to_value(&ev.report).expect("reports serialize"))
}

#[wasm_bindgen(js_name = evaluateBaseline)]
pub fn evaluate_baseline(config: &str, baseline: &str, episodes: usize) -> Result<String, JsError> {
    baseline_report(config, baseline, episodes).map(|v| v.to_string()).map_err(js_err)
}

/// Flipping probability of the legitimate and eavesdropper links for each
/// power level, at every noise power in `noise_db`.
#[wasm_bindgen(js_name = riceanFlips)]
pub fn ricean_flips(
    kappa_l_db: f64,
    kappa_e_db: f64,
    powers_db: Vec<f64>,
    noise_db: Vec<f64>,
    samples: usize,
    seed: u64,
) -> String {
    let rows: Vec<_> = noise_db
        .iter()
        .map(|&n| {
            let legit = calibrate_flip_probabilities(kappa_l_db, &powers_db, n, samples, &mut rng_for(seed, &[0]));
            let eve = calibrate_flip_probabilities(kappa_e_db, &powers_db, n, samples, &mut rng_for(seed, &[1]));
            json!({ "noise_db": n, "legit": legit, "eve": eve })
        })
        .collect();
    serde_json::Value::Array(rows).to_string()
}

/// CoSyNE run that the page advances one generation at a time.
#[wasm_bindgen]
pub struct Trainer {
    fitness: EahtFitness,
    checkpoint: Checkpoint,
}

impl Trainer {
    pub fn create(config: &str) -> eaht::Result<Self> {
        let exp = Experiment::new(ExperimentConfig::from_json(config)?)?;
        let fitness = exp.fitness();
        let cfg = exp.config.evolution_config(exp.config.train_seed());
        let checkpoint = Evolution::new(&exp.arch(), cfg, &fitness)?.checkpoint();
        Ok(Self { fitness, checkpoint })
    }

    pub fn advance(&mut self) -> eaht::Result<serde_json::Value> {
        let mut evo = Evolution::resume(self.checkpoint.clone(), &self.fitness)?;
        if !evo.finished() {
            evo.step()?;
        }
        self.checkpoint = evo.checkpoint();
        let last = evo.curve().last().copied();
        Ok(json!({
            "generation": evo.generation(),
            "finished": evo.finished(),
            "point": last,
        }))
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Trainer, JsError> {
        Self::create(config).map_err(js_err)
    }

    /// Run one generation and return its curve point as JSON.
    pub fn step(&mut self) -> Result<String, JsError> {
        self.advance().map(|v| v.to_string()).map_err(js_err)
    }
}
