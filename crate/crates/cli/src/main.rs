use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eaht::baselines::BaselineKind;
use eaht::experiment::{run_sweep, write_fitness_curve_csv, Experiment, ExperimentConfig};
use eaht::harness::{
    action_frequency, write_curve_csv, write_freq_csv, write_report_csv, Evaluation, PolicySource, Scenario,
};
use eaht::prune::write_sparsity_csv;
use eaht::Error;

/// Train and evaluate sensing policies that hide the hypothesis from an
/// eavesdropper.
#[derive(Parser)]
#[command(name = "eaht", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a policy and write best_genome.json and fitness_curve.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a genome or a baseline: report.csv, curve.csv, freq.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
        genome: Option<PathBuf>,
        /// chernoff, ejs or random.
        #[arg(long, value_parser = parse_baseline)]
        baseline: Option<BaselineKind>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a trained genome under perturbed test conditions.
    Robust {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genome: PathBuf,
        /// mismatch, independent or loss:<rate>; may be repeated.
        #[arg(long, value_parser = parse_scenario)]
        scenario: Vec<Scenario>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write the eavesdropper's view of greedy rollouts as JSON lines.
    ExportEve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genome: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Retrain and evaluate over the grid in the config's sweep block.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    BaselineKind::parse(s).ok_or_else(|| format!("unknown baseline '{s}' (chernoff, ejs, random)"))
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn setup(common: &Common) -> Result<(Experiment, PathBuf), Error> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| match e {
        Error::Io(io) => Error::ConfigInvalid { field: "--config".into(), reason: io.to_string() },
        other => other,
    })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    let exp = Experiment::new(cfg)?;
    std::fs::create_dir_all(&out)?;
    Ok((exp, out))
}

fn write_evaluation(exp: &Experiment, ev: &Evaluation, dir: &Path, suffix: &str) -> Result<(), Error> {
    let prior = exp.env.space().initial_belief().map_error();
    write_report_csv(std::slice::from_ref(&ev.report), &dir.join(format!("report{suffix}.csv")))?;
    write_curve_csv(&ev.report, prior, &dir.join(format!("curve{suffix}.csv")))?;
    write_freq_csv(&action_frequency(&ev.traces, &exp.env), &dir.join(format!("freq{suffix}.csv")))?;
    let r = &ev.report;
    println!(
        "{} [{}]: legit error {:.4}, eve error min {:.4}, mean τ {:.3}, constraints {}",
        r.policy,
        r.scenario,
        r.legit_error,
        r.eve_error_min,
        r.mean_tau,
        if r.legit_ok && r.eve_ok { "met" } else { "violated" }
    );
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { common, resume } => {
            let (exp, out) = setup(&common)?;
            std::fs::write(out.join("config.json"), exp.config.to_json()?)?;
            let outcome = exp.train(Some(&out.join("checkpoint.json")), resume)?;
            outcome.genome.save(&out.join("best_genome.json"))?;
            write_fitness_curve_csv(&outcome.curve, &out.join("fitness_curve.csv"))?;
            if let Some(sparse) = &outcome.sparse {
                sparse.save(&out.join("sparse_genome.json"))?;
                write_sparsity_csv(&outcome.genome, &out.join("sparsity.csv"))?;
            }
            println!("best fitness {} ({} weights, sparsity {:.4})", outcome.fitness, outcome.genome.weights().len(), outcome.genome.sparsity());
        }
        Command::Eval { common, genome, baseline, episodes } => {
            let (exp, out) = setup(&common)?;
            let source = match (genome, baseline) {
                (Some(path), _) => PolicySource::Genome { genome: exp.load_genome(&path)?, team: exp.team.clone() },
                (None, Some(kind)) => PolicySource::Baseline(kind),
                (None, None) => unreachable!("clap requires one of --genome and --baseline"),
            };
            let ev = exp.evaluate(&source, episodes)?;
            write_evaluation(&exp, &ev, &out, "")?;
        }
        Command::Robust { common, genome, scenario, episodes } => {
            let (exp, out) = setup(&common)?;
            let genome = exp.load_genome(&genome)?;
            let scenarios = if scenario.is_empty() {
                exp.config.evaluation.scenarios.iter().map(|s| s.parse()).collect::<Result<Vec<Scenario>, _>>()?
            } else {
                scenario
            };
            if scenarios.is_empty() {
                return Err(Error::ConfigInvalid {
                    field: "evaluation.scenarios".into(),
                    reason: "no scenario given on the command line or in the config".into(),
                });
            }
            for s in scenarios {
                let ev = exp.robust(&genome, s, episodes)?;
                write_evaluation(&exp, &ev, &out, &format!("_{}", s.label()))?;
            }
        }
        Command::ExportEve { common, genome, episodes } => {
            let (exp, out) = setup(&common)?;
            let genome = exp.load_genome(&genome)?;
            let n = exp.export_eve(&genome, episodes, &out.join("eve_dataset.jsonl"))?;
            println!("wrote {n} episodes");
        }
        Command::Sweep { common } => {
            let (exp, out) = setup(&common)?;
            let spec = exp.config.sweep.clone().ok_or_else(|| Error::ConfigInvalid {
                field: "sweep".into(),
                reason: "the config has no sweep block".into(),
            })?;
            for s in run_sweep(&exp.config, &spec, &out)? {
                println!("{} = {}: mean τ {:.3}, CV {:.4}", s.param, s.value, s.mean_tau, s.mean_tau_cv);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EAHT_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::ConfigInvalid { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
